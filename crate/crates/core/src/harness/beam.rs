//! Length-bounded beam search over the mixture next-token distribution.
//!
//! Decoders expose their distributions through [`StepModel`], where copy
//! mass has already been folded into output symbols: a symbol's probability
//! is `(1 − π) p^vocab(symbol) + π · Σ p^copy` over the positions that
//! produce it. Ingredient tokens outside the vocabulary get extra symbols past
//! the vocabulary ids so they can still be generated by copying.

use std::cmp::Ordering;

use crate::error::{invalid, Result};
use crate::mixture::Mode;
use crate::numcore::{ParamStore, Tensor};
use crate::recipe_model::{RecipeDecoderState, RecipeExample, RecipeGenerationContext, RecipeModel};
use crate::table_model::{DialogueExample, TableGenerationContext, TableIds, TableModel};

/// A decoder viewed as a sequence of next-symbol distributions.
pub trait StepModel {
    type State: Clone;

    fn num_symbols(&self) -> usize;

    fn eos(&self) -> usize;

    /// State before the first output symbol.
    fn start(&self) -> Result<Self::State>;

    /// Log probabilities of the next symbol in `state`.
    fn log_probs<'s>(&self, state: &'s Self::State) -> &'s [f64];

    /// State after emitting `symbol`.
    fn advance(&self, state: &Self::State, symbol: usize) -> Result<Self::State>;
}

/// A decoded sequence without its end marker.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub symbols: Vec<usize>,
    pub log_prob: f64,
    /// Ended by the end marker rather than by the length bound.
    pub finished: bool,
}

/// The `width` best sequences of at most `max_len` symbols, best first.
///
/// Every step ranks all one-symbol extensions of the live hypotheses and
/// keeps the top `width`; extensions that emit the end marker leave the beam
/// as finished. Ties go to the earlier hypothesis, then the lower symbol id.
/// The end marker is not allowed as the first symbol, so outputs are never
/// empty.
pub fn beam_decode<M: StepModel>(model: &M, width: usize, max_len: usize) -> Result<Vec<Hypothesis>> {
    if width == 0 {
        return Err(invalid("beam width must be at least 1"));
    }
    let eos = model.eos();
    let mut alive: Vec<(Vec<usize>, f64, M::State)> = vec![(Vec::new(), 0.0, model.start()?)];
    let mut done: Vec<Hypothesis> = Vec::new();
    for t in 0..max_len {
        if alive.is_empty() {
            break;
        }
        if done.len() >= width {
            let kth = kth_best(&done, width);
            if alive.iter().all(|(_, lp, _)| *lp <= kth) {
                break;
            }
        }
        let mut cands: Vec<(f64, usize, usize)> = Vec::with_capacity(alive.len() * model.num_symbols());
        for (h, (_, lp, state)) in alive.iter().enumerate() {
            for (s, &l) in model.log_probs(state).iter().enumerate() {
                if s == eos && t == 0 {
                    continue;
                }
                cands.push((lp + l, h, s));
            }
        }
        cands.sort_by(|a, b| rank(a.0, b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        cands.truncate(width);
        let mut next = Vec::with_capacity(width);
        for (lp, h, s) in cands {
            let (prefix, _, state) = &alive[h];
            if s == eos {
                done.push(Hypothesis {
                    symbols: prefix.clone(),
                    log_prob: lp,
                    finished: true,
                });
            } else {
                let mut symbols = prefix.clone();
                symbols.push(s);
                let state = if t + 1 < max_len {
                    model.advance(state, s)?
                } else {
                    state.clone()
                };
                next.push((symbols, lp, state));
            }
        }
        alive = next;
    }
    done.extend(alive.into_iter().map(|(symbols, log_prob, _)| Hypothesis {
        symbols,
        log_prob,
        finished: false,
    }));
    done.sort_by(|a, b| rank(a.log_prob, b.log_prob));
    done.truncate(width);
    Ok(done)
}

fn rank(a: f64, b: f64) -> Ordering {
    b.total_cmp(&a)
}

fn kth_best(done: &[Hypothesis], k: usize) -> f64 {
    let mut lps: Vec<f64> = done.iter().map(|h| h.log_prob).collect();
    lps.sort_by(|a, b| rank(*a, *b));
    lps[k - 1]
}

/// Picks the most probable symbol at every step (lowest id on ties).
pub fn greedy_decode<M: StepModel>(model: &M, max_len: usize) -> Result<Hypothesis> {
    let eos = model.eos();
    let mut state = model.start()?;
    let mut out = Hypothesis {
        symbols: Vec::new(),
        log_prob: 0.0,
        finished: false,
    };
    for t in 0..max_len {
        let mut best: Option<(usize, f64)> = None;
        for (s, &l) in model.log_probs(&state).iter().enumerate() {
            if s == eos && t == 0 {
                continue;
            }
            if best.map_or(true, |(_, b)| l > b) {
                best = Some((s, l));
            }
        }
        let Some((s, l)) = best else { break };
        out.log_prob += l;
        if s == eos {
            out.finished = true;
            break;
        }
        out.symbols.push(s);
        if t + 1 < max_len {
            state = model.advance(&state, s)?;
        }
    }
    Ok(out)
}

fn fold(log_vocab: &[f64], copy_probs: &[f64], switch_prob: f64, position_symbols: &[usize], n: usize, mode: Mode) -> Vec<f64> {
    if mode == Mode::VocabOnly {
        let mut out = log_vocab.to_vec();
        out.resize(n, f64::NEG_INFINITY);
        return out;
    }
    let mut p: Vec<f64> = log_vocab.iter().map(|lv| (1.0 - switch_prob) * lv.exp()).collect();
    p.resize(n, 0.0);
    for (&sym, &c) in position_symbols.iter().zip(copy_probs) {
        p[sym] += switch_prob * c;
    }
    p.into_iter().map(f64::ln).collect()
}

/// Recipe generation from an ingredient list.
pub struct RecipeStepper<'a> {
    model: &'a RecipeModel,
    store: &'a ParamStore,
    ctx: RecipeGenerationContext,
    position_symbols: Vec<usize>,
    extra_surfaces: Vec<String>,
    unk: usize,
}

#[derive(Clone, Debug)]
pub struct RecipeBeamState {
    hidden: Tensor,
    cell: Tensor,
    context: Tensor,
    log_probs: Vec<f64>,
}

impl<'a> RecipeStepper<'a> {
    /// `unk` is the vocabulary id that out-of-vocabulary ingredient tokens
    /// were encoded as.
    pub fn new(model: &'a RecipeModel, store: &'a ParamStore, ex: &RecipeExample, unk: usize) -> Result<Self> {
        let ctx = model.generation_context(store, ex)?;
        let v = model.config.vocab_size;
        let mut extra_surfaces: Vec<String> = Vec::new();
        let mut position_symbols = Vec::new();
        for (ids, surfaces) in ex.ingredients.iter().zip(&ex.ingredient_surfaces) {
            for (&id, surface) in ids.iter().zip(surfaces) {
                let sym = if id != unk {
                    id
                } else {
                    match extra_surfaces.iter().position(|s| s == surface) {
                        Some(k) => v + k,
                        None => {
                            extra_surfaces.push(surface.clone());
                            v + extra_surfaces.len() - 1
                        }
                    }
                };
                position_symbols.push(sym);
            }
        }
        Ok(RecipeStepper {
            model,
            store,
            ctx,
            position_symbols,
            extra_surfaces,
            unk,
        })
    }

    /// Surface form of `symbol`, using `token` for vocabulary ids.
    pub fn surface<'t>(&'t self, symbol: usize, token: impl Fn(usize) -> &'t str) -> &'t str {
        let v = self.model.config.vocab_size;
        if symbol < v {
            token(symbol)
        } else {
            &self.extra_surfaces[symbol - v]
        }
    }

    fn input_id(&self, symbol: usize) -> usize {
        if symbol < self.model.config.vocab_size {
            symbol
        } else {
            self.unk
        }
    }

    fn run(&self, prev_token: usize, hidden: Tensor, cell: Tensor, context: Tensor) -> Result<RecipeBeamState> {
        let out = self.model.numeric_step(
            self.store,
            &self.ctx,
            &RecipeDecoderState {
                prev_token,
                hidden,
                cell,
                context,
            },
        )?;
        let log_probs = fold(
            &out.log_vocab,
            &out.copy_probs,
            out.switch_prob,
            &self.position_symbols,
            self.num_symbols(),
            self.model.mode,
        );
        Ok(RecipeBeamState {
            hidden: out.hidden,
            cell: out.cell,
            context: out.context,
            log_probs,
        })
    }
}

impl StepModel for RecipeStepper<'_> {
    type State = RecipeBeamState;

    fn num_symbols(&self) -> usize {
        self.model.config.vocab_size + self.extra_surfaces.len()
    }

    fn eos(&self) -> usize {
        self.model.config.eos
    }

    fn start(&self) -> Result<RecipeBeamState> {
        let init = RecipeDecoderState::initial(&self.ctx, self.model.config.bos);
        self.run(init.prev_token, init.hidden, init.cell, init.context)
    }

    fn log_probs<'s>(&self, state: &'s RecipeBeamState) -> &'s [f64] {
        &state.log_probs
    }

    fn advance(&self, state: &RecipeBeamState, symbol: usize) -> Result<RecipeBeamState> {
        let prev = self.input_id(symbol);
        self.run(prev, state.hidden.clone(), state.cell.clone(), state.context.clone())
    }
}

/// Generation of one machine utterance given the dialogue so far.
pub struct DialogueStepper<'a> {
    model: &'a TableModel,
    store: &'a ParamStore,
    ctx: TableGenerationContext,
    cell_symbols: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct DialogueBeamState {
    hidden: Tensor,
    cell: Tensor,
    log_probs: Vec<f64>,
}

impl<'a> DialogueStepper<'a> {
    /// Prepares to generate machine utterance `turn` of `ex`.
    pub fn new(
        model: &'a TableModel,
        store: &'a ParamStore,
        table: &TableIds,
        ex: &DialogueExample,
        turn: usize,
    ) -> Result<Self> {
        let ctx = model.generation_context(store, table, ex, turn)?;
        Ok(DialogueStepper {
            model,
            store,
            cell_symbols: table.cells.iter().flatten().copied().collect(),
            ctx,
        })
    }

    fn run(&self, prev: usize, hidden: &Tensor, cell: &Tensor) -> Result<DialogueBeamState> {
        let out = self.model.numeric_step(self.store, &self.ctx, prev, hidden, cell)?;
        let log_probs = fold(
            &out.log_vocab,
            &out.copy_probs,
            out.switch_prob,
            &self.cell_symbols,
            self.num_symbols(),
            self.model.mode,
        );
        Ok(DialogueBeamState {
            hidden: out.hidden,
            cell: out.cell,
            log_probs,
        })
    }
}

impl StepModel for DialogueStepper<'_> {
    type State = DialogueBeamState;

    fn num_symbols(&self) -> usize {
        self.model.config.vocab_size
    }

    fn eos(&self) -> usize {
        self.model.config.eos
    }

    fn start(&self) -> Result<DialogueBeamState> {
        self.run(self.model.config.bos, &self.ctx.hidden, &self.ctx.cell)
    }

    fn log_probs<'s>(&self, state: &'s DialogueBeamState) -> &'s [f64] {
        &state.log_probs
    }

    fn advance(&self, state: &DialogueBeamState, symbol: usize) -> Result<DialogueBeamState> {
        self.run(symbol, &state.hidden, &state.cell)
    }
}
