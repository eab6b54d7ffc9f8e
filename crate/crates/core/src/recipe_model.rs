//! Copying from a list: an ingredient encoder, an attention decoder and a
//! switch that mixes the ingredient copy distribution with the vocabulary
//! softmax.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::layers::{Attention, Embedding, Linear, Lstm, LstmState};
use crate::mixture::{MixtureStep, Mode, ScoredToken};
use crate::numcore::{ParamStore, Tape, Tensor, Var};

/// One recipe with its ingredient list, in vocabulary ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecipeExample {
    pub ingredients: Vec<Vec<usize>>,
    /// Surface strings of the ingredient tokens, parallel to `ingredients`.
    pub ingredient_surfaces: Vec<Vec<String>>,
    /// Recipe tokens without the end marker.
    pub recipe: Vec<usize>,
    pub recipe_surfaces: Vec<String>,
    /// Per recipe token, every `(ingredient, position)` with the same surface.
    pub copy_candidates: Vec<Vec<(usize, usize)>>,
    pub copy_labels: Vec<bool>,
}

impl RecipeExample {
    pub fn validate(&self) -> Result<()> {
        if self.ingredients.is_empty() {
            return Err(Error::EmptyInput { op: "encode_ingredients" });
        }
        if self.ingredients.iter().any(|i| i.is_empty()) {
            return Err(invalid("ingredient with no tokens"));
        }
        let n = self.recipe.len();
        if self.copy_candidates.len() != n || self.copy_labels.len() != n {
            return Err(invalid("copy annotations do not match the recipe length"));
        }
        for (v, cands) in self.copy_candidates.iter().enumerate() {
            if self.copy_labels[v] && cands.is_empty() {
                return Err(invalid(format!("recipe token {v} labelled as a copy without candidates")));
            }
            for &(i, j) in cands {
                if i >= self.ingredients.len() || j >= self.ingredients[i].len() {
                    return Err(Error::OutOfRange {
                        what: "copy candidate",
                        index: i,
                        size: self.ingredients.len(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Start offset of each ingredient in the flattened token list.
    pub fn offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.ingredients.len());
        let mut acc = 0;
        for ing in &self.ingredients {
            out.push(acc);
            acc += ing.len();
        }
        out
    }

    pub fn flat_candidates(&self, v: usize) -> Vec<usize> {
        let offsets = self.offsets();
        self.copy_candidates[v].iter().map(|&(i, j)| offsets[i] + j).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecipeConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub attention_dim: usize,
    pub bos: usize,
    pub eos: usize,
}

/// Ingredient token states and the decoder's initial state.
#[derive(Clone, Debug)]
pub struct EncodedIngredients {
    pub token_states: Vec<Var>,
    /// `[n_tokens, hidden]` stack of `token_states`.
    pub keys: Var,
    /// Keys mapped through the attention key projection.
    pub projected_keys: Var,
    pub init: LstmState,
}

#[derive(Clone, Debug)]
pub struct RecipeModel {
    pub config: RecipeConfig,
    pub mode: Mode,
    pub embed: Embedding,
    pub encoder: Lstm,
    pub decoder: Lstm,
    pub attention: Attention,
    pub switch: Linear,
    pub output: Linear,
}

impl RecipeModel {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, config: RecipeConfig, mode: Mode) -> Result<Self> {
        let (e, h, a, v) = (config.embed_dim, config.hidden_dim, config.attention_dim, config.vocab_size);
        let embed = Embedding::new(store, rng, "recipe.embed", v, e)?;
        let encoder = Lstm::new(store, rng, "recipe.encoder.lstm", e, h)?;
        let decoder = Lstm::new(store, rng, "recipe.decoder.lstm", e + h, h)?;
        let attention = Attention::new(store, rng, "recipe.copy_attention", h, h, a)?;
        let switch = Linear::new(store, rng, "recipe.switch", 2 * h, 1, true)?;
        let output = Linear::new(store, rng, "recipe.vocab", 2 * h, v, true)?;
        Ok(RecipeModel {
            config,
            mode,
            embed,
            encoder,
            decoder,
            attention,
            switch,
            output,
        })
    }

    /// Encodes each ingredient independently; the decoder starts from the sum
    /// of the final states.
    pub fn encode_ingredients(&self, tape: &mut Tape<'_>, ingredients: &[Vec<usize>]) -> Result<EncodedIngredients> {
        if ingredients.is_empty() {
            return Err(Error::EmptyInput { op: "encode_ingredients" });
        }
        let mut token_states = Vec::new();
        let mut init: Option<LstmState> = None;
        for ing in ingredients {
            let (hs, last) = self.encoder.encode(tape, &self.embed, ing, None)?;
            token_states.extend(hs);
            init = Some(match init {
                None => last,
                Some(acc) => LstmState {
                    hidden: tape.add(acc.hidden, last.hidden)?,
                    cell: tape.add(acc.cell, last.cell)?,
                },
            });
        }
        let keys = tape.stack(&token_states)?;
        let projected_keys = self.attention.project_keys(tape, keys)?;
        Ok(EncodedIngredients {
            token_states,
            keys,
            projected_keys,
            init: init.expect("at least one ingredient"),
        })
    }

    /// One decoder step from `prev_token` with previous context `prev_context`.
    pub fn decode_step(
        &self,
        tape: &mut Tape<'_>,
        keys: Var,
        projected_keys: Var,
        prev_token: usize,
        prev_state: LstmState,
        prev_context: Var,
    ) -> Result<(MixtureStep, LstmState)> {
        let emb = self.embed.lookup(tape, prev_token)?;
        let x = tape.concat(&[emb, prev_context])?;
        let state = self.decoder.step(tape, x, prev_state)?;
        let scores = self.attention.scores(tape, projected_keys, state.hidden)?;
        let copy_probs = tape.softmax(scores)?;
        let log_copy = tape.log_softmax(scores)?;
        let context = tape.weighted_sum(copy_probs, keys)?;
        let sd = tape.concat(&[state.hidden, context])?;
        let logit = self.switch.forward(tape, sd)?;
        let switch_logit = tape.pick(logit, 0)?;
        let logits = self.output.forward(tape, sd)?;
        let log_vocab = tape.log_softmax(logits)?;
        let step = MixtureStep {
            state: state.hidden,
            context: Some(context),
            copy_probs,
            log_copy,
            log_vocab,
            switch_logit,
        };
        Ok((step, state))
    }

    /// Teacher-forced steps over the recipe followed by the end marker.
    pub fn teacher_forced_steps(&self, tape: &mut Tape<'_>, ex: &RecipeExample) -> Result<Vec<MixtureStep>> {
        let enc = self.encode_ingredients(tape, &ex.ingredients)?;
        let mut state = enc.init;
        let mut context = tape.zeros(&[self.config.hidden_dim]);
        let mut prev = self.config.bos;
        let mut steps = Vec::with_capacity(ex.recipe.len() + 1);
        for v in 0..=ex.recipe.len() {
            let (step, next) = self.decode_step(tape, enc.keys, enc.projected_keys, prev, state, context)?;
            steps.push(step);
            state = next;
            context = step.context.expect("recipe steps carry a context");
            if v < ex.recipe.len() {
                prev = ex.recipe[v];
            }
        }
        Ok(steps)
    }

    /// Per-token log probabilities in the current mode, end marker included.
    pub fn token_log_probs(&self, tape: &mut Tape<'_>, ex: &RecipeExample, mode: Mode) -> Result<Vec<Var>> {
        ex.validate()?;
        let steps = self.teacher_forced_steps(tape, ex)?;
        let mut out = Vec::with_capacity(steps.len());
        for (v, step) in steps.iter().enumerate() {
            let lp = if v < ex.recipe.len() {
                let cands = ex.flat_candidates(v);
                step.token_log_prob(tape, mode, ex.recipe[v], ex.copy_labels[v], &cands)?
            } else {
                step.token_log_prob(tape, mode, self.config.eos, false, &[])?
            };
            out.push(lp);
        }
        Ok(out)
    }

    /// Summed negative log likelihood; `floor` clamps each token's log
    /// probability from below.
    pub fn sequence_nll(&self, tape: &mut Tape<'_>, ex: &RecipeExample, mode: Mode, floor: Option<f64>) -> Result<Var> {
        let lps = self.token_log_probs(tape, ex, mode)?;
        let clamped: Vec<Var> = match floor {
            Some(f) => lps.into_iter().map(|lp| tape.clamp_min(lp, f)).collect(),
            None => lps,
        };
        let total = tape.sum_all(&clamped)?;
        Ok(tape.neg(total))
    }

    pub fn score(&self, tape: &mut Tape<'_>, ex: &RecipeExample) -> Result<Vec<ScoredToken>> {
        let lps = self.token_log_probs(tape, ex, self.mode)?;
        Ok(lps
            .iter()
            .enumerate()
            .map(|(v, lp)| ScoredToken {
                target: ex.recipe.get(v).copied().unwrap_or(self.config.eos),
                log_prob: tape.scalar(*lp),
                reference: v < ex.recipe.len() && !ex.copy_candidates[v].is_empty(),
            })
            .collect())
    }

    /// Precomputes the ingredient encoding as plain tensors for step-by-step
    /// generation.
    pub fn generation_context(&self, store: &ParamStore, ex: &RecipeExample) -> Result<RecipeGenerationContext> {
        let mut tape = Tape::new(store);
        let enc = self.encode_ingredients(&mut tape, &ex.ingredients)?;
        Ok(RecipeGenerationContext {
            keys: tape.value(enc.keys).clone(),
            projected_keys: tape.value(enc.projected_keys).clone(),
            init_hidden: tape.value(enc.init.hidden).clone(),
            init_cell: tape.value(enc.init.cell).clone(),
        })
    }

    /// Decoder step on plain tensors, used during generation.
    pub fn numeric_step(
        &self,
        store: &ParamStore,
        ctx: &RecipeGenerationContext,
        state: &RecipeDecoderState,
    ) -> Result<RecipeStepOutput> {
        let mut tape = Tape::new(store);
        let keys = tape.input(ctx.keys.clone());
        let projected_keys = tape.input(ctx.projected_keys.clone());
        let lstm = LstmState {
            hidden: tape.input(state.hidden.clone()),
            cell: tape.input(state.cell.clone()),
        };
        let context = tape.input(state.context.clone());
        let (step, next) = self.decode_step(&mut tape, keys, projected_keys, state.prev_token, lstm, context)?;
        Ok(RecipeStepOutput {
            log_vocab: tape.value(step.log_vocab).data().to_vec(),
            copy_probs: tape.value(step.copy_probs).data().to_vec(),
            switch_prob: step.switch_prob(&tape),
            hidden: tape.value(next.hidden).clone(),
            cell: tape.value(next.cell).clone(),
            context: tape.value(step.context.expect("context")).clone(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct RecipeGenerationContext {
    pub keys: Tensor,
    pub projected_keys: Tensor,
    pub init_hidden: Tensor,
    pub init_cell: Tensor,
}

#[derive(Clone, Debug)]
pub struct RecipeDecoderState {
    pub prev_token: usize,
    pub hidden: Tensor,
    pub cell: Tensor,
    pub context: Tensor,
}

impl RecipeDecoderState {
    pub fn initial(ctx: &RecipeGenerationContext, bos: usize) -> Self {
        RecipeDecoderState {
            prev_token: bos,
            hidden: ctx.init_hidden.clone(),
            cell: ctx.init_cell.clone(),
            context: Tensor::zeros(ctx.init_hidden.shape()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RecipeStepOutput {
    pub log_vocab: Vec<f64>,
    pub copy_probs: Vec<f64>,
    pub switch_prob: f64,
    pub hidden: Tensor,
    pub cell: Tensor,
    pub context: Tensor,
}
