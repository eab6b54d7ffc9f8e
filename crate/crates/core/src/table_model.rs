//! Referring into a database table during a dialogue.
//!
//! Utterances are summarized by a sentence LSTM and the summaries feed a turn
//! LSTM whose state starts the decoder for the next machine utterance. Each
//! decoder state queries the table in three attention passes (attributes,
//! then rows conditioned on the attribute mix, then columns conditioned on the
//! row mix) and the row and column distributions multiply into a copy
//! distribution over cells.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::layers::{Attention, Embedding, Linear, Lstm, LstmState, INIT_SCALE};
use crate::mixture::{MixtureStep, Mode, ScoredToken};
use crate::numcore::{ParamId, ParamStore, Tape, Tensor, Var};

/// A database table in vocabulary ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableIds {
    pub attributes: Vec<usize>,
    /// `rows × attributes` grid of cell tokens.
    pub cells: Vec<Vec<usize>>,
}

impl TableIds {
    pub fn rows(&self) -> usize {
        self.cells.len()
    }

    pub fn cols(&self) -> usize {
        self.attributes.len()
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if self.attributes.is_empty() || self.cells.is_empty() {
            return Err(Error::EmptyInput { op: "encode_table" });
        }
        for (r, row) in self.cells.iter().enumerate() {
            if row.len() != self.cols() {
                return Err(invalid(format!("table row {r} has {} cells, expected {}", row.len(), self.cols())));
            }
        }
        for &t in self.attributes.iter().chain(self.cells.iter().flatten()) {
            if t >= vocab_size {
                return Err(Error::OutOfRange {
                    what: "table token",
                    index: t,
                    size: vocab_size,
                });
            }
        }
        Ok(())
    }

    /// Flattened `r * cols + c` positions of every cell holding each token.
    pub fn cell_index(&self) -> HashMap<usize, Vec<usize>> {
        let mut map: HashMap<usize, Vec<usize>> = HashMap::new();
        for (r, row) in self.cells.iter().enumerate() {
            for (c, &t) in row.iter().enumerate() {
                map.entry(t).or_default().push(r * self.cols() + c);
            }
        }
        map
    }
}

/// A dialogue as alternating utterances, machine first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueExample {
    pub turns: Vec<Vec<usize>>,
}

impl DialogueExample {
    /// Indices of machine utterances in `turns`.
    pub fn machine_turns(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.turns.len()).step_by(2)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub attention_dim: usize,
    pub sentence_attention: bool,
    pub bos: usize,
    pub eos: usize,
}

/// Cell encodings and attribute vectors for one table.
#[derive(Clone, Copy, Debug)]
pub struct EncodedTable {
    /// `g_c`, shape `[cols, embed]`.
    pub attributes: Var,
    /// `e_{r,c}`, shape `[rows, cols, embed]`.
    pub cells: Var,
    pub projected_attributes: Var,
    pub rows: usize,
    pub cols: usize,
}

/// Pointer distributions for one query.
#[derive(Clone, Copy, Debug)]
pub struct TableModelState {
    pub p_attr: Var,
    pub p_row: Var,
    pub p_col: Var,
    /// `p^r ⊗ p^c`, flattened row-major.
    pub p_copy: Var,
    pub log_copy: Var,
}

#[derive(Clone, Debug)]
pub struct SentenceAttention {
    pub attention: Attention,
    pub switch: Linear,
    pub output: Linear,
}

#[derive(Clone, Debug)]
pub struct TableModel {
    pub config: TableConfig,
    pub mode: Mode,
    pub embed: Embedding,
    pub sentence: Lstm,
    pub turn: Lstm,
    pub turn_init: ParamId,
    pub decoder: Lstm,
    pub cell_token: ParamId,
    pub cell_attr: ParamId,
    pub attr_attention: Attention,
    pub row_attention: Attention,
    pub col_attention: Attention,
    pub switch: Linear,
    pub output: Linear,
    pub sentence_attention: Option<SentenceAttention>,
}

/// Utterance encodings for one dialogue.
#[derive(Clone, Debug)]
pub struct EncodedDialogue {
    pub token_states: Vec<Vec<Var>>,
    pub summaries: Vec<Var>,
}

impl TableModel {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, config: TableConfig, mode: Mode) -> Result<Self> {
        let (e, h, a, v) = (config.embed_dim, config.hidden_dim, config.attention_dim, config.vocab_size);
        let embed = Embedding::new(store, rng, "table.embed", v, e)?;
        let sentence = Lstm::new(store, rng, "table.sentence.lstm", e, h)?;
        let turn = Lstm::new(store, rng, "table.turn.lstm", h, h)?;
        let turn_init = store.add_uniform("table.turn.init", &[h], INIT_SCALE, rng)?;
        let decoder = Lstm::new(store, rng, "table.decoder.lstm", e, h)?;
        let cell_token = store.add_uniform("table.cell.W_token", &[e, e], INIT_SCALE, rng)?;
        let cell_attr = store.add_uniform("table.cell.W_attr", &[e, e], INIT_SCALE, rng)?;
        let attr_attention = Attention::new(store, rng, "table.attr_attention", e, h, a)?;
        let row_attention = Attention::new(store, rng, "table.row_attention", e, h, a)?;
        let col_attention = Attention::new(store, rng, "table.col_attention", e, h, a)?;
        let switch = Linear::new(store, rng, "table.switch", h, 1, true)?;
        let output = Linear::new(store, rng, "table.vocab", h, v, true)?;
        let sentence_attention = if config.sentence_attention {
            Some(SentenceAttention {
                attention: Attention::new(store, rng, "table.sentence_attention", h, h, a)?,
                switch: Linear::new(store, rng, "table.switch_context", h, 1, false)?,
                output: Linear::new(store, rng, "table.vocab_context", h, v, false)?,
            })
        } else {
            None
        };
        Ok(TableModel {
            config,
            mode,
            embed,
            sentence,
            turn,
            turn_init,
            decoder,
            cell_token,
            cell_attr,
            attr_attention,
            row_attention,
            col_attention,
            switch,
            output,
            sentence_attention,
        })
    }

    /// `g_c = W_E s_c` and `e_{r,c} = tanh(W [W_E t_{r,c}, g_c])`.
    pub fn encode_table(&self, tape: &mut Tape<'_>, table: &TableIds) -> Result<EncodedTable> {
        table.validate(self.config.vocab_size)?;
        let (rows, cols, e) = (table.rows(), table.cols(), self.config.embed_dim);
        let attributes = self.embed.lookup_many(tape, &table.attributes)?;
        let flat: Vec<usize> = table.cells.iter().flatten().copied().collect();
        let repeated: Vec<usize> = (0..rows).flat_map(|_| table.attributes.iter().copied()).collect();
        let tokens = self.embed.lookup_many(tape, &flat)?;
        let attrs = self.embed.lookup_many(tape, &repeated)?;
        let wt = tape.param(self.cell_token);
        let wa = tape.param(self.cell_attr);
        let a = tape.matmul_t(tokens, wt)?;
        let b = tape.matmul_t(attrs, wa)?;
        let pre = tape.add(a, b)?;
        let act = tape.tanh(pre);
        let cells = tape.reshape(act, &[rows, cols, e])?;
        let projected_attributes = self.attr_attention.project_keys(tape, attributes)?;
        Ok(EncodedTable {
            attributes,
            cells,
            projected_attributes,
            rows,
            cols,
        })
    }

    /// Attribute, row and column attention for query `q`, and the resulting
    /// cell distribution.
    pub fn table_pointer(&self, tape: &mut Tape<'_>, table: &EncodedTable, q: Var) -> Result<TableModelState> {
        let s_attr = self.attr_attention.scores(tape, table.projected_attributes, q)?;
        let p_attr = tape.softmax(s_attr)?;
        let row_repr = tape.grid_mix_columns(table.cells, p_attr)?;
        let row_keys = self.row_attention.project_keys(tape, row_repr)?;
        let s_row = self.row_attention.scores(tape, row_keys, q)?;
        let p_row = tape.softmax(s_row)?;
        let log_row = tape.log_softmax(s_row)?;
        let col_repr = tape.grid_mix_rows(table.cells, p_row)?;
        let col_keys = self.col_attention.project_keys(tape, col_repr)?;
        let s_col = self.col_attention.scores(tape, col_keys, q)?;
        let p_col = tape.softmax(s_col)?;
        let log_col = tape.log_softmax(s_col)?;
        let n = table.rows * table.cols;
        let outer = tape.outer(p_row, p_col)?;
        let p_copy = tape.reshape(outer, &[n])?;
        let log_outer = tape.outer_sum(log_row, log_col)?;
        let log_copy = tape.reshape(log_outer, &[n])?;
        Ok(TableModelState {
            p_attr,
            p_row,
            p_col,
            p_copy,
            log_copy,
        })
    }

    fn utterance_tokens<'a>(&self, utterance: &'a [usize], eos: &'a [usize; 1]) -> &'a [usize] {
        if utterance.is_empty() {
            eos
        } else {
            utterance
        }
    }

    /// Runs the sentence encoder over every utterance once.
    pub fn encode_utterances(&self, tape: &mut Tape<'_>, ex: &DialogueExample) -> Result<EncodedDialogue> {
        let eos = [self.config.eos];
        let mut token_states = Vec::with_capacity(ex.turns.len());
        let mut summaries = Vec::with_capacity(ex.turns.len());
        for utt in &ex.turns {
            let toks = self.utterance_tokens(utt, &eos);
            let (hs, last) = self.sentence.encode(tape, &self.embed, toks, None)?;
            token_states.push(hs);
            summaries.push(last.hidden);
        }
        Ok(EncodedDialogue { token_states, summaries })
    }

    /// Turn state after the first `upto` utterances; the learned initial
    /// vector when `upto == 0`.
    pub fn encode_history(&self, tape: &mut Tape<'_>, summaries: &[Var]) -> Result<LstmState> {
        if summaries.is_empty() {
            let hidden = tape.param(self.turn_init);
            let cell = tape.zeros(&[self.config.hidden_dim]);
            return Ok(LstmState { hidden, cell });
        }
        let mut state = LstmState::zeros(tape, self.config.hidden_dim);
        for &s in summaries {
            state = self.turn.step(tape, s, state)?;
        }
        Ok(state)
    }

    /// Keys for sentence attention: token states of the previous machine and
    /// user utterances.
    fn sentence_keys(&self, tape: &mut Tape<'_>, enc: &EncodedDialogue, turn: usize) -> Result<Option<(Var, Var)>> {
        let Some(sa) = &self.sentence_attention else {
            return Ok(None);
        };
        if turn == 0 {
            return Ok(None);
        }
        let start = turn.saturating_sub(2);
        let states: Vec<Var> = enc.token_states[start..turn].iter().flatten().copied().collect();
        let keys = tape.stack(&states)?;
        let projected = sa.attention.project_keys(tape, keys)?;
        Ok(Some((keys, projected)))
    }

    /// One decoder step. `sentence_keys` is `(keys, projected keys)` over the
    /// previous turn when sentence attention is enabled and there is history.
    pub fn decode_step(
        &self,
        tape: &mut Tape<'_>,
        table: &EncodedTable,
        prev_token: usize,
        prev_state: LstmState,
        sentence_keys: Option<(Var, Var)>,
    ) -> Result<(MixtureStep, TableModelState, LstmState)> {
        let x = self.embed.lookup(tape, prev_token)?;
        let state = self.decoder.step(tape, x, prev_state)?;
        let s = state.hidden;
        let pointer = self.table_pointer(tape, table, s)?;
        let mut switch = self.switch.forward(tape, s)?;
        let mut logits = self.output.forward(tape, s)?;
        let mut context = None;
        if let Some(sa) = &self.sentence_attention {
            let ctx = match sentence_keys {
                Some((keys, projected)) => {
                    let scores = sa.attention.scores(tape, projected, s)?;
                    let p = tape.softmax(scores)?;
                    tape.weighted_sum(p, keys)?
                }
                None => tape.zeros(&[self.config.hidden_dim]),
            };
            let sw = sa.switch.forward(tape, ctx)?;
            switch = tape.add(switch, sw)?;
            let lg = sa.output.forward(tape, ctx)?;
            logits = tape.add(logits, lg)?;
            context = Some(ctx);
        }
        let switch_logit = tape.pick(switch, 0)?;
        let log_vocab = tape.log_softmax(logits)?;
        let step = MixtureStep {
            state: s,
            context,
            copy_probs: pointer.p_copy,
            log_copy: pointer.log_copy,
            log_vocab,
            switch_logit,
        };
        Ok((step, pointer, state))
    }

    /// Teacher-forced steps for every machine utterance, each followed by the
    /// end marker. Returns `(turn index, position, step, pointer)` tuples.
    pub fn teacher_forced_steps(
        &self,
        tape: &mut Tape<'_>,
        table: &EncodedTable,
        ex: &DialogueExample,
    ) -> Result<Vec<(usize, usize, MixtureStep, TableModelState)>> {
        let enc = self.encode_utterances(tape, ex)?;
        let mut out = Vec::new();
        let mut turn_state: Option<LstmState> = None;
        let mut consumed = 0;
        for i in ex.machine_turns() {
            let init = if i == 0 {
                self.encode_history(tape, &[])?
            } else {
                let mut st = match turn_state {
                    Some(s) => s,
                    None => LstmState::zeros(tape, self.config.hidden_dim),
                };
                for &s in &enc.summaries[consumed..i] {
                    st = self.turn.step(tape, s, st)?;
                }
                consumed = i;
                turn_state = Some(st);
                st
            };
            let keys = self.sentence_keys(tape, &enc, i)?;
            let mut state = init;
            let mut prev = self.config.bos;
            let utt = &ex.turns[i];
            for v in 0..=utt.len() {
                let (step, pointer, next) = self.decode_step(tape, table, prev, state, keys)?;
                out.push((i, v, step, pointer));
                state = next;
                if v < utt.len() {
                    prev = utt[v];
                }
            }
        }
        Ok(out)
    }

    /// Per-token log probabilities over all machine tokens, end markers
    /// included, paired with whether the token matches a table cell.
    pub fn token_log_probs(
        &self,
        tape: &mut Tape<'_>,
        table: &TableIds,
        ex: &DialogueExample,
        mode: Mode,
    ) -> Result<Vec<(usize, Var, bool)>> {
        let encoded = self.encode_table(tape, table)?;
        let index = table.cell_index();
        let steps = self.teacher_forced_steps(tape, &encoded, ex)?;
        let mut out = Vec::with_capacity(steps.len());
        for (i, v, step, _) in steps {
            let utt = &ex.turns[i];
            let target = utt.get(v).copied().unwrap_or(self.config.eos);
            let cands: &[usize] = if v < utt.len() {
                index.get(&target).map_or(&[], |c| c.as_slice())
            } else {
                &[]
            };
            let lp = step.token_log_prob(tape, mode, target, !cands.is_empty(), cands)?;
            out.push((target, lp, !cands.is_empty()));
        }
        Ok(out)
    }

    pub fn dialogue_nll(
        &self,
        tape: &mut Tape<'_>,
        table: &TableIds,
        ex: &DialogueExample,
        mode: Mode,
        floor: Option<f64>,
    ) -> Result<Var> {
        let lps = self.token_log_probs(tape, table, ex, mode)?;
        let vars: Vec<Var> = match floor {
            Some(f) => lps.into_iter().map(|(_, lp, _)| tape.clamp_min(lp, f)).collect(),
            None => lps.into_iter().map(|(_, lp, _)| lp).collect(),
        };
        if vars.is_empty() {
            return Err(Error::EmptyInput { op: "dialogue_nll" });
        }
        let total = tape.sum_all(&vars)?;
        Ok(tape.neg(total))
    }

    pub fn score(&self, tape: &mut Tape<'_>, table: &TableIds, ex: &DialogueExample) -> Result<Vec<ScoredToken>> {
        let lps = self.token_log_probs(tape, table, ex, self.mode)?;
        Ok(lps
            .into_iter()
            .map(|(target, lp, reference)| ScoredToken {
                target,
                log_prob: tape.scalar(lp),
                reference,
            })
            .collect())
    }

    /// Decoder start state and sentence-attention keys for generating
    /// machine utterance `turn`, as plain tensors.
    pub fn generation_context(
        &self,
        store: &ParamStore,
        table: &TableIds,
        ex: &DialogueExample,
        turn: usize,
    ) -> Result<TableGenerationContext> {
        if turn >= ex.turns.len() || turn % 2 != 0 {
            return Err(invalid(format!("turn {turn} is not a machine utterance")));
        }
        let mut tape = Tape::new(store);
        let history = DialogueExample {
            turns: ex.turns[..turn].to_vec(),
        };
        let enc = self.encode_utterances(&mut tape, &history)?;
        let init = self.encode_history(&mut tape, &enc.summaries)?;
        let keys = self.sentence_keys(&mut tape, &enc, turn)?;
        Ok(TableGenerationContext {
            table: table.clone(),
            hidden: tape.value(init.hidden).clone(),
            cell: tape.value(init.cell).clone(),
            sentence_keys: keys.map(|(k, p)| (tape.value(k).clone(), tape.value(p).clone())),
        })
    }

    /// Decoder step on plain tensors, used during generation.
    pub fn numeric_step(
        &self,
        store: &ParamStore,
        ctx: &TableGenerationContext,
        prev_token: usize,
        hidden: &Tensor,
        cell: &Tensor,
    ) -> Result<TableStepOutput> {
        let mut tape = Tape::new(store);
        let table = self.encode_table(&mut tape, &ctx.table)?;
        let state = LstmState {
            hidden: tape.input(hidden.clone()),
            cell: tape.input(cell.clone()),
        };
        let keys = ctx
            .sentence_keys
            .as_ref()
            .map(|(k, p)| (tape.input(k.clone()), tape.input(p.clone())));
        let (step, _, next) = self.decode_step(&mut tape, &table, prev_token, state, keys)?;
        Ok(TableStepOutput {
            log_vocab: tape.value(step.log_vocab).data().to_vec(),
            copy_probs: tape.value(step.copy_probs).data().to_vec(),
            switch_prob: step.switch_prob(&tape),
            hidden: tape.value(next.hidden).clone(),
            cell: tape.value(next.cell).clone(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct TableGenerationContext {
    pub table: TableIds,
    pub hidden: Tensor,
    pub cell: Tensor,
    pub sentence_keys: Option<(Tensor, Tensor)>,
}

#[derive(Clone, Debug)]
pub struct TableStepOutput {
    pub log_vocab: Vec<f64>,
    pub copy_probs: Vec<f64>,
    pub switch_prob: f64,
    pub hidden: Tensor,
    pub cell: Tensor,
}
