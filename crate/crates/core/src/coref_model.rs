//! Referring to earlier entities in a document.
//!
//! Before each token the model attends over the entity states seen so far
//! (headed by a learned virtual entity used for new mentions), decides whether
//! the token is a mention, and if so generates it conditioned on the chosen
//! entity's state. The same parameter names for the embedding, LSTM and plain
//! output projection are used by [`CorefVariant::PlainLm`], so a plain LM
//! checkpoint can initialize the full model.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::layers::{Attention, Embedding, Linear, Lstm, LstmState, INIT_SCALE};
use crate::mixture::ScoredToken;
use crate::numcore::{ParamId, ParamStore, Tape, Var};

/// A document in vocabulary ids with per-token entity annotations.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedDocument {
    pub tokens: Vec<usize>,
    /// Entity id of each token that is a mention; ids are dense from 1 in
    /// first-mention order.
    pub mentions: Vec<Option<usize>>,
}

impl AnnotatedDocument {
    pub fn entity_count(&self) -> usize {
        let mut seen = std::collections::BTreeSet::<usize>::new();
        seen.extend(self.mentions.iter().flatten());
        seen.len()
    }

    /// The `(z, v)` decision of every token, where `v` indexes the entity set
    /// at that point: 0 for a first mention, the entity's slot afterwards.
    pub fn decisions(&self) -> Result<Vec<Option<usize>>> {
        if self.mentions.len() != self.tokens.len() {
            return Err(invalid("mention annotations do not match the token count"));
        }
        let mut slots: Vec<usize> = Vec::new();
        let mut out = Vec::with_capacity(self.tokens.len());
        for (i, m) in self.mentions.iter().enumerate() {
            out.push(match *m {
                None => None,
                Some(k) => match slots.iter().position(|&e| e == k) {
                    Some(p) => Some(p + 1),
                    None => {
                        if k != slots.len() + 1 {
                            return Err(invalid(format!(
                                "token {i} mentions entity {k} before entity {} was introduced",
                                slots.len() + 1
                            )));
                        }
                        slots.push(k);
                        Some(0)
                    }
                },
            });
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorefVariant {
    /// Entity attention, switch and entity-conditioned word distribution.
    Pointer,
    /// A plain LSTM language model with the shared parameter names.
    PlainLm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorefConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub attention_dim: usize,
    pub bos: usize,
    pub eos: usize,
}

/// Entity states `h^e`, index 0 being the virtual empty entity.
#[derive(Clone, Debug)]
pub struct EntityStateSet {
    states: Vec<Var>,
}

impl EntityStateSet {
    pub fn new(virtual_entity: Var) -> Self {
        EntityStateSet {
            states: vec![virtual_entity],
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[Var] {
        &self.states
    }

    /// Applies a decision: nothing for `None`, append for `Some(0)`, replace
    /// slot `v` for `Some(v)`.
    pub fn update(&mut self, decision: Option<usize>, h: Var) -> Result<()> {
        match decision {
            None => {}
            Some(0) => self.states.push(h),
            Some(v) if v < self.states.len() => self.states[v] = h,
            Some(v) => {
                return Err(Error::OutOfRange {
                    what: "entity",
                    index: v,
                    size: self.states.len(),
                })
            }
        }
        Ok(())
    }
}

/// Entity attention, its context and the switch for one position.
#[derive(Clone, Copy, Debug)]
pub struct CorefPrediction {
    pub p_coref: Var,
    pub log_coref: Var,
    pub context: Var,
    pub switch_logit: Var,
}

#[derive(Clone, Debug)]
pub struct CorefEntityParams {
    pub attention: Attention,
    pub switch: Linear,
    pub entity_proj: ParamId,
    pub virtual_entity: ParamId,
}

#[derive(Clone, Debug)]
pub struct CorefModel {
    pub config: CorefConfig,
    pub variant: CorefVariant,
    pub embed: Embedding,
    pub lstm: Lstm,
    pub output: Linear,
    pub entity: Option<CorefEntityParams>,
}

impl CorefModel {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, config: CorefConfig, variant: CorefVariant) -> Result<Self> {
        let (e, h, a, v) = (config.embed_dim, config.hidden_dim, config.attention_dim, config.vocab_size);
        let embed = Embedding::new(store, rng, "coref.embed", v, e)?;
        let lstm = Lstm::new(store, rng, "coref.lstm", e, h)?;
        let output = Linear::new(store, rng, "coref.out", h, v, true)?;
        let entity = match variant {
            CorefVariant::PlainLm => None,
            CorefVariant::Pointer => Some(CorefEntityParams {
                attention: Attention::new(store, rng, "coref.entity_attention", h, h, a)?,
                switch: Linear::new(store, rng, "coref.switch", 2 * h, 1, true)?,
                entity_proj: store.add_uniform("coref.entity_proj.W", &[h, 2 * h], INIT_SCALE, rng)?,
                virtual_entity: store.add_uniform("coref.virtual_entity", &[h], INIT_SCALE, rng)?,
            }),
        };
        Ok(CorefModel {
            config,
            variant,
            embed,
            lstm,
            output,
            entity,
        })
    }

    fn entity_params(&self) -> Result<&CorefEntityParams> {
        self.entity
            .as_ref()
            .ok_or_else(|| invalid("the plain language model has no entity parameters"))
    }

    pub fn initial_entities(&self, tape: &mut Tape<'_>) -> Result<EntityStateSet> {
        let p = self.entity_params()?;
        Ok(EntityStateSet::new(tape.param(p.virtual_entity)))
    }

    /// `p^coref = ATTN(h^e, h)`, `d = Σ_v p^coref_v h^e_v`, `π = σ(W[h, d])`.
    pub fn predict_step(&self, tape: &mut Tape<'_>, h: Var, entities: &EntityStateSet) -> Result<CorefPrediction> {
        let p = self.entity_params()?;
        let keys = tape.stack(entities.states())?;
        let projected = p.attention.project_keys(tape, keys)?;
        let scores = p.attention.scores(tape, projected, h)?;
        let p_coref = tape.softmax(scores)?;
        let log_coref = tape.log_softmax(scores)?;
        let context = tape.weighted_sum(p_coref, keys)?;
        let hd = tape.concat(&[h, context])?;
        let logit = p.switch.forward(tape, hd)?;
        let switch_logit = tape.pick(logit, 0)?;
        Ok(CorefPrediction {
            p_coref,
            log_coref,
            context,
            switch_logit,
        })
    }

    /// `log softmax(W_1 h)`.
    pub fn log_word_plain(&self, tape: &mut Tape<'_>, h: Var) -> Result<Var> {
        let logits = self.output.forward(tape, h)?;
        tape.log_softmax(logits)
    }

    /// `log softmax(W_1 tanh(W_2 [h, h^e_v]))`.
    pub fn log_word_entity(&self, tape: &mut Tape<'_>, h: Var, entity: Var) -> Result<Var> {
        let p = self.entity_params()?;
        let he = tape.concat(&[h, entity])?;
        let w2 = tape.param(p.entity_proj);
        let proj = tape.matvec(w2, he)?;
        let act = tape.tanh(proj);
        self.log_word_plain(tape, act)
    }

    /// Log probability of `target` together with decision `decision`.
    pub fn token_log_prob(
        &self,
        tape: &mut Tape<'_>,
        h: Var,
        entities: &EntityStateSet,
        pred: &CorefPrediction,
        target: usize,
        decision: Option<usize>,
    ) -> Result<Var> {
        match decision {
            None => {
                let lw = self.log_word_plain(tape, h)?;
                let w = tape.pick(lw, target)?;
                let neg = tape.neg(pred.switch_logit);
                let keep = tape.log_sigmoid(neg);
                tape.add(w, keep)
            }
            Some(v) => {
                let Some(&ent) = entities.states().get(v) else {
                    return Err(Error::OutOfRange {
                        what: "entity",
                        index: v,
                        size: entities.len(),
                    });
                };
                let lw = self.log_word_entity(tape, h, ent)?;
                let w = tape.pick(lw, target)?;
                let lc = tape.pick(pred.log_coref, v)?;
                let ls = tape.log_sigmoid(pred.switch_logit);
                let wc = tape.add(w, lc)?;
                tape.add(wc, ls)
            }
        }
    }

    /// Log probability of every token followed by the end marker, paired with
    /// whether the token is an entity mention. Entity states reset per call.
    pub fn token_log_probs(&self, tape: &mut Tape<'_>, doc: &AnnotatedDocument) -> Result<Vec<(usize, Var, bool)>> {
        let decisions = doc.decisions()?;
        let mut state = LstmState::zeros(tape, self.config.hidden_dim);
        let x = self.embed.lookup(tape, self.config.bos)?;
        state = self.lstm.step(tape, x, state)?;
        let mut entities = match self.variant {
            CorefVariant::Pointer => Some(self.initial_entities(tape)?),
            CorefVariant::PlainLm => None,
        };
        let mut out = Vec::with_capacity(doc.tokens.len() + 1);
        for i in 0..=doc.tokens.len() {
            let (target, decision) = match doc.tokens.get(i) {
                Some(&t) => (t, decisions[i]),
                None => (self.config.eos, None),
            };
            let h = state.hidden;
            let lp = match entities.as_ref() {
                Some(ents) => {
                    let pred = self.predict_step(tape, h, ents)?;
                    self.token_log_prob(tape, h, ents, &pred, target, decision)?
                }
                None => {
                    let lw = self.log_word_plain(tape, h)?;
                    tape.pick(lw, target)?
                }
            };
            out.push((target, lp, decision.is_some()));
            if i < doc.tokens.len() {
                let x = self.embed.lookup(tape, target)?;
                state = self.lstm.step(tape, x, state)?;
                if let Some(ents) = entities.as_mut() {
                    ents.update(decision, state.hidden)?;
                }
            }
        }
        Ok(out)
    }

    pub fn document_nll(&self, tape: &mut Tape<'_>, doc: &AnnotatedDocument, floor: Option<f64>) -> Result<Var> {
        let lps = self.token_log_probs(tape, doc)?;
        let vars: Vec<Var> = match floor {
            Some(f) => lps.into_iter().map(|(_, lp, _)| tape.clamp_min(lp, f)).collect(),
            None => lps.into_iter().map(|(_, lp, _)| lp).collect(),
        };
        let total = tape.sum_all(&vars)?;
        Ok(tape.neg(total))
    }

    pub fn score(&self, tape: &mut Tape<'_>, doc: &AnnotatedDocument) -> Result<Vec<ScoredToken>> {
        Ok(self
            .token_log_probs(tape, doc)?
            .into_iter()
            .map(|(target, lp, reference)| ScoredToken {
                target,
                log_prob: tape.scalar(lp),
                reference,
            })
            .collect())
    }

    /// Per-position `(π, p^coref)` under teacher forcing, for heat maps.
    pub fn attention_trace(&self, store: &ParamStore, doc: &AnnotatedDocument) -> Result<Vec<(f64, Vec<f64>)>> {
        let decisions = doc.decisions()?;
        let mut tape = Tape::new(store);
        let t = &mut tape;
        let mut state = LstmState::zeros(t, self.config.hidden_dim);
        let x = self.embed.lookup(t, self.config.bos)?;
        state = self.lstm.step(t, x, state)?;
        let mut ents = self.initial_entities(t)?;
        let mut out = Vec::with_capacity(doc.tokens.len());
        for (i, &tok) in doc.tokens.iter().enumerate() {
            let pred = self.predict_step(t, state.hidden, &ents)?;
            out.push((
                crate::numcore::sigmoid(t.scalar(pred.switch_logit)),
                t.value(pred.p_coref).data().to_vec(),
            ));
            let x = self.embed.lookup(t, tok)?;
            state = self.lstm.step(t, x, state)?;
            ents.update(decisions[i], state.hidden)?;
        }
        Ok(out)
    }
}
