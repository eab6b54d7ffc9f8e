//! Per-token mixture likelihoods shared by the recipe and table models.
//!
//! A step produces a log vocabulary distribution, a log copy distribution over
//! referable positions and a switch logit `ℓ` with `π = σ(ℓ)`. The token
//! probability is either the joint with a labelled switch value, the marginal
//! over both switch values, or (for the no-copy baseline) the vocabulary
//! probability alone.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::numcore::{log_sigmoid, log_sum_exp, Tape, Var};

/// Training objectives apply this floor to every per-token log probability.
pub const LOG_FLOOR: f64 = -27.631021115928547; // ln(1e-12)

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Joint likelihood of the token and its string-match switch label.
    #[default]
    Supervised,
    /// Switch marginalized out.
    Latent,
    /// Vocabulary softmax only; the switch and copy branch are ignored.
    VocabOnly,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Supervised => "supervised",
            Mode::Latent => "latent",
            Mode::VocabOnly => "vocab_only",
        })
    }
}

impl FromStr for Mode {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "supervised" => Ok(Mode::Supervised),
            "latent" => Ok(Mode::Latent),
            "vocab_only" | "vocab-only" | "baseline" => Ok(Mode::VocabOnly),
            other => Err(invalid(format!("unknown mode {other:?}"))),
        }
    }
}

/// A scored target token, as consumed by perplexity reports.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredToken {
    pub target: usize,
    pub log_prob: f64,
    /// The token could have been produced by reference (copy candidates,
    /// a matching table cell, or an entity mention annotation).
    pub reference: bool,
}

/// One decoding step's outputs.
#[derive(Clone, Copy, Debug)]
pub struct MixtureStep {
    /// Decoder state `s`.
    pub state: Var,
    /// Context vector `d` when the model has one.
    pub context: Option<Var>,
    /// `p^copy`, flattened over referable positions.
    pub copy_probs: Var,
    /// `log p^copy`, same layout as `copy_probs`.
    pub log_copy: Var,
    /// `log p^vocab`.
    pub log_vocab: Var,
    /// Switch logit; `π = σ(switch_logit)`.
    pub switch_logit: Var,
}

impl MixtureStep {
    pub fn switch_prob(&self, tape: &Tape<'_>) -> f64 {
        crate::numcore::sigmoid(tape.scalar(self.switch_logit))
    }

    /// `log p(y, z=0) = log p^vocab(y) + log(1 − π)`.
    pub fn log_vocab_branch(&self, tape: &mut Tape<'_>, target: usize) -> Result<Var> {
        let lv = tape.pick(self.log_vocab, target)?;
        let neg = tape.neg(self.switch_logit);
        let keep = tape.log_sigmoid(neg);
        tape.add(lv, keep)
    }

    /// `log p(y, z=1) = log Σ_{k ∈ candidates} p^copy_k + log π`; `-inf` when
    /// there are no candidates.
    pub fn log_copy_branch(&self, tape: &mut Tape<'_>, candidates: &[usize]) -> Result<Var> {
        let mass = tape.log_sum_exp_at(self.log_copy, candidates)?;
        let copy = tape.log_sigmoid(self.switch_logit);
        tape.add(mass, copy)
    }

    /// Log probability of `target` under `mode`. `copy_label` is the switch
    /// label used by the supervised joint.
    pub fn token_log_prob(
        &self,
        tape: &mut Tape<'_>,
        mode: Mode,
        target: usize,
        copy_label: bool,
        candidates: &[usize],
    ) -> Result<Var> {
        match mode {
            Mode::Supervised if copy_label => {
                if candidates.is_empty() {
                    return Err(invalid(format!(
                        "token {target} is labelled as a copy but has no copy candidates"
                    )));
                }
                self.log_copy_branch(tape, candidates)
            }
            Mode::Supervised => self.log_vocab_branch(tape, target),
            Mode::Latent => {
                let vocab = self.log_vocab_branch(tape, target)?;
                if candidates.is_empty() {
                    return Ok(vocab);
                }
                let copy = self.log_copy_branch(tape, candidates)?;
                tape.log_add_exp(vocab, copy)
            }
            Mode::VocabOnly => tape.pick(self.log_vocab, target),
        }
    }

    /// Negative log probability, with the training floor applied when `floor`
    /// is set.
    pub fn token_nll(
        &self,
        tape: &mut Tape<'_>,
        mode: Mode,
        target: usize,
        copy_label: bool,
        candidates: &[usize],
        floor: Option<f64>,
    ) -> Result<Var> {
        let mut lp = self.token_log_prob(tape, mode, target, copy_label, candidates)?;
        if let Some(f) = floor {
            lp = tape.clamp_min(lp, f);
        }
        Ok(tape.neg(lp))
    }
}

/// The mixture in plain numbers: `log[p_v (1 − π) + m π]` where `m` is the
/// copy mass.
pub fn marginal_log_prob(log_vocab: f64, log_copy_mass: f64, switch_logit: f64) -> f64 {
    log_sum_exp(&[log_vocab + log_sigmoid(-switch_logit), log_copy_mass + log_sigmoid(switch_logit)])
}
