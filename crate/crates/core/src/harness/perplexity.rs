use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use super::train::Objective;
use crate::error::Result;
use crate::mixture::ScoredToken;
use crate::numcore::{ParamStore, Tape};

/// Token classes a report breaks perplexity down by.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenClass {
    All,
    /// Tokens that could be produced by reference.
    Reference,
    /// Every other token, end markers included.
    Word,
    /// Reference tokens whose target id never occurs as a training target.
    ReferenceOov,
}

impl TokenClass {
    pub const ALL: [TokenClass; 4] = [
        TokenClass::All,
        TokenClass::Reference,
        TokenClass::Word,
        TokenClass::ReferenceOov,
    ];

    /// Classes `token` belongs to.
    pub fn of(token: &ScoredToken, seen_targets: &BTreeSet<usize>) -> Vec<TokenClass> {
        let mut out = vec![TokenClass::All];
        if token.reference {
            out.push(TokenClass::Reference);
            if !seen_targets.contains(&token.target) {
                out.push(TokenClass::ReferenceOov);
            }
        } else {
            out.push(TokenClass::Word);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClassStats {
    pub tokens: usize,
    /// Summed negative log probability.
    pub nll: f64,
    /// `exp(nll / tokens)`; `None` when the class is empty.
    #[serde(serialize_with = "perplexity_value")]
    pub perplexity: Option<f64>,
}

fn perplexity_value<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        None => s.serialize_none(),
        Some(x) if x.is_finite() => s.serialize_f64(*x),
        Some(x) if x.is_nan() => s.serialize_str("nan"),
        Some(_) => s.serialize_str("inf"),
    }
}

/// Per-class perplexities of a scored split.
///
/// Every token contributes to `all` and to exactly one of `reference` and
/// `word`, so those two counts add up to the `all` count. End markers are
/// scored tokens of the `word` class.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PerplexityReport {
    pub classes: BTreeMap<TokenClass, ClassStats>,
}

impl PerplexityReport {
    pub fn from_tokens<'a, I>(tokens: I, seen_targets: &BTreeSet<usize>) -> Self
    where
        I: IntoIterator<Item = &'a ScoredToken>,
    {
        let mut acc: BTreeMap<TokenClass, (usize, f64)> = TokenClass::ALL.iter().map(|&c| (c, (0, 0.0))).collect();
        for t in tokens {
            for c in TokenClass::of(t, seen_targets) {
                let e = acc.get_mut(&c).expect("all classes present");
                e.0 += 1;
                e.1 -= t.log_prob;
            }
        }
        let classes = acc
            .into_iter()
            .map(|(c, (n, nll))| {
                let perplexity = if n == 0 { None } else { Some((nll / n as f64).exp()) };
                (c, ClassStats { tokens: n, nll, perplexity })
            })
            .collect();
        PerplexityReport { classes }
    }

    pub fn get(&self, class: TokenClass) -> &ClassStats {
        &self.classes[&class]
    }

    /// Perplexity of `class`, `None` if it has no tokens.
    pub fn perplexity(&self, class: TokenClass) -> Option<f64> {
        self.get(class).perplexity
    }
}

/// Scores every example against frozen parameters, in parallel, and returns
/// the per-example token lists in input order.
pub fn score_examples<O: Objective>(store: &ParamStore, obj: &O, examples: &[O::Example]) -> Result<Vec<Vec<ScoredToken>>> {
    examples
        .par_iter()
        .map(|ex| {
            let mut tape = Tape::new(store);
            obj.score(&mut tape, ex)
        })
        .collect()
}

pub fn perplexity_report<O: Objective>(
    store: &ParamStore,
    obj: &O,
    examples: &[O::Example],
    seen_targets: &BTreeSet<usize>,
) -> Result<PerplexityReport> {
    let scored = score_examples(store, obj, examples)?;
    Ok(PerplexityReport::from_tokens(scored.iter().flatten(), seen_targets))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok(target: usize, p: f64, reference: bool) -> ScoredToken {
        ScoredToken {
            target,
            log_prob: p.ln(),
            reference,
        }
    }

    #[test]
    fn two_halves_give_two() {
        let tokens = [tok(4, 0.5, true), tok(5, 0.5, false)];
        let r = PerplexityReport::from_tokens(&tokens, &BTreeSet::from([4]));
        assert!((r.perplexity(TokenClass::All).unwrap() - 2.0).abs() < 1e-12);
        assert!((r.perplexity(TokenClass::Reference).unwrap() - 2.0).abs() < 1e-12);
        assert!((r.perplexity(TokenClass::Word).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(r.perplexity(TokenClass::ReferenceOov), None);
        assert_eq!(r.get(TokenClass::ReferenceOov).tokens, 0);
    }

    #[test]
    fn uniform_model_has_vocab_size_perplexity() {
        let tokens: Vec<_> = (0..7).map(|i| tok(i, 1.0 / 13.0, i % 2 == 0)).collect();
        let r = PerplexityReport::from_tokens(&tokens, &BTreeSet::new());
        assert!((r.perplexity(TokenClass::All).unwrap() - 13.0).abs() < 1e-9);
        let c = &r.classes;
        assert_eq!(c[&TokenClass::Reference].tokens + c[&TokenClass::Word].tokens, c[&TokenClass::All].tokens);
    }

    #[test]
    fn json_marks_absent_and_infinite_classes() {
        let tokens = [tok(1, 0.0, true)];
        let r = PerplexityReport::from_tokens(&tokens, &BTreeSet::new());
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["classes"]["reference_oov"]["perplexity"], "inf");
        assert!(json["classes"]["word"]["perplexity"].is_null());
    }
}
