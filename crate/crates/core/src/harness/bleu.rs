use std::collections::HashMap;

use serde::Serialize;

use crate::error::{invalid, Result};

/// Corpus-level BLEU-4 statistics.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BleuScore {
    pub bleu: f64,
    /// Clipped n-gram precisions for n = 1..=4.
    pub precisions: [f64; 4],
    pub brevity_penalty: f64,
    pub candidate_length: usize,
    pub reference_length: usize,
}

fn ngram_counts<T: AsRef<str>>(tokens: &[T], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    out
}

/// Corpus BLEU-4 with one reference per candidate: clipped n-gram counts and
/// totals are summed over the corpus, the four precisions are combined by a
/// geometric mean without smoothing, and a brevity penalty applies when the
/// candidates are shorter in total than the references.
pub fn corpus_bleu<C: AsRef<str>, R: AsRef<str>>(candidates: &[Vec<C>], references: &[Vec<R>]) -> Result<BleuScore> {
    if candidates.is_empty() || candidates.len() != references.len() {
        return Err(invalid(format!(
            "BLEU needs aligned non-empty corpora, got {} candidates and {} references",
            candidates.len(),
            references.len()
        )));
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut c_len, mut r_len) = (0, 0);
    for (cand, reference) in candidates.iter().zip(references) {
        c_len += cand.len();
        r_len += reference.len();
        for n in 1..=4 {
            let c = ngram_counts(cand, n);
            let r = ngram_counts(reference, n);
            totals[n - 1] += c.values().sum::<usize>();
            matches[n - 1] += c
                .iter()
                .map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
        }
    }
    let mut precisions = [0.0; 4];
    for n in 0..4 {
        precisions[n] = if totals[n] == 0 {
            0.0
        } else {
            matches[n] as f64 / totals[n] as f64
        };
    }
    let brevity_penalty = if c_len == 0 {
        0.0
    } else if c_len < r_len {
        (1.0 - r_len as f64 / c_len as f64).exp()
    } else {
        1.0
    };
    let bleu = if precisions.iter().any(|&p| p == 0.0) {
        0.0
    } else {
        brevity_penalty * (precisions.iter().map(|p| p.ln()).sum::<f64>() / 4.0).exp()
    };
    Ok(BleuScore {
        bleu,
        precisions,
        brevity_penalty,
        candidate_length: c_len,
        reference_length: r_len,
    })
}
