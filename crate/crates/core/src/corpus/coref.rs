use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tokenize::normalize;
use super::vocab::VocabSpec;
use super::LoadOutcome;
use crate::coref_model::AnnotatedDocument;
use crate::error::{invalid, Result};

/// A mention span `[start, end)` of entity `entity`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionSpan {
    pub start: usize,
    pub end: usize,
    pub entity: i64,
}

/// One line of the coreference JSON-lines format.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorefLine {
    pub tokens: Vec<String>,
    pub mentions: Vec<MentionSpan>,
}

/// A document after mention filtering and collapsing: one token per mention
/// and entity ids dense from 1 in first-mention order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorefRecord {
    pub tokens: Vec<String>,
    pub mentions: Vec<Option<usize>>,
}

impl CorefRecord {
    pub fn encode(&self, vocab: &VocabSpec) -> AnnotatedDocument {
        AnnotatedDocument {
            tokens: vocab.encode(&self.tokens),
            mentions: self.mentions.clone(),
        }
    }

    pub fn to_line(&self) -> CorefLine {
        CorefLine {
            tokens: self.tokens.clone(),
            mentions: self
                .mentions
                .iter()
                .enumerate()
                .filter_map(|(i, m)| {
                    m.map(|e| MentionSpan {
                        start: i,
                        end: i + 1,
                        entity: e as i64,
                    })
                })
                .collect(),
        }
    }
}

/// Drops singleton entities, collapses each mention to its entity's most
/// frequent mention token (ties to the lexicographically smallest) and
/// renumbers entities by first mention.
pub fn preprocess_document(line: &CorefLine) -> Result<CorefRecord> {
    let tokens: Vec<String> = line.tokens.iter().map(|t| normalize(t)).collect();
    let mut spans = line.mentions.clone();
    spans.sort_by_key(|m| (m.start, m.end));
    for m in &spans {
        if m.start >= m.end || m.end > tokens.len() {
            return Err(invalid(format!(
                "mention [{}, {}) is outside the {}-token document",
                m.start,
                m.end,
                tokens.len()
            )));
        }
    }
    for w in spans.windows(2) {
        if w[1].start < w[0].end {
            return Err(invalid(format!(
                "mentions [{}, {}) and [{}, {}) overlap",
                w[0].start, w[0].end, w[1].start, w[1].end
            )));
        }
    }

    let mut by_entity: BTreeMap<i64, Vec<MentionSpan>> = BTreeMap::new();
    for m in &spans {
        by_entity.entry(m.entity).or_default().push(*m);
    }
    let mut collapsed: HashMap<i64, String> = HashMap::new();
    for (e, ms) in &by_entity {
        if ms.len() < 2 {
            continue;
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for m in ms {
            for t in &tokens[m.start..m.end] {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let best = counts
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
            .map(|(t, _)| t.to_string())
            .expect("mentions are non-empty");
        collapsed.insert(*e, best);
    }

    let mut out_tokens = Vec::with_capacity(tokens.len());
    let mut mentions = Vec::with_capacity(tokens.len());
    let mut dense: HashMap<i64, usize> = HashMap::new();
    let mut i = 0;
    let mut next = spans.iter().filter(|m| collapsed.contains_key(&m.entity)).peekable();
    while i < tokens.len() {
        match next.peek() {
            Some(m) if m.start == i => {
                let n = dense.len() + 1;
                let id = *dense.entry(m.entity).or_insert(n);
                out_tokens.push(collapsed[&m.entity].clone());
                mentions.push(Some(id));
                i = m.end;
                next.next();
            }
            _ => {
                out_tokens.push(tokens[i].clone());
                mentions.push(None);
                i += 1;
            }
        }
    }
    Ok(CorefRecord {
        tokens: out_tokens,
        mentions,
    })
}

pub fn parse_coref_docs<R: BufRead>(reader: R, path: &Path) -> Result<LoadOutcome<CorefRecord>> {
    let mut out = LoadOutcome::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: CorefLine = match serde_json::from_str(&line) {
            Ok(p) => p,
            Err(e) => {
                out.skip(path, lineno, format!("malformed document: {e}"));
                continue;
            }
        };
        if parsed.tokens.is_empty() {
            out.skip(path, lineno, "document has no tokens");
            continue;
        }
        match preprocess_document(&parsed) {
            Ok(r) => out.records.push(r),
            Err(e) => out.skip(path, lineno, e.to_string()),
        }
    }
    Ok(out)
}

pub fn load_coref_docs(path: impl AsRef<Path>) -> Result<LoadOutcome<CorefRecord>> {
    let path = path.as_ref();
    parse_coref_docs(BufReader::new(File::open(path)?), path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(tokens: &str, mentions: &[(usize, usize, i64)]) -> CorefLine {
        CorefLine {
            tokens: tokens.split_whitespace().map(String::from).collect(),
            mentions: mentions
                .iter()
                .map(|&(start, end, entity)| MentionSpan { start, end, entity })
                .collect(),
        }
    }

    #[test]
    fn singletons_are_dropped() {
        let r = preprocess_document(&line("Bob met Ann . she smiled", &[(0, 1, 4), (2, 3, 9), (4, 5, 9)])).unwrap();
        assert_eq!(r.tokens, ["bob", "met", "ann", ".", "ann", "smiled"]);
        assert_eq!(r.mentions, [None, None, Some(1), None, Some(1), None]);
    }

    #[test]
    fn most_frequent_token_wins_and_ties_are_lexicographic() {
        let r = preprocess_document(&line("Linda ran . she sat . she ate", &[(0, 1, 1), (3, 4, 1), (6, 7, 1)])).unwrap();
        assert_eq!(r.tokens, ["she", "ran", ".", "she", "sat", ".", "she", "ate"]);
        let r = preprocess_document(&line("the doctor left . the doctor", &[(0, 2, 5), (4, 6, 5)])).unwrap();
        assert_eq!(r.tokens, ["doctor", "left", ".", "doctor"]);
    }

    #[test]
    fn entity_ids_are_dense_by_first_mention() {
        let r = preprocess_document(&line("a b a b", &[(0, 1, 7), (1, 2, 3), (2, 3, 7), (3, 4, 3)])).unwrap();
        assert_eq!(r.mentions, [Some(1), Some(2), Some(1), Some(2)]);
        let doc = r.encode(&VocabSpec::build(r.tokens.iter().map(String::as_str), 10, &[]).unwrap());
        assert_eq!(doc.decisions().unwrap(), [Some(0), Some(0), Some(1), Some(2)]);
    }

    #[test]
    fn overlapping_spans_are_rejected() {
        assert!(preprocess_document(&line("a b c", &[(0, 2, 1), (1, 3, 2)])).is_err());
        assert!(preprocess_document(&line("a b c", &[(2, 4, 1)])).is_err());
        let text = "{\"tokens\":[\"a\",\"b\"],\"mentions\":[{\"start\":0,\"end\":2,\"entity\":1},{\"start\":1,\"end\":2,\"entity\":1}]}\n";
        let out = parse_coref_docs(text.as_bytes(), Path::new("c.jsonl")).unwrap();
        assert!(out.records.is_empty());
        assert_eq!(out.skipped[0].line, 1);
    }

    #[test]
    fn every_remaining_entity_has_two_single_token_mentions() {
        let r = preprocess_document(&line(
            "Mr Smith saw Jo . Mr Smith waved . Jo left",
            &[(0, 2, 1), (3, 4, 2), (5, 7, 1), (9, 10, 2), (8, 9, 3)],
        ))
        .unwrap();
        let mut counts = HashMap::new();
        for m in r.mentions.iter().flatten() {
            *counts.entry(*m).or_insert(0) += 1;
        }
        assert!(counts.values().all(|&c| c >= 2));
        assert_eq!(r.tokens.len(), r.mentions.len());
        assert_eq!(preprocess_document(&r.to_line()).unwrap(), r);
    }
}
