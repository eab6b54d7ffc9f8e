use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const UNK: &str = "<unk>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const EMPTY: &str = "_EMPTY";

const RESERVED: [&str; 4] = [UNK, BOS, EOS, EMPTY];

/// Token ↔ id mapping. Ids 0–3 are always `<unk>`, `<s>`, `</s>` and
/// `_EMPTY`; further reserved tokens follow, then corpus tokens by descending
/// frequency with ties broken lexicographically.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabFile", into = "VocabFile")]
pub struct VocabSpec {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    max_size: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    max_size: usize,
    tokens: Vec<String>,
}

impl From<VocabSpec> for VocabFile {
    fn from(v: VocabSpec) -> Self {
        VocabFile {
            max_size: v.max_size,
            tokens: v.tokens,
        }
    }
}

impl TryFrom<VocabFile> for VocabSpec {
    type Error = Error;

    fn try_from(f: VocabFile) -> Result<Self> {
        if f.tokens.len() < RESERVED.len() || f.tokens[..RESERVED.len()] != RESERVED {
            return Err(invalid("vocabulary does not start with the reserved tokens"));
        }
        if f.tokens.len() > f.max_size {
            return Err(invalid("vocabulary larger than its max_size"));
        }
        let mut index = HashMap::with_capacity(f.tokens.len());
        for (i, t) in f.tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(invalid(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(VocabSpec {
            tokens: f.tokens,
            index,
            max_size: f.max_size,
        })
    }
}

impl VocabSpec {
    pub const UNK_ID: usize = 0;
    pub const BOS_ID: usize = 1;
    pub const EOS_ID: usize = 2;
    pub const EMPTY_ID: usize = 3;

    /// Builds a vocabulary of at most `max_size` entries. `reserved` tokens
    /// are always kept, in order, after the four fixed ones.
    pub fn build<'a, I>(tokens: I, max_size: usize, reserved: &[String]) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut fixed: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        for r in reserved {
            if !fixed.contains(r) {
                fixed.push(r.clone());
            }
        }
        if max_size <= fixed.len() {
            return Err(invalid(format!(
                "max vocabulary size {max_size} must exceed the {} reserved tokens",
                fixed.len()
            )));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in tokens {
            *counts.entry(t).or_default() += 1;
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().filter(|(t, _)| !fixed.iter().any(|f| f == t)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let room = max_size - fixed.len();
        let mut all = fixed;
        all.extend(ranked.into_iter().take(room).map(|(t, _)| t.to_string()));
        VocabSpec::try_from(VocabFile { max_size, tokens: all })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Id of `token`, or the unknown-token id.
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(Self::UNK_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or(UNK, String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<&str> {
        ids.iter().map(|&i| self.token(i)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("vocabulary serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus() -> Vec<&'static str> {
        vec!["a", "b", "a", "c", "b", "a"]
    }

    #[test]
    fn keeps_most_frequent_up_to_cap() {
        let v = VocabSpec::build(corpus(), 6, &[]).unwrap();
        assert_eq!(v.tokens(), &[UNK, BOS, EOS, EMPTY, "a", "b"]);
        assert_eq!(v.id("c"), VocabSpec::UNK_ID);
        assert_eq!(v.id("zzz"), VocabSpec::UNK_ID);
    }

    #[test]
    fn ties_break_lexicographically_and_build_is_deterministic() {
        let v = VocabSpec::build(vec!["q", "p", "r", "p", "q", "r"], 6, &[]).unwrap();
        assert_eq!(&v.tokens()[4..], &["p", "q"]);
        let w = VocabSpec::build(vec!["q", "p", "r", "p", "q", "r"], 6, &[]).unwrap();
        assert_eq!(v.to_json(), w.to_json());
    }

    #[test]
    fn reserved_tokens_are_kept_once() {
        let v = VocabSpec::build(vec!["_NAME_0", "x", "</s>"], 10, &["_NAME_0".into(), "_NAME_1".into()]).unwrap();
        assert_eq!(v.id("_NAME_0"), 4);
        assert_eq!(v.id("_NAME_1"), 5);
        assert_eq!(v.tokens().iter().filter(|t| *t == EOS).count(), 1);
        assert!(VocabSpec::build(corpus(), 4, &[]).is_err());
    }

    #[test]
    fn json_round_trip_preserves_ids() {
        let v = VocabSpec::build(corpus(), 100, &[]).unwrap();
        let back = VocabSpec::from_json(&v.to_json()).unwrap();
        assert_eq!(v, back);
        assert!(VocabSpec::from_json(r#"{"max_size":9,"tokens":["a"]}"#).is_err());
    }
}
