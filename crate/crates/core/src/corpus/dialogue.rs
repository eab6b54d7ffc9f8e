use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tokenize::tokenize;
use super::vocab::{VocabSpec, EMPTY};
use super::LoadOutcome;
use crate::error::{Error, Result};
use crate::table_model::{DialogueExample, TableIds};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Speaker {
    #[serde(rename = "M")]
    Machine,
    #[serde(rename = "U")]
    User,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnLine {
    pub speaker: Speaker,
    pub text: String,
}

/// One line of the dialogue JSON-lines format.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueLine {
    pub turns: Vec<TurnLine>,
}

/// A dialogue after tokenization and table substitution; utterances
/// alternate machine, user, machine, …
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueRecord {
    pub turns: Vec<Vec<String>>,
}

impl DialogueRecord {
    pub fn encode(&self, vocab: &VocabSpec) -> DialogueExample {
        DialogueExample {
            turns: self.turns.iter().map(|t| vocab.encode(t)).collect(),
        }
    }

    pub fn machine_utterances(&self) -> impl Iterator<Item = &Vec<String>> {
        self.turns.iter().step_by(2)
    }
}

/// `_NAME_3`-style placeholder for row `row` of a special column.
pub fn special_token(kind: &str, row: usize) -> String {
    format!("_{kind}_{row}")
}

fn special_kind(header: &str, col: usize) -> Option<&'static str> {
    if col == 0 {
        return Some("NAME");
    }
    match header {
        "addr" | "address" => Some("ADDR"),
        "postcode" | "post_code" => Some("POSTCODE"),
        "phone" | "phone_number" => Some("PHONE"),
        _ => None,
    }
}

/// A database table after cell normalization. Name, address, postcode and
/// phone cells hold per-row placeholders, other multi-token cells are joined
/// with `_`, and empty cells hold `_EMPTY`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatabaseTable {
    pub attributes: Vec<String>,
    pub cells: Vec<Vec<String>>,
    /// Tokenized original cell text.
    pub surfaces: Vec<Vec<Vec<String>>>,
}

impl DatabaseTable {
    pub fn rows(&self) -> usize {
        self.cells.len()
    }

    pub fn cols(&self) -> usize {
        self.attributes.len()
    }

    /// Attribute and cell tokens in first-appearance order, without repeats.
    pub fn tokens(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for t in self.attributes.iter().chain(self.cells.iter().flatten()) {
            if !out.contains(t) {
                out.push(t.clone());
            }
        }
        out
    }

    pub fn find(&self, token: &str) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (r, row) in self.cells.iter().enumerate() {
            for (c, t) in row.iter().enumerate() {
                if t == token {
                    out.push((r, c));
                }
            }
        }
        out
    }

    pub fn column(&self, attribute: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a == attribute)
    }

    pub fn encode(&self, vocab: &VocabSpec) -> TableIds {
        TableIds {
            attributes: vocab.encode(&self.attributes),
            cells: self.cells.iter().map(|r| vocab.encode(r)).collect(),
        }
    }

    /// Surface-to-token replacements for transcripts, longest surface first.
    pub fn substitution(&self) -> Substitution {
        let mut patterns: Vec<(Vec<String>, String)> = Vec::new();
        for (r, row) in self.cells.iter().enumerate() {
            for (c, token) in row.iter().enumerate() {
                let surface = &self.surfaces[r][c];
                if surface.is_empty() || (surface.len() == 1 && &surface[0] == token) {
                    continue;
                }
                match patterns.iter().find(|(s, _)| s == surface) {
                    Some((_, existing)) if existing != token => {
                        log::warn!("cell text {:?} maps to both {existing} and {token}; keeping {existing}", surface.join(" "));
                    }
                    Some(_) => {}
                    None => patterns.push((surface.clone(), token.clone())),
                }
            }
        }
        patterns.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        Substitution { patterns }
    }
}

/// Longest-match-first, left-to-right, non-overlapping token replacement.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Substitution {
    patterns: Vec<(Vec<String>, String)>,
}

impl Substitution {
    pub fn apply(&self, tokens: &[String]) -> Vec<String> {
        let mut out = Vec::with_capacity(tokens.len());
        let mut i = 0;
        while i < tokens.len() {
            let hit = self
                .patterns
                .iter()
                .find(|(s, _)| tokens.len() - i >= s.len() && tokens[i..i + s.len()] == s[..]);
            match hit {
                Some((s, rep)) => {
                    out.push(rep.clone());
                    i += s.len();
                }
                None => {
                    out.push(tokens[i].clone());
                    i += 1;
                }
            }
        }
        out
    }
}

pub fn parse_table<R: Read>(reader: R, path: &Path) -> Result<DatabaseTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::Corpus(format!("{}: table has no columns", path.display())));
    }
    let attributes: Vec<String> = headers.iter().map(|h| tokenize(h).join("_")).collect();
    let kinds: Vec<Option<&str>> = attributes.iter().enumerate().map(|(c, a)| special_kind(a, c)).collect();
    let mut cells = Vec::new();
    let mut surfaces = Vec::new();
    let mut names: Vec<Vec<String>> = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != attributes.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: r + 2,
                message: format!("expected {} cells, found {}", attributes.len(), rec.len()),
            });
        }
        let mut row = Vec::with_capacity(rec.len());
        let mut surf = Vec::with_capacity(rec.len());
        for (c, text) in rec.iter().enumerate() {
            let toks = tokenize(text);
            let token = if toks.is_empty() {
                EMPTY.to_string()
            } else if let Some(kind) = kinds[c] {
                special_token(kind, r)
            } else {
                toks.join("_")
            };
            if c == 0 {
                if toks.is_empty() {
                    return Err(Error::Corpus(format!("{}: row {} has no name", path.display(), r + 1)));
                }
                if names.contains(&toks) {
                    return Err(Error::Corpus(format!(
                        "{}: duplicate restaurant name {:?}",
                        path.display(),
                        toks.join(" ")
                    )));
                }
                names.push(toks.clone());
            }
            row.push(token);
            surf.push(toks);
        }
        cells.push(row);
        surfaces.push(surf);
    }
    if cells.is_empty() {
        return Err(Error::Corpus(format!("{}: table has no rows", path.display())));
    }
    Ok(DatabaseTable {
        attributes,
        cells,
        surfaces,
    })
}

pub fn load_table(path: impl AsRef<Path>) -> Result<DatabaseTable> {
    let path = path.as_ref();
    parse_table(File::open(path)?, path)
}

pub fn parse_dialogue_records<R: BufRead>(
    reader: R,
    path: &Path,
    table: &DatabaseTable,
) -> Result<LoadOutcome<DialogueRecord>> {
    let subst = table.substitution();
    let mut out = LoadOutcome::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: DialogueLine = match serde_json::from_str(&line) {
            Ok(p) => p,
            Err(e) => {
                out.skip(path, lineno, format!("malformed dialogue: {e}"));
                continue;
            }
        };
        if parsed.turns.is_empty() {
            out.skip(path, lineno, "dialogue has no turns");
            continue;
        }
        let alternating = parsed.turns.iter().enumerate().all(|(k, t)| {
            let want = if k % 2 == 0 { Speaker::Machine } else { Speaker::User };
            t.speaker == want
        });
        if !alternating {
            out.skip(path, lineno, "turns must alternate and start with the machine");
            continue;
        }
        let turns = parsed.turns.iter().map(|t| subst.apply(&tokenize(&t.text))).collect();
        out.records.push(DialogueRecord { turns });
    }
    Ok(out)
}

pub fn load_dialogue_records(path: impl AsRef<Path>, table: &DatabaseTable) -> Result<LoadOutcome<DialogueRecord>> {
    let path = path.as_ref();
    parse_dialogue_records(BufReader::new(File::open(path)?), path, table)
}

/// Vocabulary over transcript tokens, with every table token reserved.
pub fn build_dialogue_vocab(records: &[DialogueRecord], table: &DatabaseTable, max_size: usize) -> Result<VocabSpec> {
    let tokens = records.iter().flat_map(|r| r.turns.iter().flatten()).map(String::as_str);
    VocabSpec::build(tokens, max_size, &table.tokens())
}

/// Loads a table and a dialogue file and builds the vocabulary from them.
pub fn load_dialogues(
    dialogue_path: impl AsRef<Path>,
    table_path: impl AsRef<Path>,
    max_vocab: usize,
) -> Result<(Vec<DialogueExample>, TableIds, VocabSpec)> {
    let table = load_table(table_path)?;
    let records = load_dialogue_records(dialogue_path, &table)?.records;
    let vocab = build_dialogue_vocab(&records, &table, max_vocab)?;
    let examples = records.iter().map(|r| r.encode(&vocab)).collect();
    Ok((examples, table.encode(&vocab), vocab))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TABLE: &str = "name,food,address,postcode,phone,area\n\
        the nirala,indian,7 Milton Road Chesterton,cb4 1uy,01223 360966,north\n\
        nirala star,modern european,,cb2 1ab,01223 111111,centre\n";

    fn table() -> DatabaseTable {
        parse_table(TABLE.as_bytes(), Path::new("t.csv")).unwrap()
    }

    #[test]
    fn cells_become_placeholders() {
        let t = table();
        assert_eq!(t.attributes, ["name", "food", "address", "postcode", "phone", "area"]);
        assert_eq!(t.cells[0][2], "_ADDR_0");
        assert_eq!(t.cells[1][0], "_NAME_1");
        assert_eq!(t.cells[1][1], "modern_european");
        assert_eq!(t.cells[1][2], "_EMPTY");
        assert_eq!(t.cells[0][5], "north");
    }

    #[test]
    fn transcript_phrases_are_substituted_longest_first() {
        let t = table();
        let s = t.substitution();
        let toks = tokenize("The Nirala is at 7 Milton Road Chesterton , lovely");
        assert_eq!(s.apply(&toks), ["_NAME_0", "is", "at", "_ADDR_0", ",", "lovely"]);
        let toks = tokenize("nirala star serves modern european food");
        let once = s.apply(&toks);
        assert_eq!(once, ["_NAME_1", "serves", "modern_european", "food"]);
        assert_eq!(s.apply(&once), once);
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let dup = "name,food\nthe place,thai\nThe Place,indian\n";
        assert!(parse_table(dup.as_bytes(), Path::new("d.csv")).is_err());
    }

    #[test]
    fn non_alternating_dialogues_are_skipped() {
        let t = table();
        let good = r#"{"turns":[{"speaker":"M","text":"hello"},{"speaker":"U","text":"the nirala phone"}]}"#;
        let bad = r#"{"turns":[{"speaker":"U","text":"hi"}]}"#;
        let twice = r#"{"turns":[{"speaker":"M","text":"a"},{"speaker":"M","text":"b"}]}"#;
        let text = format!("{good}\n{bad}\n{twice}\n");
        let out = parse_dialogue_records(text.as_bytes(), Path::new("d.jsonl"), &t).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].turns[1], ["_NAME_0", "phone"]);
        assert_eq!(out.skipped.iter().map(|s| s.line).collect::<Vec<_>>(), vec![2, 3]);
    }

    #[test]
    fn vocab_contains_every_table_token() {
        let t = table();
        let rec = DialogueRecord {
            turns: vec![vec!["hello".into()]],
        };
        let v = build_dialogue_vocab(&[rec], &t, 100).unwrap();
        for tok in t.tokens() {
            assert!(v.contains(&tok), "{tok}");
        }
        let ids = t.encode(&v);
        assert_eq!(ids.cells[1][2], VocabSpec::EMPTY_ID);
    }
}
