//! Reading, preprocessing and vocabulary construction for the three corpora,
//! plus deterministic synthetic fixtures.

mod coref;
mod dialogue;
mod recipes;
pub mod split;
pub mod synthetic;
mod tokenize;
mod vocab;

pub use coref::{load_coref_docs, parse_coref_docs, preprocess_document, CorefLine, CorefRecord, MentionSpan};
pub use dialogue::{
    build_dialogue_vocab, load_dialogue_records, load_dialogues, load_table, parse_dialogue_records, parse_table,
    special_token, DatabaseTable, DialogueLine, DialogueRecord, Speaker, Substitution, TurnLine,
};
pub use recipes::{
    load_recipes, parse_recipes, string_match, RecipeLine, RecipeRecord, MAX_RECIPE_TOKENS, MIN_RECIPE_TOKENS,
};
pub use split::{kfold, CorpusSplit};
pub use tokenize::{is_special_token, normalize, tokenize};
pub use vocab::{VocabSpec, BOS, EMPTY, EOS, UNK};

/// Records parsed from a file together with the lines that were skipped.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadOutcome<T> {
    pub records: Vec<T>,
    pub skipped: Vec<Skipped>,
}

/// A skipped input line and the reason, 1-based.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Skipped {
    pub line: usize,
    pub reason: String,
}

impl<T> LoadOutcome<T> {
    fn new() -> Self {
        LoadOutcome {
            records: Vec::new(),
            skipped: Vec::new(),
        }
    }

    fn skip(&mut self, path: &std::path::Path, line: usize, reason: impl Into<String>) {
        let reason = reason.into();
        log::warn!("{}:{line}: skipped: {reason}", path.display());
        self.skipped.push(Skipped { line, reason });
    }
}
