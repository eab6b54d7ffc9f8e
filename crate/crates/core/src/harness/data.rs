use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::corpus::synthetic::Manifest;
use crate::corpus::{
    load_coref_docs, load_dialogue_records, load_recipes, load_table, CorefRecord, CorpusSplit, DatabaseTable,
    DialogueRecord, RecipeRecord,
};
use crate::error::{invalid, Error, Result};
use crate::task::{Split, Task};

/// One value per data partition.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Splits<T> {
    pub train: T,
    pub valid: T,
    pub test: T,
}

impl<T> Splits<T> {
    pub fn get(&self, split: Split) -> &T {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Splits<U> {
        Splits {
            train: f(&self.train),
            valid: f(&self.valid),
            test: f(&self.test),
        }
    }

    pub fn try_map<U>(&self, mut f: impl FnMut(&T) -> Result<U>) -> Result<Splits<U>> {
        Ok(Splits {
            train: f(&self.train)?,
            valid: f(&self.valid)?,
            test: f(&self.test)?,
        })
    }
}

/// A prepared corpus after preprocessing, before vocabulary encoding.
#[derive(Clone, Debug, PartialEq)]
pub enum Corpus {
    Recipe(Splits<Vec<RecipeRecord>>),
    Dialogue {
        table: DatabaseTable,
        dialogues: Splits<Vec<DialogueRecord>>,
    },
    Coref(Splits<Vec<CorefRecord>>),
}

impl Corpus {
    pub fn task(&self) -> Task {
        match self {
            Corpus::Recipe(_) => Task::Recipe,
            Corpus::Dialogue { .. } => Task::Dialogue,
            Corpus::Coref(_) => Task::Coref,
        }
    }

    pub fn len(&self, split: Split) -> usize {
        match self {
            Corpus::Recipe(s) => s.get(split).len(),
            Corpus::Dialogue { dialogues, .. } => dialogues.get(split).len(),
            Corpus::Coref(s) => s.get(split).len(),
        }
    }

    /// Loads a directory written by [`prepare_from_file`] or
    /// [`crate::corpus::synthetic::make_synthetic`].
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest = Manifest::load(dir)?;
        let file = |key: &str| -> Result<PathBuf> {
            manifest
                .files
                .get(key)
                .map(|f| dir.join(f))
                .ok_or_else(|| Error::Corpus(format!("{}: manifest lists no {key} file", dir.display())))
        };
        let split_paths = Splits {
            train: file("train")?,
            valid: file("valid")?,
            test: file("test")?,
        };
        Ok(match manifest.task {
            Task::Recipe => Corpus::Recipe(split_paths.try_map(|p| Ok(load_recipes(p)?.records))?),
            Task::Dialogue => {
                let table = load_table(file("table")?)?;
                let dialogues = split_paths.try_map(|p| Ok(load_dialogue_records(p, &table)?.records))?;
                Corpus::Dialogue { table, dialogues }
            }
            Task::Coref => Corpus::Coref(split_paths.try_map(|p| Ok(load_coref_docs(p)?.records))?),
        })
    }
}

/// Splits a raw JSON-lines file 80/10/10 into a prepared directory.
///
/// Lines are copied verbatim, so preprocessing happens when the directory is
/// loaded. The manifest records the zero-based line numbers of the non-blank
/// input lines in each split. Dialogue corpora also need `table`, which is
/// copied next to the splits.
pub fn prepare_from_file(
    task: Task,
    input: impl AsRef<Path>,
    table: Option<&Path>,
    out: impl AsRef<Path>,
    seed: u64,
) -> Result<Manifest> {
    let input = input.as_ref();
    let out = out.as_ref();
    let text = fs::read_to_string(input)?;
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();
    if lines.is_empty() {
        return Err(Error::Corpus(format!("{}: no records", input.display())));
    }
    fs::create_dir_all(out)?;
    let split = CorpusSplit::standard(lines.len(), seed);
    let mut manifest = Manifest {
        task,
        seed: Some(seed),
        source: input.display().to_string(),
        files: BTreeMap::new(),
        splits: BTreeMap::new(),
        held_out: Vec::new(),
    };
    for (name, ids) in [(Split::Train, &split.train), (Split::Valid, &split.valid), (Split::Test, &split.test)] {
        let file = task.split_file(name);
        let body: String = ids.iter().map(|&i| format!("{}\n", lines[i].1)).collect();
        fs::write(out.join(&file), body)?;
        manifest.files.insert(name.to_string(), file);
        manifest.splits.insert(name.to_string(), ids.iter().map(|&i| lines[i].0).collect());
    }
    if task == Task::Dialogue {
        let table = table.ok_or_else(|| invalid("the dialogue task needs a table file"))?;
        load_table(table)?;
        let file = task.table_file();
        fs::copy(table, out.join(&file))?;
        manifest.files.insert("table".into(), file);
    }
    manifest.save(out)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthetic::{make_synthetic, SyntheticSpec};

    #[test]
    fn synthetic_directories_load() {
        let dir = tempfile::tempdir().unwrap();
        for task in [Task::Recipe, Task::Dialogue, Task::Coref] {
            let sub = dir.path().join(task.as_str());
            make_synthetic(&SyntheticSpec::new(task, 4, 30), &sub).unwrap();
            let c = Corpus::load(&sub).unwrap();
            assert_eq!(c.task(), task);
            assert_eq!(c.len(Split::Train) + c.len(Split::Valid) + c.len(Split::Test), 30);
        }
    }

    #[test]
    fn raw_file_is_split_and_reloaded() {
        let dir = tempfile::tempdir().unwrap();
        let raw = dir.path().join("raw.jsonl");
        let line = r#"{"ingredients":["2 cup flour"],"recipe":"mix the flour with water and bake it for an hour ."}"#;
        fs::write(&raw, format!("{line}\n\n").repeat(20)).unwrap();
        let m = prepare_from_file(Task::Recipe, &raw, None, dir.path().join("out"), 3).unwrap();
        assert_eq!(m.splits["train"].len(), 16);
        assert!(m.splits.values().flatten().all(|i| i % 2 == 0));
        let c = Corpus::load(dir.path().join("out")).unwrap();
        assert_eq!(c.len(Split::Test), 2);
        assert!(prepare_from_file(Task::Dialogue, &raw, None, dir.path().join("d"), 3).is_err());
    }
}
