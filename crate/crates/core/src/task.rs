use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error};

/// The three reference-aware modelling tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Recipe,
    Dialogue,
    Coref,
}

/// Named data partitions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Recipe => "recipe",
            Task::Dialogue => "dialogue",
            Task::Coref => "coref",
        }
    }

    /// File name of a prepared split, e.g. `recipe.train.jsonl`.
    pub fn split_file(self, split: Split) -> String {
        format!("{}.{}.jsonl", self.as_str(), split.as_str())
    }

    /// File name of the dialogue database table.
    pub fn table_file(self) -> String {
        format!("{}.table.csv", self.as_str())
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "recipe" | "recipes" => Ok(Task::Recipe),
            "dialogue" | "dialog" | "table" => Ok(Task::Dialogue),
            "coref" => Ok(Task::Coref),
            other => Err(invalid(format!("unknown task {other:?}"))),
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" | "dev" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(invalid(format!("unknown split {other:?}"))),
        }
    }
}
