use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mixture::Mode;
use crate::task::Task;

/// Training and model-shape settings.
///
/// Every field can be set from a flat `key = value` file or a command-line
/// flag of the same name; see [`TrainConfig::set`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: Task,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub attention_dim: usize,
    pub lr: f64,
    /// Multiplier applied to `lr` after an epoch that does not improve the
    /// validation NLL.
    pub lr_decay: f64,
    pub clip_norm: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub mode: Mode,
    pub sentence_attention: bool,
    pub init_checkpoint: Option<PathBuf>,
    /// Defaults to the per-task size when unset.
    pub max_vocab: Option<usize>,
}

impl TrainConfig {
    pub const KEYS: [&'static str; 14] = [
        "task",
        "hidden_dim",
        "embed_dim",
        "attention_dim",
        "lr",
        "lr_decay",
        "clip_norm",
        "epochs",
        "batch_size",
        "seed",
        "mode",
        "sentence_attention",
        "init_checkpoint",
        "max_vocab",
    ];

    pub fn new(task: Task) -> Self {
        TrainConfig {
            task,
            hidden_dim: 64,
            embed_dim: 32,
            attention_dim: 32,
            lr: 0.5,
            lr_decay: 0.5,
            clip_norm: 5.0,
            epochs: 10,
            batch_size: 1,
            seed: 1,
            mode: Mode::Supervised,
            sentence_attention: false,
            init_checkpoint: None,
            max_vocab: None,
        }
    }

    /// Vocabulary cap actually used for `task`.
    pub fn vocab_cap(&self) -> usize {
        self.max_vocab.unwrap_or(match self.task {
            Task::Recipe => 10_000,
            Task::Dialogue => 900,
            Task::Coref => 50_000,
        })
    }

    /// Sets one field from its textual form. Dashes in `key` are read as
    /// underscores.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        match key.as_str() {
            "task" => self.task = parse(&key, value)?,
            "hidden_dim" => self.hidden_dim = parse(&key, value)?,
            "embed_dim" => self.embed_dim = parse(&key, value)?,
            "attention_dim" => self.attention_dim = parse(&key, value)?,
            "lr" => self.lr = parse(&key, value)?,
            "lr_decay" => self.lr_decay = parse(&key, value)?,
            "clip_norm" => self.clip_norm = parse(&key, value)?,
            "epochs" => self.epochs = parse(&key, value)?,
            "batch_size" => self.batch_size = parse(&key, value)?,
            "seed" => self.seed = parse(&key, value)?,
            "mode" => self.mode = parse(&key, value)?,
            "sentence_attention" => self.sentence_attention = parse(&key, value)?,
            "init_checkpoint" => {
                self.init_checkpoint = if value.is_empty() || value == "none" {
                    None
                } else {
                    Some(PathBuf::from(value))
                }
            }
            "max_vocab" => {
                self.max_vocab = if value.is_empty() || value == "none" {
                    None
                } else {
                    Some(parse(&key, value)?)
                }
            }
            other => return Err(invalid(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a flat `key = value` file. Blank lines and lines starting
    /// with `#` are ignored.
    pub fn apply_text(&mut self, text: &str, path: &Path) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message: format!("expected key = value, found {line:?}"),
            })?;
            self.set(k, v).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.apply_text(&fs::read_to_string(path)?, path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.embed_dim == 0 || self.attention_dim == 0 {
            return Err(invalid("dimensions must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.clip_norm > 0.0) {
            return Err(invalid(format!("clip norm must be positive, got {}", self.clip_norm)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(invalid(format!("lr_decay must be in (0, 1], got {}", self.lr_decay)));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch size must be positive"));
        }
        if self.task == Task::Coref && self.mode == Mode::Latent {
            return Err(invalid("the coreference model has no latent mode; use supervised or vocab_only"));
        }
        if self.sentence_attention && self.task != Task::Dialogue {
            return Err(invalid("sentence attention only applies to the dialogue task"));
        }
        Ok(())
    }

    /// `key = value` lines in [`Self::KEYS`] order, readable by
    /// [`Self::apply_text`].
    pub fn to_text(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
        let values = [
            self.task.to_string(),
            self.hidden_dim.to_string(),
            self.embed_dim.to_string(),
            self.attention_dim.to_string(),
            self.lr.to_string(),
            self.lr_decay.to_string(),
            self.clip_norm.to_string(),
            self.epochs.to_string(),
            self.batch_size.to_string(),
            self.seed.to_string(),
            self.mode.to_string(),
            self.sentence_attention.to_string(),
            opt(self.init_checkpoint.as_ref().map(|p| p.display().to_string())),
            opt(self.max_vocab.map(|v| v.to_string())),
        ];
        Self::KEYS
            .iter()
            .zip(values)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| invalid(format!("bad value {value:?} for {key}: {e}")))
}
