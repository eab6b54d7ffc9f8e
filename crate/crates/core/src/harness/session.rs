use std::collections::BTreeSet;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::beam::{beam_decode, DialogueStepper, RecipeStepper};
use super::bleu::{corpus_bleu, BleuScore};
use super::config::TrainConfig;
use super::data::{Corpus, Splits};
use super::perplexity::{perplexity_report, PerplexityReport};
use super::train::{train, DialogueObjective, SgdSettings, TrainLog};
use crate::coref_model::{AnnotatedDocument, CorefConfig, CorefModel, CorefVariant};
use crate::corpus::{build_dialogue_vocab, CorefRecord, DatabaseTable, RecipeRecord, VocabSpec};
use crate::error::{invalid, Error, Result};
use crate::mixture::Mode;
use crate::numcore::{checkpoint, ParamStore};
use crate::recipe_model::{RecipeConfig, RecipeExample, RecipeModel};
use crate::table_model::{DialogueExample, TableConfig, TableIds, TableModel};
use crate::task::{Split, Task};
use crate::BUILD_ID;

/// A task model together with any fixed input it needs.
#[derive(Clone, Debug)]
pub enum TaskModel {
    Recipe(RecipeModel),
    Dialogue { model: TableModel, table: TableIds },
    Coref(CorefModel),
}

/// Vocabulary-encoded examples of one split.
#[derive(Clone, Debug, PartialEq)]
pub enum Encoded {
    Recipe(Vec<RecipeExample>),
    Dialogue(Vec<DialogueExample>),
    Coref(Vec<AnnotatedDocument>),
}

impl Encoded {
    pub fn len(&self) -> usize {
        match self {
            Encoded::Recipe(v) => v.len(),
            Encoded::Dialogue(v) => v.len(),
            Encoded::Coref(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Ids of every scored target, end markers included.
    pub fn targets(&self, eos: usize) -> BTreeSet<usize> {
        let mut out = BTreeSet::from([eos]);
        match self {
            Encoded::Recipe(v) => out.extend(v.iter().flat_map(|e| e.recipe.iter().copied())),
            Encoded::Dialogue(v) => out.extend(
                v.iter()
                    .flat_map(|e| e.machine_turns().flat_map(move |i| e.turns[i].iter().copied())),
            ),
            Encoded::Coref(v) => out.extend(v.iter().flat_map(|d| d.tokens.iter().copied())),
        }
        out
    }
}

/// Perplexities of one split, with enough context to reproduce them.
#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub task: Task,
    pub split: Split,
    pub mode: Mode,
    pub build_id: String,
    pub config: TrainConfig,
    /// What the `reference` class holds for this task.
    pub reference_class: &'static str,
    /// End markers are scored tokens in the `word` class.
    pub eos_counted: bool,
    pub examples: usize,
    pub perplexity: PerplexityReport,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Generation {
    pub example: usize,
    /// Machine turn index for dialogues.
    pub turn: Option<usize>,
    pub tokens: Vec<String>,
    pub reference: Vec<String>,
    pub log_prob: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GenerationReport {
    pub task: Task,
    pub split: Split,
    pub build_id: String,
    pub config: TrainConfig,
    pub beam_width: usize,
    pub max_len: usize,
    pub bleu: BleuScore,
    pub outputs: Vec<Generation>,
}

/// Parameters, vocabulary and model structure for one task: the in-memory
/// form of a checkpoint.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub config: TrainConfig,
    pub vocab: VocabSpec,
    pub store: ParamStore,
    pub model: TaskModel,
    /// Target ids that occur in the training split.
    pub seen_targets: BTreeSet<usize>,
    /// The database for the dialogue task.
    pub table: Option<DatabaseTable>,
}

fn recipe_tokens(records: &[RecipeRecord]) -> impl Iterator<Item = &str> {
    records.iter().flat_map(|r| r.tokens())
}

fn coref_tokens(records: &[CorefRecord]) -> impl Iterator<Item = &str> {
    records.iter().flat_map(|r| r.tokens.iter().map(String::as_str))
}

fn build_model(
    config: &TrainConfig,
    vocab_size: usize,
    table: Option<&TableIds>,
    store: &mut ParamStore,
) -> Result<TaskModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (bos, eos) = (VocabSpec::BOS_ID, VocabSpec::EOS_ID);
    Ok(match config.task {
        Task::Recipe => TaskModel::Recipe(RecipeModel::new(
            store,
            &mut rng,
            RecipeConfig {
                vocab_size,
                embed_dim: config.embed_dim,
                hidden_dim: config.hidden_dim,
                attention_dim: config.attention_dim,
                bos,
                eos,
            },
            config.mode,
        )?),
        Task::Dialogue => TaskModel::Dialogue {
            model: TableModel::new(
                store,
                &mut rng,
                TableConfig {
                    vocab_size,
                    embed_dim: config.embed_dim,
                    hidden_dim: config.hidden_dim,
                    attention_dim: config.attention_dim,
                    sentence_attention: config.sentence_attention,
                    bos,
                    eos,
                },
                config.mode,
            )?,
            table: table.cloned().ok_or_else(|| invalid("dialogue model without a table"))?,
        },
        Task::Coref => {
            let variant = match config.mode {
                Mode::VocabOnly => CorefVariant::PlainLm,
                _ => CorefVariant::Pointer,
            };
            TaskModel::Coref(CorefModel::new(
                store,
                &mut rng,
                CorefConfig {
                    vocab_size,
                    embed_dim: config.embed_dim,
                    hidden_dim: config.hidden_dim,
                    attention_dim: config.attention_dim,
                    bos,
                    eos,
                },
                variant,
            )?)
        }
    })
}

impl TrainedModel {
    /// Builds the vocabulary from the training split and initializes a fresh
    /// model, copying same-named parameters from `config.init_checkpoint`
    /// when one is set.
    pub fn init(config: &TrainConfig, corpus: &Corpus) -> Result<Self> {
        config.validate()?;
        if corpus.task() != config.task {
            return Err(invalid(format!(
                "config is for the {} task but the corpus holds {} data",
                config.task,
                corpus.task()
            )));
        }
        let cap = config.vocab_cap();
        let (vocab, table) = match corpus {
            Corpus::Recipe(s) => (VocabSpec::build(recipe_tokens(&s.train), cap, &[])?, None),
            Corpus::Dialogue { table, dialogues } => {
                (build_dialogue_vocab(&dialogues.train, table, cap)?, Some(table.clone()))
            }
            Corpus::Coref(s) => (VocabSpec::build(coref_tokens(&s.train), cap, &[])?, None),
        };
        let mut store = ParamStore::new();
        let table_ids = table.as_ref().map(|t| t.encode(&vocab));
        let model = build_model(config, vocab.len(), table_ids.as_ref(), &mut store)?;
        let mut trained = TrainedModel {
            config: config.clone(),
            vocab,
            store,
            model,
            seen_targets: BTreeSet::new(),
            table,
        };
        trained.seen_targets = trained.encode(corpus, Split::Train).targets(VocabSpec::EOS_ID);
        if let Some(path) = &config.init_checkpoint {
            let init = TrainedModel::load(path)?;
            if init.vocab != trained.vocab {
                return Err(Error::Checkpoint(format!(
                    "{}: vocabulary differs from the one built for this corpus",
                    path.display()
                )));
            }
            let copied = trained.store.copy_matching(&init.store)?;
            log::info!("initialized {} of {} parameters from {}", copied.len(), trained.store.len(), path.display());
        }
        Ok(trained)
    }

    pub fn task(&self) -> Task {
        self.config.task
    }

    pub fn encode(&self, corpus: &Corpus, split: Split) -> Encoded {
        match corpus {
            Corpus::Recipe(s) => Encoded::Recipe(s.get(split).iter().map(|r| r.encode(&self.vocab)).collect()),
            Corpus::Dialogue { dialogues, .. } => {
                Encoded::Dialogue(dialogues.get(split).iter().map(|r| r.encode(&self.vocab)).collect())
            }
            Corpus::Coref(s) => Encoded::Coref(s.get(split).iter().map(|r| r.encode(&self.vocab)).collect()),
        }
    }

    pub fn encode_all(&self, corpus: &Corpus) -> Splits<Encoded> {
        Splits {
            train: self.encode(corpus, Split::Train),
            valid: self.encode(corpus, Split::Valid),
            test: self.encode(corpus, Split::Test),
        }
    }

    fn sgd(&self) -> SgdSettings {
        SgdSettings {
            lr: self.config.lr,
            lr_decay: self.config.lr_decay,
            clip_norm: self.config.clip_norm,
            epochs: self.config.epochs,
            batch_size: self.config.batch_size,
            seed: self.config.seed.wrapping_add(1),
        }
    }

    /// Trains on the training split, selecting parameters by validation NLL.
    pub fn train(&mut self, corpus: &Corpus) -> Result<TrainLog> {
        let data = self.encode_all(corpus);
        let settings = self.sgd();
        let store = &mut self.store;
        match (&self.model, &data.train, &data.valid) {
            (TaskModel::Recipe(m), Encoded::Recipe(tr), Encoded::Recipe(va)) => train(store, m, tr, va, &settings),
            (TaskModel::Dialogue { model, table }, Encoded::Dialogue(tr), Encoded::Dialogue(va)) => {
                train(store, &DialogueObjective { model, table }, tr, va, &settings)
            }
            (TaskModel::Coref(m), Encoded::Coref(tr), Encoded::Coref(va)) => train(store, m, tr, va, &settings),
            _ => Err(invalid("corpus does not match the model task")),
        }
    }

    /// Per-class perplexity of already-encoded examples.
    pub fn perplexity(&self, examples: &Encoded) -> Result<PerplexityReport> {
        let (store, seen) = (&self.store, &self.seen_targets);
        match (&self.model, examples) {
            (TaskModel::Recipe(m), Encoded::Recipe(e)) => perplexity_report(store, m, e, seen),
            (TaskModel::Dialogue { model, table }, Encoded::Dialogue(e)) => {
                perplexity_report(store, &DialogueObjective { model, table }, e, seen)
            }
            (TaskModel::Coref(m), Encoded::Coref(e)) => perplexity_report(store, m, e, seen),
            _ => Err(invalid("examples do not match the model task")),
        }
    }

    pub fn evaluate(&self, corpus: &Corpus, split: Split) -> Result<EvalReport> {
        let examples = self.encode(corpus, split);
        Ok(EvalReport {
            task: self.task(),
            split,
            mode: self.config.mode,
            build_id: BUILD_ID.to_string(),
            config: self.config.clone(),
            reference_class: match self.task() {
                Task::Recipe => "ingredient",
                Task::Dialogue => "table",
                Task::Coref => "entity",
            },
            eos_counted: true,
            examples: examples.len(),
            perplexity: self.perplexity(&examples)?,
        })
    }

    /// Beam-decodes up to `limit` examples of `split` and scores the top
    /// hypotheses with corpus BLEU against the references. Dialogues
    /// generate every machine utterance from its true history.
    pub fn generate(
        &self,
        corpus: &Corpus,
        split: Split,
        beam_width: usize,
        max_len: usize,
        limit: Option<usize>,
    ) -> Result<GenerationReport> {
        let examples = self.encode(corpus, split);
        let n = limit.map_or(examples.len(), |l| l.min(examples.len()));
        let outputs: Vec<Generation> = match (&self.model, &examples) {
            (TaskModel::Recipe(m), Encoded::Recipe(e)) => e[..n]
                .par_iter()
                .enumerate()
                .map(|(k, ex)| {
                    let stepper = RecipeStepper::new(m, &self.store, ex, VocabSpec::UNK_ID)?;
                    let best = beam_decode(&stepper, beam_width, max_len)?.remove(0);
                    Ok(Generation {
                        example: k,
                        turn: None,
                        tokens: best
                            .symbols
                            .iter()
                            .map(|&s| stepper.surface(s, |id| self.vocab.token(id)).to_string())
                            .collect(),
                        reference: ex.recipe_surfaces.clone(),
                        log_prob: best.log_prob,
                    })
                })
                .collect::<Result<_>>()?,
            (TaskModel::Dialogue { model, table }, Encoded::Dialogue(e)) => {
                let jobs: Vec<(usize, usize)> = e[..n]
                    .iter()
                    .enumerate()
                    .flat_map(|(k, ex)| ex.machine_turns().map(move |t| (k, t)))
                    .collect();
                jobs.par_iter()
                    .map(|&(k, turn)| {
                        let stepper = DialogueStepper::new(model, &self.store, table, &e[k], turn)?;
                        let best = beam_decode(&stepper, beam_width, max_len)?.remove(0);
                        Ok(Generation {
                            example: k,
                            turn: Some(turn),
                            tokens: best.symbols.iter().map(|&s| self.vocab.token(s).to_string()).collect(),
                            reference: self.vocab.decode(&e[k].turns[turn]).into_iter().map(String::from).collect(),
                            log_prob: best.log_prob,
                        })
                    })
                    .collect::<Result<_>>()?
            }
            (TaskModel::Coref(_), _) => return Err(invalid("generation is not supported for the coref task")),
            _ => return Err(invalid("examples do not match the model task")),
        };
        if outputs.is_empty() {
            return Err(Error::EmptyInput { op: "generate" });
        }
        let cands: Vec<Vec<String>> = outputs.iter().map(|g| g.tokens.clone()).collect();
        let refs: Vec<Vec<String>> = outputs.iter().map(|g| g.reference.clone()).collect();
        Ok(GenerationReport {
            task: self.task(),
            split,
            build_id: BUILD_ID.to_string(),
            config: self.config.clone(),
            beam_width,
            max_len,
            bleu: corpus_bleu(&cands, &refs)?,
            outputs,
        })
    }

    pub fn checkpoint_bytes(&self) -> Result<Vec<u8>> {
        let mut meta = checkpoint::Metadata::new();
        meta.insert("task".into(), self.task().to_string());
        meta.insert("config".into(), self.config.to_text());
        meta.insert("vocab".into(), self.vocab.to_json());
        meta.insert("seen_targets".into(), serde_json::to_string(&self.seen_targets)?);
        meta.insert("build_id".into(), BUILD_ID.into());
        if let Some(t) = &self.table {
            meta.insert("table".into(), serde_json::to_string(t)?);
        }
        Ok(checkpoint::encode(&self.store, &meta))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.checkpoint_bytes()?)?;
        Ok(())
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let (loaded, meta) = checkpoint::decode(bytes)?;
        let field = |k: &str| {
            meta.get(k)
                .ok_or_else(|| Error::Checkpoint(format!("metadata has no {k:?} entry")))
        };
        let task: Task = field("task")?.parse()?;
        let mut config = TrainConfig::new(task);
        config.apply_text(field("config")?, Path::new("<checkpoint config>"))?;
        let vocab = VocabSpec::from_json(field("vocab")?)?;
        let seen_targets: BTreeSet<usize> = serde_json::from_str(field("seen_targets")?)?;
        let table: Option<DatabaseTable> = meta.get("table").map(|t| serde_json::from_str(t)).transpose()?;
        let table_ids = table.as_ref().map(|t| t.encode(&vocab));
        let mut store = ParamStore::new();
        let model = build_model(&config, vocab.len(), table_ids.as_ref(), &mut store)?;
        if loaded.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, the model has {}",
                loaded.len(),
                store.len()
            )));
        }
        let copied = store.copy_matching(&loaded)?;
        if copied.len() != store.len() {
            return Err(Error::Checkpoint("checkpoint parameter names do not match the model".into()));
        }
        Ok(TrainedModel {
            config,
            vocab,
            store,
            model,
            seen_targets,
            table,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_checkpoint_bytes(&std::fs::read(path)?)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}
