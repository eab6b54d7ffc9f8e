//! Training, evaluation, decoding and export around the three models.
//!
//! [`TrainedModel`] is the usual entry point: it builds a vocabulary and a
//! model from a prepared [`Corpus`], trains it, and saves or loads it as a
//! checkpoint. The lower-level pieces ([`train()`], [`perplexity_report`],
//! [`beam_decode`], [`corpus_bleu`]) work on any [`Objective`] or
//! [`StepModel`].

pub mod beam;
pub mod bleu;
pub mod config;
pub mod data;
pub mod heatmap;
pub mod perplexity;
pub mod session;
pub mod train;

pub use beam::{beam_decode, greedy_decode, DialogueStepper, Hypothesis, RecipeStepper, StepModel};
pub use bleu::{corpus_bleu, BleuScore};
pub use config::TrainConfig;
pub use data::{prepare_from_file, Corpus, Splits};
pub use heatmap::{HeatMap, HeatMapRow};
pub use perplexity::{perplexity_report, score_examples, ClassStats, PerplexityReport, TokenClass};
pub use session::{EvalReport, Encoded, Generation, GenerationReport, TaskModel, TrainedModel};
pub use train::{mean_nll, train, DialogueObjective, EpochLog, Objective, SgdSettings, TrainLog};
