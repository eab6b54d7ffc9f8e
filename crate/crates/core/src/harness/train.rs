use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coref_model::{AnnotatedDocument, CorefModel};
use crate::error::{Error, Result};
use crate::mixture::{ScoredToken, LOG_FLOOR};
use crate::numcore::{ParamStore, Tape, Var};
use crate::recipe_model::{RecipeExample, RecipeModel};
use crate::table_model::{DialogueExample, TableIds, TableModel};

/// A model plus whatever fixed context it needs, viewed as a per-example
/// loss and a per-token scorer.
pub trait Objective: Sync {
    type Example: Sync;

    /// Total negative log likelihood of `ex`. `floor` clamps each token's
    /// log probability from below.
    fn loss(&self, tape: &mut Tape<'_>, ex: &Self::Example, floor: Option<f64>) -> Result<Var>;

    /// Per-token log probabilities in the model's own mode.
    fn score(&self, tape: &mut Tape<'_>, ex: &Self::Example) -> Result<Vec<ScoredToken>>;

    /// Number of scored tokens in `ex`, end markers included.
    fn num_tokens(&self, ex: &Self::Example) -> usize;
}

impl Objective for RecipeModel {
    type Example = RecipeExample;

    fn loss(&self, tape: &mut Tape<'_>, ex: &RecipeExample, floor: Option<f64>) -> Result<Var> {
        self.sequence_nll(tape, ex, self.mode, floor)
    }

    fn score(&self, tape: &mut Tape<'_>, ex: &RecipeExample) -> Result<Vec<ScoredToken>> {
        RecipeModel::score(self, tape, ex)
    }

    fn num_tokens(&self, ex: &RecipeExample) -> usize {
        ex.recipe.len() + 1
    }
}

/// The table model bound to its database.
pub struct DialogueObjective<'a> {
    pub model: &'a TableModel,
    pub table: &'a TableIds,
}

impl Objective for DialogueObjective<'_> {
    type Example = DialogueExample;

    fn loss(&self, tape: &mut Tape<'_>, ex: &DialogueExample, floor: Option<f64>) -> Result<Var> {
        self.model.dialogue_nll(tape, self.table, ex, self.model.mode, floor)
    }

    fn score(&self, tape: &mut Tape<'_>, ex: &DialogueExample) -> Result<Vec<ScoredToken>> {
        self.model.score(tape, self.table, ex)
    }

    fn num_tokens(&self, ex: &DialogueExample) -> usize {
        ex.machine_turns().map(|i| ex.turns[i].len() + 1).sum()
    }
}

impl Objective for CorefModel {
    type Example = AnnotatedDocument;

    fn loss(&self, tape: &mut Tape<'_>, ex: &AnnotatedDocument, floor: Option<f64>) -> Result<Var> {
        self.document_nll(tape, ex, floor)
    }

    fn score(&self, tape: &mut Tape<'_>, ex: &AnnotatedDocument) -> Result<Vec<ScoredToken>> {
        CorefModel::score(self, tape, ex)
    }

    fn num_tokens(&self, ex: &AnnotatedDocument) -> usize {
        ex.tokens.len() + 1
    }
}

/// Optimizer settings for [`train`].
#[derive(Clone, Debug, PartialEq)]
pub struct SgdSettings {
    pub lr: f64,
    pub lr_decay: f64,
    pub clip_norm: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean per-token training NLL over the epoch, with the log floor applied.
    pub train_nll: f64,
    /// Mean per-token validation NLL, if there is a validation set.
    pub valid_nll: Option<f64>,
    pub mean_grad_norm: f64,
    pub improved: bool,
}

impl EpochLog {
    pub fn line(&self) -> String {
        let valid = self.valid_nll.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
        format!(
            "epoch {} lr {} train_nll {:.6} valid_nll {} grad_norm {:.4}{}",
            self.epoch,
            self.lr,
            self.train_nll,
            valid,
            self.mean_grad_norm,
            if self.improved { " *" } else { "" }
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were kept (0 means the initial parameters).
    pub best_epoch: usize,
    pub best_valid_nll: Option<f64>,
}

impl TrainLog {
    pub fn text(&self) -> String {
        let mut out: String = self.epochs.iter().map(|e| e.line() + "\n").collect();
        out.push_str(&format!("best_epoch {}\n", self.best_epoch));
        out
    }
}

/// Mean per-token NLL of `examples` without a floor, evaluated in parallel.
pub fn mean_nll<O: Objective>(store: &ParamStore, obj: &O, examples: &[O::Example]) -> Result<f64> {
    let parts: Vec<(f64, usize)> = examples
        .par_iter()
        .map(|ex| {
            let mut tape = Tape::new(store);
            let scored = obj.score(&mut tape, ex)?;
            Ok((scored.iter().map(|s| -s.log_prob).sum(), scored.len()))
        })
        .collect::<Result<_>>()?;
    let (nll, n) = parts.iter().fold((0.0, 0), |(a, b), (x, y)| (a + x, b + y));
    Ok(if n == 0 { 0.0 } else { nll / n as f64 })
}

/// Pure SGD with global-norm clipping.
///
/// Each epoch visits the training set in a seeded random order. After every
/// epoch the validation NLL is measured; the parameters with the best value
/// are restored at the end, and the learning rate is multiplied by
/// `lr_decay` after any epoch that fails to improve it.
pub fn train<O: Objective>(
    store: &mut ParamStore,
    obj: &O,
    train_set: &[O::Example],
    valid_set: &[O::Example],
    settings: &SgdSettings,
) -> Result<TrainLog> {
    if train_set.is_empty() {
        return Err(Error::EmptyInput { op: "train" });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut lr = settings.lr;
    let mut best_valid = if valid_set.is_empty() {
        None
    } else {
        Some(mean_nll(store, obj, valid_set)?)
    };
    let mut best_store = store.clone();
    let mut best_epoch = 0;
    let mut epochs = Vec::with_capacity(settings.epochs);

    for epoch in 1..=settings.epochs {
        order.shuffle(&mut rng);
        let mut total_nll = 0.0;
        let mut total_tokens = 0usize;
        let mut norm_sum = 0.0;
        let batches: Vec<&[usize]> = order.chunks(settings.batch_size).collect();
        for (b, batch) in batches.iter().enumerate() {
            store.zero_grad();
            for &i in batch.iter() {
                let tape_store: &ParamStore = store;
                let mut tape = Tape::new(tape_store);
                let loss = obj.loss(&mut tape, &train_set[i], Some(LOG_FLOOR))?;
                let value = tape.scalar(loss);
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, batch: b });
                }
                let grads = tape.backward(loss)?;
                total_nll += value;
                total_tokens += obj.num_tokens(&train_set[i]);
                drop(tape);
                store.accumulate(&grads);
            }
            if batch.len() > 1 {
                store.scale_grads(1.0 / batch.len() as f64);
            }
            let norm = store.clip_grad_norm(settings.clip_norm);
            if !norm.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            norm_sum += norm;
            store.sgd_step(lr);
        }

        let valid_nll = if valid_set.is_empty() {
            None
        } else {
            Some(mean_nll(store, obj, valid_set)?)
        };
        let improved = match (valid_nll, best_valid) {
            (Some(v), Some(b)) => v < b,
            (Some(_), None) => true,
            (None, _) => true,
        };
        epochs.push(EpochLog {
            epoch,
            lr,
            train_nll: total_nll / total_tokens.max(1) as f64,
            valid_nll,
            mean_grad_norm: norm_sum / batches.len() as f64,
            improved,
        });
        log::info!("{}", epochs.last().expect("just pushed").line());
        if improved {
            best_valid = valid_nll.or(best_valid);
            best_store = store.clone();
            best_epoch = epoch;
        } else {
            lr *= settings.lr_decay;
        }
    }
    *store = best_store;
    Ok(TrainLog {
        epochs,
        best_epoch,
        best_valid_nll: best_valid,
    })
}
