//! One train-then-evaluate run, and the comparisons built from several.

use serde::{Deserialize, Serialize};

use crate::data::{Corpus, LengthMode};
use crate::error::Result;
use crate::metrics::{evaluate, Evaluation, TdcfCosts};
use crate::model::{Classifier, ModelConfig};
use crate::rng;
use crate::train::{fit, Checkpoint, EpochRecord, FitOutcome, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub costs: TdcfCosts,
    pub eval_mode: LengthMode,
    /// Scoring threads for the eval split.
    pub jobs: usize,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub fit: FitOutcome,
    pub eval: Evaluation,
}

/// Seed for parameter initialization, derived from the training seed.
pub fn init_seed(train_seed: u64) -> u64 {
    rng::mix(&[train_seed, 0x1417])
}

/// Initializes, trains on `train`, early-stops on `dev`, averages the top-k
/// checkpoints and scores `eval` with the averaged model.
pub fn run(
    corpus: &Corpus,
    settings: &RunSettings,
    on_epoch: impl FnMut(&EpochRecord, &Checkpoint) -> Result<()>,
) -> Result<RunResult> {
    let model = Classifier::new(settings.model.clone(), init_seed(settings.train.seed))?;
    let fit = fit(model, &corpus.train, &corpus.dev, &settings.train, on_epoch)?;
    let eval = evaluate(
        &fit.model,
        &corpus.eval,
        settings.eval_mode,
        settings.train.target_t,
        &settings.costs,
        settings.jobs,
    )?;
    Ok(RunResult { fit, eval })
}

/// Median; the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(v[n / 2]),
        _ => Some((v[n / 2 - 1] + v[n / 2]) / 2.0),
    }
}
