//! Training protocol: weighted cross-entropy, Adam with L2 weight decay,
//! early stopping on validation loss and top-k checkpoint averaging.

mod adam;
mod checkpoint;
mod loss;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{batches, BatchMode, Label, LengthMode, Utterance};
use crate::error::{Error, Result};
use crate::model::{Classifier, Dropout, ParamStore};
use crate::rng;
use crate::tensor::{Tape, Tensor};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, ConfigEcho, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use loss::{sample_loss, weighted_cross_entropy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// `[w_bonafide, w_spoof]`; `None` means inverse class frequency of the
    /// training split.
    pub class_weights: Option<[f64; 2]>,
    pub patience: usize,
    pub max_epochs: usize,
    pub top_k_average: usize,
    pub seed: u64,
    pub target_t: usize,
    /// Length handling on the validation split.
    pub val_mode: LengthMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            weight_decay: 1e-4,
            batch_size: 20,
            class_weights: None,
            patience: 7,
            max_epochs: 100,
            top_k_average: 5,
            seed: 0,
            target_t: 200,
            val_mode: LengthMode::Fixed,
        }
    }
}

impl TrainConfig {
    /// Fine-tuning preset for full-scale models: `lr = 1e-6`, other values as default.
    pub fn full_preset() -> Self {
        TrainConfig {
            lr: 1e-6,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::config(m));
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return fail("lr must be finite and non-negative");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return fail("weight_decay must be finite and non-negative");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if self.patience == 0 {
            return fail("patience must be at least 1");
        }
        if self.top_k_average == 0 {
            return fail("top_k_average must be at least 1");
        }
        if self.max_epochs == 0 {
            return fail("max_epochs must be at least 1");
        }
        if self.target_t == 0 {
            return fail("target_t must be at least 1");
        }
        if let Some(w) = self.class_weights {
            if !w.iter().all(|v| v.is_finite() && *v > 0.0) {
                return fail("class_weights must be positive");
            }
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig::new(self.lr, self.weight_decay)
    }

    /// Explicit weights, or `N / (2·N_c)` counted over `train`.
    pub fn resolve_class_weights(&self, train: &[Utterance]) -> Result<[f64; 2]> {
        let labels: Vec<Label> = train.iter().map(|u| u.label).collect();
        self.class_weights_for(&labels)
    }

    /// As [`TrainConfig::resolve_class_weights`], from the labels alone.
    pub fn class_weights_for(&self, labels: &[Label]) -> Result<[f64; 2]> {
        if let Some(w) = self.class_weights {
            return Ok(w);
        }
        let n_spoof = labels.iter().filter(|&&l| l == Label::Spoof).count();
        let n_bona = labels.len() - n_spoof;
        if n_spoof == 0 || n_bona == 0 {
            return Err(Error::config(
                "inverse-frequency class weights need both classes in the training split",
            ));
        }
        let n = labels.len() as f64;
        Ok([n / (2.0 * n_bona as f64), n / (2.0 * n_spoof as f64)])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// Mean weighted loss over the epoch's samples, at the parameters each
    /// batch was evaluated with.
    pub mean_loss: f64,
    pub batches: usize,
}

/// Per-sample forward and backward on its own tape. Returns the weighted loss
/// and the parameter gradients in store order.
fn sample_gradient(
    model: &Classifier,
    features: &Tensor,
    label: Label,
    weights: [f64; 2],
    dropout: &mut Dropout,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let pass = model.forward(&mut tape, features, true, dropout)?;
    let loss = weighted_cross_entropy(&mut tape, pass.logits, &[label], weights)?;
    tape.backward(loss)?;
    let value = tape.value(loss).data()[0];
    let grads = pass
        .params
        .iter()
        .map(|&p| tape.take_grad(p).expect("parameters require grad"))
        .collect();
    Ok((value, grads))
}

/// One pass over `train` in fixed-length mode with one Adam step per batch.
///
/// Samples within a batch are differentiated in parallel on separate tapes
/// and their gradients summed in batch order, so the result does not depend
/// on the thread count. Dropout masks are keyed by (seed, epoch, batch,
/// sample, layer call).
pub fn train_epoch(
    model: &mut Classifier,
    state: &mut AdamState,
    train: &[Utterance],
    cfg: &TrainConfig,
    weights: [f64; 2],
    epoch: u64,
) -> Result<EpochStats> {
    cfg.validate()?;
    let adam = cfg.adam();
    let rate = model.config().dropout;
    let mode = BatchMode::Fixed { target_t: cfg.target_t };
    let mut total = 0.0;
    let mut n = 0usize;
    let mut n_batches = 0usize;
    for (bi, batch) in batches(train, cfg.batch_size, mode, Some(rng::mix(&[cfg.seed, epoch])))?.enumerate() {
        let per_sample: Vec<(f64, Vec<Tensor>)> = (0..batch.len())
            .into_par_iter()
            .map(|i| {
                let mut dropout = Dropout::new(rate, rng::mix(&[cfg.seed, epoch, bi as u64, i as u64]));
                sample_gradient(model, &batch.sample(i), batch.labels[i], weights, &mut dropout)
            })
            .collect::<Result<_>>()?;
        let inv_b = 1.0 / batch.len() as f64;
        let mut grads: Vec<Tensor> = model.params().iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        for (loss, g) in &per_sample {
            total += loss;
            for (acc, gi) in grads.iter_mut().zip(g) {
                for (a, v) in acc.data_mut().iter_mut().zip(gi.data()) {
                    *a += v;
                }
            }
        }
        for g in &mut grads {
            g.data_mut().iter_mut().for_each(|v| *v *= inv_b);
        }
        adam_step(model.params_mut(), &grads, state, &adam)?;
        n += batch.len();
        n_batches += 1;
    }
    Ok(EpochStats {
        mean_loss: if n == 0 { 0.0 } else { total / n as f64 },
        batches: n_batches,
    })
}

/// Mean weighted loss over `dev`; dropout off, parameters untouched.
pub fn validate(
    model: &Classifier,
    dev: &[Utterance],
    mode: LengthMode,
    target_t: usize,
    weights: [f64; 2],
) -> Result<f64> {
    if dev.is_empty() {
        return Err(Error::EmptyInput("validation split is empty"));
    }
    let losses: Vec<f64> = dev
        .par_iter()
        .map(|u| {
            let s = model.score(&mode.prepare(u, target_t))?;
            Ok(sample_loss(s.logits, u.label, weights))
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / dev.len() as f64)
}

/// True iff the first minimum of `history` is at least `patience` epochs old.
pub fn early_stop(history: &[f64], patience: usize) -> bool {
    let Some(best) = best_index(history) else {
        return false;
    };
    history.len() - 1 - best >= patience
}

fn best_index(history: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in history.iter().enumerate() {
        if best.is_none_or(|b| *v < history[b]) {
            best = Some(i);
        }
    }
    best
}

/// Indices of the `k` lowest-loss checkpoints, ties to the earlier epoch.
pub fn select_top_k(checkpoints: &[Checkpoint], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..checkpoints.len()).collect();
    order.sort_by(|&a, &b| {
        let (ca, cb) = (&checkpoints[a], &checkpoints[b]);
        ca.val_loss
            .total_cmp(&cb.val_loss)
            .then(ca.epoch.cmp(&cb.epoch))
            .then(a.cmp(&b))
    });
    order.truncate(k);
    order
}

/// Elementwise mean of the `k` best checkpoints (all of them if fewer).
///
/// The mean is taken as `best + Σ(xᵢ − best)/n` so identical inputs
/// reproduce themselves exactly. The result carries the best checkpoint's
/// config, epoch and validation loss; callers that need the loss of the
/// averaged parameters must re-validate.
pub fn average_checkpoints(checkpoints: &[Checkpoint], k: usize) -> Result<Checkpoint> {
    if checkpoints.is_empty() {
        return Err(Error::EmptyInput("no checkpoints to average"));
    }
    if k == 0 {
        return Err(Error::config("k must be at least 1"));
    }
    let chosen = select_top_k(checkpoints, k);
    let best = &checkpoints[chosen[0]];
    for &i in &chosen[1..] {
        best.params.check_compatible(&checkpoints[i].params)?;
    }
    let inv_n = 1.0 / chosen.len() as f64;
    let mut params = ParamStore::new();
    for (ti, (name, base)) in best.params.iter().enumerate() {
        let mut delta = vec![0.0; base.numel()];
        for &ci in &chosen[1..] {
            for ((d, x), b) in delta
                .iter_mut()
                .zip(checkpoints[ci].params.by_index(ti).1.data())
                .zip(base.data())
            {
                *d += x - b;
            }
        }
        let data = base.data().iter().zip(&delta).map(|(b, d)| b + d * inv_n).collect();
        params.push(name, Tensor::new(base.shape(), data)?)?;
    }
    Ok(Checkpoint {
        params,
        config: best.config.clone(),
        val_loss: best.val_loss,
        epoch: best.epoch,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: u32,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// The top-k averaged model.
    pub model: Classifier,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
    /// Epochs that entered the average.
    pub averaged_epochs: Vec<u32>,
    pub class_weights: [f64; 2],
    /// Averaged parameters, with the validation loss recomputed on them.
    pub final_checkpoint: Checkpoint,
}

/// Trains until `max_epochs` or early stopping, then averages the top-k
/// epoch checkpoints. `on_epoch` sees each epoch's record and checkpoint
/// (for logging and saving).
pub fn fit(
    mut model: Classifier,
    train: &[Utterance],
    dev: &[Utterance],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &Checkpoint) -> Result<()>,
) -> Result<FitOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("training split is empty"));
    }
    let weights = cfg.resolve_class_weights(train)?;
    let echo = serde_json::to_string(&ConfigEcho {
        model: model.config().clone(),
        train: serde_json::to_value(cfg)?,
    })?;
    let mut state = AdamState::zeros(model.params());
    let mut history = Vec::new();
    let mut checkpoints = Vec::new();
    let mut losses = Vec::new();
    let mut stopped_early = false;
    for epoch in 1..=cfg.max_epochs as u32 {
        let stats = train_epoch(&mut model, &mut state, train, cfg, weights, epoch as u64)?;
        let val_loss = validate(&model, dev, cfg.val_mode, cfg.target_t, weights)?;
        let record = EpochRecord {
            epoch,
            train_loss: stats.mean_loss,
            val_loss,
        };
        let ckpt = Checkpoint {
            params: model.params().clone(),
            config: echo.clone(),
            val_loss,
            epoch,
        };
        on_epoch(&record, &ckpt)?;
        history.push(record);
        checkpoints.push(ckpt);
        losses.push(val_loss);
        if early_stop(&losses, cfg.patience) {
            stopped_early = true;
            break;
        }
    }
    let averaged_epochs = select_top_k(&checkpoints, cfg.top_k_average)
        .into_iter()
        .map(|i| checkpoints[i].epoch)
        .collect();
    let mut final_checkpoint = average_checkpoints(&checkpoints, cfg.top_k_average)?;
    let averaged = Classifier::from_params(model.config().clone(), final_checkpoint.params.clone())?;
    final_checkpoint.val_loss = validate(&averaged, dev, cfg.val_mode, cfg.target_t, weights)?;
    final_checkpoint.epoch = history.last().map_or(0, |r| r.epoch);
    Ok(FitOutcome {
        model: averaged,
        history,
        stopped_early,
        averaged_epochs,
        class_weights: weights,
        final_checkpoint,
    })
}
