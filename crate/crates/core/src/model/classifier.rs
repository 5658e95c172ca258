use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attention::{prepend_cls, TokenSequence};
use super::blocks::block_forward;
use super::config::{ModelConfig, PositionalEncoding};
use super::layers::{linear, Dropout};
use super::params::{classifier_layout, Binder, ClassifierParams, Counter, Initializer, Linear, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Logit index of the bona fide class.
pub const BONAFIDE: usize = 0;
/// Logit index of the spoof class.
pub const SPOOF: usize = 1;

/// Affine per-frame projection `F→D`, plus the sinusoidal position table
/// when enabled.
pub fn project_features(tape: &mut Tape, features: Var, p: &Linear<Var>, cfg: &ModelConfig) -> Result<Var> {
    let (t, f) = match tape.shape(features) {
        &[t, f] => (t, f),
        s => {
            return Err(Error::Rank {
                op: "project_features",
                expected: "rank 2 (frames × features)",
                shape: s.to_vec(),
            })
        }
    };
    if f != cfg.feature_dim {
        return Err(Error::config(format!(
            "feature dimension {f} does not match configured {}",
            cfg.feature_dim
        )));
    }
    let x = linear(tape, features, p)?;
    match cfg.positional_encoding {
        PositionalEncoding::None => Ok(x),
        PositionalEncoding::Sinusoidal => {
            let pe = tape.constant(sinusoidal_table(t, cfg.model_dim));
            tape.add(x, pe)
        }
    }
}

/// `pe[t, 2i] = sin(t / 10000^(2i/D))`, `pe[t, 2i+1] = cos(...)`.
pub fn sinusoidal_table(len: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; len * dim];
    for t in 0..len {
        for c in 0..dim {
            let i = (c / 2) as f64;
            let angle = t as f64 / 10000f64.powf(2.0 * i / dim as f64);
            data[t * dim + c] = if c % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new([len, dim], data).expect("sized above")
}

/// Result of one forward pass recorded on a tape.
#[derive(Debug)]
pub struct ForwardPass {
    /// `1×2`: `[bonafide, spoof]`.
    pub logits: Var,
    /// Bound parameter leaves in store order.
    pub params: Vec<Var>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    /// `logit[bonafide] − logit[spoof]`; higher means more bona fide.
    pub score: f64,
    pub logits: [f64; 2],
}

/// Projection, CLS token, `L` encoder blocks and the two-way linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    config: ModelConfig,
    params: ParamStore,
}

impl Classifier {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Initializer {
            rng: &mut rng,
            store: ParamStore::new(),
        };
        classifier_layout(&mut init, &config)?;
        Ok(Classifier {
            config,
            params: init.store,
        })
    }

    /// Wraps existing parameters, checking them against the config's layout.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let model = Classifier { config, params };
        model.bind(&mut Tape::new(), false)?;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Places every parameter on `tape` as a leaf.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Result<(ClassifierParams<Var>, Vec<Var>)> {
        let mut binder = Binder {
            tape,
            store: &self.params,
            requires_grad,
            bound: Vec::new(),
        };
        let layout = classifier_layout(&mut binder, &self.config)?;
        if binder.bound.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "store holds {} tensors, layout uses {}",
                self.params.len(),
                binder.bound.len()
            )));
        }
        Ok((layout, binder.bound))
    }

    /// Records the full forward pass for `features[T×F]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        features: &Tensor,
        requires_grad: bool,
        dropout: &mut Dropout,
    ) -> Result<ForwardPass> {
        if features.shape().first() == Some(&0) {
            return Err(Error::EmptyInput("utterance has no frames"));
        }
        let (p, params) = self.bind(tape, requires_grad)?;
        let x = tape.constant(features.clone());
        let x = project_features(tape, x, &p.input, &self.config)?;
        let mut seq: TokenSequence = prepend_cls(tape, x, p.cls)?;
        for block in &p.blocks {
            seq = block_forward(tape, &seq, block, &self.config, dropout)?;
        }
        let cls = tape.slice(seq.tokens, 0, 0, 1)?;
        let logits = linear(tape, cls, &p.head)?;
        Ok(ForwardPass { logits, params })
    }

    /// Inference: no gradients, no dropout.
    pub fn score(&self, features: &Tensor) -> Result<Score> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, features, false, &mut Dropout::off())?;
        let l = tape.value(out.logits).data();
        let logits = [l[BONAFIDE], l[SPOOF]];
        Ok(Score {
            score: logits[BONAFIDE] - logits[SPOOF],
            logits,
        })
    }
}

/// Learnable scalars of the model `cfg` describes.
pub fn param_count(cfg: &ModelConfig) -> Result<usize> {
    let mut c = Counter(0);
    classifier_layout(&mut c, cfg)?;
    Ok(c.0)
}

/// Scalars TCM adds over plain MHSA, counted from the two layouts.
pub fn tcm_delta(cfg: &ModelConfig) -> Result<usize> {
    let mut on = cfg.toggles;
    on.use_tcm = true;
    let mut off = cfg.toggles;
    off.use_tcm = false;
    Ok(param_count(&cfg.with_toggles(on))? - param_count(&cfg.with_toggles(off))?)
}

/// `L·(d·D + D + H·D)`; the last term only with the head-token embedding.
pub fn analytic_tcm_delta(cfg: &ModelConfig) -> usize {
    let (l, d, dm, h) = (cfg.blocks, cfg.head_dim(), cfg.model_dim, cfg.heads);
    let emb = if cfg.toggles.ht_embedding { h * dm } else { 0 };
    l * (d * dm + dm + emb)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamReport {
    pub total: usize,
    pub baseline_total: usize,
    pub tcm_delta: usize,
    pub analytic_delta: usize,
    /// The analytic formula with numbers substituted.
    pub formula: String,
}

pub fn param_report(cfg: &ModelConfig) -> Result<ParamReport> {
    let total = param_count(cfg)?;
    let baseline_total = param_count(&cfg.with_toggles(super::TcmToggles::plain()))?;
    let (l, d, dm, h) = (cfg.blocks, cfg.head_dim(), cfg.model_dim, cfg.heads);
    let formula = if cfg.toggles.ht_embedding {
        format!("{l}·({d}·{dm} + {dm} + {h}·{dm})")
    } else {
        format!("{l}·({d}·{dm} + {dm})")
    };
    Ok(ParamReport {
        total,
        baseline_total,
        tcm_delta: tcm_delta(cfg)?,
        analytic_delta: analytic_tcm_delta(cfg),
        formula,
    })
}
