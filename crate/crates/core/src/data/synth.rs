//! Desk-scale stand-in for an anti-spoofing corpus.
//!
//! Bona fide features are a Gaussian process that is AR(1) along time and
//! correlated across neighbouring channels. A spoof utterance is a draw of
//! the same process plus a fixed ±amplitude sign pattern confined to one
//! contiguous channel band and one temporal segment, placed at random. The
//! eval split draws segment positions from a pool disjoint from train/dev.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Label, Split, Utterance};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Correlation between adjacent channels of the innovation noise.
const CHANNEL_CORRELATION: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtifactSpec {
    /// Channels covered by the artifact.
    pub band_width: usize,
    /// Frames covered by the artifact.
    pub seg_len: usize,
    pub amplitude: f64,
    pub pattern_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseProcess {
    /// Temporal AR(1) coefficient in (0, 1).
    pub ar_coeff: f64,
    /// Marginal standard deviation of every feature.
    pub noise_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSpec {
    pub n_train: usize,
    pub n_dev: usize,
    pub n_eval: usize,
    pub feature_dim: usize,
    /// Inclusive `[T_min, T_max]` frame range.
    pub t_range: (usize, usize),
    pub artifact: ArtifactSpec,
    pub base_process: BaseProcess,
    pub spoof_fraction: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            n_train: 2000,
            n_dev: 500,
            n_eval: 1000,
            feature_dim: 64,
            t_range: (150, 250),
            artifact: ArtifactSpec {
                band_width: 16,
                seg_len: 50,
                amplitude: 0.7,
                pattern_seed: 7,
            },
            base_process: BaseProcess {
                ar_coeff: 0.7,
                noise_scale: 1.0,
            },
            spoof_fraction: 0.5,
            seed: 0,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        for (name, n) in [
            ("n_train", self.n_train),
            ("n_dev", self.n_dev),
            ("n_eval", self.n_eval),
        ] {
            if n == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if self.feature_dim == 0 {
            return fail("feature_dim must be positive".into());
        }
        let (t_min, t_max) = self.t_range;
        if t_min == 0 || t_min > t_max {
            return fail(format!("t_range [{t_min}, {t_max}] must satisfy 1 <= T_min <= T_max"));
        }
        let a = &self.artifact;
        if a.band_width == 0 || a.band_width > self.feature_dim {
            return fail(format!(
                "artifact.band_width {} must lie in [1, feature_dim={}]",
                a.band_width, self.feature_dim
            ));
        }
        if a.seg_len == 0 || a.seg_len > t_min {
            return fail(format!("artifact.seg_len {} must lie in [1, T_min={t_min}]", a.seg_len));
        }
        if !(a.amplitude.is_finite() && a.amplitude >= 0.0) {
            return fail("artifact.amplitude must be finite and non-negative".into());
        }
        let b = &self.base_process;
        if !(b.ar_coeff > 0.0 && b.ar_coeff < 1.0) {
            return fail(format!("base_process.ar_coeff {} must lie in (0, 1)", b.ar_coeff));
        }
        if !(b.noise_scale.is_finite() && b.noise_scale > 0.0) {
            return fail("base_process.noise_scale must be positive".into());
        }
        if !(self.spoof_fraction > 0.0 && self.spoof_fraction < 1.0) {
            return fail(format!("spoof_fraction {} must lie in (0, 1)", self.spoof_fraction));
        }
        Ok(())
    }

    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.n_train,
            Split::Dev => self.n_dev,
            Split::Eval => self.n_eval,
        }
    }
}

/// Where an artifact was planted: channels `band_start..band_start+band_width`,
/// frames `seg_start..seg_start+seg_len`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub band_start: usize,
    pub seg_start: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub train: Vec<Utterance>,
    pub dev: Vec<Utterance>,
    pub eval: Vec<Utterance>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[Utterance] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Eval => &self.eval,
        }
    }
}

pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    Ok(Corpus {
        train: generate_split(spec, Split::Train)?,
        dev: generate_split(spec, Split::Dev)?,
        eval: generate_split(spec, Split::Eval)?,
    })
}

/// The fixed `band_width × seg_len` pattern (row-major, frames outer): one
/// ±1 channel signature repeated on every frame of the segment.
pub fn artifact_pattern(spec: &ArtifactSpec) -> Vec<f64> {
    let mut r = rng::keyed(&[spec.pattern_seed, 0xA7]);
    let signature: Vec<f64> = (0..spec.band_width)
        .map(|_| if r.gen::<bool>() { 1.0 } else { -1.0 })
        .collect();
    signature.repeat(spec.seg_len)
}

fn labels(spec: &CorpusSpec, split: Split) -> Vec<Label> {
    let n = spec.count(split);
    let n_spoof = ((n as f64) * spec.spoof_fraction).round() as usize;
    let mut labels: Vec<Label> = (0..n)
        .map(|i| if i < n_spoof { Label::Spoof } else { Label::Bonafide })
        .collect();
    labels.shuffle(&mut rng::keyed(&[spec.seed, split.key(), 0x1AB]));
    labels
}

fn frames(spec: &CorpusSpec, split: Split, index: usize) -> usize {
    let (lo, hi) = spec.t_range;
    rng::keyed(&[spec.seed, split.key(), index as u64, 1]).gen_range(lo..=hi)
}

/// Band starts: the band occupies one of the `F / band_width` aligned slots.
fn band_pool(spec: &CorpusSpec) -> Vec<usize> {
    (0..=spec.feature_dim - spec.artifact.band_width)
        .step_by(spec.artifact.band_width)
        .collect()
}

/// Segment starts allowed in `split` for an utterance of `frames` frames:
/// even offsets for train/dev, odd for eval, so eval artifacts sit at
/// positions never seen in training.
fn segment_pool(spec: &CorpusSpec, split: Split, frames: usize) -> Vec<usize> {
    let max_start = frames - spec.artifact.seg_len;
    let parity = usize::from(split == Split::Eval);
    let pool: Vec<usize> = (0..=max_start).filter(|s| s % 2 == parity).collect();
    if pool.is_empty() {
        (0..=max_start).collect()
    } else {
        pool
    }
}

/// The bona fide process draw underlying utterance `index` of `split`.
/// Values are rounded to `f32` precision so files round-trip exactly.
pub fn base_features(spec: &CorpusSpec, split: Split, index: usize) -> Tensor {
    let t = frames(spec, split, index);
    let f = spec.feature_dim;
    let BaseProcess { ar_coeff, noise_scale } = spec.base_process;
    let mut r = rng::keyed(&[spec.seed, split.key(), index as u64, 2]);
    let rho_c = CHANNEL_CORRELATION;
    let c_innov = (1.0 - rho_c * rho_c).sqrt();
    let t_innov = (1.0 - ar_coeff * ar_coeff).sqrt();

    let mut data = vec![0.0; t * f];
    let mut u = vec![0.0; f];
    for ti in 0..t {
        for c in 0..f {
            let w: f64 = r.sample(StandardNormal);
            u[c] = if c == 0 { w } else { rho_c * u[c - 1] + c_innov * w };
        }
        for c in 0..f {
            data[ti * f + c] = if ti == 0 {
                noise_scale * u[c]
            } else {
                ar_coeff * data[(ti - 1) * f + c] + t_innov * noise_scale * u[c]
            };
        }
    }
    for v in &mut data {
        *v = *v as f32 as f64;
    }
    Tensor::new([t, f], data).expect("sized above")
}

/// Artifact placements of every utterance in `split` (`None` for bona fide).
pub fn planted_artifacts(spec: &CorpusSpec, split: Split) -> Vec<Option<Placement>> {
    let bands = band_pool(spec);
    labels(spec, split)
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            (label == Label::Spoof).then(|| {
                let segments = segment_pool(spec, split, frames(spec, split, i));
                let mut r = rng::keyed(&[spec.seed, split.key(), i as u64, 3]);
                Placement {
                    band_start: bands[r.gen_range(0..bands.len())],
                    seg_start: segments[r.gen_range(0..segments.len())],
                }
            })
        })
        .collect()
}

pub fn generate_split(spec: &CorpusSpec, split: Split) -> Result<Vec<Utterance>> {
    spec.validate()?;
    let pattern = artifact_pattern(&spec.artifact);
    let (bw, sl, amp) = (spec.artifact.band_width, spec.artifact.seg_len, spec.artifact.amplitude);
    let f = spec.feature_dim;
    let labels = labels(spec, split);
    let placements = planted_artifacts(spec, split);
    Ok(labels
        .into_iter()
        .zip(placements)
        .enumerate()
        .map(|(i, (label, placement))| {
            let mut features = base_features(spec, split, i);
            if let Some(p) = placement {
                let data = features.data_mut();
                for dt in 0..sl {
                    for dc in 0..bw {
                        let at = (p.seg_start + dt) * f + p.band_start + dc;
                        data[at] = (data[at] + amp * pattern[dt * bw + dc]) as f32 as f64;
                    }
                }
            }
            Utterance {
                id: format!("{}_{:06}", split.name(), i),
                label,
                features,
            }
        })
        .collect())
}
