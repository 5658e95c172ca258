use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Label, Utterance};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Crops to the first `target_t` frames, or repeats the sequence cyclically
/// until it is long enough.
pub fn fix_length(utt: &Utterance, target_t: usize) -> Tensor {
    let (t, f) = (utt.frames(), utt.feature_dim());
    let src = utt.features.data();
    let mut data = Vec::with_capacity(target_t * f);
    for i in 0..target_t {
        let row = i % t;
        data.extend_from_slice(&src[row * f..(row + 1) * f]);
    }
    Tensor::new([target_t, f], data).expect("sized above")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BatchMode {
    /// Every utterance is cropped or repeated to `target_t` frames.
    Fixed { target_t: usize },
    /// Full-length utterances, one per batch.
    Variable,
}

/// How utterance lengths are treated when scoring or validating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthMode {
    Fixed,
    Variable,
}

impl LengthMode {
    pub fn batch_mode(self, target_t: usize) -> BatchMode {
        match self {
            LengthMode::Fixed => BatchMode::Fixed { target_t },
            LengthMode::Variable => BatchMode::Variable,
        }
    }

    /// The features the model sees for `utt`.
    pub fn prepare(self, utt: &Utterance, target_t: usize) -> Tensor {
        match self {
            LengthMode::Fixed => fix_length(utt, target_t),
            LengthMode::Variable => utt.features.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub ids: Vec<String>,
    pub labels: Vec<Label>,
    /// `B×T×F`.
    pub features: Tensor,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Feature matrix `T×F` of sample `i`.
    pub fn sample(&self, i: usize) -> Tensor {
        let (t, f) = (self.features.shape()[1], self.features.shape()[2]);
        let data = self.features.data()[i * t * f..(i + 1) * t * f].to_vec();
        Tensor::new([t, f], data).expect("sized above")
    }
}

/// Splits `utts` into batches. With `shuffle_seed` the visiting order is a
/// deterministic permutation keyed by the seed; otherwise corpus order is
/// kept. The final batch may be short. Variable mode always uses batch size 1.
pub fn batches<'a>(
    utts: &'a [Utterance],
    batch_size: usize,
    mode: BatchMode,
    shuffle_seed: Option<u64>,
) -> Result<impl Iterator<Item = Batch> + 'a> {
    if batch_size == 0 {
        return Err(Error::config("batch_size must be at least 1"));
    }
    if mode == (BatchMode::Fixed { target_t: 0 }) {
        return Err(Error::config("target_T must be at least 1"));
    }
    let mut order: Vec<usize> = (0..utts.len()).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut rng::keyed(&[seed, 0xBA7C]));
    }
    let b = match mode {
        BatchMode::Fixed { .. } => batch_size,
        BatchMode::Variable => 1,
    };
    let chunks: Vec<Vec<usize>> = order.chunks(b).map(<[usize]>::to_vec).collect();
    Ok(chunks.into_iter().map(move |idx| {
        let (t, f, data) = match mode {
            BatchMode::Fixed { target_t } => {
                let f = utts[idx[0]].feature_dim();
                let mut data = Vec::with_capacity(idx.len() * target_t * f);
                for &i in &idx {
                    data.extend_from_slice(fix_length(&utts[i], target_t).data());
                }
                (target_t, f, data)
            }
            BatchMode::Variable => {
                let u = &utts[idx[0]];
                (u.frames(), u.feature_dim(), u.features.data().to_vec())
            }
        };
        Batch {
            ids: idx.iter().map(|&i| utts[i].id.clone()).collect(),
            labels: idx.iter().map(|&i| utts[i].label).collect(),
            features: Tensor::new([idx.len(), t, f], data).expect("sized above"),
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn utt(id: usize, t: usize) -> Utterance {
        Utterance {
            id: format!("u{id}"),
            label: if id.is_multiple_of(2) {
                Label::Bonafide
            } else {
                Label::Spoof
            },
            features: Tensor::new([t, 2], (0..t * 2).map(|v| (v + 100 * id) as f64).collect()).unwrap(),
        }
    }

    fn frame_ids(x: &Tensor) -> Vec<usize> {
        x.data().chunks(2).map(|r| r[0] as usize / 2).collect()
    }

    #[test]
    fn fix_length_repeats_crops_and_keeps() {
        assert_eq!(frame_ids(&fix_length(&utt(0, 5), 8)), vec![0, 1, 2, 3, 4, 0, 1, 2]);
        assert_eq!(fix_length(&utt(0, 8), 8), utt(0, 8).features);
        assert_eq!(frame_ids(&fix_length(&utt(0, 10), 4)), vec![0, 1, 2, 3]);
    }

    #[test]
    fn final_partial_batch_is_emitted() {
        let us: Vec<_> = (0..7).map(|i| utt(i, 3)).collect();
        let sizes: Vec<usize> = batches(&us, 3, BatchMode::Fixed { target_t: 4 }, Some(1))
            .unwrap()
            .map(|b| {
                assert_eq!(&b.features.shape()[1..], &[4, 2]);
                b.len()
            })
            .collect();
        assert_eq!(sizes, vec![3, 3, 1]);
    }

    #[test]
    fn shuffle_is_seeded() {
        let us: Vec<_> = (0..20).map(|i| utt(i, 3)).collect();
        let order = |s| -> Vec<String> {
            batches(&us, 4, BatchMode::Fixed { target_t: 3 }, Some(s))
                .unwrap()
                .flat_map(|b| b.ids)
                .collect()
        };
        assert_eq!(order(5), order(5));
        assert_ne!(order(5), order(6));
        let mut sorted = order(5);
        sorted.sort();
        let mut all: Vec<String> = us.iter().map(|u| u.id.clone()).collect();
        all.sort();
        assert_eq!(sorted, all);
    }

    #[test]
    fn variable_mode_keeps_full_utterances() {
        let us: Vec<_> = (0..5).map(|i| utt(i, i + 2)).collect();
        let got: Vec<Batch> = batches(&us, 20, BatchMode::Variable, None).unwrap().collect();
        assert_eq!(got.len(), 5);
        for (b, u) in got.iter().zip(&us) {
            assert_eq!(b.len(), 1);
            assert_eq!(b.sample(0), u.features);
        }
    }

    #[test]
    fn zero_batch_size_rejected() {
        assert!(batches(&[], 0, BatchMode::Variable, None).is_err());
    }
}
