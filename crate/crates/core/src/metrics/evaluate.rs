use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{compute_eer, compute_min_tdcf, ScoreRecord, TdcfCosts};
use crate::data::{Label, LengthMode, Utterance};
use crate::error::{Error, Result};
use crate::model::Classifier;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub eer: f64,
    pub min_tdcf: f64,
    pub n_bona: usize,
    pub n_spoof: usize,
    /// Threshold at which the EER was read off.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    /// In input order.
    pub scores: Vec<ScoreRecord>,
}

/// Scores every utterance, in input order. `jobs > 1` scores on a dedicated
/// pool of that many threads; the output is identical either way.
pub fn score_utterances(
    model: &Classifier,
    utts: &[Utterance],
    mode: LengthMode,
    target_t: usize,
    jobs: usize,
) -> Result<Vec<ScoreRecord>> {
    let one = |u: &Utterance| -> Result<ScoreRecord> {
        Ok(ScoreRecord {
            id: u.id.clone(),
            score: model.score(&mode.prepare(u, target_t))?.score,
        })
    };
    if jobs <= 1 {
        return utts.iter().map(one).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::config(format!("cannot start {jobs} scoring threads: {e}")))?;
    pool.install(|| utts.par_iter().map(one).collect())
}

/// Joins scores with protocol labels and computes both metrics. Every score
/// id must appear in the protocol exactly once and every protocol id must be
/// scored exactly once.
pub fn summarize(scores: &[ScoreRecord], protocol: &[(String, Label)], costs: &TdcfCosts) -> Result<MetricsReport> {
    let mut labels: HashMap<&str, Label> = HashMap::with_capacity(protocol.len());
    for (id, label) in protocol {
        if labels.insert(id, *label).is_some() {
            return Err(Error::Consistency(format!("protocol lists {id} twice")));
        }
    }
    let mut seen: HashMap<&str, ()> = HashMap::with_capacity(scores.len());
    let (mut bona, mut spoof) = (Vec::new(), Vec::new());
    for r in scores {
        let label = labels
            .get(r.id.as_str())
            .ok_or_else(|| Error::Consistency(format!("scored id {} is not in the protocol", r.id)))?;
        if seen.insert(&r.id, ()).is_some() {
            return Err(Error::Consistency(format!("id {} scored twice", r.id)));
        }
        match label {
            Label::Bonafide => bona.push(r.score),
            Label::Spoof => spoof.push(r.score),
        }
    }
    if let Some((id, _)) = protocol.iter().find(|(id, _)| !seen.contains_key(id.as_str())) {
        return Err(Error::Consistency(format!("protocol id {id} has no score")));
    }
    let (eer, threshold) = compute_eer(&bona, &spoof)?;
    Ok(MetricsReport {
        eer,
        min_tdcf: compute_min_tdcf(&bona, &spoof, costs)?,
        n_bona: bona.len(),
        n_spoof: spoof.len(),
        threshold,
    })
}

pub fn evaluate(
    model: &Classifier,
    utts: &[Utterance],
    mode: LengthMode,
    target_t: usize,
    costs: &TdcfCosts,
    jobs: usize,
) -> Result<Evaluation> {
    costs.validate()?;
    let scores = score_utterances(model, utts, mode, target_t, jobs)?;
    let protocol: Vec<(String, Label)> = utts.iter().map(|u| (u.id.clone(), u.label)).collect();
    Ok(Evaluation {
        report: summarize(&scores, &protocol, costs)?,
        scores,
    })
}
