//! Detection metrics over bona fide / spoof score lists.
//!
//! Scores are oriented so that higher means more bona fide. A threshold `τ`
//! accepts a score `s` as bona fide when `s ≥ τ`, so
//! `Pmiss(τ) = #{bona < τ} / N_bona` and `Pfa(τ) = #{spoof ≥ τ} / N_spoof`.
//!
//! The candidate thresholds are one below the smallest score, the midpoint
//! between each pair of neighbouring distinct scores, and one above the
//! largest score. Error rates are computed from the sorted partition each
//! candidate induces, so they do not depend on how the midpoint rounds.

mod evaluate;
mod scores;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use evaluate::{evaluate, score_utterances, summarize, Evaluation, MetricsReport};
pub use scores::{parse_scores, read_scores, render_scores, write_scores, ScoreRecord};

/// One candidate threshold and the error rates it induces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub p_miss: f64,
    pub p_fa: f64,
}

/// Every candidate threshold in increasing order. `Pmiss` is non-decreasing
/// and `Pfa` non-increasing along the list; the first point has `Pfa = 1` and
/// the last `Pmiss = 1`.
pub fn operating_points(bona: &[f64], spoof: &[f64]) -> Result<Vec<OperatingPoint>> {
    if bona.is_empty() || spoof.is_empty() {
        return Err(Error::EmptyInput("both classes need at least one score"));
    }
    if !bona.iter().chain(spoof).all(|s| s.is_finite()) {
        return Err(Error::config("scores must be finite"));
    }
    let mut all: Vec<(f64, bool)> = bona
        .iter()
        .map(|&s| (s, true))
        .chain(spoof.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    let (nb, ns) = (bona.len() as f64, spoof.len() as f64);
    let mut bona_below = 0usize;
    let mut spoof_below = 0usize;
    let mut points = Vec::with_capacity(all.len() + 1);
    points.push(OperatingPoint {
        threshold: all[0].0 - 1.0,
        p_miss: 0.0,
        p_fa: 1.0,
    });
    let mut i = 0;
    while i < all.len() {
        let s = all[i].0;
        while i < all.len() && all[i].0 == s {
            if all[i].1 {
                bona_below += 1;
            } else {
                spoof_below += 1;
            }
            i += 1;
        }
        let threshold = if i < all.len() {
            s + (all[i].0 - s) / 2.0
        } else {
            s + 1.0
        };
        points.push(OperatingPoint {
            threshold,
            p_miss: bona_below as f64 / nb,
            p_fa: (spoof.len() - spoof_below) as f64 / ns,
        });
    }
    Ok(points)
}

/// `(EER, threshold)`: `(Pmiss + Pfa)/2` at the candidate minimizing
/// `|Pmiss − Pfa|`. Ties go to the smaller `Pmiss + Pfa`, which keeps the
/// value unchanged when the classes are swapped and the scores negated, and
/// then to the lowest threshold.
pub fn compute_eer(bona: &[f64], spoof: &[f64]) -> Result<(f64, f64)> {
    let points = operating_points(bona, spoof)?;
    let gap = |p: &OperatingPoint| (p.p_miss - p.p_fa).abs();
    let mut best = points[0];
    for p in &points[1..] {
        let (g, bg) = (gap(p), gap(&best));
        if g < bg || (g == bg && p.p_miss + p.p_fa < best.p_miss + best.p_fa) {
            best = *p;
        }
    }
    Ok(((best.p_miss + best.p_fa) / 2.0, best.threshold))
}

/// Coefficients of the constrained tandem detection cost
/// `C0 + C1·Pmiss + C2·Pfa`. There are no defaults because the values
/// depend on the ASV system and the priors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TdcfCosts {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl TdcfCosts {
    pub fn validate(&self) -> Result<()> {
        if !(self.c0.is_finite() && self.c1.is_finite() && self.c2.is_finite()) {
            return Err(Error::config("t-DCF costs must be finite"));
        }
        if self.c0 < 0.0 || self.c1 <= 0.0 || self.c2 <= 0.0 {
            return Err(Error::config(format!(
                "t-DCF costs need c0 >= 0, c1 > 0, c2 > 0 (got c0={}, c1={}, c2={})",
                self.c0, self.c1, self.c2
            )));
        }
        Ok(())
    }

    /// `min(C0 + C1, C0 + C2)`.
    pub fn normalizer(&self) -> f64 {
        (self.c0 + self.c1).min(self.c0 + self.c2)
    }

    pub fn normalized_cost(&self, p_miss: f64, p_fa: f64) -> f64 {
        (self.c0 + self.c1 * p_miss + self.c2 * p_fa) / self.normalizer()
    }
}

/// Minimum over candidate thresholds of the normalized cost, clipped at 1.
pub fn compute_min_tdcf(bona: &[f64], spoof: &[f64], costs: &TdcfCosts) -> Result<f64> {
    costs.validate()?;
    let min = operating_points(bona, spoof)?
        .iter()
        .map(|p| costs.normalized_cost(p.p_miss, p.p_fa))
        .fold(f64::INFINITY, f64::min);
    Ok(min.min(1.0))
}

/// `(Pmiss, Pfa)` at every candidate threshold, in increasing threshold order.
pub fn det_points(bona: &[f64], spoof: &[f64]) -> Result<Vec<(f64, f64)>> {
    Ok(operating_points(bona, spoof)?
        .iter()
        .map(|p| (p.p_miss, p.p_fa))
        .collect())
}
