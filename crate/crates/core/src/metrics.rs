//! Map-level evaluation against binary ground truth: confusion counts,
//! TPR/FPR, ROC/AUC and cross-entropy loss.
//!
//! Cells that are NODATA in either the score or the truth raster are left
//! out. A cell is predicted positive when `score >= tau`.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::raster::Raster;

/// Clamp applied before taking logarithms in the loss.
pub const SCORE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// `TP / (TP + FN)`, zero when there are no positives.
    pub fn tpr(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `FP / (FP + TN)`, zero when there are no negatives.
    pub fn fpr(&self) -> f64 {
        ratio(self.fp, self.fp + self.tn)
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// `(score, is_positive)` for every cell valid in both rasters.
fn paired(scores: &Raster, truth: &Raster) -> Result<Vec<(f64, bool)>> {
    if !scores.spec.same_lattice(&truth.spec) {
        return Err(Error::GridMismatch("score and truth rasters differ".into()));
    }
    Ok((0..scores.values.len())
        .filter_map(|i| Some((scores.value(i)?, truth.value(i)? > 0.5)))
        .collect())
}

pub fn confusion_at_threshold(scores: &Raster, truth: &Raster, tau: f64) -> Result<ConfusionCounts> {
    let mut c = ConfusionCounts::default();
    for (s, positive) in paired(scores, truth)? {
        match (s >= tau, positive) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

/// Points ordered by strictly decreasing threshold.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

/// Sweeps `n_thresholds` evenly spaced thresholds over the score range plus
/// one sentinel above the maximum and one below the minimum. Consecutive
/// thresholds yielding the same operating point are merged.
///
/// `n_thresholds == 0` uses every distinct score as a threshold, which gives
/// the exact empirical curve.
pub fn roc_curve(scores: &Raster, truth: &Raster, n_thresholds: usize) -> Result<RocCurve> {
    let pairs = paired(scores, truth)?;
    let mut pos: Vec<f64> = pairs.iter().filter(|p| p.1).map(|p| p.0).collect();
    let mut neg: Vec<f64> = pairs.iter().filter(|p| !p.1).map(|p| p.0).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::InvalidArgument(
            "ROC needs at least one positive and one negative cell".into(),
        ));
    }
    pos.sort_unstable_by(f64::total_cmp);
    neg.sort_unstable_by(f64::total_cmp);
    let lo = pos[0].min(neg[0]);
    let hi = pos[pos.len() - 1].max(neg[neg.len() - 1]);

    let mut thresholds = Vec::with_capacity(n_thresholds + 2);
    thresholds.push(hi + 1.0);
    if n_thresholds == 0 {
        let mut all: Vec<f64> = pos.iter().chain(&neg).copied().collect();
        all.sort_unstable_by(|a, b| b.total_cmp(a));
        thresholds.extend(all);
    } else {
        let n = n_thresholds;
        for k in 0..n {
            let t = if n == 1 {
                hi
            } else {
                hi - (hi - lo) * k as f64 / (n - 1) as f64
            };
            thresholds.push(t);
        }
    }
    thresholds.push(lo - 1.0);
    thresholds.dedup_by(|b, a| *b >= *a);

    // Count of sorted values >= t.
    let at_least = |v: &[f64], t: f64| v.len() - v.partition_point(|x| *x < t);
    let mut points: Vec<RocPoint> = Vec::with_capacity(thresholds.len());
    for t in thresholds {
        let p = RocPoint {
            threshold: t,
            tpr: at_least(&pos, t) as f64 / pos.len() as f64,
            fpr: at_least(&neg, t) as f64 / neg.len() as f64,
        };
        if points.last().is_some_and(|q| q.tpr == p.tpr && q.fpr == p.fpr) {
            continue;
        }
        points.push(p);
    }
    Ok(RocCurve { points })
}

/// Trapezoidal area under the curve over `fpr` in `[0, 1]`.
pub fn auc(curve: &RocCurve) -> f64 {
    let area: f64 = curve
        .points
        .windows(2)
        .map(|p| (p[1].fpr - p[0].fpr) * (p[1].tpr + p[0].tpr) * 0.5)
        .sum();
    area.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedScores {
    pub raster: Raster,
    /// The input had zero range and every cell was set to one half.
    pub constant: bool,
}

/// Min-max rescale over non-NODATA cells, then clamp into
/// `[SCORE_EPS, 1 - SCORE_EPS]`.
pub fn normalize_scores(scores: &Raster) -> Result<NormalizedScores> {
    let (lo, hi) = scores
        .min_max()
        .ok_or(Error::Empty("score raster has no data cells"))?;
    if hi <= lo {
        return Ok(NormalizedScores {
            raster: scores.map_valid(|_| 0.5),
            constant: true,
        });
    }
    let range = hi - lo;
    Ok(NormalizedScores {
        raster: scores.map_valid(|v| ((v - lo) / range).clamp(SCORE_EPS, 1.0 - SCORE_EPS)),
        constant: false,
    })
}

/// Mean binary cross-entropy of scores against truth.
pub fn cross_entropy_loss(scores: &Raster, truth: &Raster) -> Result<f64> {
    let pairs = paired(scores, truth)?;
    if pairs.is_empty() {
        return Err(Error::Empty("no cells to evaluate"));
    }
    let total: f64 = pairs
        .iter()
        .map(|&(q, g)| {
            let q = q.clamp(SCORE_EPS, 1.0 - SCORE_EPS);
            if g {
                math::ln(q)
            } else {
                math::ln(1.0 - q)
            }
        })
        .sum();
    Ok(-total / pairs.len() as f64)
}
