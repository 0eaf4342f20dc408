//! Object-centricity as an ROC analysis of seed-patch affinity maps.
//!
//! For one trial, every threshold θ activates the patches whose affinity to
//! the seed is at least θ. TPR is the fraction of (non-seed) object patches
//! that are active, FPR the fraction of background patches that are active.
//! The seed patch is excluded from both sets. Curves are averaged across
//! trials point-wise per threshold and integrated with the trapezoid rule.

use crate::affinity::AffinityMap;
use crate::tensorio::PatchMask;
use crate::{Error, Result};

pub const DEFAULT_THRESHOLDS: usize = 201;

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdGrid {
    thresholds: Vec<f64>,
}

impl ThresholdGrid {
    /// Requires a nonempty, finite, strictly decreasing sequence.
    pub fn new(thresholds: Vec<f64>) -> Result<Self> {
        if thresholds.is_empty() {
            return Err(Error::Argument("threshold grid is empty".into()));
        }
        if thresholds.iter().any(|t| !t.is_finite()) {
            return Err(Error::Argument("threshold grid has non-finite entries".into()));
        }
        if thresholds.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::Argument("thresholds must be strictly decreasing".into()));
        }
        Ok(ThresholdGrid { thresholds })
    }

    /// `n ≥ 2` evenly spaced thresholds from 1 down to -1 inclusive.
    pub fn uniform(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Argument(format!("uniform grid needs at least 2 points, got {n}")));
        }
        let step = (n - 1) as f64;
        Self::new((0..n).map(|i| 1.0 - 2.0 * i as f64 / step).collect())
    }

    /// Every distinct value of `values`, in decreasing order.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        let mut v: Vec<f64> = values.to_vec();
        v.sort_by(|a, b| b.total_cmp(a));
        v.dedup();
        Self::new(v)
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }

    /// Whether the grid brackets every possible cosine affinity.
    pub fn spans_cosine_range(&self) -> bool {
        self.thresholds[0] >= 1.0 && *self.thresholds.last().unwrap() <= -1.0
    }
}

impl Default for ThresholdGrid {
    fn default() -> Self {
        Self::uniform(DEFAULT_THRESHOLDS).unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// Thresholds matching `points[1..points.len() - 1]`.
    pub thresholds: Vec<f64>,
    /// `(fpr, tpr)`, starting at `(0, 0)` and ending at `(1, 1)`.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// Trapezoidal area under `(fpr, tpr)` points ordered by nondecreasing fpr.
pub fn trapezoid_auc(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// Object and background patch index sets with the seed removed.
fn split_patches(aff: &AffinityMap, mask: &PatchMask) -> Result<(Vec<usize>, Vec<usize>)> {
    if aff.h != mask.h || aff.w != mask.w {
        return Err(Error::Argument(format!(
            "affinity grid {}x{} does not match mask grid {}x{}",
            aff.h, aff.w, mask.h, mask.w
        )));
    }
    let seed = aff.seed_index();
    let (mut object, mut background) = (Vec::new(), Vec::new());
    for (p, &bit) in mask.bits.iter().enumerate() {
        if p == seed {
            continue;
        }
        if bit {
            object.push(p);
        } else {
            background.push(p);
        }
    }
    if object.is_empty() || background.is_empty() {
        return Err(Error::DegenerateMask(format!(
            "image {} object {}: {} object and {} background patches besides the seed",
            mask.image_id,
            mask.object_id,
            object.len(),
            background.len()
        )));
    }
    Ok((object, background))
}

/// Per-threshold (fpr, tpr), ordered by decreasing threshold.
pub fn sweep(aff: &AffinityMap, mask: &PatchMask, grid: &ThresholdGrid) -> Result<Vec<SweepPoint>> {
    let (object, background) = split_patches(aff, mask)?;
    let mut obj: Vec<f64> = object.iter().map(|&p| aff.values[p]).collect();
    let mut bg: Vec<f64> = background.iter().map(|&p| aff.values[p]).collect();
    obj.sort_by(|a, b| b.total_cmp(a));
    bg.sort_by(|a, b| b.total_cmp(a));
    // Thresholds decrease, so the active prefix of each sorted list only grows.
    let (mut i_obj, mut i_bg) = (0, 0);
    let mut out = Vec::with_capacity(grid.len());
    for &theta in grid.thresholds() {
        while i_obj < obj.len() && obj[i_obj] >= theta {
            i_obj += 1;
        }
        while i_bg < bg.len() && bg[i_bg] >= theta {
            i_bg += 1;
        }
        out.push(SweepPoint {
            threshold: theta,
            fpr: i_bg as f64 / bg.len() as f64,
            tpr: i_obj as f64 / obj.len() as f64,
        });
    }
    Ok(out)
}

/// Curve for a single trial's sweep, with endpoints added.
pub fn curve_from_sweep(points: &[SweepPoint]) -> RocCurve {
    average_curves(std::slice::from_ref(&points.to_vec())).expect("a single sweep is always consistent")
}

/// Point-wise mean of per-trial sweeps that share one threshold grid.
pub fn average_curves(per_trial: &[Vec<SweepPoint>]) -> Result<RocCurve> {
    let first = per_trial
        .first()
        .ok_or_else(|| Error::Argument("no trials to average".into()))?;
    let thresholds: Vec<f64> = first.iter().map(|p| p.threshold).collect();
    let mut sums = vec![(0.0f64, 0.0f64); thresholds.len()];
    for (t, trial) in per_trial.iter().enumerate() {
        if trial.len() != thresholds.len() || trial.iter().zip(&thresholds).any(|(p, th)| p.threshold != *th) {
            return Err(Error::Argument(format!(
                "trial {t} was swept on a different threshold grid"
            )));
        }
        for (s, p) in sums.iter_mut().zip(trial) {
            s.0 += p.fpr;
            s.1 += p.tpr;
        }
    }
    let n = per_trial.len() as f64;
    let mut points = Vec::with_capacity(thresholds.len() + 2);
    points.push((0.0, 0.0));
    points.extend(sums.iter().map(|&(f, t)| (f / n, t / n)));
    points.push((1.0, 1.0));
    let auc = trapezoid_auc(&points);
    Ok(RocCurve {
        thresholds,
        points,
        auc,
    })
}

/// Mann–Whitney AUC: the probability that a random object patch has higher
/// affinity than a random background patch, ties counting one half. The
/// seed is excluded as in [`sweep`].
pub fn auc_rank_oracle(aff: &AffinityMap, mask: &PatchMask) -> Result<f64> {
    let (object, background) = split_patches(aff, mask)?;
    let mut twice_wins: u64 = 0;
    for &o in &object {
        let vo = aff.values[o];
        for &b in &background {
            let vb = aff.values[b];
            twice_wins += if vo > vb {
                2
            } else if vo == vb {
                1
            } else {
                0
            };
        }
    }
    Ok(twice_wins as f64 / (2.0 * object.len() as f64 * background.len() as f64))
}

/// Summary over a set of trials: the trial-averaged curve and, alongside
/// it, the mean of the per-trial AUCs.
#[derive(Debug, Clone, PartialEq)]
pub struct RocSummary {
    pub curve: RocCurve,
    pub mean_trial_auc: f64,
    pub n_trials: usize,
}

pub fn summarize(per_trial: &[Vec<SweepPoint>]) -> Result<RocSummary> {
    let curve = average_curves(per_trial)?;
    let mean_trial_auc = per_trial
        .iter()
        .map(|s| curve_from_sweep(s).auc)
        .sum::<f64>()
        / per_trial.len() as f64;
    Ok(RocSummary {
        curve,
        mean_trial_auc,
        n_trials: per_trial.len(),
    })
}
