//! End-to-end metrics over a set of feature maps and trials: grouping
//! accuracy, object-centric AUC and the normalized behavioral score.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::affinity::{affinity_from_patch, pixel_to_patch};
use crate::readout::{
    build_trial_feature, cv_accuracy, cv_predict_rt, mean_rts, normalized_score, CvAccuracy, CvConfig, CvPrediction,
    NormalizedScore, TrialFeature, DEFAULT_SPLITS,
};
use crate::roc::{summarize, sweep, RocSummary, ThresholdGrid, DEFAULT_THRESHOLDS};
use crate::tensorio::{
    load_feature_map, load_pgm, open_text, rasterize_mask_to_patches, read_object_index, BehavioralRecord, FeatureMap,
    PatchMask, TrialSpec,
};
use crate::{Error, Result};

/// Patch masks keyed by `(image_id, object_id)`.
pub type MaskIndex = HashMap<(String, i64), PatchMask>;

pub fn feature_for<'a>(maps: &'a HashMap<String, FeatureMap>, trial: &TrialSpec) -> Result<&'a FeatureMap> {
    maps.get(&trial.image_id)
        .ok_or_else(|| Error::Argument(format!("trial {}: no features for image {}", trial.trial_id, trial.image_id)))
}

pub fn trial_features(
    maps: &HashMap<String, FeatureMap>,
    trials: &[TrialSpec],
    patch_size: u32,
) -> Result<Vec<TrialFeature>> {
    trials
        .iter()
        .map(|t| build_trial_feature(feature_for(maps, t)?, t, patch_size))
        .collect()
}

pub fn trial_labels(trials: &[TrialSpec]) -> Vec<bool> {
    trials.iter().map(|t| t.label.is_same()).collect()
}

/// Condition index per trial, used to stratify folds.
pub fn trial_strata(trials: &[TrialSpec]) -> Vec<usize> {
    trials.iter().map(|t| t.condition.index()).collect()
}

/// Per-trial sweeps of the center-dot affinity map against the center
/// object's patch mask, summarized into a trial-averaged curve.
pub fn object_centricity(
    maps: &HashMap<String, FeatureMap>,
    trials: &[TrialSpec],
    masks: &MaskIndex,
    patch_size: u32,
    grid: &ThresholdGrid,
) -> Result<RocSummary> {
    let mut per_trial = Vec::with_capacity(trials.len());
    for t in trials {
        let map = feature_for(maps, t)?;
        let mask = masks
            .get(&(t.image_id.clone(), t.center_object_id))
            .ok_or_else(|| {
                Error::Argument(format!(
                    "trial {}: no mask for object {} of image {}",
                    t.trial_id, t.center_object_id, t.image_id
                ))
            })?;
        let seed = pixel_to_patch(t.center_px, patch_size, (map.h, map.w))?;
        per_trial.push(sweep(&affinity_from_patch(map, seed)?, mask, grid)?);
    }
    summarize(&per_trial)
}

pub fn grouping_accuracy(
    maps: &HashMap<String, FeatureMap>,
    trials: &[TrialSpec],
    patch_size: u32,
    cv: &CvConfig,
) -> Result<CvAccuracy> {
    let features = trial_features(maps, trials, patch_size)?;
    cv_accuracy(&features, &trial_labels(trials), &trial_strata(trials), cv)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BehavioralFit {
    pub score: NormalizedScore,
    pub cv: CvPrediction,
    /// Trials that had human RTs, in the order of `cv.predictions`.
    pub trial_ids: Vec<String>,
}

/// Cross-validated RT predictions for every trial with human RTs, scored
/// against the split-half ceiling.
pub fn behavioral_fit(
    maps: &HashMap<String, FeatureMap>,
    trials: &[TrialSpec],
    records: &[BehavioralRecord],
    patch_size: u32,
    cfg: &MetricConfig,
) -> Result<BehavioralFit> {
    let rts = mean_rts(records, cfg.correct_only);
    let kept: Vec<TrialSpec> = trials.iter().filter(|t| rts.contains_key(&t.trial_id)).cloned().collect();
    if kept.is_empty() {
        return Err(Error::Argument("no trial has behavioral records".into()));
    }
    let features = trial_features(maps, &kept, patch_size)?;
    let targets: Vec<f64> = kept.iter().map(|t| rts[&t.trial_id]).collect();
    let cv = cv_predict_rt(&features, &targets, &trial_strata(&kept), &cfg.cv)?;
    let predicted: HashMap<String, f64> = kept
        .iter()
        .zip(&cv.predictions)
        .map(|(t, p)| (t.trial_id.clone(), *p))
        .collect();
    let score = normalized_score(&predicted, records, cfg.n_splits, cfg.rng_seed, cfg.correct_only)?;
    Ok(BehavioralFit {
        score,
        cv,
        trial_ids: kept.into_iter().map(|t| t.trial_id).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub patch_size: u32,
    pub cv: CvConfig,
    pub thresholds: usize,
    pub n_splits: usize,
    pub correct_only: bool,
    pub rng_seed: u64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            patch_size: 16,
            cv: CvConfig::default(),
            thresholds: DEFAULT_THRESHOLDS,
            n_splits: DEFAULT_SPLITS,
            correct_only: true,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricTriple {
    pub grouping_accuracy: f64,
    pub object_auc: f64,
    pub behavioral_score: f64,
}

pub fn evaluate_metrics(
    maps: &HashMap<String, FeatureMap>,
    trials: &[TrialSpec],
    masks: &MaskIndex,
    records: &[BehavioralRecord],
    cfg: &MetricConfig,
) -> Result<MetricTriple> {
    let grid = ThresholdGrid::uniform(cfg.thresholds)?;
    Ok(MetricTriple {
        grouping_accuracy: grouping_accuracy(maps, trials, cfg.patch_size, &cfg.cv)?.accuracy,
        object_auc: object_centricity(maps, trials, masks, cfg.patch_size, &grid)?.curve.auc,
        behavioral_score: behavioral_fit(maps, trials, records, cfg.patch_size, cfg)?.score.normalized,
    })
}

/// Loads an object index and rasterizes every listed mask. Mask paths are
/// relative to the index file's directory.
pub fn load_patch_masks(index_path: impl AsRef<Path>, patch_size: usize) -> Result<MaskIndex> {
    let index_path = index_path.as_ref();
    let base = index_path.parent().unwrap_or(Path::new("."));
    let mut out = MaskIndex::new();
    for e in read_object_index(open_text(index_path)?)? {
        let pixels = load_pgm(base.join(&e.mask))?;
        let patches = rasterize_mask_to_patches(&pixels, patch_size, &e.image_id, e.object_id)?;
        out.insert((e.image_id, e.object_id), patches);
    }
    Ok(out)
}

/// Loads `<dir>/<image_id>.pbft` for each distinct image id.
pub fn load_feature_dir<'a>(
    dir: impl AsRef<Path>,
    image_ids: impl IntoIterator<Item = &'a str>,
) -> Result<HashMap<String, FeatureMap>> {
    let dir = dir.as_ref();
    let mut out = HashMap::new();
    for id in image_ids {
        if out.contains_key(id) {
            continue;
        }
        let map = load_feature_map(dir.join(format!("{id}.pbft")))?;
        if map.image_id != id {
            return Err(Error::Format(format!(
                "{}: container holds image {}",
                dir.join(format!("{id}.pbft")).display(),
                map.image_id
            )));
        }
        out.insert(id.to_string(), map);
    }
    Ok(out)
}
