//! MLP readouts from trial features: same/different classification and
//! cross-validated per-trial RT regression, plus the rank statistics used to
//! score RT predictions against human data.

mod mlp;
mod stats;

pub use mlp::{sigmoid, Adam, Mlp, Momentum, Task};
pub use stats::{
    average_ranks, mean_rts, noise_ceiling, noise_ceiling_with_splits, normalized_score, pearson, spearman,
    subject_splits, NoiseCeiling, NormalizedScore, SubjectSplit, DEFAULT_SPLITS,
};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affinity::pixel_to_patch;
use crate::seeds;
use crate::tensorio::{FeatureMap, TrialSpec};
use crate::{Error, Result};

/// Center-patch token followed by peripheral-patch token.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialFeature(pub Vec<f64>);

pub fn build_trial_feature(map: &FeatureMap, trial: &TrialSpec, patch_size: u32) -> Result<TrialFeature> {
    let grid = (map.h, map.w);
    let locate = |px| {
        pixel_to_patch(px, patch_size, grid)
            .map_err(|e| Error::Argument(format!("trial {}: {e}", trial.trial_id)))
    };
    let (cr, cc) = locate(trial.center_px)?;
    let (pr, pc) = locate(trial.peripheral_px)?;
    let mut v = Vec::with_capacity(2 * map.d);
    v.extend(map.token_at(cr, cc).iter().map(|&x| x as f64));
    v.extend(map.token_at(pr, pc).iter().map(|&x| x as f64));
    Ok(TrialFeature(v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// z-score inputs with training-set statistics stored in the model.
    pub standardize: bool,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: 256,
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-2,
            momentum: 0.9,
            weight_decay: 1e-4,
            standardize: true,
            rng_seed: 0,
        }
    }
}

/// Trained readout with its input standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutModel {
    pub task: Task,
    pub mlp: Mlp,
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
}

impl ReadoutModel {
    fn prepare(&self, x: &[f64], out: &mut [f64]) {
        for (((o, v), m), s) in out.iter_mut().zip(x).zip(&self.input_mean).zip(&self.input_scale) {
            *o = (v - m) * s;
        }
    }

    /// Logit for classifiers, prediction for regressors.
    pub fn predict_raw(&self, x: &[f64]) -> f64 {
        let mut buf = vec![0.0; x.len()];
        self.prepare(x, &mut buf);
        self.mlp.forward(&buf)
    }

    /// Probability of "same" for a classifier.
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.predict_raw(x))
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.input
    }
}

fn flatten(features: &[TrialFeature]) -> Result<(usize, Vec<f64>)> {
    let dim = features
        .first()
        .map(|f| f.0.len())
        .ok_or_else(|| Error::Argument("no training examples".into()))?;
    if dim == 0 {
        return Err(Error::Argument("empty feature vectors".into()));
    }
    let mut flat = Vec::with_capacity(dim * features.len());
    for (i, f) in features.iter().enumerate() {
        if f.0.len() != dim {
            return Err(Error::Argument(format!("feature {i} has length {}, expected {dim}", f.0.len())));
        }
        flat.extend_from_slice(&f.0);
    }
    Ok((dim, flat))
}

fn standardizer(dim: usize, flat: &[f64], enabled: bool) -> (Vec<f64>, Vec<f64>) {
    if !enabled {
        return (vec![0.0; dim], vec![1.0; dim]);
    }
    let n = (flat.len() / dim) as f64;
    let mut mean = vec![0.0; dim];
    for row in flat.chunks_exact(dim) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for row in flat.chunks_exact(dim) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let scale = var
        .into_iter()
        .map(|s| {
            let sd = (s / n).sqrt();
            if sd > 0.0 {
                1.0 / sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

/// Mini-batch momentum SGD on the given task; deterministic in
/// `cfg.rng_seed` (initialization and shuffling use separate sub-streams).
pub fn train(features: &[TrialFeature], targets: &[f64], task: Task, cfg: &TrainConfig) -> Result<ReadoutModel> {
    let (dim, mut flat) = flatten(features)?;
    if targets.len() != features.len() {
        return Err(Error::Argument(format!(
            "{} targets for {} examples",
            targets.len(),
            features.len()
        )));
    }
    if cfg.hidden == 0 || cfg.batch_size == 0 {
        return Err(Error::Argument("hidden and batch_size must be positive".into()));
    }
    let (input_mean, input_scale) = standardizer(dim, &flat, cfg.standardize);
    for row in flat.chunks_exact_mut(dim) {
        for ((v, m), s) in row.iter_mut().zip(&input_mean).zip(&input_scale) {
            *v = (*v - m) * s;
        }
    }
    let mut mlp = Mlp::new(dim, cfg.hidden, &mut seeds::rng(cfg.rng_seed, "readout/init"));
    let mut shuffle_rng = seeds::rng(cfg.rng_seed, "readout/shuffle");
    let mut opt = Momentum::new(mlp.params.len(), cfg.learning_rate, cfg.momentum, cfg.weight_decay);
    let mut grad = vec![0.0; mlp.params.len()];
    let mut order: Vec<usize> = (0..targets.len()).collect();
    let mut bx = Vec::with_capacity(cfg.batch_size * dim);
    let mut by = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(cfg.batch_size) {
            bx.clear();
            by.clear();
            for &i in batch {
                bx.extend_from_slice(&flat[i * dim..(i + 1) * dim]);
                by.push(targets[i]);
            }
            mlp.loss_and_grad(&bx, &by, task, &mut grad, None);
            opt.step(&mut mlp.params, &grad);
        }
    }
    if mlp.params.iter().any(|p| !p.is_finite()) {
        return Err(Error::Invariant("readout training diverged".into()));
    }
    Ok(ReadoutModel {
        task,
        mlp,
        input_mean,
        input_scale,
    })
}

/// Binary same/different readout; `labels[i]` is true for "same".
pub fn train_classifier(features: &[TrialFeature], labels: &[bool], cfg: &TrainConfig) -> Result<ReadoutModel> {
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives < 2 || negatives < 2 {
        return Err(Error::DegenerateLabels(format!(
            "need at least 2 examples per class, got {positives} same / {negatives} different"
        )));
    }
    let targets: Vec<f64> = labels.iter().map(|&l| l as u8 as f64).collect();
    train(features, &targets, Task::Classify, cfg)
}

pub fn train_regressor(features: &[TrialFeature], targets: &[f64], cfg: &TrainConfig) -> Result<ReadoutModel> {
    train(features, targets, Task::Regress, cfg)
}

/// Fraction of examples where `p(same) ≥ 0.5` agrees with the label.
pub fn evaluate_accuracy(model: &ReadoutModel, features: &[TrialFeature], labels: &[bool]) -> Result<f64> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} features and {} labels",
            features.len(),
            labels.len()
        )));
    }
    let correct = features
        .iter()
        .zip(labels)
        .filter(|(f, &l)| (model.predict_proba(&f.0) >= 0.5) == l)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    pub seeds: usize,
    pub train: TrainConfig,
    pub rng_seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: 10,
            seeds: 10,
            train: TrainConfig::default(),
            rng_seed: 0,
        }
    }
}

impl CvConfig {
    fn validate(&self, n: usize) -> Result<()> {
        if self.folds < 2 || self.seeds < 1 {
            return Err(Error::Argument(format!(
                "need folds >= 2 and seeds >= 1, got {} and {}",
                self.folds, self.seeds
            )));
        }
        if n < self.folds {
            return Err(Error::Argument(format!("{n} trials for {} folds", self.folds)));
        }
        Ok(())
    }

    fn run_config(&self, fold: usize, seed: usize) -> TrainConfig {
        TrainConfig {
            rng_seed: seeds::substream(self.rng_seed, &format!("cv/fold{fold}/seed{seed}")),
            ..self.train.clone()
        }
    }
}

/// Fold index per trial. Within each stratum (in ascending stratum order)
/// trials are shuffled and dealt round-robin, continuing the deal across
/// strata so fold sizes differ by at most one.
pub fn stratified_folds(strata: &[usize], folds: usize, rng_seed: u64) -> Vec<usize> {
    let mut rng = seeds::rng(rng_seed, "cv/folds");
    let mut keys: Vec<usize> = strata.to_vec();
    keys.sort_unstable();
    keys.dedup();
    let mut fold_of = vec![0; strata.len()];
    let mut next = 0;
    for key in keys {
        let mut members: Vec<usize> = (0..strata.len()).filter(|&i| strata[i] == key).collect();
        members.shuffle(&mut rng);
        for i in members {
            fold_of[i] = next % folds;
            next += 1;
        }
    }
    fold_of
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPrediction {
    /// Out-of-fold predicted RT in milliseconds, one per trial.
    pub predictions: Vec<f64>,
    pub fold_of: Vec<usize>,
    /// Across-seed standard deviation of each trial's prediction, in
    /// target (z-scored log RT) units.
    pub seed_std: Vec<f64>,
    /// Training targets had no variance; predictions are constant and any
    /// correlation with them is undefined.
    pub constant_target: bool,
}

fn subset(features: &[TrialFeature], idx: &[usize]) -> Vec<TrialFeature> {
    idx.iter().map(|&i| features[i].clone()).collect()
}

/// Out-of-fold RT predictions. Each fold trains `cfg.seeds` regressors on
/// z-scored log RT of the remaining folds and averages their predictions on
/// the held-out fold.
pub fn cv_predict_rt(
    features: &[TrialFeature],
    mean_rts: &[f64],
    strata: &[usize],
    cfg: &CvConfig,
) -> Result<CvPrediction> {
    let n = features.len();
    cfg.validate(n)?;
    if mean_rts.len() != n || strata.len() != n {
        return Err(Error::Argument(format!(
            "{n} features, {} RTs, {} strata",
            mean_rts.len(),
            strata.len()
        )));
    }
    if let Some(bad) = mean_rts.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
        return Err(Error::Argument(format!("RT {bad} is not positive")));
    }
    let log_rt: Vec<f64> = mean_rts.iter().map(|r| r.ln()).collect();
    let fold_of = stratified_folds(strata, cfg.folds, cfg.rng_seed);

    let jobs: Vec<(usize, usize)> = (0..cfg.folds).flat_map(|f| (0..cfg.seeds).map(move |s| (f, s))).collect();
    type FoldRun = (Vec<usize>, Vec<f64>, bool);
    let runs: Vec<Result<FoldRun>> = jobs
        .par_iter()
        .map(|&(fold, seed)| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| fold_of[i] == fold);
            let y: Vec<f64> = train.iter().map(|&i| log_rt[i]).collect();
            if y.iter().all(|v| *v == y[0]) {
                return Ok((test.clone(), vec![0.0; test.len()], true));
            }
            let mean = y.iter().sum::<f64>() / y.len() as f64;
            let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64).sqrt();
            let z: Vec<f64> = y.iter().map(|v| (v - mean) / sd).collect();
            let model = train_regressor(&subset(features, &train), &z, &cfg.run_config(fold, seed))?;
            // Back to log-RT units.
            let preds = test.iter().map(|&i| model.predict_raw(&features[i].0) * sd + mean).collect();
            Ok((test, preds, false))
        })
        .collect();

    let mut per_seed: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.seeds); n];
    let mut constant = false;
    for run in runs {
        let (test, preds, flat) = run?;
        constant |= flat;
        for (i, p) in test.into_iter().zip(preds) {
            per_seed[i].push(p);
        }
    }
    if constant {
        let level = log_rt.iter().sum::<f64>() / n as f64;
        return Ok(CvPrediction {
            predictions: vec![level.exp(); n],
            fold_of,
            seed_std: vec![0.0; n],
            constant_target: true,
        });
    }
    let global_mean = log_rt.iter().sum::<f64>() / n as f64;
    let global_sd = (log_rt.iter().map(|v| (v - global_mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let mut predictions = Vec::with_capacity(n);
    let mut seed_std = Vec::with_capacity(n);
    for preds in &per_seed {
        let k = preds.len() as f64;
        let m = preds.iter().sum::<f64>() / k;
        let var = preds.iter().map(|p| (p - m).powi(2)).sum::<f64>() / k;
        predictions.push(m.exp());
        seed_std.push(var.sqrt() / global_sd);
    }
    Ok(CvPrediction {
        predictions,
        fold_of,
        seed_std,
        constant_target: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvAccuracy {
    pub accuracy: f64,
    /// Out-of-fold seed-averaged probability of "same".
    pub probabilities: Vec<f64>,
}

/// Out-of-fold grouping accuracy with seed-ensembled classifiers.
pub fn cv_accuracy(features: &[TrialFeature], labels: &[bool], strata: &[usize], cfg: &CvConfig) -> Result<CvAccuracy> {
    let n = features.len();
    cfg.validate(n)?;
    if labels.len() != n || strata.len() != n {
        return Err(Error::Argument(format!(
            "{n} features, {} labels, {} strata",
            labels.len(),
            strata.len()
        )));
    }
    let fold_of = stratified_folds(strata, cfg.folds, cfg.rng_seed);
    let jobs: Vec<(usize, usize)> = (0..cfg.folds).flat_map(|f| (0..cfg.seeds).map(move |s| (f, s))).collect();
    let runs: Vec<Result<(Vec<usize>, Vec<f64>)>> = jobs
        .par_iter()
        .map(|&(fold, seed)| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| fold_of[i] == fold);
            let y: Vec<bool> = train.iter().map(|&i| labels[i]).collect();
            let model = train_classifier(&subset(features, &train), &y, &cfg.run_config(fold, seed))?;
            let p = test.iter().map(|&i| model.predict_proba(&features[i].0)).collect();
            Ok((test, p))
        })
        .collect();
    let mut probabilities = vec![0.0; n];
    for run in runs {
        let (test, p) = run?;
        for (i, v) in test.into_iter().zip(p) {
            probabilities[i] += v / cfg.seeds as f64;
        }
    }
    let correct = probabilities
        .iter()
        .zip(labels)
        .filter(|(p, &l)| (**p >= 0.5) == l)
        .count();
    Ok(CvAccuracy {
        accuracy: correct as f64 / n as f64,
        probabilities,
    })
}
