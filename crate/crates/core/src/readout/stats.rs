//! Rank correlation, split-half noise ceilings and noise-normalized scores.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::seeds;
use crate::tensorio::BehavioralRecord;
use crate::{Error, Result};

pub const DEFAULT_SPLITS: usize = 20;

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j hold ranks i+1..=j
        let rank = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    ranks
}

/// Pearson correlation; `None` when either input has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman correlation: Pearson correlation of average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Argument(format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::Argument("need at least two observations".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Argument("non-finite input".into()));
    }
    pearson(&average_ranks(a), &average_ranks(b))
        .ok_or_else(|| Error::UndefinedCorrelation("an input has no distinct values".into()))
}

/// Mean RT per trial, optionally over correct responses only.
pub fn mean_rts(records: &[BehavioralRecord], correct_only: bool) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.correct || !correct_only) {
        let e = acc.entry(r.trial_id.clone()).or_default();
        e.0 += r.rt_ms;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

/// One random partition of subjects into two equal halves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSplit {
    pub first: Vec<String>,
    pub second: Vec<String>,
}

/// `n_splits` random halvings; with an odd subject count the subject left
/// over after shuffling sits out that split.
pub fn subject_splits(records: &[BehavioralRecord], n_splits: usize, rng_seed: u64) -> Result<Vec<SubjectSplit>> {
    let subjects: Vec<String> = records
        .iter()
        .map(|r| r.subject_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if subjects.len() < 2 {
        return Err(Error::Argument(format!(
            "noise ceiling needs at least 2 subjects, got {}",
            subjects.len()
        )));
    }
    if n_splits == 0 {
        return Err(Error::Argument("n_splits must be positive".into()));
    }
    let mut rng = seeds::rng(rng_seed, "subject-splits");
    let half = subjects.len() / 2;
    Ok((0..n_splits)
        .map(|_| {
            let mut s = subjects.clone();
            s.shuffle(&mut rng);
            SubjectSplit {
                first: s[..half].to_vec(),
                second: s[half..2 * half].to_vec(),
            }
        })
        .collect())
}

/// Half-wise mean RTs on the trials both halves observed.
#[derive(Debug, Clone)]
struct HalfMeans {
    trials: Vec<String>,
    first: Vec<f64>,
    second: Vec<f64>,
    dropped: usize,
}

fn half_means(records: &[BehavioralRecord], split: &SubjectSplit, correct_only: bool) -> HalfMeans {
    let side: HashMap<&str, usize> = split
        .first
        .iter()
        .map(|s| (s.as_str(), 0))
        .chain(split.second.iter().map(|s| (s.as_str(), 1)))
        .collect();
    let mut acc: BTreeMap<&str, [(f64, usize); 2]> = BTreeMap::new();
    let mut all_trials = BTreeSet::new();
    for r in records {
        all_trials.insert(r.trial_id.as_str());
        if correct_only && !r.correct {
            continue;
        }
        if let Some(&h) = side.get(r.subject_id.as_str()) {
            let e = acc.entry(&r.trial_id).or_default();
            e[h].0 += r.rt_ms;
            e[h].1 += 1;
        }
    }
    let mut out = HalfMeans {
        trials: Vec::new(),
        first: Vec::new(),
        second: Vec::new(),
        dropped: 0,
    };
    for t in all_trials {
        match acc.get(t) {
            Some([(s0, n0), (s1, n1)]) if *n0 > 0 && *n1 > 0 => {
                out.trials.push(t.to_owned());
                out.first.push(s0 / *n0 as f64);
                out.second.push(s1 / *n1 as f64);
            }
            _ => out.dropped += 1,
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseCeiling {
    pub ceiling: f64,
    pub per_split: Vec<f64>,
    /// Trials dropped from each split for lacking data in one half.
    pub dropped: Vec<usize>,
}

pub fn noise_ceiling_with_splits(
    records: &[BehavioralRecord],
    splits: &[SubjectSplit],
    correct_only: bool,
) -> Result<NoiseCeiling> {
    let mut per_split = Vec::with_capacity(splits.len());
    let mut dropped = Vec::with_capacity(splits.len());
    for split in splits {
        let m = half_means(records, split, correct_only);
        per_split.push(spearman(&m.first, &m.second)?);
        dropped.push(m.dropped);
    }
    Ok(NoiseCeiling {
        ceiling: per_split.iter().sum::<f64>() / per_split.len() as f64,
        per_split,
        dropped,
    })
}

/// Split-half consistency of per-trial mean RTs, averaged over `n_splits`
/// random subject halvings.
pub fn noise_ceiling(
    records: &[BehavioralRecord],
    n_splits: usize,
    rng_seed: u64,
    correct_only: bool,
) -> Result<NoiseCeiling> {
    let splits = subject_splits(records, n_splits, rng_seed)?;
    noise_ceiling_with_splits(records, &splits, correct_only)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedScore {
    /// Mean model-vs-half Spearman over both halves of every split.
    pub model_human: f64,
    pub ceiling: f64,
    pub normalized: f64,
    pub per_split: Vec<f64>,
}

/// Model-human rank correlation divided by the noise ceiling, with the
/// numerator and the ceiling computed on the same subject splits.
///
/// `predictions` maps trial id to predicted RT; trials without a prediction
/// are ignored for the numerator.
pub fn normalized_score(
    predictions: &HashMap<String, f64>,
    records: &[BehavioralRecord],
    n_splits: usize,
    rng_seed: u64,
    correct_only: bool,
) -> Result<NormalizedScore> {
    let splits = subject_splits(records, n_splits, rng_seed)?;
    let ceiling = noise_ceiling_with_splits(records, &splits, correct_only)?.ceiling;
    if ceiling <= 0.0 {
        return Err(Error::NotNormalizable(ceiling));
    }
    let mut per_split = Vec::with_capacity(splits.len());
    for split in &splits {
        let m = half_means(records, split, correct_only);
        let (mut pred, mut first, mut second) = (Vec::new(), Vec::new(), Vec::new());
        for (i, t) in m.trials.iter().enumerate() {
            if let Some(&p) = predictions.get(t) {
                pred.push(p);
                first.push(m.first[i]);
                second.push(m.second[i]);
            }
        }
        let r = (spearman(&pred, &first)? + spearman(&pred, &second)?) / 2.0;
        per_split.push(r);
    }
    let model_human = per_split.iter().sum::<f64>() / per_split.len() as f64;
    Ok(NormalizedScore {
        model_human,
        ceiling,
        normalized: model_human / ceiling,
        per_split,
    })
}
