//! Simulated subjects respond to planted trials; a readout predicts their
//! per-trial RTs from model features and is scored against the split-half
//! noise ceiling.

use patchgroup::pipeline::{behavioral_fit, MetricConfig};
use patchgroup::readout::{noise_ceiling, CvConfig, TrainConfig};
use patchgroup::synth::{planted_set, simulate_subjects, SceneConfig, SubjectConfig};

fn main() -> patchgroup::Result<()> {
    let cfg = SceneConfig::default();
    let set = planted_set(60, &cfg, "scene", 5)?;
    let trials = set.trials();
    // subjects see the scenes through a fixed reference representation
    let reference = set.feature_maps(0.3, 6)?;
    let records = simulate_subjects(&trials, &reference, 16, &SubjectConfig::default(), 7)?;
    let c = noise_ceiling(&records, 20, 8, true)?;
    println!("noise ceiling {:.3} ({} trials, {} responses)", c.ceiling, trials.len(), records.len());

    let mc = MetricConfig {
        cv: CvConfig {
            folds: 5,
            seeds: 2,
            train: TrainConfig { hidden: 64, ..TrainConfig::default() },
            rng_seed: 9,
        },
        ..MetricConfig::default()
    };
    for (name, sigma) in [("reference", 0.3), ("noisier model", 1.5)] {
        let maps = if sigma == 0.3 { reference.clone() } else { set.feature_maps(sigma, 10)? };
        let fit = behavioral_fit(&maps, &trials, &records, 16, &mc)?;
        println!(
            "{name:<14} spearman {:.3}  normalized {:.3}",
            fit.score.model_human, fit.score.normalized
        );
    }
    Ok(())
}
