//! Trains a same/different readout on planted trials and reports held-out
//! accuracy, then a stratified cross-validated estimate.

use patchgroup::pipeline::{trial_features, trial_labels, trial_strata};
use patchgroup::readout::{cv_accuracy, evaluate_accuracy, train_classifier, CvConfig, TrainConfig};
use patchgroup::synth::{planted_set, SceneConfig};

fn main() -> patchgroup::Result<()> {
    let cfg = SceneConfig::default();
    let train = planted_set(300, &cfg, "train", 1)?;
    let test = planted_set(50, &cfg, "test", 2)?;
    let ps = cfg.patch_size as u32;
    for sigma in [0.1, 0.5, 1.0] {
        let (tr, te) = (train.trials(), test.trials());
        let f_train = trial_features(&train.feature_maps(sigma, 3)?, &tr, ps)?;
        let f_test = trial_features(&test.feature_maps(sigma, 4)?, &te, ps)?;
        let model = train_classifier(&f_train, &trial_labels(&tr), &TrainConfig::default())?;
        let acc = evaluate_accuracy(&model, &f_test, &trial_labels(&te))?;
        println!("sigma {sigma}: held-out accuracy {acc:.3} on {} trials", te.len());
    }

    let trials = test.trials();
    let features = trial_features(&test.feature_maps(0.5, 4)?, &trials, ps)?;
    let cv = CvConfig { folds: 5, seeds: 3, ..CvConfig::default() };
    let r = cv_accuracy(&features, &trial_labels(&trials), &trial_strata(&trials), &cv)?;
    println!("sigma 0.5: 5-fold accuracy {:.3} on {} trials", r.accuracy, trials.len());
    Ok(())
}
