//! Trains a linear adapter that pulls a misaligned student's Gram matrices
//! toward a teacher's, then compares base and adapted student features.

use std::collections::HashMap;

use patchgroup::gramalign::{align_trials, before_after_report, mean_gram_loss, train_adapter, AlignConfig};
use patchgroup::pipeline::MetricConfig;
use patchgroup::readout::CvConfig;
use patchgroup::synth::{misaligned_pair, planted_set, simulate_subjects, Misalignment, SceneConfig, SubjectConfig};
use patchgroup::tensorio::FeatureMap;

fn main() -> patchgroup::Result<()> {
    let cfg = SceneConfig::default();
    let train = planted_set(120, &cfg, "train", 1)?;
    let eval = planted_set(60, &cfg, "eval", 2)?;
    let mis = Misalignment::default();
    let (teacher, student) = misaligned_pair(&train.feature_maps(0.3, 3)?, &mis, 4)?;
    let (teacher_eval, student_eval) = misaligned_pair(&eval.feature_maps(0.3, 5)?, &mis, 4)?;

    let ids: Vec<&String> = train.scenes.iter().map(|s| &s.objects.image_id).collect();
    let s: Vec<FeatureMap> = ids.iter().map(|i| student[*i].clone()).collect();
    let t: Vec<FeatureMap> = ids.iter().map(|i| teacher[*i].clone()).collect();
    let trials = align_trials(&s, &train.trials(), 16)?;
    let result = train_adapter(&s, &t, &trials, &AlignConfig::default())?;
    let first = result.history.first().map_or(0.0, |h| h.gram);
    let last = result.history.last().map_or(0.0, |h| h.gram);
    println!("training gram loss {first:.4} -> {last:.5} over {} steps", result.history.len());

    let adapted: HashMap<String, FeatureMap> = student_eval
        .iter()
        .map(|(k, m)| Ok((k.clone(), result.adapter.apply(m)?)))
        .collect::<patchgroup::Result<_>>()?;
    let order: Vec<&String> = eval.scenes.iter().map(|s| &s.objects.image_id).collect();
    let pick = |m: &HashMap<String, FeatureMap>| order.iter().map(|i| m[*i].clone()).collect::<Vec<_>>();
    println!(
        "held-out gram loss {:.4} -> {:.5}",
        mean_gram_loss(&pick(&student_eval), &pick(&teacher_eval))?,
        mean_gram_loss(&pick(&adapted), &pick(&teacher_eval))?
    );

    let eval_trials = eval.trials();
    let records = simulate_subjects(&eval_trials, &teacher_eval, 16, &SubjectConfig::default(), 6)?;
    let mc = MetricConfig { cv: CvConfig { folds: 5, seeds: 2, ..CvConfig::default() }, ..MetricConfig::default() };
    let r = before_after_report(&student_eval, &adapted, &eval_trials, &eval.masks, &records, &mc)?;
    println!("{:<20}{:>10}{:>10}{:>10}", "metric", "base", "aligned", "delta");
    for (name, b, a, d) in [
        ("grouping accuracy", r.base.grouping_accuracy, r.aligned.grouping_accuracy, r.delta.grouping_accuracy),
        ("object AUC", r.base.object_auc, r.aligned.object_auc, r.delta.object_auc),
        ("normalized score", r.base.behavioral_score, r.aligned.behavioral_score, r.delta.behavioral_score),
    ] {
        println!("{name:<20}{b:>10.3}{a:>10.3}{d:>+10.3}");
    }
    Ok(())
}
