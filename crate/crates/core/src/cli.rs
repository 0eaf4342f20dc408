//! Command-line front end. [`run`] parses arguments, executes one
//! subcommand and returns the process exit code: 0 on success, 1 on a usage
//! error, 2 on a data error.
//!
//! Every run writes a [`RunManifest`] next to its outputs. A `--config`
//! file of `key = value` lines supplies defaults for long flags; flags given
//! on the command line win. `PB_LOG` sets log verbosity.

use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::affinity::{affinity_from_patch, pixel_to_patch};
use crate::gramalign::{self, align_trials, before_after_report, gram_loss, Adapter, AlignConfig};
use crate::pipeline::{self, feature_for, load_feature_dir, load_patch_masks, MetricConfig};
use crate::readout::{
    self, mean_rts, noise_ceiling, train_classifier, CvConfig, TrainConfig,
};
use crate::report::{self, AucRow};
use crate::roc::ThresholdGrid;
use crate::seeds;
use crate::tensorio::{
    open_text, read_behavioral_records, read_trial_manifest, write_trial_manifest, BehavioralRecord, FeatureMap,
    TrialSpec,
};
use crate::trialgen::{counterbalance, generate_trials, load_image_objects, PlacementConfig};
use crate::{Error, Result};

/// Name of the object index inside a masks directory.
pub const OBJECT_INDEX: &str = "objects.jsonl";

#[derive(Parser, Debug)]
#[command(name = "patchgroup", version, about = "Object-centricity and grouping metrics for patch features")]
pub struct Cli {
    /// Root seed; every module draws from a named sub-stream of it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for parallel stages. Outputs do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// File of `key = value` defaults for long flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Place two-dot trials on the objects listed in a masks directory.
    GenTrials(GenTrialsArgs),
    /// Center-dot affinity maps for every trial.
    Affinity(AffinityArgs),
    /// Trial-averaged ROC of center-dot affinity against the center object.
    Roc(RocArgs),
    /// Train a same/different readout; optionally score held-out trials.
    TrainReadout(TrainReadoutArgs),
    /// Cross-validated per-trial RT predictions and their normalized score.
    PredictRt(PredictRtArgs),
    /// Split-half noise ceiling of human RTs.
    NoiseCeiling(NoiseCeilingArgs),
    /// Gram loss between student and teacher features, per image.
    GramLoss(GramLossArgs),
    /// Train a linear adapter with the Gram and task losses.
    AlignTrain(AlignTrainArgs),
    /// Compare base and adapted features on all three metrics.
    AlignReport(AlignReportArgs),
    /// Render CSV and SVG figures from existing outputs.
    Report(ReportArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenTrials(_) => "gen-trials",
            Command::Affinity(_) => "affinity",
            Command::Roc(_) => "roc",
            Command::TrainReadout(_) => "train-readout",
            Command::PredictRt(_) => "predict-rt",
            Command::NoiseCeiling(_) => "noise-ceiling",
            Command::GramLoss(_) => "gram-loss",
            Command::AlignTrain(_) => "align-train",
            Command::AlignReport(_) => "align-report",
            Command::Report(_) => "report",
        }
    }
}

const SUBCOMMANDS: [&str; 10] = [
    "gen-trials",
    "affinity",
    "roc",
    "train-readout",
    "predict-rt",
    "noise-ceiling",
    "gram-loss",
    "align-train",
    "align-report",
    "report",
];

#[derive(Args, Debug, Serialize)]
pub struct GenTrialsArgs {
    /// Directory holding objects.jsonl and the masks it lists.
    #[arg(long)]
    pub masks: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = PlacementConfig::default().px_per_degree)]
    pub px_per_degree: f64,
    #[arg(long, default_value_t = PlacementConfig::default().close_deg)]
    pub close_deg: f64,
    #[arg(long, default_value_t = PlacementConfig::default().far_deg)]
    pub far_deg: f64,
    #[arg(long, default_value_t = PlacementConfig::default().distance_tol_px)]
    pub tolerance_px: f64,
    #[arg(long, default_value_t = PlacementConfig::default().boundary_margin_px)]
    pub margin_px: f64,
    #[arg(long, default_value_t = PlacementConfig::default().max_attempts)]
    pub max_attempts: usize,
    /// Also write a four-group Latin-square assignment here.
    #[arg(long)]
    pub counterbalance: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct FeatureArgs {
    /// Directory of `<image_id>.pbft` feature maps.
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub trials: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub patch_size: u32,
}

#[derive(Args, Debug, Serialize)]
pub struct AffinityArgs {
    #[command(flatten)]
    pub input: FeatureArgs,
    /// JSONL output, one affinity map per trial.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct RocArgs {
    #[command(flatten)]
    pub input: FeatureArgs,
    #[arg(long)]
    pub masks: PathBuf,
    /// Curve CSV; the AUC summary goes to `<stem>_auc.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = crate::roc::DEFAULT_THRESHOLDS)]
    pub thresholds: usize,
    #[arg(long, default_value = "features")]
    pub label: String,
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    #[arg(long, default_value_t = TrainConfig::default().hidden)]
    pub hidden: usize,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    pub epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    pub batch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    pub lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().momentum)]
    pub momentum: f64,
    #[arg(long, default_value_t = TrainConfig::default().weight_decay)]
    pub weight_decay: f64,
    #[arg(long)]
    pub no_standardize: bool,
}

impl TrainArgs {
    fn config(&self, rng_seed: u64) -> Result<TrainConfig> {
        if self.hidden == 0 || self.epochs == 0 || self.batch_size == 0 || self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::Usage("hidden, epochs, batch-size and lr must be positive".into()));
        }
        Ok(TrainConfig {
            hidden: self.hidden,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            standardize: !self.no_standardize,
            rng_seed,
        })
    }
}

#[derive(Args, Debug, Serialize)]
pub struct TrainReadoutArgs {
    #[command(flatten)]
    pub input: FeatureArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Model JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Held-out trials scored after training; features come from the same
    /// directory.
    #[arg(long)]
    pub eval_trials: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct CvArgs {
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long, default_value_t = 10)]
    pub seeds: usize,
    #[command(flatten)]
    pub train: TrainArgs,
}

impl CvArgs {
    fn config(&self, rng_seed: u64) -> Result<CvConfig> {
        if self.folds < 2 || self.seeds == 0 {
            return Err(Error::Usage("need --folds >= 2 and --seeds >= 1".into()));
        }
        Ok(CvConfig {
            folds: self.folds,
            seeds: self.seeds,
            train: self.train.config(0)?,
            rng_seed,
        })
    }
}

#[derive(Args, Debug, Serialize)]
pub struct PredictRtArgs {
    #[command(flatten)]
    pub input: FeatureArgs,
    #[arg(long)]
    pub records: PathBuf,
    #[command(flatten)]
    pub cv: CvArgs,
    #[arg(long, default_value_t = readout::DEFAULT_SPLITS)]
    pub splits: usize,
    /// Use incorrect responses too.
    #[arg(long)]
    pub all_responses: bool,
    /// Per-trial prediction CSV; the score goes to `<stem>_score.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct NoiseCeilingArgs {
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long, default_value_t = readout::DEFAULT_SPLITS)]
    pub splits: usize,
    #[arg(long)]
    pub all_responses: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct GramLossArgs {
    #[arg(long)]
    pub student: PathBuf,
    #[arg(long)]
    pub teacher: PathBuf,
    /// Per-image CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct AlignTrainArgs {
    #[arg(long)]
    pub student: PathBuf,
    #[arg(long)]
    pub teacher: PathBuf,
    #[arg(long)]
    pub trials: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub patch_size: u32,
    #[arg(long, default_value_t = AlignConfig::default().lambda_gram)]
    pub lambda_gram: f64,
    #[arg(long, default_value_t = AlignConfig::default().steps)]
    pub steps: usize,
    #[arg(long, default_value_t = AlignConfig::default().learning_rate)]
    pub lr: f64,
    #[arg(long, default_value_t = AlignConfig::default().images_per_step)]
    pub images_per_step: usize,
    #[arg(long, default_value_t = AlignConfig::default().trials_per_step)]
    pub trials_per_step: usize,
    #[arg(long, default_value_t = AlignConfig::default().readout_hidden)]
    pub hidden: usize,
    #[arg(long)]
    pub d_out: Option<usize>,
    #[arg(long)]
    pub no_bias: bool,
    /// Adapter file; the loss history goes to `<stem>_history.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct AlignReportArgs {
    #[command(flatten)]
    pub input: FeatureArgs,
    #[arg(long)]
    pub adapter: PathBuf,
    #[arg(long)]
    pub masks: PathBuf,
    #[arg(long)]
    pub records: PathBuf,
    #[command(flatten)]
    pub cv: CvArgs,
    #[arg(long, default_value_t = crate::roc::DEFAULT_THRESHOLDS)]
    pub thresholds: usize,
    #[arg(long, default_value_t = readout::DEFAULT_SPLITS)]
    pub splits: usize,
    #[arg(long)]
    pub all_responses: bool,
    /// JSON comparison; a CSV copy goes to `<stem>.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct ReportArgs {
    /// ROC curve CSV as `label=path`; repeatable.
    #[arg(long = "roc")]
    pub rocs: Vec<String>,
    /// Per-trial CSV with a `trial_id` column, e.g. predict-rt output.
    #[arg(long)]
    pub values: Option<PathBuf>,
    /// Column of `--values` to average per condition.
    #[arg(long, default_value = "human_rt_ms")]
    pub column: String,
    /// Trial manifest giving each trial's condition.
    #[arg(long)]
    pub trials: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Provenance of one run: enough to reproduce its outputs exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    /// Input path to hex SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
    pub version: String,
    pub seed: u64,
    pub substreams: BTreeMap<String, u64>,
}

struct Run {
    seed: u64,
    inputs: BTreeMap<String, String>,
    substreams: BTreeMap<String, u64>,
}

impl Run {
    fn input(&mut self, path: &Path) -> Result<()> {
        let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut hasher = Sha256::new();
        let mut buf = [0u8; 1 << 16];
        loop {
            let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
            if n == 0 {
                break;
            }
            hasher.update(&buf[..n]);
        }
        let hex = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
        self.inputs.insert(path.display().to_string(), hex);
        Ok(())
    }

    fn stream(&mut self, name: &str) -> u64 {
        let v = seeds::substream(self.seed, name);
        self.substreams.insert(name.to_string(), v);
        v
    }

    fn trials(&mut self, path: &Path) -> Result<Vec<TrialSpec>> {
        self.input(path)?;
        read_trial_manifest(open_text(path)?)
    }

    fn records(&mut self, path: &Path) -> Result<Vec<BehavioralRecord>> {
        self.input(path)?;
        read_behavioral_records(open_text(path)?)
    }

    fn features(&mut self, dir: &Path, trials: &[TrialSpec]) -> Result<HashMap<String, FeatureMap>> {
        let maps = load_feature_dir(dir, trials.iter().map(|t| t.image_id.as_str()))?;
        let mut ids: Vec<&String> = maps.keys().collect();
        ids.sort();
        for id in ids {
            self.input(&dir.join(format!("{id}.pbft")))?;
        }
        Ok(maps)
    }

    fn masks(&mut self, dir: &Path, patch_size: u32) -> Result<pipeline::MaskIndex> {
        let index = dir.join(OBJECT_INDEX);
        self.input(&index)?;
        load_patch_masks(&index, patch_size as usize)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut sink = create(path)?;
    f(&mut sink)?;
    sink.flush().map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_with(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(w).map_err(|e| Error::io(path, e))
    })
}

/// `<dir>/<stem><suffix>` for an output file.
fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}{suffix}"))
}

fn manifest_path(out: &Path) -> PathBuf {
    if out.is_dir() {
        out.join("run_manifest.json")
    } else {
        let mut name = out.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        out.with_file_name(name)
    }
}

fn gen_trials(a: &GenTrialsArgs, run: &mut Run, jobs: usize) -> Result<PathBuf> {
    let cfg = PlacementConfig {
        px_per_degree: a.px_per_degree,
        close_deg: a.close_deg,
        far_deg: a.far_deg,
        distance_tol_px: a.tolerance_px,
        boundary_margin_px: a.margin_px,
        max_attempts: a.max_attempts,
        rng_seed: run.stream("trialgen"),
    };
    cfg.validate().map_err(|e| Error::Usage(e.to_string()))?;
    let index = a.masks.join(OBJECT_INDEX);
    run.input(&index)?;
    let images = load_image_objects(&index)?;
    let generated = generate_trials(&images, &cfg, jobs)?;
    let mut quads = Vec::new();
    let mut failures = String::from("image_id,reason\n");
    for (id, r) in generated {
        match r {
            Ok(q) => quads.push(q),
            Err(f) => {
                warn!("image {id}: {f}");
                failures.push_str(&format!("{id},{f}\n"));
            }
        }
    }
    info!("{} of {} images produced trials", quads.len(), images.len());
    let trials: Vec<TrialSpec> = quads.iter().flat_map(|q| q.trials.iter().cloned()).collect();
    write_with(&a.out, |w| write_trial_manifest(w, &trials))?;
    let fail_path = sibling(&a.out, "_failures.csv");
    write_with(&fail_path, |w| w.write_all(failures.as_bytes()).map_err(|e| Error::io(&fail_path, e)))?;
    if let Some(path) = &a.counterbalance {
        let cb = counterbalance(&quads, 4, run.stream("counterbalance"))?;
        write_json(path, &cb)?;
    }
    Ok(a.out.clone())
}

#[derive(Serialize)]
struct AffinityRow<'a> {
    trial_id: &'a str,
    image_id: &'a str,
    h: usize,
    w: usize,
    seed: (usize, usize),
    values: &'a [f64],
}

fn affinity_cmd(a: &AffinityArgs, run: &mut Run) -> Result<PathBuf> {
    let trials = run.trials(&a.input.trials)?;
    let maps = run.features(&a.input.features, &trials)?;
    write_with(&a.out, |w| {
        for t in &trials {
            let map = feature_for(&maps, t)?;
            let seed = pixel_to_patch(t.center_px, a.input.patch_size, (map.h, map.w))?;
            let aff = affinity_from_patch(map, seed)?;
            let row = AffinityRow {
                trial_id: &t.trial_id,
                image_id: &t.image_id,
                h: aff.h,
                w: aff.w,
                seed: aff.seed,
                values: &aff.values,
            };
            serde_json::to_writer(&mut *w, &row).map_err(|e| Error::Format(e.to_string()))?;
            writeln!(w).map_err(|e| Error::io(&a.out, e))?;
        }
        Ok(())
    })?;
    Ok(a.out.clone())
}

fn roc_cmd(a: &RocArgs, run: &mut Run) -> Result<PathBuf> {
    let grid = ThresholdGrid::uniform(a.thresholds).map_err(|e| Error::Usage(e.to_string()))?;
    let trials = run.trials(&a.input.trials)?;
    let maps = run.features(&a.input.features, &trials)?;
    let masks = run.masks(&a.masks, a.input.patch_size)?;
    let summary = pipeline::object_centricity(&maps, &trials, &masks, a.input.patch_size, &grid)?;
    write_with(&a.out, |w| report::write_roc_csv(w, &summary.curve))?;
    let row = AucRow {
        label: a.label.clone(),
        auc: summary.curve.auc,
        mean_trial_auc: summary.mean_trial_auc,
        n_trials: summary.n_trials,
    };
    write_with(&sibling(&a.out, "_auc.csv"), |w| report::write_auc_summary(w, &[row]))?;
    if let Some(svg) = &a.svg {
        let text = report::roc_svg(&[(a.label.clone(), summary.curve.points.clone())]);
        write_with(svg, |w| w.write_all(text.as_bytes()).map_err(|e| Error::io(svg, e)))?;
    }
    info!("AUC {:.4} over {} trials", summary.curve.auc, summary.n_trials);
    Ok(a.out.clone())
}

fn train_readout_cmd(a: &TrainReadoutArgs, run: &mut Run) -> Result<PathBuf> {
    let cfg = a.train.config(run.stream("readout"))?;
    let trials = run.trials(&a.input.trials)?;
    let maps = run.features(&a.input.features, &trials)?;
    let features = pipeline::trial_features(&maps, &trials, a.input.patch_size)?;
    let model = train_classifier(&features, &pipeline::trial_labels(&trials), &cfg)?;
    write_json(&a.out, &model)?;
    if let Some(path) = &a.eval_trials {
        let eval = run.trials(path)?;
        let eval_maps = run.features(&a.input.features, &eval)?;
        let f = pipeline::trial_features(&eval_maps, &eval, a.input.patch_size)?;
        let acc = readout::evaluate_accuracy(&model, &f, &pipeline::trial_labels(&eval))?;
        write_json(&sibling(&a.out, "_eval.json"), &serde_json::json!({ "accuracy": acc, "n_trials": eval.len() }))?;
        info!("held-out accuracy {acc:.4}");
    }
    Ok(a.out.clone())
}

fn predict_rt_cmd(a: &PredictRtArgs, run: &mut Run) -> Result<PathBuf> {
    let cfg = MetricConfig {
        patch_size: a.input.patch_size,
        cv: a.cv.config(run.stream("readout"))?,
        thresholds: crate::roc::DEFAULT_THRESHOLDS,
        n_splits: a.splits,
        correct_only: !a.all_responses,
        rng_seed: run.stream("splits"),
    };
    let trials = run.trials(&a.input.trials)?;
    let records = run.records(&a.records)?;
    let maps = run.features(&a.input.features, &trials)?;
    let fit = pipeline::behavioral_fit(&maps, &trials, &records, a.input.patch_size, &cfg)?;
    let human = mean_rts(&records, cfg.correct_only);
    let by_id: HashMap<&str, &TrialSpec> = trials.iter().map(|t| (t.trial_id.as_str(), t)).collect();
    write_with(&a.out, |w| {
        let err = |e| Error::io(&a.out, e);
        writeln!(w, "trial_id,condition,predicted_rt_ms,human_rt_ms,fold,seed_std").map_err(err)?;
        for (i, id) in fit.trial_ids.iter().enumerate() {
            writeln!(
                w,
                "{id},{},{},{},{},{}",
                by_id[id.as_str()].condition,
                fit.cv.predictions[i],
                human[id],
                fit.cv.fold_of[i],
                fit.cv.seed_std[i]
            )
            .map_err(err)?;
        }
        Ok(())
    })?;
    write_json(
        &sibling(&a.out, "_score.json"),
        &serde_json::json!({ "score": fit.score, "constant_target": fit.cv.constant_target }),
    )?;
    info!("normalized score {:.4}", fit.score.normalized);
    Ok(a.out.clone())
}

fn noise_ceiling_cmd(a: &NoiseCeilingArgs, run: &mut Run) -> Result<PathBuf> {
    let records = run.records(&a.records)?;
    let c = noise_ceiling(&records, a.splits, run.stream("splits"), !a.all_responses)?;
    write_json(&a.out, &c)?;
    info!("noise ceiling {:.4}", c.ceiling);
    Ok(a.out.clone())
}

fn pbft_ids(dir: &Path) -> Result<Vec<String>> {
    let mut ids: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let p = e.path();
            if p.extension()? != "pbft" {
                return None;
            }
            Some(p.file_stem()?.to_string_lossy().into_owned())
        })
        .collect();
    ids.sort();
    if ids.is_empty() {
        return Err(Error::Argument(format!("{}: no .pbft files", dir.display())));
    }
    Ok(ids)
}

fn paired_maps(run: &mut Run, student: &Path, teacher: &Path) -> Result<(Vec<FeatureMap>, Vec<FeatureMap>)> {
    let ids = pbft_ids(student)?;
    let (mut s, mut t) = (Vec::new(), Vec::new());
    for id in &ids {
        for (dir, out) in [(student, &mut s), (teacher, &mut t)] {
            let path = dir.join(format!("{id}.pbft"));
            run.input(&path)?;
            out.push(crate::tensorio::load_feature_map(&path)?);
        }
    }
    Ok((s, t))
}

fn gram_loss_cmd(a: &GramLossArgs, run: &mut Run) -> Result<PathBuf> {
    let (s, t) = paired_maps(run, &a.student, &a.teacher)?;
    let mut total = 0.0;
    write_with(&a.out, |w| {
        writeln!(w, "image_id,gram_loss").map_err(|e| Error::io(&a.out, e))?;
        for (x, y) in s.iter().zip(&t) {
            let l = gram_loss(x, y)?;
            total += l;
            writeln!(w, "{},{l}", x.image_id).map_err(|e| Error::io(&a.out, e))?;
        }
        Ok(())
    })?;
    info!("mean gram loss {:.6}", total / s.len() as f64);
    Ok(a.out.clone())
}

fn align_train_cmd(a: &AlignTrainArgs, run: &mut Run) -> Result<PathBuf> {
    let cfg = AlignConfig {
        lambda_gram: a.lambda_gram,
        steps: a.steps,
        learning_rate: a.lr,
        images_per_step: a.images_per_step,
        trials_per_step: a.trials_per_step,
        readout_hidden: a.hidden,
        d_out: a.d_out,
        with_bias: !a.no_bias,
        rng_seed: run.stream("gramalign"),
        ..AlignConfig::default()
    };
    if cfg.steps == 0 || cfg.images_per_step == 0 || cfg.trials_per_step == 0 || cfg.readout_hidden == 0 {
        return Err(Error::Usage("steps, batch sizes and hidden must be positive".into()));
    }
    let (s, t) = paired_maps(run, &a.student, &a.teacher)?;
    let trials = run.trials(&a.trials)?;
    let known: std::collections::HashSet<&str> = s.iter().map(|m| m.image_id.as_str()).collect();
    let usable: Vec<TrialSpec> = trials.into_iter().filter(|t| known.contains(t.image_id.as_str())).collect();
    let result = gramalign::train_adapter(&s, &t, &align_trials(&s, &usable, a.patch_size)?, &cfg)?;
    result.adapter.save(&a.out)?;
    let hist = sibling(&a.out, "_history.csv");
    write_with(&hist, |w| {
        writeln!(w, "step,total,task,gram").map_err(|e| Error::io(&hist, e))?;
        for (i, h) in result.history.iter().enumerate() {
            writeln!(w, "{i},{},{},{}", h.total, h.task, h.gram).map_err(|e| Error::io(&hist, e))?;
        }
        Ok(())
    })?;
    Ok(a.out.clone())
}

fn align_report_cmd(a: &AlignReportArgs, run: &mut Run) -> Result<PathBuf> {
    let cfg = MetricConfig {
        patch_size: a.input.patch_size,
        cv: a.cv.config(run.stream("readout"))?,
        thresholds: a.thresholds,
        n_splits: a.splits,
        correct_only: !a.all_responses,
        rng_seed: run.stream("splits"),
    };
    run.input(&a.adapter)?;
    let adapter = Adapter::load(&a.adapter)?;
    let trials = run.trials(&a.input.trials)?;
    let records = run.records(&a.records)?;
    let base = run.features(&a.input.features, &trials)?;
    let masks = run.masks(&a.masks, a.input.patch_size)?;
    let aligned = base
        .iter()
        .map(|(k, m)| Ok((k.clone(), adapter.apply(m)?)))
        .collect::<Result<HashMap<_, _>>>()?;
    let r = before_after_report(&base, &aligned, &trials, &masks, &records, &cfg)?;
    write_json(&a.out, &r)?;
    let csv = sibling(&a.out, ".csv");
    write_with(&csv, |w| {
        let err = |e| Error::io(&csv, e);
        writeln!(w, "metric,base,aligned,delta").map_err(err)?;
        let rows = [
            ("grouping_accuracy", r.base.grouping_accuracy, r.aligned.grouping_accuracy, r.delta.grouping_accuracy),
            ("object_auc", r.base.object_auc, r.aligned.object_auc, r.delta.object_auc),
            ("behavioral_score", r.base.behavioral_score, r.aligned.behavioral_score, r.delta.behavioral_score),
        ];
        for (name, b, al, d) in rows {
            writeln!(w, "{name},{b},{al},{d}").map_err(err)?;
        }
        Ok(())
    })?;
    Ok(a.out.clone())
}

fn read_column(path: &Path, column: &str) -> Result<BTreeMap<String, f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| Error::Format(format!("{}: no column {name}", path.display())))
    };
    let (id_col, val_col) = (find("trial_id")?, find(column)?);
    let mut out = BTreeMap::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let cols: Vec<&str> = line.split(',').collect();
        let value = cols
            .get(val_col)
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| Error::Format(format!("{} line {}: bad {column}", path.display(), n + 2)))?;
        let id = cols.get(id_col).copied().unwrap_or_default();
        out.insert(id.to_string(), value);
    }
    Ok(out)
}

fn report_cmd(a: &ReportArgs, run: &mut Run) -> Result<PathBuf> {
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    if a.rocs.is_empty() && a.values.is_none() {
        return Err(Error::Usage("report needs --roc or --values".into()));
    }
    let mut curves = Vec::new();
    for spec in &a.rocs {
        let (label, path) = spec
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("--roc expects label=path, got {spec}")))?;
        let path = Path::new(path);
        run.input(path)?;
        curves.push((label.to_string(), report::read_roc_csv(open_text(path)?)?));
    }
    if !curves.is_empty() {
        let svg = a.out.join("roc_overlay.svg");
        let text = report::roc_svg(&curves);
        write_with(&svg, |w| w.write_all(text.as_bytes()).map_err(|e| Error::io(&svg, e)))?;
    }
    if let Some(values) = &a.values {
        let trials_path = a
            .trials
            .as_ref()
            .ok_or_else(|| Error::Usage("--values needs --trials for conditions".into()))?;
        let trials = run.trials(trials_path)?;
        run.input(values)?;
        let means = report::condition_means(&trials, &read_column(values, &a.column)?);
        write_with(&a.out.join("condition_means.csv"), |w| report::write_condition_means(w, &means))?;
        let bars: Vec<(String, f64)> = means.iter().map(|m| (m.condition.to_string(), m.mean)).collect();
        let svg = a.out.join("condition_means.svg");
        let text = report::bar_svg(&a.column, &bars);
        write_with(&svg, |w| w.write_all(text.as_bytes()).map_err(|e| Error::io(&svg, e)))?;
    }
    Ok(a.out.clone())
}

fn execute(cli: &Cli) -> Result<()> {
    let jobs = cli.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if jobs == 0 {
        return Err(Error::Usage("--jobs must be at least 1".into()));
    }
    let mut run = Run {
        seed: cli.seed,
        inputs: BTreeMap::new(),
        substreams: BTreeMap::new(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Argument(format!("thread pool: {e}")))?;
    let out = pool.install(|| match &cli.command {
        Command::GenTrials(a) => gen_trials(a, &mut run, jobs),
        Command::Affinity(a) => affinity_cmd(a, &mut run),
        Command::Roc(a) => roc_cmd(a, &mut run),
        Command::TrainReadout(a) => train_readout_cmd(a, &mut run),
        Command::PredictRt(a) => predict_rt_cmd(a, &mut run),
        Command::NoiseCeiling(a) => noise_ceiling_cmd(a, &mut run),
        Command::GramLoss(a) => gram_loss_cmd(a, &mut run),
        Command::AlignTrain(a) => align_train_cmd(a, &mut run),
        Command::AlignReport(a) => align_report_cmd(a, &mut run),
        Command::Report(a) => report_cmd(a, &mut run),
    })?;
    let manifest = RunManifest {
        command: cli.command.name().to_string(),
        config: serde_json::to_value(&cli.command).map_err(|e| Error::Format(e.to_string()))?,
        inputs: run.inputs,
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cli.seed,
        substreams: run.substreams,
    };
    write_json(&manifest_path(&out), &manifest)
}

/// Parses a `key = value` config file. Blank lines and `#` comments are
/// skipped; quotes around values are stripped.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or_default().trim();
        if line.is_empty() || line.starts_with('[') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("config line {}: expected key = value", n + 1)))?;
        let key = k.trim().replace('_', "-");
        let value = v.trim().trim_matches('"').to_string();
        out.push((key, value));
    }
    Ok(out)
}

/// Inserts config entries as flags right after the subcommand name, except
/// for flags already present on the command line.
fn apply_config(args: Vec<String>) -> Result<Vec<String>> {
    let path = args.iter().enumerate().find_map(|(i, a)| {
        if a == "--config" {
            args.get(i + 1).cloned()
        } else {
            a.strip_prefix("--config=").map(str::to_string)
        }
    });
    let Some(path) = path else { return Ok(args) };
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let given = |key: &str| {
        let flag = format!("--{key}");
        args.iter().any(|a| *a == flag || a.starts_with(&format!("{flag}=")))
    };
    let mut extra = Vec::new();
    for (key, value) in parse_config(&text)? {
        if given(&key) || key == "config" {
            continue;
        }
        match value.as_str() {
            "true" => extra.push(format!("--{key}")),
            "false" => {}
            _ => {
                extra.push(format!("--{key}"));
                extra.push(value);
            }
        }
    }
    let at = args
        .iter()
        .position(|a| SUBCOMMANDS.contains(&a.as_str()))
        .map_or(args.len(), |i| i + 1);
    let mut out = args[..at].to_vec();
    out.extend(extra);
    out.extend_from_slice(&args[at..]);
    Ok(out)
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage(_) => 1,
        _ => 2,
    }
}

/// Runs the CLI on `args` (including the program name) and returns the
/// exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("PB_LOG", "warn")).try_init();
    let args: Vec<String> = args
        .into_iter()
        .map(|a| a.into().to_string_lossy().into_owned())
        .collect();
    let args = match apply_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
