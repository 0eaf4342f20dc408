//! Writes a planted dataset in the on-disk formats the `patchgroup` binary
//! reads: `masks/objects.jsonl` with PGM masks, `features/*.pbft`, a trial
//! manifest and simulated behavioral records.
//!
//! ```text
//! cargo run --example planted_dataset -- /tmp/planted
//! patchgroup roc --features /tmp/planted/features --trials /tmp/planted/trials.jsonl \
//!     --masks /tmp/planted/masks --out /tmp/planted/roc.csv
//! ```

use std::path::PathBuf;

use patchgroup::synth::{planted_set, simulate_subjects, write_dataset, SceneConfig, SubjectConfig};
use patchgroup::tensorio::{write_behavioral_records, write_trial_manifest};
use patchgroup::Error;

fn main() -> patchgroup::Result<()> {
    let dir: PathBuf = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("planted"));
    let cfg = SceneConfig::default();
    let set = planted_set(64, &cfg, "img", 1)?;
    let maps = set.feature_maps(0.4, 2)?;
    write_dataset(&set, &maps, &dir)?;
    let trials = set.trials();
    let path = dir.join("trials.jsonl");
    write_trial_manifest(std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?, &trials)?;
    let records = simulate_subjects(&trials, &maps, cfg.patch_size as u32, &SubjectConfig::default(), 3)?;
    let path = dir.join("records.jsonl");
    write_behavioral_records(std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?, &records)?;
    println!("{} images, {} trials, {} responses in {}", set.scenes.len(), trials.len(), records.len(), dir.display());
    Ok(())
}
