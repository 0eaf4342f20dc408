//! Feature containers, masks, and line-delimited manifests.
//!
//! These formats are the contract with the feature extractor: it writes
//! `.pbft` feature maps, `.pgm` object masks and an object index, and the
//! rest of the crate reads them back through this module.

mod feature;
mod manifest;
mod mask;

pub use feature::{read_feature_map, write_feature_map, FeatureMap, FORMAT_VERSION, MAGIC};
pub use manifest::{
    read_behavioral_records, read_object_index, read_trial_manifest, write_behavioral_records,
    write_object_index, write_trial_manifest, BehavioralRecord, Condition, Label,
    ObjectIndexEntry, TrialSpec,
};
pub use mask::{rasterize_mask_to_patches, read_pgm, write_pgm, PatchMask, PixelMask};

use std::path::Path;

use crate::{Error, Result};

pub fn load_feature_map(path: impl AsRef<Path>) -> Result<FeatureMap> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_feature_map(std::io::BufReader::new(file))
}

pub fn save_feature_map(map: &FeatureMap, path: impl AsRef<Path>) -> Result<u64> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut sink = std::io::BufWriter::new(file);
    let n = write_feature_map(map, &mut sink)?;
    std::io::Write::flush(&mut sink).map_err(|e| Error::Stream { offset: n, source: e })?;
    Ok(n)
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<PixelMask> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_pgm(std::io::BufReader::new(file))
}

pub(crate) fn open_text(path: impl AsRef<Path>) -> Result<std::io::BufReader<std::fs::File>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(std::io::BufReader::new(file))
}
