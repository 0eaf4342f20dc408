//! Object-centricity and human grouping alignment metrics for the patch
//! features of vision models.
//!
//! The crate works on serialized per-image patch features (`.pbft`) and
//! implements the full measurement pipeline:
//!
//! - [`trialgen`]: two-dot trial generation from object masks.
//! - [`affinity`]: seed-patch affinity maps and cosine Gram matrices.
//! - [`roc`]: threshold sweeps, trial-averaged ROC curves and AUC.
//! - [`readout`]: MLP readouts for grouping accuracy and RT prediction,
//!   Spearman scoring and split-half noise ceilings.
//! - [`gramalign`]: Gram-matrix distillation loss and adapter training.
//! - [`pipeline`]: the three headline metrics over a trial set.
//! - [`tensorio`]: the container and manifest formats tying it together.
//!
//! [`synth`] builds planted synthetic scenes for testing and the runnable
//! examples; [`report`] renders CSV and SVG outputs.

pub mod affinity;
pub mod cli;
pub mod error;
pub mod gramalign;
pub mod pipeline;
pub mod readout;
pub mod report;
pub mod roc;
pub mod seeds;
pub mod synth;
pub mod tensorio;
pub mod trialgen;

pub use error::{Error, Result};
