//! Onset detection with temporal convolutional networks: log-filterbank
//! features, two TCN variants, layer-freeze fine-tuning, peak picking and
//! tolerance-window F1 scoring, plus a synthetic percussion corpus.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod annotations;
pub mod audio;
pub mod error;
pub mod eval;
pub mod exec;
pub mod features;
pub mod harness;
pub mod model;
pub mod nn;
pub mod optim;
pub mod seeds;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
