//! Subject identification from 3D center-out transport trajectories.
//!
//! The pipeline runs in the same order as the modules below:
//!
//! - [`ingest`]: trial CSV + manifest parsing into a validated [`ingest::Catalog`].
//! - [`syngen`]: seeded synthetic multi-subject datasets with a controllable
//!   inter-subject separation, used where the recorded catalog is unavailable.
//! - [`dsp`]: Butterworth low-pass design and filtering, z-scoring, windowing.
//! - [`autodiff`]: a small reverse-mode engine with the ops a 1D ResNet needs.
//! - [`model`]: the 1D ResNet-18 classifier and its parameter store.
//! - [`harness`]: subset selection, stratified folds, training, metrics and reports.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod dsp;
pub mod error;
pub mod harness;
pub mod ingest;
pub mod model;
pub mod rng;
pub mod syngen;

pub use error::{Error, Result};
