//! Lineup-based diagnostics for two-level linear mixed-effects models.
//!
//! The crate covers the numeric side of the workflow: building grouped
//! designs from tabular data, fitting the model by ML or REML, simulating
//! null data by parametric bootstrap, conventional diagnostic statistics,
//! lineup construction and SVG rendering, and visual p-values.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod diag;
pub mod error;
pub mod lineup;
mod linalg;
pub mod lme;
pub mod optim;
pub mod pboot;
pub mod rng;
pub mod special;
pub mod synth;
pub mod vpvalue;

pub use error::{Error, Result};
