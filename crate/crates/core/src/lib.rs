//! Probabilistic anatomical population priors for volumetric lesion
//! detection.
//!
//! The crate builds per-case prevalence maps from zonal and lesion masks,
//! averages them into a population prior, aligns the prior to each case and
//! fuses it as an extra input channel. A small 3D encoder-decoder trained with
//! focal loss consumes the fused volumes, and the evaluation layer reports
//! patient-level AUROC and lesion-level FROC with bootstrap intervals. A
//! seeded phantom cohort generator makes every stage runnable offline.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod align;
pub mod cli;
pub mod error;
pub mod lesions;
pub mod metrics;
pub mod micronet;
pub mod phantom;
pub mod pipeline;
pub mod prior;
pub mod volume;

pub use error::{Error, Result};
