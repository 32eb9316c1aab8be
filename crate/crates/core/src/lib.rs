//! Variance-reduced pixel sampling for dense aggregation losses.
//!
//! The crate covers three layers:
//!
//! * [`lattice`], [`sampling`] and [`estimate`]: class-labelled pixel
//!   lattices, grid/class stratifications, naive (NS), stratified (SG) and
//!   stratified-antithetic (SAG) samplers, and exact plus Monte-Carlo
//!   variance analysis of the resulting estimators.
//! * [`contrastive`]: the pixel contrastive loss and the rest of the
//!   semi-supervised loss stack, with hand-written gradients.
//! * [`trainer`] and [`harness`]: a small per-pixel model trained by SGD on
//!   sampled anchors, a controlled-noise convergence testbed, a synthetic
//!   long-tailed data generator and the experiment drivers used by the
//!   `pixstrat` binary.

pub mod contrastive;
pub mod error;
pub mod estimate;
pub mod harness;
pub mod lattice;
pub mod numeric;
pub mod rng;
pub mod sampling;
pub mod trainer;

pub use error::{Error, Result};
