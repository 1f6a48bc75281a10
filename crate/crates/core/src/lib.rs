//! Dual-encoder hallucination detection with projected fusion and
//! differential feature learning.
//!
//! The crate is organized around a small f64 tape autodiff engine
//! ([`tensor`]), a from-scratch transformer encoder that exposes every
//! layer's CLS representation ([`encoder`]), the projected-fusion block
//! ([`pf`]), the differential feature-learning mask ([`dfl`]), and the
//! combined dual-encoder classifier ([`model`]). Training, evaluation and
//! the analysis instrumentation (layer weights, feature-consistency
//! funnels, parameter/FLOP accounting) live in [`train`], [`metrics`] and
//! [`analysis`]. Synthetic matched-pair data comes from [`data`].
//!
//! Everything here is `no_std + alloc`; float transcendentals go through
//! `libm` so results are bit-identical across platforms. File formats and
//! the command-line front end live in the companion `pfdfl` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod checkpoint;
pub mod data;
pub mod dfl;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod pf;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
