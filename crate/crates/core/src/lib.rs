//! Noise2Noise restoration of cryo-TEM data.
//!
//! The crate covers the whole desk-scale workflow: a specimen simulator that
//! stands in for the microscope, the five ways of forming noise-independent
//! training pairs from tilt series and dose-fractionated movies, weighted
//! backprojection, a from-scratch U-Net trained with per-pixel MSE, classical
//! baselines, Fourier shell correlation and a blob detection pipeline.
//!
//! Everything here is pure computation over in-memory buffers. The crate is
//! `no_std` (with `alloc`) unless the `std` feature is enabled; file formats,
//! configuration and the command line live in the `cryocare` companion crate.
//!
//! Conventions shared by all modules:
//!
//! * fields are row-major with the last axis fastest: `(ny, nx)` for images,
//!   `(nz, ny, nx)` for volumes;
//! * the tilt axis is the image Y axis and the beam travels along Z;
//! * every stochastic operation takes an explicit [`Rng`], so a seed fully
//!   determines the result regardless of thread count.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod baselines;
pub mod downstream;
mod error;
pub mod fft;
pub mod grid;
pub mod metrics;
pub mod nn;
pub mod pairing;
mod par;
pub mod phantom;
pub mod recon;

pub use error::{Error, Result};
pub use grid::{NormStats, Rng, ScalarField};

#[inline]
pub(crate) fn sq(x: f64) -> f64 {
    x * x
}
