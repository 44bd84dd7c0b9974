//! Pixel-aligned RGB+XYZ ("6D") video generation toolkit.
//!
//! The crate is split by pipeline stage:
//!
//! - [`numerics`]: dense tensors, the `TNSR` file format, a tape-based
//!   reverse-mode differentiation engine, a finite-difference gradient
//!   checker and a Gauss-Newton / Levenberg-Marquardt solver.
//! - [`sixd`]: the paired RGB/XYZ video model, sloped-plane XYZ
//!   initialization, scene-extent normalization, an invertible latent codec,
//!   latent normalization statistics, guided masks and point-cloud export.
//! - [`fusion`]: the five RGB/XYZ latent fusion layouts and the token
//!   interaction-distance analysis.
//! - [`genmodel`]: patchify, rotary + domain token encoding, a small
//!   transformer velocity model with optional cross-domain attention and
//!   LoRA adapters, flow-matching training and Euler sampling.
//! - [`postopt`]: camera and depth recovery from generated XYZ maps.
//! - [`curation`]: clip-level quality metrics and the multi-stage filter.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod curation;
pub mod error;
pub mod fusion;
pub mod genmodel;
pub mod numerics;
mod parallel;
pub mod postopt;
pub mod sixd;

pub use error::{Error, Result};
