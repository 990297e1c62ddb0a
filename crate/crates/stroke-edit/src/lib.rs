//! Stroke-level scene text editing.
//!
//! This crate implements an erase-and-write text editing pipeline for word
//! images: a background reconstruction branch erases the source text behind
//! a predicted stroke mask, a modification branch renders the target text in
//! the source style, and stroke-level blending composites the two so pixels
//! outside text strokes are inherited from the input untouched. Training
//! mixes fully labeled synthetic pairs with unpaired real images
//! (transcript-only supervision), plus the countermeasures that keep the
//! hybrid scheme from collapsing into an identity mapping.
//!
//! The crate ships five building blocks:
//!
//! - [`datagen`]: renders paired synthetic corpora (and unpaired stand-ins)
//!   plus the on-disk dataset format,
//! - [`geometry`]: thin-plate-spline warping, background filtering and style
//!   augmentation,
//! - [`networks`] + [`losses`]: the editing model and its composite
//!   objective,
//! - [`training`]: the hybrid training loop, checkpointing and ablation
//!   switches,
//! - [`metrics`]: MSE / PSNR / SSIM / FID / sequence-accuracy evaluation.
//!
//! The `stroke-edit` binary exposes all of it as `gen`, `pretrain-rec`,
//! `train`, `eval` and `edit` subcommands. The guide under `book/` walks
//! through the concepts chapter by chapter; its code snippets compile as
//! doc-tests via the [`guide`] module.

pub mod autograd;
pub mod cli;
pub mod datagen;
pub mod error;
pub mod geometry;
pub mod guide;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod nn;
pub mod training;
pub mod util;
pub mod vocab;

pub use error::{Error, Result};

/// Scalar type used by the training pipeline. Gradient-check suites
/// instantiate the same generic kernels with `f64` instead.
pub type Elem = f32;
