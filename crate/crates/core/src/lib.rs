//! Distant-supervision relation extraction with a piecewise-CNN encoder and
//! a structured logit-space noise converter.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`], [`params`], [`autodiff`], [`optim`], [`gradcheck`] and
//!   [`checkpoint`]: a small reverse-mode differentiation engine with Adam
//!   and finite-difference verification.
//! - [`data`]: corpora, bags, vocabularies and the synthetic generator.
//! - [`encoder`]: the piecewise CNN producing true-label logits.
//! - [`noise`]: the structured transition matrix and bag loss.
//! - [`selector`]: bag-level prediction rules.
//! - [`model`] and [`trainer`]: the two-phase training schedule.
//! - [`metrics`]: held-out precision/recall evaluation.
//! - [`selfcheck`]: randomized checks runnable from the command line.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod optim;
pub mod params;
pub mod selector;
pub mod selfcheck;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{Model, Phase, PreparedBag};
pub use tensor::Tensor;
