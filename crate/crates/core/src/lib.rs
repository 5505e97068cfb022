//! Background removal for single-molecule localization microscopy (STORM/SMLM)
//! image stacks by sparse + low-rank decomposition.
//!
//! Two decomposition backends are provided:
//!
//! - [`slnet`]: a two-convolution network trained unsupervised to emit the
//!   low-rank background of a frame triplet; the sparse frames are the
//!   clamped residual.
//! - [`rpca`]: the convex robust-PCA problem solved with the inexact augmented
//!   Lagrange multiplier method.
//!
//! Around them sit the comparison baselines ([`baselines`]), a synthetic
//! ground-truth generator ([`synth`]), a minimal localizer and renderer
//! ([`localize`]), evaluation metrics ([`metrics`]) and file formats ([`io`]).

// `!(x > 0.0)` is used on purpose: it rejects NaN along with the bad range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod error;
pub mod io;
pub mod linalg;
pub mod localize;
pub mod metrics;
pub mod par;
pub mod rpca;
pub mod slnet;
pub mod stack;
pub mod synth;

pub use error::{Error, Result};
pub use stack::{FlatMatrix, Grid, ImageStack, Normalization, NormalizationRecord, StackMeta};
