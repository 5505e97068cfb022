//! The learned sparse/low-rank decomposition.
//!
//! A two-convolution network maps a window of three frames `(t, t+d, t+2d)` to
//! an estimate of their low-rank background. It is trained without labels by
//! pushing the singular-value-shrunk output towards the frames from below: the
//! positive part of the residual (the sparse signal) is penalized with weight
//! `alpha`, the negative part (background overshoot) is penalized in full.

pub mod conv;
pub mod decompose;
pub mod loss;
pub mod model;
pub mod train;

/// Frames per window.
pub const TRIPLET: usize = 3;

pub use conv::{kaiming_init, ConvLayer};
pub use decompose::{decompose, decompose_rpca, plan_windows, DecompositionResult, WindowPlan};
pub use loss::{loss, loss_and_gradient, residual_gradient, GradientPolicy, LossTerms};
pub use model::{ForwardCache, Gradients, Provenance, SLNetModel};
pub use train::{backward, train, train_with, triplet, triplet_count, EpochRecord, Hyperparams, TrainReport, Trainer};
