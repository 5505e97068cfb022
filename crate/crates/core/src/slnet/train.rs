use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::stack::{normalize, FlatMatrix, ImageStack, Normalization};

use super::loss::{loss_and_gradient, GradientPolicy, LossTerms};
use super::model::{ForwardCache, Gradients, Provenance, SLNetModel};
use super::TRIPLET;

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    /// Singular value shrinkage threshold.
    pub mu: f64,
    /// Weight of the sparse term.
    pub alpha: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Frame offset between the members of a triplet.
    pub triplet_offset: usize,
    pub hidden_channels: usize,
    pub kernel_size: usize,
    pub seed: u64,
    pub normalization: Normalization,
    pub gradient_policy: GradientPolicy,
    /// Apply the shrinkage to the network output at inference as well.
    pub shrink_at_inference: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            mu: 0.01,
            alpha: 12.0,
            epochs: 100,
            learning_rate: 1e-3,
            triplet_offset: 50,
            hidden_channels: 8,
            kernel_size: 3,
            seed: 0,
            normalization: Normalization::MaxScale,
            gradient_policy: GradientPolicy::StraightThrough,
            shrink_at_inference: false,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::param(format!("mu must be a finite value >= 0, got {}", self.mu)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::param(format!(
                "alpha must be a finite value >= 0, got {}",
                self.alpha
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param("learning rate must be > 0"));
        }
        if self.triplet_offset == 0 {
            return Err(Error::param("triplet offset must be >= 1"));
        }
        if self.hidden_channels == 0 {
            return Err(Error::param("hidden channels must be >= 1"));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::param("kernel size must be odd"));
        }
        Ok(())
    }

    /// Frames needed for a single triplet.
    pub fn min_frames(&self) -> usize {
        2 * self.triplet_offset + 1
    }

    /// Canonical `key=value` description; the basis of [`Hyperparams::hash`].
    pub fn canonical(&self) -> String {
        format!(
            "mu={:e};alpha={:e};epochs={};lr={:e};delta={};hidden={};kernel={};seed={};norm={};grad={};shrink_inference={}",
            self.mu,
            self.alpha,
            self.epochs,
            self.learning_rate,
            self.triplet_offset,
            self.hidden_channels,
            self.kernel_size,
            self.seed,
            self.normalization.name(),
            self.gradient_policy.name(),
            self.shrink_at_inference
        )
    }

    /// 64-bit FNV-1a of [`Hyperparams::canonical`].
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.canonical().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }
}

/// Frame indices of triplet `t`: `(t, t + d, t + 2d)`.
pub fn triplet(t: usize, offset: usize) -> [usize; TRIPLET] {
    [t, t + offset, t + 2 * offset]
}

/// Number of valid triplet starts in a stack of `frames`.
pub fn triplet_count(frames: usize, offset: usize) -> usize {
    frames.saturating_sub(2 * offset)
}

/// Loss and parameter gradients for one window.
pub fn backward(model: &SLNetModel, window: &FlatMatrix, hp: &Hyperparams) -> Result<(LossTerms, Gradients)> {
    let mut cache = ForwardCache::default();
    model.forward_cached(window, &mut cache)?;
    let l_hat = window.like(cache.output.clone());
    let (terms, upstream) = loss_and_gradient(window, &l_hat, hp.mu, hp.alpha, hp.gradient_policy)?;
    let mut grads = Gradients::zeros_like(model);
    model.backward_from_output(window, &cache, &upstream, &mut grads)?;
    Ok((terms, grads))
}

#[derive(Debug, Clone)]
struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(model: &SLNetModel, lr: f64) -> Self {
        let g = Gradients::zeros_like(model);
        let shapes = [g.w1, g.b1, g.w2, g.b2];
        Adam {
            m: shapes.clone().to_vec(),
            v: shapes.to_vec(),
            step: 0,
            lr,
        }
    }

    fn update(&mut self, model: &mut SLNetModel, grads: &Gradients) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        let blocks = [&grads.w1, &grads.b1, &grads.w2, &grads.b2];
        for (b, params) in model.params_mut().into_iter().enumerate() {
            let g = blocks[b];
            let m = &mut self.m[b];
            let v = &mut self.v[b];
            for i in 0..params.len() {
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g[i];
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                params[i] -= self.lr * mh / (vh.sqrt() + Self::EPS);
            }
        }
    }
}

/// Mean loss terms over one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub terms: LossTerms,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub duration: Duration,
}

impl TrainReport {
    pub fn epochs_completed(&self) -> usize {
        self.epochs.len()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.terms.total)
    }
}

/// Epoch-at-a-time trainer; [`train`] drives it to completion.
///
/// Training is sequential over triplets within an epoch so the parameter
/// trajectory depends only on the stack, the hyperparameters and the seed.
pub struct Trainer {
    hp: Hyperparams,
    model: SLNetModel,
    adam: Adam,
    frames: Vec<Vec<f64>>,
    height: usize,
    width: usize,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    report: TrainReport,
    cache: ForwardCache,
    grads: Gradients,
    window: FlatMatrix,
}

impl Trainer {
    pub fn new(stack: &ImageStack, hp: &Hyperparams) -> Result<Self> {
        hp.validate()?;
        if stack.len() < hp.min_frames() {
            return Err(Error::StackTooShort {
                frames: stack.len(),
                needed: hp.min_frames(),
                offset: hp.triplet_offset,
            });
        }
        let (normed, rec) = normalize(stack, hp.normalization)?;
        let mut model = SLNetModel::new(TRIPLET, hp.hidden_channels, hp.kernel_size, hp.seed)?;
        model.provenance = Provenance {
            hyperparams_hash: hp.hash(),
            epochs: 0,
            input_scale: rec.scale,
        };
        let frames = normed.frames().map(|f| f.iter().map(|&v| v as f64).collect()).collect();
        let px = stack.pixels_per_frame();
        let window = FlatMatrix::zeros(TRIPLET, px).with_shape(TRIPLET, stack.height(), stack.width())?;
        Ok(Trainer {
            adam: Adam::new(&model, hp.learning_rate),
            grads: Gradients::zeros_like(&model),
            hp: hp.clone(),
            model,
            frames,
            height: stack.height(),
            width: stack.width(),
            rng: ChaCha8Rng::seed_from_u64(hp.seed ^ 0x7a11_0f5e_0000_0001),
            order: (0..triplet_count(stack.len(), hp.triplet_offset)).collect(),
            report: TrainReport::default(),
            cache: ForwardCache::default(),
            window,
        })
    }

    pub fn model(&self) -> &SLNetModel {
        &self.model
    }

    pub fn report(&self) -> &TrainReport {
        &self.report
    }

    pub fn epochs_done(&self) -> usize {
        self.report.epochs.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Runs one pass over all triplets in a freshly shuffled order.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let epoch = self.report.epochs.len();
        self.order.shuffle(&mut self.rng);
        let mut sum = LossTerms::default();
        for idx in 0..self.order.len() {
            let t = self.order[idx];
            let terms = self.step(t).map_err(|e| match e {
                Error::NonFinite(what) => Error::Diverged {
                    epoch,
                    triplet: t,
                    detail: format!("non-finite {}", what),
                },
                other => other,
            })?;
            if !terms.total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    triplet: t,
                    detail: format!("loss = {}", terms.total),
                });
            }
            sum.total += terms.total;
            sum.data += terms.data;
            sum.sparse += terms.sparse;
            sum.residual += terms.residual;
        }
        let n = self.order.len() as f64;
        let rec = EpochRecord {
            epoch,
            terms: LossTerms {
                total: sum.total / n,
                data: sum.data / n,
                sparse: sum.sparse / n,
                residual: sum.residual / n,
            },
        };
        self.report.epochs.push(rec);
        self.model.provenance.epochs = self.report.epochs.len() as u32;
        Ok(rec)
    }

    fn step(&mut self, t: usize) -> Result<LossTerms> {
        let px = self.height * self.width;
        for (slot, f) in triplet(t, self.hp.triplet_offset).into_iter().enumerate() {
            self.window.data_mut()[slot * px..(slot + 1) * px].copy_from_slice(&self.frames[f]);
        }
        self.model.forward_cached(&self.window, &mut self.cache)?;
        let l_hat = self.window.like(self.cache.output.clone());
        let (terms, upstream) =
            loss_and_gradient(&self.window, &l_hat, self.hp.mu, self.hp.alpha, self.hp.gradient_policy)?;
        self.grads.clear();
        self.model
            .backward_from_output(&self.window, &self.cache, &upstream, &mut self.grads)?;
        self.adam.update(&mut self.model, &self.grads);
        Ok(terms)
    }

    pub fn finish(mut self, duration: Duration) -> (SLNetModel, TrainReport) {
        self.report.duration = duration;
        (self.model, self.report)
    }
}

/// Trains a model on every triplet of `stack` for `hp.epochs` epochs.
pub fn train(stack: &ImageStack, hp: &Hyperparams) -> Result<(SLNetModel, TrainReport)> {
    train_with(stack, hp, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    stack: &ImageStack,
    hp: &Hyperparams,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(SLNetModel, TrainReport)> {
    let clock = Clock::start();
    let mut trainer = Trainer::new(stack, hp)?;
    for _ in 0..hp.epochs {
        let rec = trainer.run_epoch()?;
        on_epoch(&rec);
    }
    Ok(trainer.finish(clock.elapsed()))
}

/// Wall clock that reads zero on targets without one (wasm32-unknown-unknown).
struct Clock(#[cfg(not(target_arch = "wasm32"))] std::time::Instant);

impl Clock {
    fn start() -> Self {
        #[cfg(not(target_arch = "wasm32"))]
        {
            Clock(std::time::Instant::now())
        }
        #[cfg(target_arch = "wasm32")]
        {
            Clock()
        }
    }

    fn elapsed(&self) -> Duration {
        #[cfg(not(target_arch = "wasm32"))]
        {
            self.0.elapsed()
        }
        #[cfg(target_arch = "wasm32")]
        {
            Duration::ZERO
        }
    }
}
