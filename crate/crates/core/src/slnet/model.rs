use crate::error::{Error, Result};
use crate::stack::FlatMatrix;

use super::conv::{kaiming_init, ConvLayer};

/// Where a set of weights came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Provenance {
    /// Hash of the training hyperparameters (0 for an untrained model).
    pub hyperparams_hash: u64,
    pub epochs: u32,
    /// Intensity scale the training data was divided by; inference applies the same.
    pub input_scale: f64,
}

impl Default for Provenance {
    fn default() -> Self {
        Provenance {
            hyperparams_hash: 0,
            epochs: 0,
            input_scale: 1.0,
        }
    }
}

/// Two same-padded convolutions with a ReLU between them: k -> c -> k channels.
#[derive(Debug, Clone, PartialEq)]
pub struct SLNetModel {
    pub(crate) layer1: ConvLayer,
    pub(crate) layer2: ConvLayer,
    pub provenance: Provenance,
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    pub(crate) hidden_pre: Vec<f64>,
    pub(crate) hidden: Vec<f64>,
    pub(crate) output: Vec<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

/// Gradients laid out like the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(model: &SLNetModel) -> Self {
        Gradients {
            w1: vec![0.0; model.layer1.weights.len()],
            b1: vec![0.0; model.layer1.bias.len()],
            w2: vec![0.0; model.layer2.weights.len()],
            b2: vec![0.0; model.layer2.bias.len()],
        }
    }

    pub fn clear(&mut self) {
        for v in [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2] {
            v.fill(0.0);
        }
    }

    /// All gradients in parameter order (w1, b1, w2, b2).
    pub fn flat(&self) -> Vec<f64> {
        [&self.w1, &self.b1, &self.w2, &self.b2]
            .into_iter()
            .flat_map(|v| v.iter().copied())
            .collect()
    }
}

impl SLNetModel {
    /// Kaiming-initialized model for `k`-frame windows with `hidden` channels.
    pub fn new(k: usize, hidden: usize, kernel: usize, seed: u64) -> Result<Self> {
        let layer1 = kaiming_init(hidden, k, kernel, kernel, seed)?;
        let layer2 = kaiming_init(k, hidden, kernel, kernel, seed ^ 0x5eed_1a7e_2000_0002)?;
        SLNetModel::from_layers(layer1, layer2, Provenance::default())
    }

    pub fn from_layers(layer1: ConvLayer, layer2: ConvLayer, provenance: Provenance) -> Result<Self> {
        if layer1.in_channels() != layer2.out_channels() || layer1.out_channels() != layer2.in_channels() {
            return Err(Error::Shape(format!(
                "layers do not chain: {}->{} then {}->{}",
                layer1.in_channels(),
                layer1.out_channels(),
                layer2.in_channels(),
                layer2.out_channels()
            )));
        }
        if !(provenance.input_scale > 0.0 && provenance.input_scale.is_finite()) {
            return Err(Error::param("model input scale must be positive"));
        }
        Ok(SLNetModel {
            layer1,
            layer2,
            provenance,
        })
    }

    /// Frames per window (k).
    pub fn frames(&self) -> usize {
        self.layer1.in_channels()
    }

    pub fn hidden_channels(&self) -> usize {
        self.layer1.out_channels()
    }

    pub fn kernel(&self) -> (usize, usize) {
        self.layer1.kernel()
    }

    pub fn layer1(&self) -> &ConvLayer {
        &self.layer1
    }

    pub fn layer2(&self) -> &ConvLayer {
        &self.layer2
    }

    pub fn parameter_count(&self) -> usize {
        self.layer1.weights.len() + self.layer1.bias.len() + self.layer2.weights.len() + self.layer2.bias.len()
    }

    /// Mutable views of every parameter block, in gradient order.
    pub(crate) fn params_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [
            &mut self.layer1.weights,
            &mut self.layer1.bias,
            &mut self.layer2.weights,
            &mut self.layer2.bias,
        ]
    }

    /// Parameter `index` in the flat order of [`Gradients::flat`]
    /// (layer 1 weights, layer 1 bias, layer 2 weights, layer 2 bias).
    ///
    /// # Panics
    /// If `index >= parameter_count()`.
    pub fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        for block in self.params_mut() {
            if index < block.len() {
                return &mut block[index];
            }
            index -= block.len();
        }
        panic!("parameter index out of range");
    }

    fn check_window(&self, window: &FlatMatrix) -> Result<(usize, usize)> {
        let (k, h, w) = window.shape();
        if k != self.frames() {
            return Err(Error::Shape(format!(
                "model expects {} frames per window, got {}",
                self.frames(),
                k
            )));
        }
        if !window.is_finite() {
            return Err(Error::NonFinite("network input"));
        }
        Ok((h, w))
    }

    /// Network output for a k x (m*n) window; same shape as the input.
    pub fn forward(&self, window: &FlatMatrix) -> Result<FlatMatrix> {
        let mut cache = ForwardCache::default();
        self.forward_cached(window, &mut cache)?;
        Ok(window.like(std::mem::take(&mut cache.output)))
    }

    pub fn forward_cached(&self, window: &FlatMatrix, cache: &mut ForwardCache) -> Result<()> {
        let (h, w) = self.check_window(window)?;
        let px = h * w;
        let c = self.hidden_channels();
        cache.hidden_pre.resize(c * px, 0.0);
        cache.hidden.resize(c * px, 0.0);
        cache.output.resize(self.frames() * px, 0.0);
        self.layer1.forward(window.data(), h, w, &mut cache.hidden_pre);
        for (a, &z) in cache.hidden.iter_mut().zip(&cache.hidden_pre) {
            *a = if z > 0.0 { z } else { 0.0 };
        }
        self.layer2.forward(&cache.hidden, h, w, &mut cache.output);
        Ok(())
    }

    /// Backpropagates `d_output` (gradient of the loss with respect to the
    /// network output) to every parameter. `grads` is accumulated into.
    pub fn backward_from_output(
        &self,
        window: &FlatMatrix,
        cache: &ForwardCache,
        d_output: &[f64],
        grads: &mut Gradients,
    ) -> Result<()> {
        let (h, w) = self.check_window(window)?;
        if d_output.len() != cache.output.len() {
            return Err(Error::Shape("output gradient length".into()));
        }
        let mut d_hidden = vec![0.0; cache.hidden.len()];
        self.layer2.backward(
            &cache.hidden,
            h,
            w,
            d_output,
            &mut grads.w2,
            &mut grads.b2,
            Some(&mut d_hidden),
        );
        // ReLU'(0) = 0.
        for (d, &z) in d_hidden.iter_mut().zip(&cache.hidden_pre) {
            if z <= 0.0 {
                *d = 0.0;
            }
        }
        self.layer1
            .backward(window.data(), h, w, &d_hidden, &mut grads.w1, &mut grads.b1, None);
        Ok(())
    }
}
