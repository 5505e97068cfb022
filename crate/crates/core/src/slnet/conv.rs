//! Same-padded, stride-1 2D convolution with hand-written gradients.
//!
//! Tensors are channel-major `[channel][row][col]` slices of `f64`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    out_channels: usize,
    in_channels: usize,
    kernel_h: usize,
    kernel_w: usize,
    /// `[out][in][ky][kx]`
    pub(crate) weights: Vec<f64>,
    pub(crate) bias: Vec<f64>,
}

impl ConvLayer {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if out_channels == 0 || in_channels == 0 {
            return Err(Error::param("convolution needs at least one input and output channel"));
        }
        if kernel_h.is_multiple_of(2) || kernel_w.is_multiple_of(2) {
            return Err(Error::param(format!(
                "kernel {}x{} must have odd dimensions",
                kernel_h, kernel_w
            )));
        }
        if weights.len() != out_channels * in_channels * kernel_h * kernel_w {
            return Err(Error::Shape(format!(
                "expected {} weights, got {}",
                out_channels * in_channels * kernel_h * kernel_w,
                weights.len()
            )));
        }
        if bias.len() != out_channels {
            return Err(Error::Shape(format!(
                "expected {} biases, got {}",
                out_channels,
                bias.len()
            )));
        }
        if !weights.iter().chain(&bias).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("convolution parameters"));
        }
        Ok(ConvLayer {
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            weights,
            bias,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.kernel_h, self.kernel_w)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    #[inline]
    fn w_index(&self, o: usize, i: usize, ky: usize, kx: usize) -> usize {
        ((o * self.in_channels + i) * self.kernel_h + ky) * self.kernel_w + kx
    }

    /// `out = conv(input) + bias`; `out` is overwritten.
    pub fn forward(&self, input: &[f64], height: usize, width: usize, out: &mut [f64]) {
        let px = height * width;
        debug_assert_eq!(input.len(), self.in_channels * px);
        debug_assert_eq!(out.len(), self.out_channels * px);
        for o in 0..self.out_channels {
            let out_o = &mut out[o * px..(o + 1) * px];
            out_o.fill(self.bias[o]);
            for i in 0..self.in_channels {
                let in_i = &input[i * px..(i + 1) * px];
                for ky in 0..self.kernel_h {
                    for kx in 0..self.kernel_w {
                        let w = self.weights[self.w_index(o, i, ky, kx)];
                        if w == 0.0 {
                            continue;
                        }
                        let span = Span::new(ky, kx, self.kernel_h, self.kernel_w, height, width);
                        for y in span.y0..span.y1 {
                            let sy = (y as isize + span.dy) as usize;
                            let dst = &mut out_o[y * width + span.x0..y * width + span.x1];
                            let src = &in_i[sy * width + span.sx0..sy * width + span.sx0 + dst.len()];
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d += w * s;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Accumulates parameter gradients into `d_w`/`d_b` and, if requested, the
    /// input gradient into `d_in`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        input: &[f64],
        height: usize,
        width: usize,
        d_out: &[f64],
        d_w: &mut [f64],
        d_b: &mut [f64],
        mut d_in: Option<&mut [f64]>,
    ) {
        let px = height * width;
        for o in 0..self.out_channels {
            let g_o = &d_out[o * px..(o + 1) * px];
            d_b[o] += g_o.iter().sum::<f64>();
            for i in 0..self.in_channels {
                let in_i = &input[i * px..(i + 1) * px];
                for ky in 0..self.kernel_h {
                    for kx in 0..self.kernel_w {
                        let idx = self.w_index(o, i, ky, kx);
                        let w = self.weights[idx];
                        let span = Span::new(ky, kx, self.kernel_h, self.kernel_w, height, width);
                        let mut acc = 0.0;
                        for y in span.y0..span.y1 {
                            let sy = (y as isize + span.dy) as usize;
                            let g = &g_o[y * width + span.x0..y * width + span.x1];
                            let s0 = sy * width + span.sx0;
                            let src = &in_i[s0..s0 + g.len()];
                            acc += g.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                            if let Some(d_in) = d_in.as_deref_mut() {
                                let dst = &mut d_in[i * px + s0..i * px + s0 + g.len()];
                                for (d, &gv) in dst.iter_mut().zip(g) {
                                    *d += w * gv;
                                }
                            }
                        }
                        d_w[idx] += acc;
                    }
                }
            }
        }
    }
}

/// Output rows/cols for which a kernel tap lands inside the input, and the
/// offset to the source pixel.
struct Span {
    y0: usize,
    y1: usize,
    x0: usize,
    x1: usize,
    dy: isize,
    sx0: usize,
}

impl Span {
    #[inline]
    fn new(ky: usize, kx: usize, kh: usize, kw: usize, height: usize, width: usize) -> Span {
        let dy = ky as isize - (kh / 2) as isize;
        let dx = kx as isize - (kw / 2) as isize;
        let y0 = (-dy).max(0) as usize;
        let y1 = (height as isize - dy.max(0)).max(y0 as isize) as usize;
        let x0 = (-dx).max(0) as usize;
        let x1 = (width as isize - dx.max(0)).max(x0 as isize) as usize;
        Span {
            y0: y0.min(height),
            y1: y1.min(height),
            x0: x0.min(width),
            x1: x1.min(width),
            dy,
            sx0: (x0 as isize + dx).max(0) as usize,
        }
    }
}

/// He/Kaiming normal initialization: weights ~ N(0, 2 / fan_in), zero biases.
pub fn kaiming_init(
    out_channels: usize,
    in_channels: usize,
    kernel_h: usize,
    kernel_w: usize,
    seed: u64,
) -> Result<ConvLayer> {
    let fan_in = in_channels * kernel_h * kernel_w;
    if fan_in == 0 {
        return Err(Error::param("Kaiming initialization needs fan_in > 0"));
    }
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).map_err(|e| Error::param(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = (0..out_channels * fan_in).map(|_| normal.sample(&mut rng)).collect();
    ConvLayer::new(
        out_channels,
        in_channels,
        kernel_h,
        kernel_w,
        weights,
        vec![0.0; out_channels],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct per-pixel convolution, zero padding.
    fn naive_forward(layer: &ConvLayer, input: &[f64], h: usize, w: usize) -> Vec<f64> {
        let (kh, kw) = layer.kernel();
        let mut out = vec![0.0; layer.out_channels() * h * w];
        for o in 0..layer.out_channels() {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = layer.bias()[o];
                    for i in 0..layer.in_channels() {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let sy = y as isize + ky as isize - (kh / 2) as isize;
                                let sx = x as isize + kx as isize - (kw / 2) as isize;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                acc += layer.weights()[layer.w_index(o, i, ky, kx)]
                                    * input[i * h * w + sy as usize * w + sx as usize];
                            }
                        }
                    }
                    out[o * h * w + y * w + x] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn matches_naive_convolution() {
        for (kh, kw, h, w) in [(3, 3, 5, 7), (5, 3, 4, 4), (1, 1, 3, 2), (5, 5, 2, 3)] {
            let layer = ConvLayer::new(
                2,
                3,
                kh,
                kw,
                (0..2 * 3 * kh * kw)
                    .map(|i| ((i * 7 % 11) as f64 - 5.0) * 0.1)
                    .collect(),
                vec![0.5, -0.25],
            )
            .unwrap();
            let input: Vec<f64> = (0..3 * h * w).map(|i| ((i * 13 % 17) as f64) * 0.2).collect();
            let mut out = vec![0.0; 2 * h * w];
            layer.forward(&input, h, w, &mut out);
            let expect = naive_forward(&layer, &input, h, w);
            for (a, b) in out.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12, "{} vs {}", a, b);
            }
        }
    }

    #[test]
    fn kaiming_statistics() {
        // 10^5 draws from a 3-channel 3x3 fan-in.
        let layer = kaiming_init(3704, 3, 3, 3, 99).unwrap();
        let w = layer.weights();
        assert!(w.len() >= 100_000);
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let target = 2.0 / 27.0;
        assert!((var - target).abs() / target < 0.05, "variance {}", var);
        let se = (target / n).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {}", mean);
        assert!(layer.bias().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn kaiming_is_deterministic() {
        assert_eq!(
            kaiming_init(8, 3, 3, 3, 5).unwrap(),
            kaiming_init(8, 3, 3, 3, 5).unwrap()
        );
        assert_ne!(
            kaiming_init(8, 3, 3, 3, 5).unwrap(),
            kaiming_init(8, 3, 3, 3, 6).unwrap()
        );
        assert!(kaiming_init(8, 0, 3, 3, 5).is_err());
    }

    #[test]
    fn rejects_even_kernels() {
        assert!(ConvLayer::new(1, 1, 2, 3, vec![0.0; 6], vec![0.0]).is_err());
    }
}
