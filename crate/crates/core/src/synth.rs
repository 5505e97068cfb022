//! Synthetic STORM stacks with full ground truth.
//!
//! Emitters blink independently (Bernoulli per frame) and render as pixel-
//! integrated 2D Gaussians. The background is a sum of spatial patterns, each
//! built from wide Gaussian blobs plus a flat offset and scaled per frame by a
//! scalar modulation, so its temporal flattening has rank equal to the number
//! of patterns. Poisson shot noise and Gaussian read noise are applied last.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::par;
use crate::stack::{FlatMatrix, ImageStack, StackMeta};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blob {
    pub cx: f64,
    pub cy: f64,
    pub sigma: f64,
    pub peak: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Modulation {
    Constant,
    /// `1 + amplitude * sin(2π t / period + phase)`
    Sinusoid {
        amplitude: f64,
        period: f64,
        phase: f64,
    },
    /// Linear ramp from `start` at frame 0 to `end` at the last frame.
    Linear {
        start: f64,
        end: f64,
    },
}

impl Modulation {
    pub fn factor(&self, frame: usize, frames: usize) -> f64 {
        match *self {
            Modulation::Constant => 1.0,
            Modulation::Sinusoid {
                amplitude,
                period,
                phase,
            } => 1.0 + amplitude * (std::f64::consts::TAU * frame as f64 / period + phase).sin(),
            Modulation::Linear { start, end } => {
                let t = if frames > 1 {
                    frame as f64 / (frames - 1) as f64
                } else {
                    0.0
                };
                start + (end - start) * t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundPattern {
    pub blobs: Vec<Blob>,
    pub offset: f64,
    pub modulation: Modulation,
}

impl BackgroundPattern {
    /// Pattern value at the centre of pixel `(x, y)`.
    pub fn value(&self, x: usize, y: usize) -> f64 {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        self.offset
            + self
                .blobs
                .iter()
                .map(|b| {
                    let d2 = (px - b.cx).powi(2) + (py - b.cy).powi(2);
                    b.peak * (-d2 / (2.0 * b.sigma * b.sigma)).exp()
                })
                .sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub emitters: usize,
    /// PSF standard deviation in pixels.
    pub psf_sigma: f64,
    pub blink_on_prob: f64,
    /// Mean photons per active emitter per frame.
    pub photons: f64,
    pub background: Vec<BackgroundPattern>,
    pub read_noise_sigma: f64,
    /// Apply Poisson shot noise.
    pub shot_noise: bool,
    /// Emitters are placed at least this far (pixels) from the frame edge.
    pub margin: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            width: 64,
            height: 64,
            frames: 300,
            emitters: 40,
            psf_sigma: 1.3,
            blink_on_prob: 0.05,
            photons: 1500.0,
            background: vec![BackgroundPattern {
                blobs: vec![
                    Blob {
                        cx: 18.0,
                        cy: 20.0,
                        sigma: 12.0,
                        peak: 120.0,
                    },
                    Blob {
                        cx: 46.0,
                        cy: 40.0,
                        sigma: 16.0,
                        peak: 90.0,
                    },
                    Blob {
                        cx: 30.0,
                        cy: 54.0,
                        sigma: 8.0,
                        peak: 60.0,
                    },
                ],
                offset: 30.0,
                modulation: Modulation::Sinusoid {
                    amplitude: 0.25,
                    period: 150.0,
                    phase: 0.0,
                },
            }],
            read_noise_sigma: 1.5,
            shot_noise: true,
            margin: 2.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Background made of `rank` independent patterns with `blobs` random blobs
    /// each, placed from `seed`. Every pattern gets its own sinusoidal phase so
    /// the patterns stay linearly independent over time.
    #[allow(clippy::too_many_arguments)]
    pub fn random_background(
        width: usize,
        height: usize,
        rank: usize,
        blobs: usize,
        peak: f64,
        offset: f64,
        amplitude: f64,
        seed: u64,
    ) -> Vec<BackgroundPattern> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb10b_b10b_0000_0000);
        let scale = width.min(height) as f64;
        (0..rank)
            .map(|p| BackgroundPattern {
                blobs: (0..blobs)
                    .map(|_| Blob {
                        cx: rng.random_range(0.0..width as f64),
                        cy: rng.random_range(0.0..height as f64),
                        sigma: rng.random_range(0.12 * scale..0.3 * scale),
                        peak: peak * rng.random_range(0.5..1.0),
                    })
                    .collect(),
                offset: if p == 0 { offset } else { 0.0 },
                modulation: Modulation::Sinusoid {
                    amplitude,
                    period: 97.0 + 61.0 * p as f64,
                    phase: 1.3 * p as f64,
                },
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.frames == 0 {
            return Err(Error::param("synthetic stack dimensions must be positive"));
        }
        if !(self.psf_sigma > 0.0) {
            return Err(Error::param("PSF sigma must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.blink_on_prob) {
            return Err(Error::param("blink probability must lie in [0, 1]"));
        }
        if !(self.photons >= 0.0) || !(self.read_noise_sigma >= 0.0) {
            return Err(Error::param("photons and read noise must be >= 0"));
        }
        if self.emitters > 0 && (2.0 * self.margin >= self.width as f64 || 2.0 * self.margin >= self.height as f64) {
            return Err(Error::param("emitter margin leaves no room inside the frame"));
        }
        for p in &self.background {
            if p.blobs.iter().any(|b| !(b.sigma > 0.0) || b.peak < 0.0) || p.offset < 0.0 {
                return Err(Error::param("background blobs need sigma > 0 and non-negative peaks"));
            }
            for f in 0..self.frames {
                if p.modulation.factor(f, self.frames) < 0.0 {
                    return Err(Error::param("background modulation must stay >= 0"));
                }
            }
        }
        Ok(())
    }
}

/// Noiseless components and emitter states behind a synthetic stack.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// Sub-pixel `(x, y)` per emitter; pixel `(i, j)` spans `[i, i+1) x [j, j+1)`.
    pub positions: Vec<(f64, f64)>,
    /// `frames x emitters`, row-major.
    pub on: Vec<bool>,
    /// Expected background per pixel, frame-major.
    pub background: Vec<f64>,
    /// Expected emitter signal per pixel, frame-major.
    pub signal: Vec<f64>,
}

impl GroundTruth {
    pub fn emitters(&self) -> usize {
        self.positions.len()
    }

    pub fn is_on(&self, frame: usize, emitter: usize) -> bool {
        self.on[frame * self.emitters() + emitter]
    }

    /// Active emitters in `frame`.
    pub fn active(&self, frame: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.emitters()).filter(move |&e| self.is_on(frame, e))
    }

    fn px(&self) -> usize {
        self.width * self.height
    }

    pub fn background_frame(&self, frame: usize) -> &[f64] {
        &self.background[frame * self.px()..(frame + 1) * self.px()]
    }

    pub fn signal_frame(&self, frame: usize) -> &[f64] {
        &self.signal[frame * self.px()..(frame + 1) * self.px()]
    }

    /// Background of the given frames flattened to a matrix, one frame per row.
    pub fn background_matrix(&self, frames: &[usize]) -> Result<FlatMatrix> {
        let mut data = Vec::with_capacity(frames.len() * self.px());
        for &f in frames {
            data.extend_from_slice(self.background_frame(f));
        }
        FlatMatrix::new(frames.len(), self.px(), data)?.with_shape(frames.len(), self.height, self.width)
    }

    /// Time average of the noiseless signal plus background.
    pub fn widefield(&self) -> Vec<f64> {
        let px = self.px();
        let mut out = vec![0.0; px];
        for f in 0..self.frames {
            let bg = &self.background[f * px..(f + 1) * px];
            let sig = &self.signal[f * px..(f + 1) * px];
            for ((o, b), s) in out.iter_mut().zip(bg).zip(sig) {
                *o += b + s;
            }
        }
        for v in &mut out {
            *v /= self.frames as f64;
        }
        out
    }
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Adds `photons` times a unit-integral Gaussian PSF centred at `(x, y)`,
/// integrated over each pixel, into `out` (row-major `width x height`).
pub fn render_psf(x: f64, y: f64, sigma: f64, photons: f64, width: usize, height: usize, out: &mut [f64]) {
    let reach = (5.0 * sigma).ceil() as isize + 1;
    let (cx, cy) = (x.floor() as isize, y.floor() as isize);
    let x0 = (cx - reach).max(0);
    let x1 = (cx + reach + 1).min(width as isize);
    let y0 = (cy - reach).max(0);
    let y1 = (cy + reach + 1).min(height as isize);
    if x0 >= x1 || y0 >= y1 {
        return;
    }
    let wx: Vec<f64> = (x0..x1)
        .map(|i| normal_cdf((i as f64 + 1.0 - x) / sigma) - normal_cdf((i as f64 - x) / sigma))
        .collect();
    for j in y0..y1 {
        let wy = normal_cdf((j as f64 + 1.0 - y) / sigma) - normal_cdf((j as f64 - y) / sigma);
        let row = &mut out[j as usize * width..(j as usize + 1) * width];
        for (i, w) in (x0..x1).zip(&wx) {
            row[i as usize] += photons * w * wy;
        }
    }
}

/// Poisson sample: sequential inversion for small means, rounded normal
/// approximation above 50.
pub fn sample_poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    if mean > 50.0 {
        let z: f64 = StandardNormal.sample(rng);
        return (mean + mean.sqrt() * z).round().max(0.0);
    }
    let u: f64 = rng.random();
    let mut p = (-mean).exp();
    let mut cdf = p;
    let mut k = 0u32;
    while u > cdf && k < 1000 {
        k += 1;
        p *= mean / k as f64;
        cdf += p;
    }
    k as f64
}

fn frame_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

struct FrameOut {
    on: Vec<bool>,
    background: Vec<f64>,
    signal: Vec<f64>,
    noisy: Vec<f32>,
}

pub fn generate(cfg: &SynthConfig) -> Result<(ImageStack, GroundTruth)> {
    cfg.validate()?;
    let (w, h) = (cfg.width, cfg.height);
    let px = w * h;

    let mut pos_rng = frame_rng(cfg.seed, 0);
    let positions: Vec<(f64, f64)> = (0..cfg.emitters)
        .map(|_| {
            (
                pos_rng.random_range(cfg.margin..w as f64 - cfg.margin),
                pos_rng.random_range(cfg.margin..h as f64 - cfg.margin),
            )
        })
        .collect();

    let patterns: Vec<Vec<f64>> = cfg
        .background
        .iter()
        .map(|p| (0..px).map(|i| p.value(i % w, i / w)).collect())
        .collect();

    // Each frame draws from its own stream, so the result does not depend on
    // how frames are scheduled across threads.
    let frames = par::map_indexed(cfg.frames, |f| {
        let mut rng = frame_rng(cfg.seed, f as u64 + 1);
        let on: Vec<bool> = (0..cfg.emitters).map(|_| rng.random_bool(cfg.blink_on_prob)).collect();

        let mut background = vec![0.0; px];
        for (p, pat) in cfg.background.iter().zip(&patterns) {
            let m = p.modulation.factor(f, cfg.frames);
            for (b, &v) in background.iter_mut().zip(pat) {
                *b += m * v;
            }
        }
        let mut signal = vec![0.0; px];
        for (e, &(x, y)) in positions.iter().enumerate() {
            if on[e] {
                render_psf(x, y, cfg.psf_sigma, cfg.photons, w, h, &mut signal);
            }
        }
        let noisy = background
            .iter()
            .zip(&signal)
            .map(|(&b, &s)| {
                let expected = b + s;
                let mut v = if cfg.shot_noise {
                    sample_poisson(expected, &mut rng)
                } else {
                    expected
                };
                if cfg.read_noise_sigma > 0.0 {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    v += cfg.read_noise_sigma * z;
                }
                v.max(0.0) as f32
            })
            .collect();
        FrameOut {
            on,
            background,
            signal,
            noisy,
        }
    });

    let mut truth = GroundTruth {
        width: w,
        height: h,
        frames: cfg.frames,
        positions,
        on: Vec::with_capacity(cfg.frames * cfg.emitters),
        background: Vec::with_capacity(cfg.frames * px),
        signal: Vec::with_capacity(cfg.frames * px),
    };
    let mut data = Vec::with_capacity(cfg.frames * px);
    for f in frames {
        truth.on.extend(f.on);
        truth.background.extend(f.background);
        truth.signal.extend(f.signal);
        data.extend(f.noisy);
    }
    let stack = ImageStack::new(w, h, data, StackMeta::default())?;
    Ok((stack, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::thin_svd_small_k;

    fn quiet(cfg: SynthConfig) -> SynthConfig {
        SynthConfig {
            shot_noise: false,
            read_noise_sigma: 0.0,
            ..cfg
        }
    }

    #[test]
    fn empty_scene_is_zero() {
        let cfg = quiet(SynthConfig {
            emitters: 0,
            background: vec![],
            frames: 5,
            ..SynthConfig::default()
        });
        let (stack, _) = generate(&cfg).unwrap();
        assert!(stack.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic() {
        let cfg = SynthConfig {
            frames: 20,
            seed: 42,
            ..SynthConfig::default()
        };
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = SynthConfig {
            seed: 43,
            ..cfg.clone()
        };
        assert_ne!(generate(&cfg).unwrap().0, generate(&other).unwrap().0);
    }

    /// Upper bound on sigma_{r+1} / sigma_1: the residual after projecting every row
    /// onto the span of the first `r` rows, over the largest row norm (<= sigma_1).
    /// Unlike the Gram-matrix SVD this is accurate to machine precision.
    fn tail_ratio(m: &FlatMatrix, r: usize) -> f64 {
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for i in 0..r {
            let mut v = m.row(i).to_vec();
            for _ in 0..2 {
                for b in &basis {
                    let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                    v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
                }
            }
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
        let mut tail = 0.0;
        let mut top: f64 = 0.0;
        for i in 0..m.rows() {
            let mut v = m.row(i).to_vec();
            top = top.max(v.iter().map(|x| x * x).sum::<f64>().sqrt());
            for _ in 0..2 {
                for b in &basis {
                    let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                    v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
                }
            }
            tail += v.iter().map(|x| x * x).sum::<f64>();
        }
        tail.sqrt() / top
    }

    #[test]
    fn single_pattern_background_is_rank_one() {
        let cfg = quiet(SynthConfig {
            emitters: 0,
            frames: 40,
            ..SynthConfig::default()
        });
        let (_, truth) = generate(&cfg).unwrap();
        for t in [0, 7, 19] {
            let m = truth.background_matrix(&[t, t + 5, t + 10]).unwrap();
            let ratio = tail_ratio(&m, 1);
            assert!(ratio <= 1e-10, "{}", ratio);
        }
    }

    #[test]
    fn two_patterns_give_rank_two() {
        let cfg = quiet(SynthConfig {
            emitters: 0,
            frames: 120,
            background: SynthConfig::random_background(64, 64, 2, 3, 100.0, 20.0, 0.4, 5),
            ..SynthConfig::default()
        });
        let (_, truth) = generate(&cfg).unwrap();
        let m = truth.background_matrix(&[0, 50, 100]).unwrap();
        let s = thin_svd_small_k(&m).unwrap().sigma;
        assert!(s[1] / s[0] > 1e-6, "{:?}", s);
        assert!(tail_ratio(&m, 2) <= 1e-10, "{}", tail_ratio(&m, 2));
    }

    #[test]
    fn psf_matches_numerical_integration() {
        let (x, y, sigma) = (10.3, 7.8, 1.3);
        let (w, h) = (20, 16);
        let mut out = vec![0.0; w * h];
        render_psf(x, y, sigma, 1.0, w, h, &mut out);
        // Composite Simpson on each pixel of the 5x5 neighbourhood.
        let n = 64;
        let g = |u: f64, v: f64| {
            (-((u - x).powi(2) + (v - y).powi(2)) / (2.0 * sigma * sigma)).exp()
                / (std::f64::consts::TAU * sigma * sigma)
        };
        for j in 5..10 {
            for i in 8..13 {
                let mut acc = 0.0;
                for a in 0..=n {
                    for b in 0..=n {
                        let wa = if a == 0 || a == n {
                            1.0
                        } else if a % 2 == 1 {
                            4.0
                        } else {
                            2.0
                        };
                        let wb = if b == 0 || b == n {
                            1.0
                        } else if b % 2 == 1 {
                            4.0
                        } else {
                            2.0
                        };
                        acc += wa * wb * g(i as f64 + a as f64 / n as f64, j as f64 + b as f64 / n as f64);
                    }
                }
                acc /= (3.0 * n as f64) * (3.0 * n as f64);
                assert!(
                    (out[j * w + i] - acc).abs() < 1e-6,
                    "({}, {}) {} vs {}",
                    i,
                    j,
                    out[j * w + i],
                    acc
                );
            }
        }
    }

    #[test]
    fn blink_rate_matches_probability() {
        let cfg = SynthConfig {
            width: 16,
            height: 16,
            frames: 500,
            emitters: 40,
            blink_on_prob: 0.2,
            background: vec![],
            ..SynthConfig::default()
        };
        let (_, truth) = generate(&cfg).unwrap();
        let n = truth.on.len() as f64;
        assert!(n >= 1e4);
        let p = truth.on.iter().filter(|&&b| b).count() as f64 / n;
        let se = (0.2 * 0.8 / n).sqrt();
        assert!((p - 0.2).abs() < 3.0 * se, "on-fraction {}", p);
    }

    #[test]
    fn noiseless_stack_is_sum_of_parts() {
        let cfg = quiet(SynthConfig {
            frames: 10,
            blink_on_prob: 0.5,
            ..SynthConfig::default()
        });
        let (stack, truth) = generate(&cfg).unwrap();
        for (i, &v) in stack.data().iter().enumerate() {
            assert_eq!(v, (truth.background[i] + truth.signal[i]) as f32);
        }
        for &(x, y) in &truth.positions {
            assert!(x >= 0.0 && y >= 0.0 && x < 64.0 && y < 64.0);
        }
    }

    #[test]
    fn poisson_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &mean in &[0.5, 4.0, 30.0, 200.0] {
            let n = 20000;
            let xs: Vec<f64> = (0..n).map(|_| sample_poisson(mean, &mut rng)).collect();
            let m = xs.iter().sum::<f64>() / n as f64;
            let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!(
                (m - mean).abs() < 4.0 * (mean / n as f64).sqrt(),
                "mean {} vs {}",
                m,
                mean
            );
            assert!((v - mean).abs() / mean < 0.06, "var {} vs {}", v, mean);
        }
    }

    #[test]
    fn invalid_config() {
        let cfg = SynthConfig {
            blink_on_prob: 1.5,
            ..SynthConfig::default()
        };
        assert!(generate(&cfg).is_err());
    }
}
