//! Comparison methods: global-median subtraction and rolling-ball background
//! subtraction (grayscale opening with a spherical-cap structuring element).

use crate::error::{Error, Result};
use crate::par;
use crate::stack::{Grid, ImageStack};

/// Median of all values; the mean of the two central order statistics for even
/// counts.
pub fn median(values: &[f32]) -> Result<f32> {
    if values.is_empty() {
        return Err(Error::Empty("median input"));
    }
    let mut v = values.to_vec();
    let n = v.len();
    let mid = n / 2;
    let (lower, hi, _) = v.select_nth_unstable_by(mid, f32::total_cmp);
    let hi = *hi;
    if n % 2 == 1 {
        Ok(hi)
    } else {
        let lo = lower.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        Ok(((lo as f64 + hi as f64) / 2.0) as f32)
    }
}

/// `max(M - median(M), 0)` with the median over every pixel of every frame.
pub fn median_subtract(stack: &ImageStack) -> Result<ImageStack> {
    if stack.is_empty() {
        return Err(Error::Empty("stack"));
    }
    let med = median(stack.data())?;
    let data = stack.data().iter().map(|&v| (v - med).max(0.0)).collect();
    ImageStack::new(stack.width(), stack.height(), data, stack.meta())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RollingBallConfig {
    pub radius: usize,
    /// Accepted for interface parity; smoothing is not implemented and must be off.
    pub smoothing: bool,
}

impl RollingBallConfig {
    pub fn new(radius: usize) -> Self {
        RollingBallConfig {
            radius,
            smoothing: false,
        }
    }
}

/// Offsets of the ball footprint with their cap heights `sqrt(r² - dx² - dy²)`,
/// rounded to whole intensity units so integer frames stay exact.
#[derive(Debug, Clone)]
pub struct Ball {
    pub radius: usize,
    /// `(dx, dy, height)`
    pub offsets: Vec<(isize, isize, f32)>,
}

impl Ball {
    pub fn new(radius: usize) -> Self {
        let r = radius as isize;
        let r2 = (r * r) as f64;
        let mut offsets = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                let d2 = (dx * dx + dy * dy) as f64;
                if d2 <= r2 {
                    offsets.push((dx, dy, (r2 - d2).sqrt().round() as f32));
                }
            }
        }
        Ball { radius, offsets }
    }
}

/// Erosion `e(p) = min_{d} f(p + d) - h(d)` over in-bounds offsets.
pub fn erode(frame: &Grid<f32>, ball: &Ball) -> Grid<f32> {
    shift_reduce(frame, ball, 1, f32::INFINITY, |acc, v, h| acc.min(v - h))
}

/// Dilation `o(p) = max_{d} e(p - d) + h(d)` over in-bounds offsets.
pub fn dilate(frame: &Grid<f32>, ball: &Ball) -> Grid<f32> {
    shift_reduce(frame, ball, -1, f32::NEG_INFINITY, |acc, v, h| acc.max(v + h))
}

/// For every offset `d` of the ball, combine `src(p + sign*d)` into `out(p)`
/// over the pixels where that source is in bounds. Offset-major order keeps the
/// inner loop over contiguous row slices.
fn shift_reduce(src: &Grid<f32>, ball: &Ball, sign: isize, init: f32, op: impl Fn(f32, f32, f32) -> f32) -> Grid<f32> {
    let (w, h) = (src.width() as isize, src.height() as isize);
    let mut out = vec![init; src.data().len()];
    for &(dx, dy, height) in &ball.offsets {
        let (dx, dy) = (dx * sign, dy * sign);
        let y0 = (-dy).max(0);
        let y1 = (h - dy).min(h);
        let x0 = (-dx).max(0);
        let x1 = (w - dx).min(w);
        if y0 >= y1 || x0 >= x1 {
            continue;
        }
        for y in y0..y1 {
            let drow = (y * w) as usize;
            let srow = ((y + dy) * w) as usize;
            let dst = &mut out[drow + x0 as usize..drow + x1 as usize];
            let s = &src.data()[srow + (x0 + dx) as usize..srow + (x1 + dx) as usize];
            for (d, &v) in dst.iter_mut().zip(s) {
                *d = op(*d, v, height);
            }
        }
    }
    Grid::from_vec(src.width(), src.height(), out).expect("same shape")
}

/// Grayscale opening by the ball: the rolling-ball background.
pub fn rolling_ball_background(frame: &Grid<f32>, cfg: &RollingBallConfig) -> Result<Grid<f32>> {
    if cfg.radius == 0 {
        return Err(Error::param("rolling-ball radius must be >= 1"));
    }
    if cfg.smoothing {
        return Err(Error::param("rolling-ball smoothing is not supported"));
    }
    if cfg.radius > frame.width() && cfg.radius > frame.height() {
        return Err(Error::param(format!(
            "rolling-ball radius {} exceeds both frame dimensions {}x{}",
            cfg.radius,
            frame.width(),
            frame.height()
        )));
    }
    if !frame.data().iter().all(|v| v.is_finite() && *v >= 0.0) {
        return Err(Error::NonFinite("rolling-ball frame (values must be finite and >= 0)"));
    }
    let ball = Ball::new(cfg.radius);
    Ok(dilate(&erode(frame, &ball), &ball))
}

/// `max(frame - opening(frame), 0)`.
pub fn rolling_ball(frame: &Grid<f32>, cfg: &RollingBallConfig) -> Result<Grid<f32>> {
    let bg = rolling_ball_background(frame, cfg)?;
    let data = frame
        .data()
        .iter()
        .zip(bg.data())
        .map(|(&f, &b)| (f - b).max(0.0))
        .collect();
    Grid::from_vec(frame.width(), frame.height(), data)
}

/// [`rolling_ball`] on every frame.
pub fn rolling_ball_stack(stack: &ImageStack, cfg: &RollingBallConfig) -> Result<ImageStack> {
    let frames = par::try_map_indexed(stack.len(), |i| rolling_ball(&stack.frame_grid(i), cfg))?;
    ImageStack::from_frames(&frames, stack.meta())
}
