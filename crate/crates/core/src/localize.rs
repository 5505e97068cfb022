//! Minimal single-emitter localization and histogram rendering.
//!
//! Coordinates are continuous pixel units: pixel `(i, j)` covers
//! `[i, i+1) x [j, j+1)`, so its centre is `(i + 0.5, j + 0.5)`. `x` runs along
//! columns, `y` along rows.

use crate::error::{Error, Result};
use crate::par;
use crate::stack::{Grid, ImageStack};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Localization {
    pub frame: usize,
    pub x: f64,
    pub y: f64,
    /// Fitted PSF sigma in pixels.
    pub sigma: f64,
    /// Integrated emitter signal above the fitted offset.
    pub intensity: f64,
    /// Residual sum of squares of the fit; `INFINITY` when the fit failed and
    /// the position is the weighted centroid.
    pub fit_residual: f64,
}

impl Localization {
    pub fn is_fallback(&self) -> bool {
        self.fit_residual.is_infinite()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LocalizationTable {
    pub locs: Vec<Localization>,
    pub source: String,
    pub pixel_size_nm: f64,
}

impl LocalizationTable {
    pub fn new(locs: Vec<Localization>, pixel_size_nm: f64) -> Self {
        LocalizationTable {
            locs,
            source: String::new(),
            pixel_size_nm,
        }
    }

    pub fn len(&self) -> usize {
        self.locs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locs.is_empty()
    }

    /// Localizations of one frame (the table is sorted by frame).
    pub fn in_frame(&self, frame: usize) -> &[Localization] {
        let start = self.locs.partition_point(|l| l.frame < frame);
        let end = self.locs.partition_point(|l| l.frame <= frame);
        &self.locs[start..end]
    }
}

/// Integer peak position `(x, y)` = (column, row).
pub type Peak = (usize, usize);

/// Local maxima above `threshold`, strongest first, with every accepted peak at
/// least `min_separation` pixels from any stronger one.
pub fn detect(frame: &Grid<f32>, threshold: f64, min_separation: f64) -> Result<Vec<Peak>> {
    if !(threshold > 0.0) {
        return Err(Error::param("detection threshold must be > 0"));
    }
    let (w, h) = (frame.width(), frame.height());
    let mut candidates = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = frame.get(x, y);
            if (v as f64) <= threshold {
                continue;
            }
            let mut is_max = true;
            'n: for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    if frame.get(nx as usize, ny as usize) > v {
                        is_max = false;
                        break 'n;
                    }
                }
            }
            if is_max {
                candidates.push((v, x, y));
            }
        }
    }
    // Strongest first; ties resolve in scan order.
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.2, a.1).cmp(&(b.2, b.1))));
    let sep2 = min_separation * min_separation;
    let mut kept: Vec<Peak> = Vec::new();
    for (_, x, y) in candidates {
        let clear = kept.iter().all(|&(kx, ky)| {
            let dx = kx as f64 - x as f64;
            let dy = ky as f64 - y as f64;
            dx * dx + dy * dy >= sep2 && (dx, dy) != (0.0, 0.0)
        });
        if clear {
            kept.push((x, y));
        }
    }
    Ok(kept)
}

/// `median + k * spread` of the frame, with `spread = 1.4826 * MAD`. Frames that
/// are mostly one value (MAD = 0, e.g. background-subtracted sparse frames) use
/// the standard deviation instead.
pub fn robust_threshold(frame: &Grid<f32>, k: f64) -> f64 {
    let mut v: Vec<f64> = frame.data().iter().map(|&x| x as f64).collect();
    let med = median_f64(&mut v);
    let mut dev: Vec<f64> = v.iter().map(|x| (x - med).abs()).collect();
    let mut spread = 1.4826 * median_f64(&mut dev);
    if spread == 0.0 {
        let mean = v.iter().sum::<f64>() / v.len().max(1) as f64;
        spread = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len().max(1) as f64).sqrt();
    }
    (med + k * spread).max(f64::MIN_POSITIVE)
}

/// Wavelet detection image and its noise scale.
///
/// Two levels of the undecimated B-spline ("a trous") transform: `V1` smooths
/// with `[1, 4, 6, 4, 1] / 16`, `V2` smooths `V1` with the same kernel dilated
/// by one hole. Returns the second wavelet plane `V1 - V2`, which keeps
/// PSF-sized features and drops both pixel noise and slow background, together
/// with the standard deviation of the first plane `I - V1`. Borders mirror.
pub fn wavelet_filter(frame: &Grid<f32>) -> (Grid<f32>, f64) {
    let (w, h) = (frame.width(), frame.height());
    let input: Vec<f64> = frame.data().iter().map(|&v| v as f64).collect();
    let v1 = smooth_separable(&input, w, h, 1);
    let v2 = smooth_separable(&v1, w, h, 2);
    let f1: Vec<f64> = input.iter().zip(&v1).map(|(a, b)| a - b).collect();
    let n = f1.len().max(1) as f64;
    let mean = f1.iter().sum::<f64>() / n;
    let std = (f1.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let f2 = v1.iter().zip(&v2).map(|(a, b)| (a - b) as f32).collect();
    (Grid::from_vec(w, h, f2).expect("same dims"), std)
}

const B3: [f64; 5] = [1.0 / 16.0, 0.25, 3.0 / 8.0, 0.25, 1.0 / 16.0];

fn mirror(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

fn smooth_separable(img: &[f64], w: usize, h: usize, step: usize) -> Vec<f64> {
    let mut tmp = vec![0.0; img.len()];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = B3
                .iter()
                .enumerate()
                .map(|(t, c)| c * img[y * w + mirror(x as isize + (t as isize - 2) * step as isize, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; img.len()];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = B3
                .iter()
                .enumerate()
                .map(|(t, c)| c * tmp[mirror(y as isize + (t as isize - 2) * step as isize, h) * w + x])
                .sum();
        }
    }
    out
}

fn median_f64(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn phi(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn big_phi(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z / std::f64::consts::SQRT_2))
}

/// Solves the dense `n x n` system `a x = b` by Gaussian elimination with
/// partial pivoting. Returns `None` if singular.
pub(crate) fn solve_dense(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Option<Vec<f64>> {
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if a[piv * n + col].abs() < 1e-300 {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap(piv * n + k, col * n + k);
            }
            b.swap(piv, col);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            if f != 0.0 {
                for k in col..n {
                    a[row * n + k] -= f * a[col * n + k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for k in row + 1..n {
            s -= a[row * n + k] * x[k];
        }
        x[row] = s / a[row * n + row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Levenberg-Marquardt on a generic least-squares problem.
///
/// `eval(params, residuals, jacobian)` fills residuals `r = data - model` and the
/// model Jacobian (row-major, one row per sample) and returns false for
/// parameters outside the model's domain.
pub(crate) struct LmOutcome {
    pub params: Vec<f64>,
    pub cost: f64,
    pub converged: bool,
}

pub(crate) fn levenberg_marquardt(
    mut params: Vec<f64>,
    samples: usize,
    max_iter: usize,
    mut eval: impl FnMut(&[f64], &mut [f64], &mut [f64]) -> bool,
) -> LmOutcome {
    let n = params.len();
    let mut r = vec![0.0; samples];
    let mut j = vec![0.0; samples * n];
    if !eval(&params, &mut r, &mut j) {
        return LmOutcome {
            params,
            cost: f64::INFINITY,
            converged: false,
        };
    }
    let mut cost: f64 = r.iter().map(|v| v * v).sum();
    let mut lambda = 1e-3;
    let mut r_try = vec![0.0; samples];
    let mut j_try = vec![0.0; samples * n];
    let mut converged = false;
    for _ in 0..max_iter {
        let mut jtj = vec![0.0; n * n];
        let mut jtr = vec![0.0; n];
        for s in 0..samples {
            let row = &j[s * n..(s + 1) * n];
            for a in 0..n {
                jtr[a] += row[a] * r[s];
                for b in 0..n {
                    jtj[a * n + b] += row[a] * row[b];
                }
            }
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut damped = jtj.clone();
            for a in 0..n {
                damped[a * n + a] += lambda * jtj[a * n + a].max(1e-12);
            }
            let Some(step) = solve_dense(damped, jtr.clone(), n) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = params.iter().zip(&step).map(|(p, d)| p + d).collect();
            if eval(&trial, &mut r_try, &mut j_try) {
                let c: f64 = r_try.iter().map(|v| v * v).sum();
                if c <= cost {
                    let rel = (cost - c) / cost.max(f64::MIN_POSITIVE);
                    let small_step = step.iter().zip(&trial).all(|(d, p)| d.abs() <= 1e-10 * (1.0 + p.abs()));
                    params = trial;
                    cost = c;
                    std::mem::swap(&mut r, &mut r_try);
                    std::mem::swap(&mut j, &mut j_try);
                    lambda = (lambda / 10.0).max(1e-12);
                    improved = true;
                    if rel < 1e-14 || small_step {
                        converged = true;
                    }
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            // No downhill step at any damping: at a (numerical) minimum.
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    LmOutcome {
        params,
        cost,
        converged,
    }
}

/// Pixel-integrated symmetric Gaussian plus constant offset, fitted to the ROI
/// around `peak` by damped Gauss-Newton. Falls back to the weighted centroid
/// (flagged through `fit_residual`) if the fit leaves its domain.
pub fn fit_gaussian(frame: &Grid<f32>, frame_index: usize, peak: Peak, roi_radius: usize) -> Result<Localization> {
    let (w, h) = (frame.width(), frame.height());
    let (px, py) = peak;
    if px >= w || py >= h {
        return Err(Error::param(format!("peak ({}, {}) outside frame", px, py)));
    }
    let x0 = px.saturating_sub(roi_radius);
    let x1 = (px + roi_radius + 1).min(w);
    let y0 = py.saturating_sub(roi_radius);
    let y1 = (py + roi_radius + 1).min(h);
    let (rw, rh) = (x1 - x0, y1 - y0);
    if rw * rh < 9 {
        return Err(Error::Degenerate(format!(
            "ROI around ({}, {}) has only {} in-bounds pixels",
            px,
            py,
            rw * rh
        )));
    }
    let roi: Vec<f64> = (y0..y1)
        .flat_map(|y| (x0..x1).map(move |x| (x, y)))
        .map(|(x, y)| frame.get(x, y) as f64)
        .collect();
    let lo = roi.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = roi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return Err(Error::Degenerate("flat ROI".into()));
    }

    // Weighted centroid on the min-subtracted ROI.
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for j in 0..rh {
        for i in 0..rw {
            let v = roi[j * rw + i] - lo;
            sw += v;
            sx += v * (x0 + i) as f64;
            sy += v * (y0 + j) as f64;
        }
    }
    let cx = sx / sw + 0.5;
    let cy = sy / sw + 0.5;
    let mut m2 = 0.0;
    for j in 0..rh {
        for i in 0..rw {
            let v = roi[j * rw + i] - lo;
            let dx = (x0 + i) as f64 + 0.5 - cx;
            let dy = (y0 + j) as f64 + 0.5 - cy;
            m2 += v * (dx * dx + dy * dy);
        }
    }
    let sigma0 = (m2 / sw / 2.0).sqrt().clamp(0.5, roi_radius.max(1) as f64);
    let fallback = Localization {
        frame: frame_index,
        x: cx,
        y: cy,
        sigma: sigma0,
        intensity: sw,
        fit_residual: f64::INFINITY,
    };

    let max_sigma = 2.0 * roi_radius.max(1) as f64;
    let eval = |p: &[f64], r: &mut [f64], jac: &mut [f64]| -> bool {
        let (mx, my, s, a, b) = (p[0], p[1], p[2], p[3], p[4]);
        if !(s > 0.05 && s < max_sigma) || !p.iter().all(|v| v.is_finite()) {
            return false;
        }
        let col = |i: usize, m: f64| {
            let lo = (i as f64 - m) / s;
            let hi = (i as f64 + 1.0 - m) / s;
            let e = big_phi(hi) - big_phi(lo);
            let de_dm = (phi(lo) - phi(hi)) / s;
            let de_ds = (phi(lo) * lo - phi(hi) * hi) / s;
            (e, de_dm, de_ds)
        };
        let ex: Vec<_> = (x0..x1).map(|i| col(i, mx)).collect();
        let ey: Vec<_> = (y0..y1).map(|j| col(j, my)).collect();
        for (jj, &(ey_v, ey_dm, ey_ds)) in ey.iter().enumerate() {
            for (ii, &(ex_v, ex_dm, ex_ds)) in ex.iter().enumerate() {
                let k = jj * rw + ii;
                let model = a * ex_v * ey_v + b;
                r[k] = roi[k] - model;
                let row = &mut jac[k * 5..k * 5 + 5];
                row[0] = a * ex_dm * ey_v;
                row[1] = a * ex_v * ey_dm;
                row[2] = a * (ex_ds * ey_v + ex_v * ey_ds);
                row[3] = ex_v * ey_v;
                row[4] = 1.0;
            }
        }
        true
    };
    let out = levenberg_marquardt(vec![cx, cy, sigma0, sw, lo], roi.len(), 50, eval);
    let p = &out.params;
    let inside =
        p[0] >= x0 as f64 - 1.0 && p[0] <= x1 as f64 + 1.0 && p[1] >= y0 as f64 - 1.0 && p[1] <= y1 as f64 + 1.0;
    let in_frame = p[0] >= 0.0 && p[1] >= 0.0 && p[0] < w as f64 && p[1] < h as f64;
    if !out.cost.is_finite() || !inside || !in_frame || !(p[3] > 0.0) {
        return Ok(fallback);
    }
    Ok(Localization {
        frame: frame_index,
        x: p[0],
        y: p[1],
        sigma: p[2],
        intensity: p[3],
        fit_residual: out.cost,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Absolute(f64),
    /// `median + k * 1.4826 * MAD` per frame.
    Robust(f64),
    /// Peaks of the wavelet plane from [`wavelet_filter`] above `k` times its
    /// noise scale; fitting still runs on the unfiltered frame.
    Wavelet(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizeParams {
    pub threshold: Threshold,
    pub min_separation: f64,
    pub roi_radius: usize,
}

impl Default for LocalizeParams {
    fn default() -> Self {
        LocalizeParams {
            threshold: Threshold::Wavelet(1.5),
            min_separation: 4.0,
            roi_radius: 3,
        }
    }
}

/// Detect and fit every frame; the table is ordered by frame, then by detection order.
pub fn localize_stack(stack: &ImageStack, params: &LocalizeParams, pixel_size_nm: f64) -> Result<LocalizationTable> {
    let per_frame = par::try_map_indexed(stack.len(), |f| -> Result<Vec<Localization>> {
        let frame = stack.frame_grid(f);
        let peaks = match params.threshold {
            Threshold::Absolute(t) => detect(&frame, t, params.min_separation)?,
            Threshold::Robust(k) => detect(&frame, robust_threshold(&frame, k), params.min_separation)?,
            Threshold::Wavelet(k) => {
                let (plane, noise) = wavelet_filter(&frame);
                if noise == 0.0 && plane.data().iter().all(|&v| v == 0.0) {
                    Vec::new()
                } else {
                    detect(&plane, (k * noise).max(f64::MIN_POSITIVE), params.min_separation)?
                }
            }
        };
        let mut out = Vec::new();
        for peak in peaks {
            match fit_gaussian(&frame, f, peak, params.roi_radius) {
                Ok(loc) => out.push(loc),
                Err(Error::Degenerate(_)) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    })?;
    Ok(LocalizationTable::new(
        per_frame.into_iter().flatten().collect(),
        pixel_size_nm,
    ))
}

/// Histogram of localization positions on a grid `magnification` times finer
/// than the `width x height` camera frame.
pub fn render(table: &LocalizationTable, magnification: usize, width: usize, height: usize) -> Result<Grid<f64>> {
    if magnification == 0 {
        return Err(Error::param("magnification must be >= 1"));
    }
    let (rw, rh) = (width * magnification, height * magnification);
    let mut img = Grid::zeros(rw, rh);
    let m = magnification as f64;
    for l in &table.locs {
        let bx = (l.x * m).floor();
        let by = (l.y * m).floor();
        if bx >= 0.0 && by >= 0.0 && bx < rw as f64 && by < rh as f64 {
            let (bx, by) = (bx as usize, by as usize);
            img.set(bx, by, img.get(bx, by) + 1.0);
        }
    }
    Ok(img)
}
