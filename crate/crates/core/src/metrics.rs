//! Evaluation metrics: sparsity, profile FWHM, simplified SQUIRREL scores
//! (RSP/RSE) and localization accuracy against synthetic ground truth.
//!
//! Every result type implements [`CsvRow`] so metrics can be exported as tidy
//! CSV for external plotting.

use crate::error::{Error, Result};
use crate::localize::{levenberg_marquardt, LocalizationTable};
use crate::stack::Grid;
use crate::synth::GroundTruth;

/// `2 * sqrt(2 ln 2)`, the FWHM of a unit-sigma Gaussian.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

/// One CSV record per result, with a fixed header.
pub trait CsvRow {
    const HEADER: &'static str;
    fn csv_row(&self) -> String;
}

/// Percentage of elements exactly equal to zero.
pub fn sparsity(values: &[f32]) -> Result<f64> {
    sparsity_with_tolerance(values, 0.0)
}

/// Percentage of elements with `|v| <= eps`.
pub fn sparsity_with_tolerance(values: &[f32], eps: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("sparsity input"));
    }
    if !(eps >= 0.0) {
        return Err(Error::param("sparsity tolerance must be >= 0"));
    }
    let zeros = values.iter().filter(|&&v| (v as f64).abs() <= eps).count();
    Ok(zeros as f64 * 100.0 / values.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FwhmResult {
    /// In the units of `spacing`.
    pub fwhm: f64,
    pub amplitude: f64,
    /// In samples.
    pub center: f64,
    /// In samples.
    pub sigma: f64,
    pub offset: f64,
    /// Euclidean norm of the fit residual.
    pub residual_norm: f64,
}

impl CsvRow for FwhmResult {
    const HEADER: &'static str = "fwhm,amplitude,center,sigma,offset,residual_norm";
    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.fwhm, self.amplitude, self.center, self.sigma, self.offset, self.residual_norm
        )
    }
}

/// Least-squares fit of `A exp(-(i - c)^2 / (2 s^2)) + b` to the samples.
pub fn fwhm_profile(profile: &[f64], spacing: f64) -> Result<FwhmResult> {
    let n = profile.len();
    if n < 5 {
        return Err(Error::param(format!("profile needs at least 5 samples, got {}", n)));
    }
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::param("spacing must be finite and > 0"));
    }
    if profile.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("profile"));
    }
    let lo = profile.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = profile.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return Err(Error::Degenerate("constant profile".into()));
    }
    let peak = profile.iter().position(|&v| v == hi).unwrap_or(0);
    let above = profile.iter().filter(|&&v| v - lo >= 0.5 * (hi - lo)).count() as f64;
    let sigma0 = (above / FWHM_PER_SIGMA).max(0.5);

    let max_sigma = 4.0 * n as f64;
    let eval = |p: &[f64], r: &mut [f64], jac: &mut [f64]| -> bool {
        let (a, c, s, b) = (p[0], p[1], p[2], p[3]);
        if !(s > 1e-3 && s < max_sigma) || !p.iter().all(|v| v.is_finite()) {
            return false;
        }
        for i in 0..n {
            let d = i as f64 - c;
            let e = (-d * d / (2.0 * s * s)).exp();
            r[i] = profile[i] - (a * e + b);
            let row = &mut jac[i * 4..i * 4 + 4];
            row[0] = e;
            row[1] = a * e * d / (s * s);
            row[2] = a * e * d * d / (s * s * s);
            row[3] = 1.0;
        }
        true
    };
    let out = levenberg_marquardt(vec![hi - lo, peak as f64, sigma0, lo], n, 200, eval);
    let p = &out.params;
    if !out.converged || !out.cost.is_finite() || !(p[2] > 0.0) {
        return Err(Error::NotConverged(format!(
            "profile fit did not converge (sigma {}, cost {})",
            p[2], out.cost
        )));
    }
    Ok(FwhmResult {
        fwhm: FWHM_PER_SIGMA * p[2] * spacing,
        amplitude: p[0],
        center: p[1],
        sigma: p[2],
        offset: p[3],
        residual_norm: out.cost.sqrt(),
    })
}

/// Horizontal intensity profile through the row containing `(x, y)`, covering
/// `half_width` pixels either side of its column (cropped at the borders).
pub fn emitter_profile(frame: &Grid<f32>, x: f64, y: f64, half_width: usize) -> Vec<f64> {
    let (w, h) = (frame.width(), frame.height());
    if !(x >= 0.0 && y >= 0.0 && x < w as f64 && y < h as f64) {
        return Vec::new();
    }
    let (cx, cy) = (x.floor() as usize, y.floor() as usize);
    let start = cx.saturating_sub(half_width);
    let end = (cx + half_width + 1).min(w);
    frame.row(cy)[start..end].iter().map(|&v| v as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquirrelScores {
    pub rsp: f64,
    pub rse: f64,
    /// Fitted intensity scale `a` in `a * down + b`.
    pub scale: f64,
    pub offset: f64,
}

impl CsvRow for SquirrelScores {
    const HEADER: &'static str = "rsp,rse,scale,offset";
    fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.rsp, self.rse, self.scale, self.offset)
    }
}

/// Separable Gaussian blur with clamp-to-edge borders; kernel radius `ceil(4 sigma)`.
pub fn gaussian_blur(img: &Grid<f64>, sigma: f64) -> Result<Grid<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::param("blur sigma must be finite and > 0"));
    }
    let radius = (4.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= norm);

    let (w, h) = (img.width(), img.height());
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let src = img.data();
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                s += kv * src[y * w + clamp(x as isize + k as isize - radius, w)];
            }
            tmp[y * w + x] = s;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                s += kv * tmp[clamp(y as isize + k as isize - radius, h) * w + x];
            }
            out[y * w + x] = s;
        }
    }
    Grid::from_vec(w, h, out)
}

/// Mean over `factor x factor` blocks.
pub fn block_average(img: &Grid<f64>, factor: usize) -> Result<Grid<f64>> {
    if factor == 0 || !img.width().is_multiple_of(factor) || !img.height().is_multiple_of(factor) {
        return Err(Error::Shape(format!(
            "{}x{} image is not divisible into {}-pixel blocks",
            img.width(),
            img.height(),
            factor
        )));
    }
    let (w, h) = (img.width() / factor, img.height() / factor);
    let mut out = Grid::zeros(w, h);
    let inv = 1.0 / (factor * factor) as f64;
    for y in 0..img.height() {
        for x in 0..img.width() {
            let (bx, by) = (x / factor, y / factor);
            out.set(bx, by, out.get(bx, by) + img.get(x, y) * inv);
        }
    }
    Ok(out)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Pearson correlation; `None` if either input has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.is_empty() {
        return None;
    }
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Blur the reconstruction, block-average it to the widefield grid, fit
/// `a * down + b` to the widefield by least squares and score the fit.
pub fn squirrel_scores(reconstruction: &Grid<f64>, widefield: &Grid<f64>, blur_sigma: f64) -> Result<SquirrelScores> {
    let (ww, wh) = (widefield.width(), widefield.height());
    if ww == 0 || wh == 0 {
        return Err(Error::Empty("widefield image"));
    }
    let factor = reconstruction.width() / ww;
    if factor == 0 || reconstruction.width() != factor * ww || reconstruction.height() != factor * wh {
        return Err(Error::Shape(format!(
            "reconstruction {}x{} is not an integer multiple of widefield {}x{}",
            reconstruction.width(),
            reconstruction.height(),
            ww,
            wh
        )));
    }
    let down = block_average(&gaussian_blur(reconstruction, blur_sigma)?, factor)?;
    let d = down.data();
    let wf = widefield.data();
    let (md, mw) = (mean(d), mean(wf));
    let (mut sdw, mut sdd, mut sww) = (0.0, 0.0, 0.0);
    for (&x, &y) in d.iter().zip(wf) {
        sdw += (x - md) * (y - mw);
        sdd += (x - md) * (x - md);
        sww += (y - mw) * (y - mw);
    }
    if sdd <= 0.0 || sww <= 0.0 {
        return Err(Error::Degenerate("zero-variance input to SQUIRREL scores".into()));
    }
    let a = sdw / sdd;
    let b = mw - a * md;
    let fitted: Vec<f64> = d.iter().map(|&x| a * x + b).collect();
    let rsp = pearson(&fitted, wf).unwrap_or(0.0);
    let rse = (fitted.iter().zip(wf).map(|(f, w)| (f - w) * (f - w)).sum::<f64>() / wf.len() as f64).sqrt();
    Ok(SquirrelScores {
        rsp,
        rse,
        scale: a,
        offset: b,
    })
}

/// Ground-truth emitter states, either from the generator or loaded from CSV.
pub trait EmitterTruth {
    fn frame_count(&self) -> usize;
    /// `(emitter, x, y)` for every emitter on in `frame`.
    fn active_positions(&self, frame: usize) -> Vec<(usize, f64, f64)>;
}

impl EmitterTruth for GroundTruth {
    fn frame_count(&self) -> usize {
        self.frames
    }

    fn active_positions(&self, frame: usize) -> Vec<(usize, f64, f64)> {
        self.active(frame)
            .map(|e| (e, self.positions[e].0, self.positions[e].1))
            .collect()
    }
}

/// Active emitter positions per frame, as stored in a ground-truth CSV.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TruthTable {
    /// `active[frame]` lists `(emitter, x, y)`.
    pub active: Vec<Vec<(usize, f64, f64)>>,
}

impl TruthTable {
    pub fn from_ground_truth(truth: &GroundTruth) -> Self {
        TruthTable {
            active: (0..truth.frames).map(|f| truth.active_positions(f)).collect(),
        }
    }
}

impl EmitterTruth for TruthTable {
    fn frame_count(&self) -> usize {
        self.active.len()
    }

    fn active_positions(&self, frame: usize) -> Vec<(usize, f64, f64)> {
        self.active.get(frame).cloned().unwrap_or_default()
    }
}

/// A localization paired with a ground-truth emitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub frame: usize,
    pub emitter: usize,
    /// Index into the table's `locs`.
    pub loc: usize,
    pub distance: f64,
}

/// Greedy one-to-one matching per frame, closest pairs first, within `match_radius` pixels.
pub fn match_localizations<T: EmitterTruth + ?Sized>(
    table: &LocalizationTable,
    truth: &T,
    match_radius: f64,
) -> Result<Vec<Match>> {
    if !(match_radius > 0.0) {
        return Err(Error::param("match radius must be > 0"));
    }
    let mut out = Vec::new();
    for frame in 0..truth.frame_count() {
        let start = table.locs.partition_point(|l| l.frame < frame);
        let locs = table.in_frame(frame);
        let mut pairs = Vec::new();
        for (e, tx, ty) in truth.active_positions(frame) {
            for (i, l) in locs.iter().enumerate() {
                let d = ((l.x - tx).powi(2) + (l.y - ty).powi(2)).sqrt();
                if d <= match_radius {
                    pairs.push((d, e, start + i));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut used_e = std::collections::HashSet::new();
        let mut used_l = std::collections::HashSet::new();
        for (d, e, l) in pairs {
            if used_e.contains(&e) || used_l.contains(&l) {
                continue;
            }
            used_e.insert(e);
            used_l.insert(l);
            out.push(Match {
                frame,
                emitter: e,
                loc: l,
                distance: d,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizationError {
    /// Over matched pairs, in pixels; 0 when nothing matched.
    pub rmse: f64,
    pub recall: f64,
    /// 0 with `precision_defined == false` for an empty table.
    pub precision: f64,
    pub precision_defined: bool,
    pub matched: usize,
    pub true_active: usize,
    pub detected: usize,
}

impl CsvRow for LocalizationError {
    const HEADER: &'static str = "rmse_px,recall,precision,precision_defined,matched,true_active,detected";
    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.rmse,
            self.recall,
            self.precision,
            self.precision_defined,
            self.matched,
            self.true_active,
            self.detected
        )
    }
}

pub fn localization_error<T: EmitterTruth + ?Sized>(
    table: &LocalizationTable,
    truth: &T,
    match_radius: f64,
) -> Result<LocalizationError> {
    let matches = match_localizations(table, truth, match_radius)?;
    let frames = truth.frame_count();
    let true_active: usize = (0..frames).map(|f| truth.active_positions(f).len()).sum();
    let detected = table.locs.iter().filter(|l| l.frame < frames).count();
    let matched = matches.len();
    let rmse = if matched == 0 {
        0.0
    } else {
        (matches.iter().map(|m| m.distance * m.distance).sum::<f64>() / matched as f64).sqrt()
    };
    Ok(LocalizationError {
        rmse,
        recall: if true_active == 0 {
            0.0
        } else {
            matched as f64 / true_active as f64
        },
        precision: if detected == 0 {
            0.0
        } else {
            matched as f64 / detected as f64
        },
        precision_defined: detected > 0,
        matched,
        true_active,
        detected,
    })
}
