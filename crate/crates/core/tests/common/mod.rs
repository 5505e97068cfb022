//! Independent reference implementations used as test oracles. They favour
//! directness over speed and share no code with the library paths they check.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slnet_core::FlatMatrix;

/// Full SVD of a `k x n` matrix (`k <= n`) by one-sided Jacobi on the rows.
/// Returns `(u, sigma, vt)`: `u` is `k x k` row-major with singular vectors as
/// columns, `vt` is `k x n` with right singular vectors as rows. Accurate to
/// about machine precision relative to the largest singular value.
pub fn jacobi_svd(a: &[f64], k: usize, n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut w = a.to_vec();
    let mut u = vec![0.0; k * k];
    for i in 0..k {
        u[i * k + i] = 1.0;
    }
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..k {
            for q in p + 1..k {
                let (mut app, mut aqq, mut apq) = (0.0, 0.0, 0.0);
                for j in 0..n {
                    let (x, y) = (w[p * n + j], w[q * n + j]);
                    app += x * x;
                    aqq += y * y;
                    apq += x * y;
                }
                if apq.abs() <= 1e-15 * (app * aqq).sqrt() || apq == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (aqq - app) / (2.0 * apq);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for j in 0..n {
                    let (x, y) = (w[p * n + j], w[q * n + j]);
                    w[p * n + j] = c * x - s * y;
                    w[q * n + j] = s * x + c * y;
                }
                // A = U W with U accumulating the transposed rotations.
                for i in 0..k {
                    let (x, y) = (u[i * k + p], u[i * k + q]);
                    u[i * k + p] = c * x - s * y;
                    u[i * k + q] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<usize> = (0..k).collect();
    let norms: Vec<f64> = (0..k)
        .map(|i| w[i * n..(i + 1) * n].iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));
    let mut su = vec![0.0; k * k];
    let mut sigma = vec![0.0; k];
    let mut vt = vec![0.0; k * n];
    for (dst, &src) in order.iter().enumerate() {
        sigma[dst] = norms[src];
        for i in 0..k {
            su[i * k + dst] = u[i * k + src];
        }
        if norms[src] > 0.0 {
            for j in 0..n {
                vt[dst * n + j] = w[src * n + j] / norms[src];
            }
        }
    }
    (su, sigma, vt)
}

/// Singular value thresholding through the full Jacobi SVD.
pub fn svt_oracle(x: &FlatMatrix, mu: f64) -> Vec<f64> {
    let (k, n) = (x.rows(), x.cols());
    let (u, sigma, vt) = jacobi_svd(x.data(), k, n);
    let mut out = vec![0.0; k * n];
    for r in 0..k {
        let s = (sigma[r] - mu).max(0.0);
        if s == 0.0 {
            continue;
        }
        for i in 0..k {
            let coef = u[i * k + r] * s;
            for j in 0..n {
                out[i * n + j] += coef * vt[r * n + j];
            }
        }
    }
    out
}

/// Ball heights `round(sqrt(r^2 - dx^2 - dy^2))` on the disc `dx^2 + dy^2 <= r^2`.
pub fn ball_height(radius: usize, dx: isize, dy: isize) -> Option<f32> {
    let r2 = (radius * radius) as isize;
    let d2 = dx * dx + dy * dy;
    (d2 <= r2).then(|| ((r2 - d2) as f64).sqrt().round() as f32)
}

/// Grayscale opening by the ball, evaluated pixel by pixel.
pub fn opening_oracle(frame: &[f32], w: usize, h: usize, radius: usize) -> Vec<f32> {
    let r = radius as isize;
    let at = |x: isize, y: isize| -> Option<usize> {
        (x >= 0 && y >= 0 && x < w as isize && y < h as isize).then(|| y as usize * w + x as usize)
    };
    let mut eroded = vec![0.0f32; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut m = f32::INFINITY;
            for dy in -r..=r {
                for dx in -r..=r {
                    if let (Some(hgt), Some(i)) = (ball_height(radius, dx, dy), at(x + dx, y + dy)) {
                        m = m.min(frame[i] - hgt);
                    }
                }
            }
            eroded[at(x, y).unwrap()] = m;
        }
    }
    let mut opened = vec![0.0f32; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut m = f32::NEG_INFINITY;
            for dy in -r..=r {
                for dx in -r..=r {
                    if let (Some(hgt), Some(i)) = (ball_height(radius, dx, dy), at(x - dx, y - dy)) {
                        m = m.max(eroded[i] + hgt);
                    }
                }
            }
            opened[at(x, y).unwrap()] = m;
        }
    }
    opened
}

/// Median by full sort; mean of the central pair for even counts.
pub fn median_oracle(values: &[f32]) -> f32 {
    let mut v: Vec<f64> = values.iter().map(|&x| x as f64).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f32
    } else {
        ((v[n / 2 - 1] + v[n / 2]) / 2.0) as f32
    }
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> FlatMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    FlatMatrix::new(rows, cols, data).unwrap()
}

/// Central finite difference `(f(p + h) - f(p - h)) / 2h`.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, p: f64, h: f64) -> f64 {
    (f(p + h) - f(p - h)) / (2.0 * h)
}
