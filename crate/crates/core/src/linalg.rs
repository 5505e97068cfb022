//! Small-k singular value decomposition and the shrinkage operators built on it.
//!
//! All matrices here are short and wide (k rows, m*n columns, k small), so the
//! SVD goes through the k x k Gram matrix `X Xᵀ`: its eigenvectors are the left
//! singular vectors and its eigenvalues the squared singular values.

use crate::error::{Error, Result};
use crate::stack::FlatMatrix;

/// Largest row count accepted by [`thin_svd_small_k`].
pub const MAX_SMALL_K: usize = 64;

#[derive(Debug, Clone)]
pub struct ThinSvd {
    /// k x k, row-major; column i is the i-th left singular vector.
    pub u: Vec<f64>,
    /// Descending, non-negative.
    pub sigma: Vec<f64>,
    /// k x (m*n); rows for zero singular values are zero.
    pub vt: FlatMatrix,
}

impl ThinSvd {
    pub fn k(&self) -> usize {
        self.sigma.len()
    }

    #[inline]
    pub fn u_at(&self, row: usize, col: usize) -> f64 {
        self.u[row * self.k() + col]
    }

    /// `U diag(sigma) Vt`.
    pub fn reconstruct(&self) -> FlatMatrix {
        let k = self.k();
        let mut out = self.vt.like(vec![0.0; self.vt.data().len()]);
        for r in 0..k {
            let dst = out.row_mut(r);
            for i in 0..k {
                let c = self.u_at(r, i) * self.sigma[i];
                if c != 0.0 {
                    axpy(c, self.vt.row(i), dst);
                }
            }
        }
        out
    }

    /// Number of singular values strictly above `threshold`.
    pub fn rank_above(&self, threshold: f64) -> usize {
        self.sigma.iter().filter(|&&s| s > threshold).count()
    }
}

#[inline]
pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `X Xᵀ` as a dense row-major k x k matrix.
pub fn gram(x: &FlatMatrix) -> Vec<f64> {
    let k = x.rows();
    let mut g = vec![0.0; k * k];
    for i in 0..k {
        for j in i..k {
            let v = dot(x.row(i), x.row(j));
            g[i * k + j] = v;
            g[j * k + i] = v;
        }
    }
    g
}

/// Eigendecomposition of a symmetric n x n matrix by cyclic Jacobi rotations.
///
/// Returns `(eigenvalues, eigenvectors)` with eigenvector i stored in column i
/// of the row-major result. Order is whatever the rotations leave on the diagonal.
pub fn symmetric_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(a.len(), n * n);
    let mut a = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        return (vec![0.0; n], v);
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off.sqrt() <= 1e-17 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eig = (0..n).map(|i| a[i * n + i]).collect();
    (eig, v)
}

/// Thin SVD of a short, wide matrix via the eigendecomposition of `X Xᵀ`.
///
/// Gram eigenvalues at or below `k * eps * sigma_max^2` are treated as exact
/// zeros and their `Vt` rows left zero.
pub fn thin_svd_small_k(x: &FlatMatrix) -> Result<ThinSvd> {
    let k = x.rows();
    if k == 0 || x.cols() == 0 {
        return Err(Error::Empty("matrix"));
    }
    if k > MAX_SMALL_K {
        return Err(Error::param(format!(
            "small-k SVD supports at most {} rows, got {}",
            MAX_SMALL_K, k
        )));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("SVD input"));
    }
    let g = gram(x);
    let (eig, vecs) = symmetric_eigen(&g, k);

    // Stable sort keeps the original eigenvector order on ties.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig[b].total_cmp(&eig[a]));

    let lambda_max = eig[order[0]].max(0.0);
    let cutoff = k as f64 * f64::EPSILON * lambda_max;

    let mut u = vec![0.0; k * k];
    let mut sigma = vec![0.0; k];
    let mut vt = x.like(vec![0.0; x.data().len()]);
    for (dst, &src) in order.iter().enumerate() {
        for r in 0..k {
            u[r * k + dst] = vecs[r * k + src];
        }
        let lambda = eig[src];
        if lambda <= cutoff || lambda_max == 0.0 {
            continue;
        }
        let s = lambda.sqrt();
        sigma[dst] = s;
        let row = vt.row_mut(dst);
        for r in 0..k {
            let c = vecs[r * k + src] / s;
            if c != 0.0 {
                axpy(c, x.row(r), row);
            }
        }
    }
    Ok(ThinSvd { u, sigma, vt })
}

/// Singular value thresholding together with the decomposition it used.
#[derive(Debug, Clone)]
pub struct Shrinkage {
    pub svd: ThinSvd,
    /// Shrunk singular values `sign(s) * max(|s| - mu, 0)`.
    pub shrunk: Vec<f64>,
    pub output: FlatMatrix,
}

/// `U [sign(S) max(|S| - mu, 0)] Vt` where `X = U S Vt`.
pub fn svt(x: &FlatMatrix, mu: f64) -> Result<FlatMatrix> {
    if !(mu >= 0.0) {
        return Err(Error::param(format!("shrinkage threshold must be >= 0, got {}", mu)));
    }
    if mu == 0.0 {
        if !x.is_finite() {
            return Err(Error::NonFinite("SVT input"));
        }
        return Ok(x.clone());
    }
    Ok(svt_detailed(x, mu)?.output)
}

/// [`svt`] that also returns the SVD and the shrunk spectrum.
pub fn svt_detailed(x: &FlatMatrix, mu: f64) -> Result<Shrinkage> {
    if !(mu >= 0.0) {
        return Err(Error::param(format!("shrinkage threshold must be >= 0, got {}", mu)));
    }
    let svd = thin_svd_small_k(x)?;
    let k = svd.k();
    let shrunk: Vec<f64> = svd
        .sigma
        .iter()
        .map(|&s| s.signum() * (s.abs() - mu).max(0.0))
        .collect();
    // Written as C X with C = sum_i (shrunk_i / s_i) u_i u_iᵀ, which equals
    // U diag(shrunk) Vt for the retained components and avoids forming Vt twice.
    let mut c = vec![0.0; k * k];
    for (i, (&sh, &sigma)) in shrunk.iter().zip(&svd.sigma).enumerate() {
        if sigma == 0.0 || sh == 0.0 {
            continue;
        }
        let w = sh / sigma;
        for r in 0..k {
            for s in 0..k {
                c[r * k + s] += w * svd.u_at(r, i) * svd.u_at(s, i);
            }
        }
    }
    let mut out = x.like(vec![0.0; x.data().len()]);
    for r in 0..k {
        let dst = out.row_mut(r);
        for s in 0..k {
            let w = c[r * k + s];
            if w != 0.0 {
                axpy(w, x.row(s), dst);
            }
        }
    }
    Ok(Shrinkage {
        svd,
        shrunk,
        output: out,
    })
}

/// Elementwise `sign(x) max(|x| - tau, 0)`.
pub fn soft_threshold(x: &FlatMatrix, tau: f64) -> Result<FlatMatrix> {
    if !(tau >= 0.0) {
        return Err(Error::param(format!("soft threshold must be >= 0, got {}", tau)));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("soft-threshold input"));
    }
    Ok(x.like(x.data().iter().map(|&v| shrink_scalar(v, tau)).collect()))
}

#[inline]
pub fn shrink_scalar(v: f64, tau: f64) -> f64 {
    if v > tau {
        v - tau
    } else if v < -tau {
        v + tau
    } else {
        0.0
    }
}

pub fn nuclear_norm(x: &FlatMatrix) -> Result<f64> {
    Ok(thin_svd_small_k(x)?.sigma.iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> FlatMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FlatMatrix::new(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    fn frob_diff(a: &FlatMatrix, b: &FlatMatrix) -> f64 {
        a.sub(b).unwrap().frobenius_norm()
    }

    #[test]
    fn jacobi_diagonalizes() {
        let a = vec![4.0, 1.0, 2.0, 1.0, 3.0, 0.5, 2.0, 0.5, 1.0];
        let (eig, v) = symmetric_eigen(&a, 3);
        for i in 0..3 {
            for r in 0..3 {
                let av: f64 = (0..3).map(|c| a[r * 3 + c] * v[c * 3 + i]).sum();
                assert!((av - eig[i] * v[r * 3 + i]).abs() < 1e-12);
            }
        }
        let trace: f64 = eig.iter().sum();
        assert!((trace - 8.0).abs() < 1e-12);
    }

    #[test]
    fn rank_one_outer_product() {
        let u = [1.0, -2.0, 2.0];
        let v: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let data: Vec<f64> = u.iter().flat_map(|&a| v.iter().map(move |&b| a * b)).collect();
        let x = FlatMatrix::new(3, 50, data).unwrap();
        let svd = thin_svd_small_k(&x).unwrap();
        let nu = 3.0;
        let nv = v.iter().map(|b| b * b).sum::<f64>().sqrt();
        assert!((svd.sigma[0] - nu * nv).abs() < 1e-10 * nu * nv);
        assert_eq!(svd.sigma[1], 0.0);
        assert_eq!(svd.sigma[2], 0.0);
        assert!(frob_diff(&svd.reconstruct(), &x) < 1e-10 * x.frobenius_norm());
    }

    #[test]
    fn zero_matrix() {
        let x = FlatMatrix::zeros(3, 10);
        let svd = thin_svd_small_k(&x).unwrap();
        assert!(svd.sigma.iter().all(|&s| s == 0.0));
        assert_eq!(svt(&x, 1.0).unwrap(), x);
    }

    #[test]
    fn invariants_on_random() {
        for seed in 0..20 {
            let x = random(3, 200, seed);
            let svd = thin_svd_small_k(&x).unwrap();
            assert!(svd.sigma.windows(2).all(|w| w[0] >= w[1]));
            assert!(svd.sigma.iter().all(|&s| s >= 0.0));
            for i in 0..3 {
                for j in 0..3 {
                    let utu: f64 = (0..3).map(|r| svd.u_at(r, i) * svd.u_at(r, j)).sum();
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((utu - expect).abs() < 1e-10);
                }
            }
            assert!(frob_diff(&svd.reconstruct(), &x) <= 1e-8 * x.frobenius_norm());
        }
    }

    #[test]
    fn rejects_bad_input() {
        let mut x = random(3, 5, 1);
        x.data_mut()[2] = f64::NAN;
        assert!(matches!(thin_svd_small_k(&x), Err(Error::NonFinite(_))));
        assert!(matches!(svt(&random(2, 3, 0), -1.0), Err(Error::InvalidParam(_))));
        assert!(thin_svd_small_k(&random(65, 2, 0)).is_err());
    }

    #[test]
    fn svt_zero_mu_is_identity() {
        let x = random(3, 100, 7);
        assert_eq!(svt(&x, 0.0).unwrap(), x);
        // The detailed path goes through the decomposition and agrees to rounding.
        let d = svt_detailed(&x, 0.0).unwrap();
        assert!(frob_diff(&d.output, &x) < 1e-12 * x.frobenius_norm());
    }

    #[test]
    fn svt_large_mu_is_zero() {
        let x = random(3, 100, 8);
        let smax = thin_svd_small_k(&x).unwrap().sigma[0];
        let y = svt(&x, smax).unwrap();
        assert!(y.max_abs() == 0.0);
    }

    #[test]
    fn svt_diag_embedded() {
        let x = FlatMatrix::new(2, 4, vec![5.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let y = svt(&x, 2.0).unwrap();
        let s = thin_svd_small_k(&y).unwrap().sigma;
        assert!((s[0] - 3.0).abs() < 1e-12);
        assert!(s[1].abs() < 1e-12);
        let expect = [3.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        for (a, b) in y.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn soft_threshold_examples() {
        let x = FlatMatrix::new(1, 3, vec![5.0, -5.0, 1.0]).unwrap();
        assert_eq!(soft_threshold(&x, 2.0).unwrap().data(), &[3.0, -3.0, 0.0]);
        assert_eq!(soft_threshold(&x, 0.0).unwrap(), x);
    }

    #[test]
    fn soft_threshold_l1_matches_summation() {
        let x = random(4, 250, 3);
        let tau = 0.3;
        let y = soft_threshold(&x, tau).unwrap();
        let mut direct = 0.0;
        for &v in x.data() {
            let m = v.abs() - tau;
            if m > 0.0 {
                direct += m;
            }
        }
        assert!((y.l1_norm() - direct).abs() < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn svt_is_non_expansive(seed in any::<u64>(), mu in 0.0f64..3.0) {
            let x = random(3, 40, seed);
            let y = random(3, 40, seed ^ 0xdead_beef);
            let d_out = frob_diff(&svt(&x, mu).unwrap(), &svt(&y, mu).unwrap());
            prop_assert!(d_out <= frob_diff(&x, &y) + 1e-10);
        }

        #[test]
        fn svt_composes(seed in any::<u64>(), a in 0.0f64..1.5, b in 0.0f64..1.5) {
            let x = random(3, 60, seed);
            let s0 = thin_svd_small_k(&x).unwrap().sigma;
            let twice = svt(&svt(&x, a).unwrap(), b).unwrap();
            let s2 = thin_svd_small_k(&twice).unwrap().sigma;
            for (orig, got) in s0.iter().zip(&s2) {
                prop_assert!((got - (orig - a - b).max(0.0)).abs() < 1e-9);
            }
        }

        #[test]
        fn svt_output_spectrum(seed in any::<u64>(), mu in 0.0f64..4.0) {
            let x = random(3, 30, seed);
            let s0 = thin_svd_small_k(&x).unwrap().sigma;
            let y = svt(&x, mu).unwrap();
            let s1 = thin_svd_small_k(&y).unwrap().sigma;
            for (orig, got) in s0.iter().zip(&s1) {
                prop_assert!((got - (orig - mu).max(0.0)).abs() < 1e-9);
            }
            prop_assert!(s1.iter().filter(|&&s| s > 1e-9).count() <= s0.iter().filter(|&&s| s > 1e-9).count());
        }

        #[test]
        fn soft_threshold_commutes_with_sign_flip(seed in any::<u64>(), tau in 0.0f64..1.0) {
            let x = random(2, 20, seed);
            let neg = x.scale(-1.0);
            let a = soft_threshold(&neg, tau).unwrap();
            let b = soft_threshold(&x, tau).unwrap().scale(-1.0);
            prop_assert_eq!(a, b);
        }
    }
}
