//! Robust PCA, `min ‖L‖_* + λ‖S‖_1  s.t.  L + S = M`, solved by the inexact
//! augmented Lagrange multiplier method.
//!
//! Used as the convex reference for the learned decomposition and as a
//! non-learned backend. No sign constraint is imposed here; callers clamp when
//! converting back to image stacks.

use crate::error::{Error, Result};
use crate::linalg::{soft_threshold, svt_detailed, thin_svd_small_k};
use crate::stack::FlatMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RpcaConfig {
    pub lambda: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub rho: f64,
}

impl RpcaConfig {
    /// Defaults for an `rows x cols` problem: `λ = 1/sqrt(max(rows, cols))`.
    pub fn for_shape(rows: usize, cols: usize) -> Self {
        RpcaConfig {
            lambda: 1.0 / (rows.max(cols).max(1) as f64).sqrt(),
            tol: 1e-7,
            max_iter: 500,
            rho: 1.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::param("rpca lambda must be > 0"));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::param("rpca tol must lie in (0, 1)"));
        }
        if self.max_iter == 0 {
            return Err(Error::param("rpca max_iter must be >= 1"));
        }
        if !(self.rho > 1.0) {
            return Err(Error::param("rpca rho must be > 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RpcaResult {
    pub low_rank: FlatMatrix,
    pub sparse: FlatMatrix,
    pub iterations: usize,
    /// `‖M - L - S‖_F / ‖M‖_F` at the returned iterate.
    pub residual: f64,
    pub converged: bool,
    /// `‖L‖_* + λ‖S‖_1` after every iteration.
    pub objective: Vec<f64>,
}

pub fn rpca_ialm(m: &FlatMatrix, cfg: &RpcaConfig) -> Result<RpcaResult> {
    cfg.validate()?;
    if m.data().is_empty() {
        return Err(Error::Empty("rpca input"));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("rpca input"));
    }
    let norm_m = m.frobenius_norm();
    if norm_m == 0.0 {
        return Ok(RpcaResult {
            low_rank: m.like(vec![0.0; m.data().len()]),
            sparse: m.like(vec![0.0; m.data().len()]),
            iterations: 1,
            residual: 0.0,
            converged: true,
            objective: vec![0.0],
        });
    }

    let sigma_max = thin_svd_small_k(m)?.sigma[0];
    let dual_norm = sigma_max.max(m.max_abs() / cfg.lambda);
    let mut y = m.scale(1.0 / dual_norm);
    let mut penalty = 1.25 / sigma_max;
    let penalty_max = penalty * 1e7;

    let mut low = m.like(vec![0.0; m.data().len()]);
    let mut sparse = low.clone();
    let mut objective = Vec::new();
    let mut residual = f64::INFINITY;
    let mut iterations = 0;

    // (residual, L, S) of the best iterate seen, returned if we run out of budget.
    let mut best: Option<(f64, FlatMatrix, FlatMatrix)> = None;

    while iterations < cfg.max_iter {
        iterations += 1;
        let inv = 1.0 / penalty;

        // S-step: shrink M - L + Y/μ by λ/μ.
        let mut t = m.sub(&low)?;
        for (ti, yi) in t.data_mut().iter_mut().zip(y.data()) {
            *ti += yi * inv;
        }
        sparse = soft_threshold(&t, cfg.lambda * inv)?;

        // L-step: singular value shrinkage of M - S + Y/μ by 1/μ.
        let mut t = m.sub(&sparse)?;
        for (ti, yi) in t.data_mut().iter_mut().zip(y.data()) {
            *ti += yi * inv;
        }
        let shr = svt_detailed(&t, inv)?;
        low = shr.output;
        let nuclear: f64 = shr.shrunk.iter().sum();

        // Dual ascent on the constraint residual Z = M - L - S.
        let z = m.sub(&low)?.sub(&sparse)?;
        for (yi, zi) in y.data_mut().iter_mut().zip(z.data()) {
            *yi += penalty * zi;
        }
        penalty = (penalty * cfg.rho).min(penalty_max);

        residual = z.frobenius_norm() / norm_m;
        objective.push(nuclear + cfg.lambda * sparse.l1_norm());
        if !residual.is_finite() {
            return Err(Error::NotConverged(format!(
                "rpca residual became non-finite at iteration {}",
                iterations
            )));
        }
        if best.as_ref().is_none_or(|(r, _, _)| residual < *r) {
            best = Some((residual, low.clone(), sparse.clone()));
        }
        if residual <= cfg.tol {
            return Ok(RpcaResult {
                low_rank: low,
                sparse,
                iterations,
                residual,
                converged: true,
                objective,
            });
        }
    }

    let (residual, low_rank, sparse) = best.unwrap_or((residual, low, sparse));
    Ok(RpcaResult {
        low_rank,
        sparse,
        iterations,
        residual,
        converged: false,
        objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_input() {
        let m = FlatMatrix::zeros(3, 20);
        let r = rpca_ialm(&m, &RpcaConfig::for_shape(3, 20)).unwrap();
        assert_eq!(r.iterations, 1);
        assert_eq!(r.low_rank.max_abs(), 0.0);
        assert_eq!(r.sparse.max_abs(), 0.0);
    }

    #[test]
    fn uncorrupted_rank_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u: Vec<f64> = (0..5).map(|_| rng.random_range(0.5..1.5)).collect();
        let v: Vec<f64> = (0..300).map(|_| rng.random_range(0.5..1.5)).collect();
        let data: Vec<f64> = u.iter().flat_map(|&a| v.iter().map(move |&b| a * b)).collect();
        let m = FlatMatrix::new(5, 300, data).unwrap();
        let r = rpca_ialm(&m, &RpcaConfig::for_shape(5, 300)).unwrap();
        assert!(r.converged);
        assert!(r.residual <= 1e-7);
        assert!(r.sparse.max_abs() <= 1e-6 * m.max_abs(), "{}", r.sparse.max_abs());
        let err = r.low_rank.sub(&m).unwrap().frobenius_norm() / m.frobenius_norm();
        assert!(err < 1e-6, "{}", err);
    }

    #[test]
    fn rejects_bad_config_and_input() {
        let m = FlatMatrix::zeros(2, 2);
        let mut cfg = RpcaConfig::for_shape(2, 2);
        cfg.rho = 1.0;
        assert!(rpca_ialm(&m, &cfg).is_err());
        let mut bad = FlatMatrix::zeros(2, 2);
        bad.data_mut()[0] = f64::INFINITY;
        assert!(matches!(
            rpca_ialm(&bad, &RpcaConfig::for_shape(2, 2)),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn flags_non_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = FlatMatrix::new(4, 50, (0..200).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let mut cfg = RpcaConfig::for_shape(4, 50);
        cfg.max_iter = 2;
        let r = rpca_ialm(&m, &cfg).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 2);
    }
}
