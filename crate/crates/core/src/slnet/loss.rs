//! Training objective.
//!
//! With `L~ = svt(L_hat, mu)`, `S = max(M - L~, 0)` and `R = min(M - L~, 0)`:
//!
//! ```text
//! total = mean|M - L~| + alpha * mean(S) + mean|R|
//! ```
//!
//! Since `|x| = max(x, 0) + |min(x, 0)|`, the data term always equals
//! `mean(S) + mean|R|`.

use crate::error::{Error, Result};
use crate::linalg::{svt_detailed, Shrinkage};
use crate::stack::FlatMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub total: f64,
    /// `mean|M - L~|`
    pub data: f64,
    /// `alpha * mean(S)`
    pub sparse: f64,
    /// `mean|R|`
    pub residual: f64,
}

/// How the gradient passes through the singular value shrinkage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientPolicy {
    /// Identity Jacobian.
    #[default]
    StraightThrough,
    /// Project onto the tangent space of the retained singular subspace.
    Subspace,
}

impl GradientPolicy {
    pub fn name(self) -> &'static str {
        match self {
            GradientPolicy::StraightThrough => "straight-through",
            GradientPolicy::Subspace => "subspace",
        }
    }
}

impl std::str::FromStr for GradientPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "straight-through" | "straight" | "ste" => Ok(GradientPolicy::StraightThrough),
            "subspace" => Ok(GradientPolicy::Subspace),
            other => Err(Error::param(format!("unknown gradient policy '{}'", other))),
        }
    }
}

fn check(m: &FlatMatrix, l_hat: &FlatMatrix, mu: f64, alpha: f64) -> Result<()> {
    if m.rows() != l_hat.rows() || m.cols() != l_hat.cols() {
        return Err(Error::Shape(format!(
            "raw window {}x{} vs network output {}x{}",
            m.rows(),
            m.cols(),
            l_hat.rows(),
            l_hat.cols()
        )));
    }
    if !(mu >= 0.0) || !(alpha >= 0.0) {
        return Err(Error::param("mu and alpha must be >= 0"));
    }
    Ok(())
}

fn shrink(l_hat: &FlatMatrix, mu: f64) -> Result<(FlatMatrix, Option<Shrinkage>)> {
    if mu == 0.0 {
        if !l_hat.is_finite() {
            return Err(Error::NonFinite("network output"));
        }
        Ok((l_hat.clone(), None))
    } else {
        let s = svt_detailed(l_hat, mu)?;
        Ok((s.output.clone(), Some(s)))
    }
}

fn terms_of(m: &FlatMatrix, l_tilde: &FlatMatrix, alpha: f64) -> LossTerms {
    let n = m.data().len() as f64;
    let (mut abs, mut pos, mut neg) = (0.0, 0.0, 0.0);
    for (&a, &b) in m.data().iter().zip(l_tilde.data()) {
        let d = a - b;
        abs += d.abs();
        if d > 0.0 {
            pos += d;
        } else {
            neg -= d;
        }
    }
    let data = abs / n;
    let sparse = alpha * pos / n;
    let residual = neg / n;
    LossTerms {
        total: data + sparse + residual,
        data,
        sparse,
        residual,
    }
}

pub fn loss(m: &FlatMatrix, l_hat: &FlatMatrix, mu: f64, alpha: f64) -> Result<LossTerms> {
    check(m, l_hat, mu, alpha)?;
    let (l_tilde, _) = shrink(l_hat, mu)?;
    Ok(terms_of(m, &l_tilde, alpha))
}

/// Loss and its gradient with respect to the network output `L_hat`.
pub fn loss_and_gradient(
    m: &FlatMatrix,
    l_hat: &FlatMatrix,
    mu: f64,
    alpha: f64,
    policy: GradientPolicy,
) -> Result<(LossTerms, Vec<f64>)> {
    check(m, l_hat, mu, alpha)?;
    let (l_tilde, shrinkage) = shrink(l_hat, mu)?;
    let terms = terms_of(m, &l_tilde, alpha);
    let mut grad = residual_gradient(m, &l_tilde, alpha);
    if let (GradientPolicy::Subspace, Some(s)) = (policy, shrinkage.as_ref()) {
        grad = project_tangent(&grad, s, mu, m.rows(), m.cols());
    }
    Ok((terms, grad))
}

/// d(total)/d(L~), elementwise; subgradient 0 at exact ties.
pub fn residual_gradient(m: &FlatMatrix, l_tilde: &FlatMatrix, alpha: f64) -> Vec<f64> {
    let n = m.data().len() as f64;
    let up = -(1.0 + alpha) / n;
    let down = 2.0 / n;
    m.data()
        .iter()
        .zip(l_tilde.data())
        .map(|(&a, &b)| {
            if a > b {
                up
            } else if a < b {
                down
            } else {
                0.0
            }
        })
        .collect()
}

/// `P_U G + G P_V - P_U G P_V` over the singular vectors whose values survive
/// the shrinkage.
fn project_tangent(g: &[f64], s: &Shrinkage, mu: f64, k: usize, cols: usize) -> Vec<f64> {
    let kept: Vec<usize> = (0..s.svd.k()).filter(|&i| s.svd.sigma[i] > mu).collect();
    if kept.is_empty() {
        return vec![0.0; g.len()];
    }
    let row = |i: usize| &g[i * cols..(i + 1) * cols];

    // Left projection: (U_r U_rᵀ) G.
    let mut pu = vec![0.0; k * k];
    for &i in &kept {
        for r in 0..k {
            for c in 0..k {
                pu[r * k + c] += s.svd.u_at(r, i) * s.svd.u_at(c, i);
            }
        }
    }
    let mut left = vec![0.0; g.len()];
    for r in 0..k {
        for c in 0..k {
            let w = pu[r * k + c];
            if w != 0.0 {
                crate::linalg::axpy(w, row(c), &mut left[r * cols..(r + 1) * cols]);
            }
        }
    }
    // Right projection of A: A V_rᵀ V_r, row by row.
    let right_of = |a: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; a.len()];
        for r in 0..k {
            let ar = &a[r * cols..(r + 1) * cols];
            for &i in &kept {
                let v = s.svd.vt.row(i);
                let coef = crate::linalg::dot(ar, v);
                crate::linalg::axpy(coef, v, &mut out[r * cols..(r + 1) * cols]);
            }
        }
        out
    };
    let gv = right_of(g);
    let ugv = right_of(&left);
    left.iter().zip(&gv).zip(&ugv).map(|((a, b), c)| a + b - c).collect()
}
