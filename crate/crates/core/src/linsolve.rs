//! Matrix-free inner solvers for the Newton system `A p = b`.
//!
//! [`cg_solve`] stops on a relative residual test or an iteration cap;
//! [`cg_fixed`] always performs a prescribed number of steps. [`sgi_solve`]
//! is the semi-stochastic gradient iteration, which touches one random
//! component Hessian per step.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, mat_vec, norm};
use crate::objective::SampledHessian;

/// Default relative residual tolerance for inexact Newton-CG.
pub const DEFAULT_ZETA: f64 = 0.01;
/// Default cap on inner CG iterations.
pub const DEFAULT_MAX_CG: usize = 10;

/// Iterations between explicit residual recomputations.
const RESIDUAL_REFRESH: usize = 50;

/// A symmetric positive definite operator known only through products.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, p: &[f64]) -> Result<Vec<f64>>;
}

impl LinearOperator for SampledHessian<'_> {
    fn dim(&self) -> usize {
        SampledHessian::dim(self)
    }
    fn apply(&self, p: &[f64]) -> Result<Vec<f64>> {
        SampledHessian::apply(self, p)
    }
}

impl LinearOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }
    fn apply(&self, p: &[f64]) -> Result<Vec<f64>> {
        Ok(mat_vec(self, p))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CgStop {
    ResidualTest,
    MaxIters,
    ExactDim,
}

#[derive(Debug, Clone)]
pub struct CgReport {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// `|b - A p_j|` for `j = 0..=iterations`.
    pub residual_norms: Vec<f64>,
    pub stop_reason: CgStop,
    /// Operator applications, including residual recomputations.
    pub operator_applies: usize,
}

/// CG from `p0 = 0`, stopping at the first `j` with `|A p_j - b| <= zeta |b|`,
/// at `j = max_iters`, or at `j = dim`.
pub fn cg_solve<A: LinearOperator + ?Sized>(
    a: &A,
    b: &[f64],
    zeta: f64,
    max_iters: usize,
) -> Result<CgReport> {
    if !(zeta > 0.0 && zeta < 1.0) {
        return Err(Error::InvalidArgument(format!("zeta {zeta} not in (0, 1)")));
    }
    if max_iters == 0 {
        return Err(Error::InvalidArgument("max_iters must be >= 1".into()));
    }
    cg_core(a, b, Some(zeta), max_iters)
}

/// CG from `p0 = 0` for exactly `r` steps (or `dim` steps if smaller).
pub fn cg_fixed<A: LinearOperator + ?Sized>(a: &A, b: &[f64], r: usize) -> Result<CgReport> {
    if r == 0 {
        return Err(Error::InvalidArgument("fixed CG needs r >= 1".into()));
    }
    cg_core(a, b, None, r)
}

fn residual<A: LinearOperator + ?Sized>(a: &A, b: &[f64], p: &[f64]) -> Result<Vec<f64>> {
    let ap = a.apply(p)?;
    Ok(b.iter().zip(&ap).map(|(bi, ai)| bi - ai).collect())
}

fn cg_core<A: LinearOperator + ?Sized>(
    a: &A,
    b: &[f64],
    zeta: Option<f64>,
    max_iters: usize,
) -> Result<CgReport> {
    let n = a.dim();
    if b.len() != n {
        return Err(Error::InvalidArgument(format!(
            "right-hand side has length {}, operator dimension {n}",
            b.len()
        )));
    }
    let b_norm = norm(b);
    if !(b_norm > 0.0 && b_norm.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "right-hand side norm must be positive and finite (got {b_norm:e})"
        )));
    }
    let tol = zeta.map(|z| z * b_norm);
    let mut p = vec![0.0; n];
    let mut r = b.to_vec();
    let mut d = r.clone();
    let mut rr = dot(&r, &r);
    let mut residual_norms = vec![b_norm];
    let mut applies = 0usize;
    let mut j = 0usize;

    let stop = loop {
        let ad = a.apply(&d)?;
        applies += 1;
        let dad = dot(&d, &ad);
        if !(dad > 0.0 && dad.is_finite()) {
            return Err(Error::CgBreakdown {
                iteration: j + 1,
                reason: format!("curvature d'Ad = {dad:e}"),
            });
        }
        let alpha = rr / dad;
        axpy(alpha, &d, &mut p);
        axpy(-alpha, &ad, &mut r);
        j += 1;
        if j.is_multiple_of(RESIDUAL_REFRESH) {
            r = residual(a, b, &p)?;
            applies += 1;
        }
        let mut r_norm = norm(&r);
        if !r_norm.is_finite() {
            return Err(Error::CgBreakdown {
                iteration: j,
                reason: "non-finite residual".into(),
            });
        }
        if let Some(tol) = tol {
            if r_norm <= tol {
                // confirm against the true residual before trusting the
                // recurrence
                let r_true = residual(a, b, &p)?;
                applies += 1;
                let true_norm = norm(&r_true);
                if true_norm <= tol {
                    residual_norms.push(true_norm);
                    break CgStop::ResidualTest;
                }
                r = r_true;
                r_norm = true_norm;
            }
        }
        residual_norms.push(r_norm);
        if r_norm == 0.0 {
            break CgStop::ResidualTest;
        }
        if j >= n {
            break CgStop::ExactDim;
        }
        if j >= max_iters {
            break CgStop::MaxIters;
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for (di, ri) in d.iter_mut().zip(&r) {
            *di = ri + beta * *di;
        }
    };

    Ok(CgReport {
        solution: p,
        iterations: j,
        residual_norms,
        stop_reason: stop,
        operator_applies: applies,
    })
}

/// Worst-case CG contraction of the A-norm error after `r` steps,
/// `2 ((sqrt(kappa) - 1) / (sqrt(kappa) + 1))^r`.
pub fn cg_worst_case_bound(kappa: f64, r: usize) -> f64 {
    let s = kappa.max(1.0).sqrt();
    2.0 * ((s - 1.0) / (s + 1.0)).powi(r as i32)
}

/// Parameters of the semi-stochastic gradient iteration.
#[derive(Debug, Clone, Copy)]
pub struct SgiParams {
    pub iterations: usize,
    pub alpha: f64,
    /// Regularizer of the objective; sets the divergence threshold
    /// `1e6 |b| / lambda`.
    pub lambda: f64,
}

/// `p_{t+1} = p_t + alpha (b - H_i p_t)` from `p_0 = 0`, with `i` uniform on
/// `0..pool` at each step and `b = -grad R(w)`.
pub fn sgi_solve<F, R>(
    mut component_hv: F,
    pool: usize,
    b: &[f64],
    params: SgiParams,
    rng: &mut R,
) -> Result<Vec<f64>>
where
    F: FnMut(usize, &[f64]) -> Result<Vec<f64>>,
    R: Rng + ?Sized,
{
    if params.iterations == 0 {
        return Err(Error::InvalidArgument("SGI needs at least one iteration".into()));
    }
    if !(params.alpha > 0.0 && params.alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "SGI step length must be positive (got {})",
            params.alpha
        )));
    }
    if pool == 0 {
        return Err(Error::InvalidArgument("SGI sample pool is empty".into()));
    }
    let threshold = 1e6 * norm(b) / params.lambda;
    let mut p = vec![0.0; b.len()];
    for t in 0..params.iterations {
        let i = rng.random_range(0..pool);
        let hp = component_hv(i, &p)?;
        for ((pj, bj), hj) in p.iter_mut().zip(b).zip(&hp) {
            *pj += params.alpha * (bj - hj);
        }
        let pn = norm(&p);
        if !pn.is_finite() || pn > threshold {
            return Err(Error::SgiDivergence {
                step: t + 1,
                norm: pn,
                threshold,
            });
        }
    }
    Ok(p)
}

/// Inner SGI steps matching the Hessian-vector work of `max_cg` CG
/// iterations on a sample of size `beta`.
pub fn sgi_iteration_budget(beta: usize, max_cg: usize) -> Result<usize> {
    if beta == 0 || max_cg == 0 {
        return Err(Error::InvalidArgument(format!(
            "beta and max_cg must be >= 1 (got {beta}, {max_cg})"
        )));
    }
    beta.checked_mul(max_cg)
        .ok_or_else(|| Error::InvalidArgument("SGI iteration budget overflows".into()))
}

/// The step-length grid `2^-20, ..., 2^3` scanned for unscaled data.
pub fn sgi_alpha_grid() -> Vec<f64> {
    (-20..=3).map(|e| 2f64.powi(e)).collect()
}
