//! Empirical estimates of the problem constants and every derived quantity
//! used by the convergence theory: rates, sample sizes, CG step counts and
//! complexity comparisons.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{distance, dot, norm, symmetric_extremes, symmetric_norm};
use crate::objective::{curvature, IndexSet, LogisticObjective, DENSE_LIMIT};
use crate::optimize::{Method, RunRecord};

/// Estimated constants. All values are empirical bounds over probes and
/// trials; none is certified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    pub mu: f64,
    pub l: f64,
    pub mu_beta: f64,
    pub l_beta: f64,
    pub mu_bar: f64,
    pub l_bar: f64,
    pub v: f64,
    pub sigma: f64,
    pub m: f64,
    pub gamma: f64,
    pub beta: usize,
    pub n: usize,
    pub d: usize,
}

impl TheoryConstants {
    pub fn kappa(&self) -> f64 {
        self.l / self.mu
    }

    pub fn kappa_hat(&self) -> f64 {
        self.l_bar / self.mu
    }

    pub fn kappa_hat_max(&self) -> f64 {
        self.l_bar / self.mu_bar
    }

    pub fn delta(&self) -> f64 {
        self.l_beta / self.mu_beta
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [self.mu, self.l, self.mu_beta, self.l_beta, self.mu_bar, self.l_bar];
        let nonneg = [self.v, self.sigma, self.m];
        if pos.iter().any(|x| !(x.is_finite() && *x > 0.0))
            || nonneg.iter().any(|x| !(x.is_finite() && *x >= 0.0))
            || !(self.gamma > 0.0)
        {
            return Err(Error::InvalidArgument(format!(
                "theory constants must be finite and positive: {self:?}"
            )));
        }
        if self.mu > self.l * (1.0 + 1e-12) || self.mu_beta > self.l_beta * (1.0 + 1e-12) {
            return Err(Error::InvalidArgument("need mu <= L and mu_beta <= L_beta".into()));
        }
        Ok(())
    }
}

/// Access to sampled Hessians for spectral estimation.
pub trait HessianSource {
    fn pool(&self) -> usize;
    fn dim(&self) -> usize;
    fn sampled_hessian(&self, w: &[f64], sample: &IndexSet) -> Result<DMatrix<f64>>;
    fn sampled_hv(&self, w: &[f64], sample: &IndexSet, p: &[f64]) -> Result<Vec<f64>>;
    /// Extreme eigenvalues of a single component Hessian, when cheaper than
    /// a dense eigensolve.
    fn component_extremes(&self, _w: &[f64], _i: usize) -> Option<(f64, f64)> {
        None
    }
}

impl HessianSource for LogisticObjective {
    fn pool(&self) -> usize {
        self.len()
    }

    fn dim(&self) -> usize {
        LogisticObjective::dim(self)
    }

    fn sampled_hessian(&self, w: &[f64], sample: &IndexSet) -> Result<DMatrix<f64>> {
        self.dense_hessian(w, sample)
    }

    fn sampled_hv(&self, w: &[f64], sample: &IndexSet, p: &[f64]) -> Result<Vec<f64>> {
        self.hessian_vector(w, sample, p)
    }

    // s x x' + lambda I has eigenvalues s |x|^2 + lambda and lambda (d > 1)
    fn component_extremes(&self, w: &[f64], i: usize) -> Option<(f64, f64)> {
        let s = curvature(self.margin(i, w));
        let top = s * self.data().features.row_sq_norm(i) + self.lambda();
        let bottom = if LogisticObjective::dim(self) > 1 {
            self.lambda()
        } else {
            top
        };
        Some((bottom, top))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub mu_beta: f64,
    pub l_beta: f64,
    pub mu: f64,
    pub l: f64,
    pub mu_bar: f64,
    pub l_bar: f64,
    /// Whether the power-iteration path was used.
    pub iterative: bool,
}

/// Power iteration for the extreme eigenvalues of a symmetric positive
/// semidefinite operator; the smallest comes from the shifted operator
/// `L I - A`.
pub fn power_extremes<F>(mut apply: F, d: usize, iters: usize, tol: f64, rng: &mut dyn RngCore) -> Result<(f64, f64)>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let top_eig = |shift: Option<f64>, apply: &mut F, rng: &mut dyn RngCore| -> Result<f64> {
        let mut x: Vec<f64> = (0..d).map(|_| rng.random::<f64>() - 0.5).collect();
        let nx = norm(&x);
        x.iter_mut().for_each(|v| *v /= nx);
        let mut lam = 0.0;
        for _ in 0..iters {
            let mut y = apply(&x)?;
            if let Some(s) = shift {
                y.iter_mut().zip(&x).for_each(|(yi, xi)| *yi = s * xi - *yi);
            }
            let next = dot(&x, &y);
            let ny = norm(&y);
            if !ny.is_finite() {
                return Err(Error::Eigen("non-finite power iterate".into()));
            }
            if ny == 0.0 {
                return Ok(0.0);
            }
            x = y.into_iter().map(|v| v / ny).collect();
            if (next - lam).abs() <= tol * next.abs().max(1e-300) {
                return Ok(next);
            }
            lam = next;
        }
        Err(Error::Eigen(format!("power iteration did not converge in {iters} steps")))
    };
    let l = top_eig(None, &mut apply, rng)?;
    let shifted = top_eig(Some(l), &mut apply, rng)?;
    Ok(((l - shifted).max(0.0), l))
}

/// Extreme Hessian eigenvalues at the probe points: over the full pool, over
/// `trials` random samples of size `beta`, and over all singletons.
pub fn estimate_spectrum<H: HessianSource + ?Sized>(
    obj: &H,
    probes: &[Vec<f64>],
    beta: usize,
    trials: usize,
    rng: &mut dyn RngCore,
) -> Result<Spectrum> {
    if trials == 0 || probes.is_empty() || beta == 0 {
        return Err(Error::InvalidArgument(
            "spectrum estimation needs probes, trials >= 1 and beta >= 1".into(),
        ));
    }
    let n = obj.pool();
    let d = obj.dim();
    let iterative = d > DENSE_LIMIT;
    let extremes = |w: &[f64], s: &IndexSet, rng: &mut dyn RngCore| -> Result<(f64, f64)> {
        if iterative {
            power_extremes(|p| obj.sampled_hv(w, s, p), d, 10_000, 1e-10, rng)
        } else {
            Ok(symmetric_extremes(&obj.sampled_hessian(w, s)?))
        }
    };
    let mut out = Spectrum {
        mu_beta: f64::INFINITY,
        l_beta: 0.0,
        mu: f64::INFINITY,
        l: 0.0,
        mu_bar: f64::INFINITY,
        l_bar: 0.0,
        iterative,
    };
    let full = IndexSet::full(n);
    for w in probes {
        let (lo, hi) = extremes(w, &full, rng)?;
        out.mu = out.mu.min(lo);
        out.l = out.l.max(hi);
        for _ in 0..trials {
            let s = if beta >= n {
                full.clone()
            } else {
                IndexSet::new(rand::seq::index::sample(rng, n, beta).into_vec(), false, n)?
            };
            let (lo, hi) = extremes(w, &s, rng)?;
            out.mu_beta = out.mu_beta.min(lo);
            out.l_beta = out.l_beta.max(hi);
        }
        for i in 0..n {
            let (lo, hi) = match obj.component_extremes(w, i) {
                Some(e) => e,
                None => extremes(w, &IndexSet::singleton(i), rng)?,
            };
            out.mu_bar = out.mu_bar.min(lo);
            out.l_bar = out.l_bar.max(hi);
        }
    }
    // uniform bounds cover every sample size
    out.mu_bar = out.mu_bar.min(out.mu_beta).min(out.mu);
    out.l_bar = out.l_bar.max(out.l_beta).max(out.l);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Variances {
    pub v: f64,
    pub sigma: f64,
    /// `sigma` is the trace upper bound rather than the dense eigenvalue.
    pub sigma_upper_bound: bool,
}

/// Gradient and Hessian variance bounds, maximized over the probes.
pub fn estimate_variances(obj: &LogisticObjective, probes: &[Vec<f64>]) -> Result<Variances> {
    if probes.is_empty() {
        return Err(Error::InvalidArgument("variance estimation needs probes".into()));
    }
    let n = obj.len();
    let d = obj.dim();
    let x = &obj.data().features;
    let y = &obj.data().labels;
    let dense = d <= DENSE_LIMIT;
    let mut v2: f64 = 0.0;
    let mut s2: f64 = 0.0;
    for w in probes {
        // component gradients are c_i x_i + lambda w; the shift cancels
        let coef: Vec<f64> = (0..n)
            .map(|i| -y[i] * crate::objective::sigmoid(-obj.margin(i, w)))
            .collect();
        let mut mean = vec![0.0; d];
        for (i, &c) in coef.iter().enumerate() {
            x.row_axpy(i, c, &mut mean);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut tr = 0.0;
        for (i, &c) in coef.iter().enumerate() {
            let mut g: Vec<f64> = mean.iter().map(|m| -m).collect();
            x.row_axpy(i, c, &mut g);
            tr += dot(&g, &g);
        }
        v2 = v2.max(tr / n as f64);

        let s: Vec<f64> = (0..n).map(|i| curvature(obj.margin(i, w))).collect();
        if dense {
            // (1/N) sum (A_i - H0)^2 = (1/N) sum A_i^2 - H0^2 with A_i = s_i x_i x_i'
            let mut h0 = DMatrix::<f64>::zeros(d, d);
            let mut e = DMatrix::<f64>::zeros(d, d);
            for (i, &si) in s.iter().enumerate() {
                let xi = nalgebra::DVector::from_vec(x.row_dense(i));
                let outer = &xi * xi.transpose();
                h0 += &outer * si;
                e += &outer * (si * si * x.row_sq_norm(i));
            }
            h0 /= n as f64;
            e /= n as f64;
            let m = e - &h0 * &h0;
            let m = (&m + m.transpose()) * 0.5;
            s2 = s2.max(symmetric_extremes(&m).1.max(0.0));
        } else {
            let bound: f64 = (0..n)
                .map(|i| (s[i] * x.row_sq_norm(i)).powi(2))
                .sum::<f64>()
                / n as f64;
            s2 = s2.max(bound);
        }
    }
    Ok(Variances {
        v: v2.sqrt(),
        sigma: s2.sqrt(),
        sigma_upper_bound: !dense,
    })
}

/// Largest observed `|H(w) - H(z)| / |w - z|` over the pairs; a lower bound
/// on the Hessian Lipschitz constant. Pairs with `w == z` are skipped.
pub fn estimate_lipschitz_m<H: HessianSource + ?Sized>(
    obj: &H,
    pairs: &[(Vec<f64>, Vec<f64>)],
    rng: &mut dyn RngCore,
) -> Result<f64> {
    let n = obj.pool();
    let d = obj.dim();
    let full = IndexSet::full(n);
    let mut m: f64 = 0.0;
    let mut used = 0usize;
    for (w, z) in pairs {
        let gap = distance(w, z);
        if gap == 0.0 {
            continue;
        }
        used += 1;
        let diff = if d <= DENSE_LIMIT {
            symmetric_norm(&(obj.sampled_hessian(w, &full)? - obj.sampled_hessian(z, &full)?))
        } else {
            // |A| for symmetric A is the square root of the top eigenvalue of A^2
            let apply = |p: &[f64]| -> Result<Vec<f64>> {
                let once = sub_hv(obj, w, z, &full, p)?;
                sub_hv(obj, w, z, &full, &once)
            };
            power_extremes(apply, d, 10_000, 1e-10, rng)?.1.sqrt()
        };
        m = m.max(diff / gap);
    }
    if used == 0 {
        return Err(Error::InvalidArgument("no probe pair with w != z".into()));
    }
    Ok(m)
}

fn sub_hv<H: HessianSource + ?Sized>(obj: &H, w: &[f64], z: &[f64], s: &IndexSet, p: &[f64]) -> Result<Vec<f64>> {
    let a = obj.sampled_hv(w, s, p)?;
    let b = obj.sampled_hv(z, s, p)?;
    Ok(a.iter().zip(&b).map(|(x, y)| x - y).collect())
}

/// `w_star`, `w0` and three uniformly random points on the segment between.
pub fn probe_set(w_star: &[f64], w0: &[f64], rng: &mut dyn RngCore) -> Vec<Vec<f64>> {
    let mut probes = vec![w_star.to_vec(), w0.to_vec()];
    for _ in 0..3 {
        let t: f64 = rng.random();
        probes.push(w_star.iter().zip(w0).map(|(a, b)| a + t * (b - a)).collect());
    }
    probes
}

/// Estimate every constant at the probe set built from `w_star` and `w0`.
pub fn estimate_constants(
    obj: &LogisticObjective,
    w_star: &[f64],
    w0: &[f64],
    beta: usize,
    trials: usize,
    gamma: f64,
    rng: &mut dyn RngCore,
) -> Result<(TheoryConstants, bool)> {
    let probes = probe_set(w_star, w0, rng);
    let spec = estimate_spectrum(obj, &probes, beta, trials, rng)?;
    let var = estimate_variances(obj, &probes)?;
    let mut pairs = Vec::new();
    for (i, a) in probes.iter().enumerate() {
        for b in &probes[i + 1..] {
            pairs.push((a.clone(), b.clone()));
        }
    }
    let m = if pairs.iter().any(|(a, b)| distance(a, b) > 0.0) {
        estimate_lipschitz_m(obj, &pairs, rng)?
    } else {
        0.0
    };
    let tc = TheoryConstants {
        mu: spec.mu,
        l: spec.l,
        mu_beta: spec.mu_beta,
        l_beta: spec.l_beta,
        mu_bar: spec.mu_bar,
        l_bar: spec.l_bar,
        v: var.v,
        sigma: var.sigma,
        m,
        gamma,
        beta: beta.min(obj.len()),
        n: obj.len(),
        d: obj.dim(),
    };
    Ok((tc, var.sigma_upper_bound))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearConstants {
    pub c: f64,
    pub rho_hat: f64,
    pub alpha_fixed: f64,
}

pub fn compute_linear_constants(tc: &TheoryConstants, eta: f64, f_gap0: f64) -> Result<LinearConstants> {
    if !(eta > 1.0) {
        return Err(Error::InvalidArgument(format!("eta must exceed 1 (got {eta})")));
    }
    let rho_hat = (1.0 - tc.mu * tc.mu_beta / (2.0 * tc.l * tc.l_beta)).max(1.0 / eta);
    let c = f_gap0.max(tc.v * tc.v * tc.l_beta / (tc.mu * tc.mu_beta));
    Ok(LinearConstants {
        c,
        rho_hat,
        alpha_fixed: tc.mu_beta / tc.l,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LqConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub theta: f64,
    pub delta: f64,
}

pub fn compute_lq_constants(tc: &TheoryConstants) -> LqConstants {
    let delta = tc.delta();
    let sd = delta.sqrt();
    LqConstants {
        c1: tc.m / (2.0 * tc.mu_beta),
        c2: tc.sigma / tc.mu_beta,
        c3: 2.0 * tc.l / tc.mu_beta * sd,
        theta: (sd - 1.0) / (sd + 1.0),
        delta,
    }
}

/// `ceil(64 sigma^2 / mu_bar^2)`, at least 1, clamped to the pool. The flag
/// reports whether the clamp was applied.
pub fn required_hessian_sample(tc: &TheoryConstants) -> (usize, bool) {
    let raw = (64.0 * tc.sigma * tc.sigma / (tc.mu_bar * tc.mu_bar)).ceil().max(1.0);
    if raw > tc.n as f64 {
        (tc.n, true)
    } else {
        (raw as usize, false)
    }
}

/// CG steps per outer iteration for the halving guarantee, at most `d`.
pub fn required_cg_iters(tc: &TheoryConstants, d: usize) -> usize {
    let delta = tc.delta();
    if !(delta > 1.0) {
        return 1;
    }
    let sd = delta.sqrt();
    let raw = (16.0 * tc.l * sd / tc.mu_beta).ln() / ((sd + 1.0) / (sd - 1.0)).ln();
    let r = if raw.is_finite() {
        raw.ceil().max(1.0)
    } else {
        f64::INFINITY
    };
    if r >= d as f64 {
        d.max(1)
    } else {
        r as usize
    }
}

pub fn zeta_bound(tc: &TheoryConstants) -> f64 {
    tc.mu_beta / (8.0 * tc.l)
}

/// Order-of-magnitude costs to reach accuracy `epsilon`, keyed by method.
pub fn cost_table(
    tc: &TheoryConstants,
    n: f64,
    d: f64,
    v: f64,
    omega: f64,
    epsilon: f64,
) -> Result<BTreeMap<String, f64>> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!("epsilon must lie in (0, 1) (got {epsilon})")));
    }
    if [n, d, v, omega].iter().any(|x| !(*x > 0.0)) {
        return Err(Error::InvalidArgument("table inputs must be positive".into()));
    }
    let kappa = tc.kappa();
    let kh = tc.kappa_hat();
    let khm = tc.kappa_hat_max();
    let log = (1.0 / epsilon).ln();
    let rows = [
        ("sg", d * omega * kappa * kappa / epsilon),
        ("dss", d * v * kappa / (tc.mu * epsilon)),
        ("gd", n * d * kappa * log),
        ("newton", n * d * d * log.ln()),
        ("newton_cg_exact", (n + khm * khm * d) * d * log),
        ("newton_cg_inexact", (n + khm * khm * khm.sqrt()) * d * log),
        ("lissa", (n + khm * khm * kh) * d * log),
        ("newton_sketch", (n + kappa.powi(4) * d * d) * d * log),
    ];
    Ok(rows.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    FuncGap,
    Distance,
}

pub const RATE_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub ratios: Vec<f64>,
    /// Geometric mean of the ratios.
    pub rate: f64,
    /// Ratios are strictly decreasing.
    pub superlinear: bool,
    /// Number of sequence values used.
    pub points: usize,
}

/// Successive ratios of `seq` up to the first value at or below the floor.
pub fn fit_rate(seq: &[f64]) -> Result<RateFit> {
    let above = seq
        .iter()
        .position(|&e| !(e > RATE_FLOOR))
        .unwrap_or(seq.len());
    if above < 4 {
        return Err(Error::InvalidArgument(format!(
            "only {above} values above {RATE_FLOOR:e}; use a smaller budget or an earlier window"
        )));
    }
    let used = &seq[..above];
    let ratios: Vec<f64> = used.windows(2).map(|w| w[1] / w[0]).collect();
    let rate = (ratios.iter().map(|r| r.ln()).sum::<f64>() / ratios.len() as f64).exp();
    let superlinear = ratios.windows(2).all(|w| w[1] < w[0]);
    Ok(RateFit {
        ratios,
        rate,
        superlinear,
        points: above,
    })
}

/// Per-iteration mean of `metric` over runs, for the iterations every run
/// reached.
pub fn ensemble_mean(records: &[RunRecord], metric: Metric) -> Vec<f64> {
    let Some(len) = records.iter().map(|r| r.entries.len()).min() else {
        return Vec::new();
    };
    (0..len)
        .map(|k| {
            records
                .iter()
                .map(|r| match metric {
                    Metric::FuncGap => r.entries[k].train_error,
                    Metric::Distance => r.entries[k].distance,
                })
                .sum::<f64>()
                / records.len() as f64
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Advisories {
    pub superlinear_x0_floor: f64,
    pub superlinear_s0_floor: f64,
    pub superlinear_radius: f64,
    pub halving_radius: f64,
}

pub fn advisories(tc: &TheoryConstants) -> Advisories {
    let lq = compute_lq_constants(tc);
    Advisories {
        superlinear_x0_floor: (6.0 * tc.v * tc.gamma * tc.m / (tc.mu_bar * tc.mu_bar)).powi(2),
        superlinear_s0_floor: (4.0 * tc.sigma / tc.mu_bar).powi(2),
        superlinear_radius: tc.mu_bar / (3.0 * tc.gamma * tc.m),
        halving_radius: (1.0 / (4.0 * lq.c1)).min(1.0 / (4.0 * tc.gamma * lq.c1)),
    }
}

/// Full constants document written next to run outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantsReport {
    pub constants: TheoryConstants,
    pub kappa: f64,
    pub kappa_hat: f64,
    pub kappa_hat_max: f64,
    pub linear: Option<LinearConstants>,
    pub lq: LqConstants,
    pub beta_star: usize,
    pub beta_star_clamped: bool,
    pub r_star: usize,
    pub zeta_star: f64,
    pub advisories: Advisories,
    pub costs: BTreeMap<String, f64>,
    pub sigma_upper_bound: bool,
    pub disclaimers: Vec<String>,
}

pub fn constants_report(
    tc: &TheoryConstants,
    eta: Option<f64>,
    f_gap0: f64,
    epsilon: f64,
    sigma_upper_bound: bool,
) -> Result<ConstantsReport> {
    tc.validate()?;
    let (beta_star, clamped) = required_hessian_sample(tc);
    let mut disclaimers = vec![
        "constants are empirical bounds over probe points and random samples, not certified".to_string(),
        "M is a lower bound on the Hessian Lipschitz constant".to_string(),
        "mu_bar from the singleton scan is heuristic".to_string(),
        "gamma is configured, not estimated; radii and floors that use it are advisory".to_string(),
        "cost estimates are order-of-magnitude only".to_string(),
    ];
    if sigma_upper_bound {
        disclaimers.push("sigma is a trace upper bound (dimension above dense limit)".into());
    }
    Ok(ConstantsReport {
        constants: *tc,
        kappa: tc.kappa(),
        kappa_hat: tc.kappa_hat(),
        kappa_hat_max: tc.kappa_hat_max(),
        linear: eta.map(|e| compute_linear_constants(tc, e, f_gap0)).transpose()?,
        lq: compute_lq_constants(tc),
        beta_star,
        beta_star_clamped: clamped,
        r_star: required_cg_iters(tc, tc.d),
        zeta_star: zeta_bound(tc),
        advisories: advisories(tc),
        costs: cost_table(tc, tc.n as f64, tc.d as f64, tc.v.max(f64::MIN_POSITIVE), tc.v.max(f64::MIN_POSITIVE), epsilon)?,
        sigma_upper_bound,
        disclaimers,
    })
}

/// Summary of a group of runs of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub method: Method,
    pub runs: usize,
    pub failed: usize,
    pub func_gap: Option<RateFit>,
    pub distance: Option<RateFit>,
}

pub fn summarize(records: &[RunRecord]) -> Option<EnsembleSummary> {
    let first = records.first()?;
    let ok: Vec<RunRecord> = records
        .iter()
        .filter(|r| !r.status.is_failure())
        .cloned()
        .collect();
    Some(EnsembleSummary {
        method: first.method,
        runs: records.len(),
        failed: records.len() - ok.len(),
        func_gap: fit_rate(&ensemble_mean(&ok, Metric::FuncGap)).ok(),
        distance: fit_rate(&ensemble_mean(&ok, Metric::Distance)).ok(),
    })
}
