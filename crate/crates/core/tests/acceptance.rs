//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Tolerances and budgets are fixed here and must not be relaxed.

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use subnewton::analysis::{self, Metric, TheoryConstants};
use subnewton::dataset;
use subnewton::experiment;
use subnewton::linalg::{dot, mat_vec, norm};
use subnewton::linsolve::{cg_fixed, cg_solve, cg_worst_case_bound, sgi_iteration_budget, CgStop};
use subnewton::objective::{IndexSet, LogisticObjective};
use subnewton::optimize::{
    reference_minimizer, run, Budget, CgConfig, MethodConfig, Reference, RunContext, RunRecord,
    RunStatus, SgiConfig, StepMode,
};
use subnewton::sampling::SampleSchedule;

type Verdict = std::result::Result<String, String>;

struct Criterion {
    name: &'static str,
    limit: Duration,
    check: fn() -> Verdict,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e<T: std::fmt::Debug>(r: subnewton::Result<T>) -> std::result::Result<T, String> {
    r.map_err(|err| err.to_string())
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Synthetic 10000 x 50 problem, 70% training split, lambda = 1 / N_train.
struct Problem {
    obj: LogisticObjective,
    reference: Reference,
}

fn synthetic(n: usize, d: usize) -> std::result::Result<Problem, String> {
    let split = e(dataset::split(&e(dataset::synthesize(n, d, 1))?, 0.7, 0))?;
    let lambda = 1.0 / split.train.len() as f64;
    let obj = e(LogisticObjective::new(Arc::new(split.train), lambda))?;
    let reference = e(reference_minimizer(&obj, 1e-12))?;
    Ok(Problem { obj, reference })
}

fn ctx(p: &Problem) -> RunContext<'_> {
    RunContext {
        train: &p.obj,
        test: None,
        reference: &p.reference,
        record_iterates: false,
    }
}

fn seeds_run(ctx: &RunContext<'_>, w0: &[f64], cfg: &MethodConfig, budget: &Budget) -> std::result::Result<Vec<RunRecord>, String> {
    (1..=10u64)
        .into_par_iter()
        .map(|s| e(run(ctx, w0, cfg, budget, s)))
        .collect()
}

fn kernel_correctness() -> Verdict {
    let ds = e(dataset::synthesize(300, 8, 11))?;
    let n = ds.len();
    let lambda = 1.0 / n as f64;
    let obj = e(LogisticObjective::new(Arc::new(ds), lambda))?;
    let d = obj.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let all = IndexSet::full(n);

    let mut worst_fd: f64 = 0.0;
    for _ in 0..10 {
        let w: Vec<f64> = gaussian(&mut rng, d).iter().map(|v| 0.5 * v).collect();
        let g = e(obj.full_gradient(&w))?;
        let h = 1e-6;
        let fd: Vec<f64> = (0..d)
            .map(|j| {
                let mut a = w.clone();
                let mut b = w.clone();
                a[j] += h;
                b[j] -= h;
                (obj.value(&a).unwrap() - obj.value(&b).unwrap()) / (2.0 * h)
            })
            .collect();
        let diff: Vec<f64> = fd.iter().zip(&g).map(|(a, b)| a - b).collect();
        worst_fd = worst_fd.max(norm(&diff) / norm(&g));
    }
    ensure(worst_fd <= 1e-5, || format!("finite-difference relative error {worst_fd:e} > 1e-5"))?;

    let mut worst_col: f64 = 0.0;
    for t in 0..10 {
        let w = gaussian(&mut rng, d);
        let s = if t == 0 {
            all.clone()
        } else {
            let m = rng.random_range(1..=n);
            e(IndexSet::new(rand::seq::index::sample(&mut rng, n, m).into_vec(), false, n))?
        };
        let dense = e(obj.dense_hessian(&w, &s))?;
        for j in 0..d {
            let mut ej = vec![0.0; d];
            ej[j] = 1.0;
            let hv = e(obj.hessian_vector(&w, &s, &ej))?;
            let col: Vec<f64> = dense.column(j).iter().copied().collect();
            let diff: Vec<f64> = hv.iter().zip(&col).map(|(a, b)| a - b).collect();
            worst_col = worst_col.max(norm(&diff) / norm(&col));
        }
    }
    ensure(worst_col <= 1e-10, || format!("HVP vs dense column relative error {worst_col:e} > 1e-10"))?;

    let mut worst_sym: f64 = 0.0;
    let mut worst_pd = f64::INFINITY;
    for _ in 0..100 {
        let w = gaussian(&mut rng, d);
        let m = rng.random_range(1..=n);
        let s = e(IndexSet::new(rand::seq::index::sample(&mut rng, n, m).into_vec(), false, n))?;
        let p = gaussian(&mut rng, d);
        let v = gaussian(&mut rng, d);
        let hv = e(obj.hessian_vector(&w, &s, &v))?;
        let hp = e(obj.hessian_vector(&w, &s, &p))?;
        let (a, b) = (dot(&p, &hv), dot(&v, &hp));
        let scale = norm(&p) * norm(&hv) + norm(&v) * norm(&hp);
        worst_sym = worst_sym.max((a - b).abs() / scale);
        worst_pd = worst_pd.min(dot(&p, &hp) / (lambda * dot(&p, &p)));
    }
    ensure(worst_sym <= 1e-10, || format!("HVP symmetry relative error {worst_sym:e} > 1e-10"))?;
    ensure(worst_pd >= 1.0 - 1e-12, || format!("p'Hp / (lambda |p|^2) = {worst_pd} < 1"))?;
    Ok(format!(
        "fd {worst_fd:.1e} <= 1e-5, columns {worst_col:.1e} <= 1e-10, symmetry {worst_sym:.1e} <= 1e-10, min p'Hp/(lambda|p|^2) {worst_pd:.3}"
    ))
}

/// Random SPD matrix with eigenvalues `eigs`, and its exact inverse.
fn spd_with(rng: &mut ChaCha8Rng, eigs: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = eigs.len();
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    let a = &q * DMatrix::from_diagonal(&DVector::from_column_slice(eigs)) * q.transpose();
    let inv_eigs: Vec<f64> = eigs.iter().map(|l| 1.0 / l).collect();
    let inv = &q * DMatrix::from_diagonal(&DVector::from_vec(inv_eigs)) * q.transpose();
    ((&a + a.transpose()) * 0.5, inv)
}

fn random_spectrum(rng: &mut ChaCha8Rng, d: usize, kappa: f64) -> Vec<f64> {
    let mut eigs: Vec<f64> = (0..d).map(|_| kappa.powf(rng.random::<f64>())).collect();
    eigs[0] = 1.0;
    if d > 1 {
        eigs[1] = kappa;
    }
    eigs
}

fn a_norm(a: &DMatrix<f64>, x: &[f64]) -> f64 {
    dot(x, &mat_vec(a, x)).max(0.0).sqrt()
}

fn cg_bound() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    // rounding floor on the A-norm error, relative to |p*|_A
    let floor = 1e-10;
    let mut worst_margin: f64 = f64::NEG_INFINITY;
    let mut checks = 0usize;
    for sys in 0..50 {
        let d = rng.random_range(2..=50);
        let kappa = if sys == 0 { 1.0 } else { 10f64.powf(4.0 * rng.random::<f64>()) };
        let eigs = random_spectrum(&mut rng, d, kappa);
        let (a, inv) = spd_with(&mut rng, &eigs);
        let b = gaussian(&mut rng, d);
        let p_star = mat_vec(&inv, &b);
        let star_a = a_norm(&a, &p_star);
        for r in 1..=d {
            let rep = e(cg_fixed(&a, &b, r))?;
            let err: Vec<f64> = rep.solution.iter().zip(&p_star).map(|(x, y)| x - y).collect();
            let measured = a_norm(&a, &err);
            let bound = cg_worst_case_bound(kappa, r) * star_a;
            checks += 1;
            worst_margin = worst_margin.max((measured - bound) / star_a);
            ensure(measured <= bound + floor * star_a, || {
                format!("system {sys} (d={d}, kappa={kappa:.1}) r={r}: |e|_A {measured:e} > bound {bound:e}")
            })?;
        }
    }
    let mut worst_two: f64 = 0.0;
    for _ in 0..25 {
        let d = rng.random_range(2..=50);
        let lo = 0.1 + rng.random::<f64>();
        let hi = lo * (1.0 + 100.0 * rng.random::<f64>());
        let eigs: Vec<f64> = (0..d).map(|i| if i % 2 == 0 { lo } else { hi }).collect();
        let (a, inv) = spd_with(&mut rng, &eigs);
        let b = gaussian(&mut rng, d);
        let p_star = mat_vec(&inv, &b);
        let rep = e(cg_fixed(&a, &b, 2))?;
        ensure(rep.iterations <= 2, || "two-eigenvalue CG took more than 2 steps".into())?;
        let diff: Vec<f64> = rep.solution.iter().zip(&p_star).map(|(x, y)| x - y).collect();
        worst_two = worst_two.max(norm(&diff) / norm(&p_star));
    }
    ensure(worst_two <= 1e-10, || format!("two-eigenvalue CG relative error {worst_two:e} > 1e-10"))?;
    Ok(format!(
        "{checks} iterate checks on 50 systems within bound (max excess {worst_margin:.1e} |p*|_A); two-eigenvalue error {worst_two:.1e} <= 1e-10"
    ))
}

fn residual_contract() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut residual_stops = 0usize;
    for i in 0..1000 {
        let d = rng.random_range(1..=50);
        let kappa = 10f64.powf(4.0 * rng.random::<f64>());
        let eigs = random_spectrum(&mut rng, d, kappa);
        let (a, _) = spd_with(&mut rng, &eigs);
        let b = gaussian(&mut rng, d);
        let zeta = 10f64.powf(-10.0 + 9.7 * rng.random::<f64>());
        let max_iters = rng.random_range(1..=2 * d);
        let rep = e(cg_solve(&a, &b, zeta, max_iters))?;
        if rep.stop_reason == CgStop::ResidualTest {
            residual_stops += 1;
            let ap = mat_vec(&a, &rep.solution);
            let res: Vec<f64> = ap.iter().zip(&b).map(|(x, y)| x - y).collect();
            ensure(norm(&res) <= zeta * norm(&b), || {
                format!("solve {i}: residual {:e} > zeta |b| = {:e}", norm(&res), zeta * norm(&b))
            })?;
        }
    }
    ensure(residual_stops > 0, || "no solve stopped on the residual test".into())?;
    Ok(format!("{residual_stops} of 1000 solves stopped on the residual test; all satisfy |Ap - b| <= zeta |b|"))
}

fn linear_rate() -> Verdict {
    let p = synthetic(10_000, 50)?;
    let n = p.obj.len();
    let d = p.obj.dim();
    let w0 = vec![0.0; d];
    let beta = 200;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (tc, _) = e(analysis::estimate_constants(&p.obj, &p.reference.w_star, &w0, beta, 10, 2.0, &mut rng))?;
    let gap0 = e(p.obj.value(&w0))? - p.reference.f_star;
    let lin = e(analysis::compute_linear_constants(&tc, 2.0, gap0))?;
    let grad = e(SampleSchedule::geometric(100.0, 2.0, n))?;
    let horizon = grad.saturation_iter(64).ok_or("gradient schedule never saturates")?;
    let cfg = MethodConfig::subsampled_newton(grad, e(SampleSchedule::constant(beta, n))?, StepMode::Fixed(lin.alpha_fixed));
    let recs = seeds_run(&ctx(&p), &w0, &cfg, &Budget::iters(horizon))?;
    ensure(recs.iter().all(|r| r.status == RunStatus::MaxIters), || "a run stopped early".into())?;
    let mean = analysis::ensemble_mean(&recs, Metric::FuncGap);
    for (k, m) in mean.iter().enumerate() {
        let bound = lin.c * lin.rho_hat.powi(k as i32);
        ensure(*m <= bound, || format!("mean gap {m:e} at k={k} exceeds C rho^k = {bound:e}"))?;
    }
    let fit = e(analysis::fit_rate(&mean))?;
    ensure(fit.rate < 1.0, || format!("mean gap does not decay (rate {})", fit.rate))?;
    ensure(fit.rate <= lin.rho_hat + 0.05, || {
        format!("fitted rate {:.6} > rho_hat + 0.05 = {:.6}", fit.rate, lin.rho_hat + 0.05)
    })?;
    Ok(format!(
        "k=0..{horizon} pre-saturation, fitted rate {:.5} <= rho_hat + 0.05 = {:.5}; mean gap <= C rho_hat^k throughout (alpha = {:.3e})",
        fit.rate,
        lin.rho_hat + 0.05,
        lin.alpha_fixed
    ))
}

fn superlinear() -> Verdict {
    let p = synthetic(1_000_000, 10)?;
    let n = p.obj.len();
    let grad = e(SampleSchedule::supergeometric(1000.0, n))?;
    let hess = e(SampleSchedule::geometric(1000.0, 2.0, n))?;
    let horizon = grad.saturation_iter(64).ok_or("gradient schedule never saturates")?;
    let w0: Vec<f64> = p.reference.w_star.iter().map(|w| 0.999 * w).collect();
    let cfg = MethodConfig::subsampled_newton(grad, hess, StepMode::Unit);
    let recs = seeds_run(&ctx(&p), &w0, &cfg, &Budget::iters(horizon))?;
    let mean = analysis::ensemble_mean(&recs, Metric::Distance);
    ensure(mean.len() == horizon + 1, || "runs ended before the schedule saturated".into())?;
    let fit = e(analysis::fit_rate(&mean))?;
    ensure(fit.ratios.len() >= 4, || format!("only {} pre-saturation ratios", fit.ratios.len()))?;
    let shown: Vec<String> = fit.ratios.iter().map(|r| format!("{r:.3}")).collect();
    ensure(fit.superlinear, || format!("ratios not strictly decreasing: {shown:?}"))?;
    Ok(format!("{} pre-saturation distance ratios strictly decreasing: {}", fit.ratios.len(), shown.join(" > ")))
}

fn halving() -> Verdict {
    let p = synthetic(10_000, 50)?;
    let n = p.obj.len();
    let d = p.obj.dim();
    let w0: Vec<f64> = p.reference.w_star.iter().map(|w| 0.7 * w).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (probe, _) = e(analysis::estimate_constants(&p.obj, &p.reference.w_star, &w0, 200, 5, 2.0, &mut rng))?;
    let (beta, clamped) = analysis::required_hessian_sample(&probe);
    let (tc, _): (TheoryConstants, bool) =
        e(analysis::estimate_constants(&p.obj, &p.reference.w_star, &w0, beta, 5, 2.0, &mut rng))?;
    let r = analysis::required_cg_iters(&tc, d);
    let cfg = MethodConfig::newton_cg(e(SampleSchedule::constant(beta, n))?, CgConfig::Fixed { r }).with_step(StepMode::Unit);
    let recs = seeds_run(&ctx(&p), &w0, &cfg, &Budget::iters(5))?;
    let mean = analysis::ensemble_mean(&recs, Metric::Distance);
    ensure(mean.len() == 6, || "runs ended early".into())?;
    let ratios: Vec<f64> = mean.windows(2).map(|w| w[1] / w[0]).collect();
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.2e}")).collect();
    ensure(mean.iter().all(|m| *m > analysis::RATE_FLOOR), || format!("distance reached the floor: {mean:?}"))?;
    ensure(ratios.iter().all(|q| *q <= 0.55), || format!("ratios {shown:?} exceed 0.55"))?;
    Ok(format!(
        "beta = {beta}{}, r = {r}; 5 ratios <= 0.55: {}",
        if clamped { " (clamped to N)" } else { "" },
        shown.join(", ")
    ))
}

fn mean_iters(recs: &[RunRecord], target: f64) -> f64 {
    recs.iter()
        .map(|r| r.iters_to(target).map_or(f64::INFINITY, |k| k as f64))
        .sum::<f64>()
        / recs.len() as f64
}

fn iteration_counts() -> Verdict {
    let p = synthetic(10_000, 50)?;
    let n = p.obj.len();
    let d = p.obj.dim();
    let w0 = vec![0.0; d];
    let c = ctx(&p);
    let gd = e(run(&c, &w0, &MethodConfig::gd(), &Budget::iters(5000).with_target(1e-4), 1))?;
    let gd_iters = gd.iters_to(1e-4).map_or(f64::INFINITY, |k| k as f64);
    let mut by_size = Vec::new();
    for frac in [0.05, 0.10, 0.50] {
        let beta = ((frac * n as f64).round() as usize).max(1);
        let cfg = MethodConfig::newton_cg(e(SampleSchedule::constant(beta, n))?, CgConfig::default());
        let recs = seeds_run(&c, &w0, &cfg, &Budget::iters(200).with_target(1e-8))?;
        by_size.push((frac, mean_iters(&recs, 1e-6), mean_iters(&recs, 1e-8)));
    }
    let (_, _, half_to_8) = by_size[2];
    ensure(half_to_8 < gd_iters, || format!("Newton-CG 50% needs {half_to_8} iterations to 1e-8, GD {gd_iters} to 1e-4"))?;
    for w in by_size.windows(2) {
        ensure(w[1].1 <= w[0].1, || {
            format!("|S| = {}N needs {} iterations to 1e-6, more than {}N with {}", w[1].0, w[1].1, w[0].0, w[0].1)
        })?;
    }
    Ok(format!(
        "Newton-CG 50%: {half_to_8:.1} iterations to 1e-8 < GD {gd_iters} to 1e-4; to 1e-6: 5% {:.1} >= 10% {:.1} >= 50% {:.1}",
        by_size[0].1, by_size[1].1, by_size[2].1
    ))
}

fn sgi_parity() -> Verdict {
    let split = e(dataset::split(&e(dataset::synthesize(10_000, 50, 1))?, 0.7, 0))?;
    let n = split.train.len();
    let lambda = 1.0 / n as f64;
    let beta = (0.05 * n as f64).round() as usize;
    let max_cg = 10;
    let it = e(sgi_iteration_budget(beta, max_cg))?;
    let ncg = MethodConfig::newton_cg(e(SampleSchedule::constant(beta, n))?, CgConfig::Fixed { r: max_cg });
    let sgi = MethodConfig::newton_sgi(SgiConfig { iterations: it, alpha: 1.0 });

    let (scaled, s) = e(dataset::rescale_for_sgi(&split.train, lambda))?;
    let obj = e(LogisticObjective::new(Arc::new(scaled), lambda))?;
    let reference = e(reference_minimizer(&obj, 1e-12))?;
    let p = Problem { obj, reference };
    let w0 = vec![0.0; p.obj.dim()];
    let budget = Budget::iters(100).with_target(1e-4);
    let c = ctx(&p);
    let a = e(run(&c, &w0, &ncg, &budget, 1))?;
    let b = e(run(&c, &w0, &sgi, &budget, 1))?;
    for (name, r) in [("Newton-CG", &a), ("Newton-SGI", &b)] {
        ensure(r.status == RunStatus::TargetReached, || {
            format!("{name} on scaled data ended with {:?} at train error {:e}", r.status, r.last().train_error)
        })?;
    }
    let per_iter = |r: &RunRecord| -> Vec<u64> { r.entries.windows(2).map(|w| w[1].hvp_evals - w[0].hvp_evals).collect() };
    let (ha, hb) = (per_iter(&a), per_iter(&b));
    let common = ha.len().min(hb.len());
    ensure(ha[..common] == hb[..common], || format!("HVP counts differ: {:?} vs {:?}", &ha[..common], &hb[..common]))?;
    ensure(ha.iter().chain(&hb).all(|&h| h == it as u64), || "per-iteration HVP count differs from It".into())?;

    let unscaled = e(LogisticObjective::new(Arc::new(split.train), lambda))?;
    let ureference = e(reference_minimizer(&unscaled, 1e-12))?;
    let u = Problem { obj: unscaled, reference: ureference };
    let rec = e(run(&ctx(&u), &w0, &sgi, &Budget::iters(20), 1))?;
    let cause = match &rec.status {
        RunStatus::Failed(c) => c.clone(),
        other => return Err(format!("unscaled Newton-SGI ended with {other:?}, expected divergence")),
    };
    ensure(cause.contains("diverged"), || format!("unscaled failure is not the divergence guard: {cause}"))?;
    Ok(format!(
        "It = {it} HVPs per outer iteration in both methods ({common} iterations compared); scaled (s = {s:.3}) runs reach 1e-4 in {} and {} iterations; unscaled SGI stops at iteration {}: {cause}",
        a.iterations(),
        b.iterations(),
        rec.iterations()
    ))
}

fn check(name: &str, ok: bool, detail: String, failures: &mut Vec<String>) {
    if !ok {
        failures.push(format!("{name}: {detail}"));
    }
}

fn formulas() -> Verdict {
    let base = TheoryConstants {
        mu: 1.0,
        l: 2.0,
        mu_beta: 1.0,
        l_beta: 4.0,
        mu_bar: 1.0,
        l_bar: 4.0,
        v: 0.0,
        sigma: 0.5,
        m: 2.0,
        gamma: 2.0,
        beta: 1,
        n: 100,
        d: 50,
    };
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    let mut f = Vec::new();
    let mut count = 0usize;
    let mut c = |name: &str, ok: bool, detail: String| {
        count += 1;
        check(name, ok, detail, &mut f);
    };

    let eq = TheoryConstants { l: 1.0, l_beta: 1.0, ..base };
    let r = analysis::compute_linear_constants(&eq, 2.0, 0.0).map_err(|x| x.to_string())?;
    c("rho all-equal", close(r.rho_hat, 0.5), format!("{}", r.rho_hat));
    let r = analysis::compute_linear_constants(&base, 1e6, 0.0).map_err(|x| x.to_string())?;
    c("rho large eta", close(r.rho_hat, 1.0 - 1.0 / 16.0), format!("{}", r.rho_hat));
    let r = analysis::compute_linear_constants(&base, 4.0, 0.0).map_err(|x| x.to_string())?;
    c("rho worked", close(r.rho_hat, 0.9375), format!("{}", r.rho_hat));
    c("alpha fixed", close(r.alpha_fixed, 0.5), format!("{}", r.alpha_fixed));

    let flat = TheoryConstants { l_beta: 1.0, ..base };
    c("theta delta=1", close(analysis::compute_lq_constants(&flat).theta, 0.0), String::new());
    let quad = TheoryConstants { m: 0.0, ..base };
    c("C1 quadratic", close(analysis::compute_lq_constants(&quad).c1, 0.0), String::new());
    let lq = analysis::compute_lq_constants(&base);
    c("C1", close(lq.c1, 1.0), format!("{}", lq.c1));
    c("C2", close(lq.c2, 0.5), format!("{}", lq.c2));
    c("delta", close(lq.delta, 4.0), format!("{}", lq.delta));
    c("theta", close(lq.theta, 1.0 / 3.0), format!("{}", lq.theta));
    c("C3", close(lq.c3, 8.0), format!("{}", lq.c3));

    let t = TheoryConstants { sigma: 1.0, mu_bar: 1.0, ..base };
    c("beta* 64", analysis::required_hessian_sample(&t) == (64, false), format!("{:?}", analysis::required_hessian_sample(&t)));
    let t = TheoryConstants { sigma: 0.0, ..base };
    c("beta* sigma=0", analysis::required_hessian_sample(&t) == (1, false), String::new());
    let t = TheoryConstants { sigma: 3.0, mu_bar: 2.0, n: 100, ..base };
    c("beta* clamp", analysis::required_hessian_sample(&t) == (100, true), format!("{:?}", analysis::required_hessian_sample(&t)));

    let t = TheoryConstants { l: 1.0, mu_beta: 1.0, l_beta: 9.0, ..base };
    c("r* delta=9", analysis::required_cg_iters(&t, 50) == 6, format!("{}", analysis::required_cg_iters(&t, 50)));
    c("r* clamp d=3", analysis::required_cg_iters(&t, 3) == 3, String::new());
    let t = TheoryConstants { l_beta: 1.0 + 1e-9, ..base };
    c("r* delta->1", analysis::required_cg_iters(&t, 50) == 1, format!("{}", analysis::required_cg_iters(&t, 50)));
    let t = TheoryConstants { l_beta: 1.0, ..base };
    c("r* delta=1", analysis::required_cg_iters(&t, 50) == 1, String::new());

    c("zeta* 1/16", close(analysis::zeta_bound(&base), 1.0 / 16.0), String::new());
    let t = TheoryConstants { mu_beta: 2.0, l: 2.0, l_beta: 4.0, ..base };
    c("zeta* 1/8", close(analysis::zeta_bound(&t), 0.125), String::new());
    let t = TheoryConstants { mu_beta: 0.5, l: 10.0, l_beta: 10.0, ..base };
    c("zeta* 0.00625", close(analysis::zeta_bound(&t), 0.00625), format!("{}", analysis::zeta_bound(&t)));

    if f.is_empty() {
        Ok(format!("{count} worked examples reproduced"))
    } else {
        Err(f.join("; "))
    }
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().map_err(|x| x.to_string())?;
    let config = r#"
name = "replay-check"
seeds = [1, 2, 3]
scaling = "scaled"
output = "artifacts"

[dataset]
kind = "synthetic"
n = 3000
d = 10
seed = 5

[budget]
max_iters = 12

[[methods]]
label = "gd"
method = "gd"

[[methods]]
label = "newton"
method = "newton"

[[methods]]
label = "newton_cg_10"
method = "newton_cg"
hess_sample = { kind = "constant", fraction = 0.1 }
cg = {}

[[methods]]
label = "subsampled"
method = "subsampled_newton"
grad_sample = { kind = "geometric", x0 = 100, eta = 2.0 }
hess_sample = { kind = "constant", size = 200 }
step = "unit"

[[methods]]
label = "sgi"
method = "newton_sgi"
sgi = { iterations = "auto", fraction = 0.05, max_cg = 10, alpha = 1.0 }
"#;
    let path = dir.path().join("config.toml");
    std::fs::write(&path, config).map_err(|x| x.to_string())?;
    let cfg = experiment::load_config(&path).map_err(|errs| errs.join("; "))?;
    let out = e(experiment::run_experiment(&cfg))?;
    let replay_dir = dir.path().join("replayed");
    let rep = e(experiment::replay(&out.dir.join("manifest.json"), &replay_dir))?;
    ensure(rep.mismatches.is_empty(), || format!("replay mismatches: {:?}", rep.mismatches))?;
    let wall = experiment::CSV_COLUMNS.iter().position(|c| *c == "wall_time").unwrap();
    let mut rows = 0usize;
    for run in &out.manifest.runs {
        let read = |p: std::path::PathBuf| -> std::result::Result<Vec<Vec<String>>, String> {
            let mut r = csv::Reader::from_path(&p).map_err(|x| x.to_string())?;
            Ok(r.records()
                .map(|rec| {
                    let rec = rec.unwrap();
                    rec.iter().enumerate().filter(|(i, _)| *i != wall).map(|(_, v)| v.to_string()).collect()
                })
                .collect())
        };
        let a = read(out.dir.join(&run.csv))?;
        let b = read(replay_dir.join(&run.csv))?;
        ensure(a == b, || format!("{} differs after replay", run.csv))?;
        rows += a.len();
    }
    Ok(format!(
        "{} runs, {rows} rows: every non-timing column identical byte for byte after replay",
        out.manifest.runs.len()
    ))
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { name: "kernel correctness", limit: Duration::from_secs(10), check: kernel_correctness },
        Criterion { name: "CG worst-case bound", limit: Duration::from_secs(30), check: cg_bound },
        Criterion { name: "CG residual-test contract", limit: Duration::from_secs(300), check: residual_contract },
        Criterion { name: "linear rate with geometric gradient samples", limit: Duration::from_secs(300), check: linear_rate },
        Criterion { name: "superlinear schedule", limit: Duration::from_secs(300), check: superlinear },
        Criterion { name: "halving with required sample and CG steps", limit: Duration::from_secs(300), check: halving },
        Criterion { name: "Newton-CG vs GD iteration counts", limit: Duration::from_secs(300), check: iteration_counts },
        Criterion { name: "Newton-CG / Newton-SGI parity", limit: Duration::from_secs(300), check: sgi_parity },
        Criterion { name: "analysis formula worked examples", limit: Duration::from_secs(300), check: formulas },
        Criterion { name: "manifest replay determinism", limit: Duration::from_secs(300), check: determinism },
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let verdict = match panic::catch_unwind(AssertUnwindSafe(c.check)) {
            Ok(v) => v,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        let elapsed = start.elapsed();
        let verdict = match verdict {
            Ok(_) if elapsed > c.limit => Err(format!("took {:.1}s, limit {}s", elapsed.as_secs_f64(), c.limit.as_secs())),
            v => v,
        };
        match verdict {
            Ok(detail) => println!("[PASS] {} ({:.1}s): {detail}", c.name, elapsed.as_secs_f64()),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {} ({:.1}s): {detail}", c.name, elapsed.as_secs_f64());
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
