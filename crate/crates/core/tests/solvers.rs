use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use subnewton::linalg::{dot, mat_vec, norm, spd_solve};
use subnewton::linsolve::{cg_fixed, cg_solve, sgi_solve, CgStop, SgiParams};
use subnewton::Error;

fn spd(seed: u64, d: usize, kappa: f64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    let eigs: Vec<f64> = (0..d).map(|i| kappa.powf(i as f64 / (d.max(2) - 1) as f64)).collect();
    let a = &q * DMatrix::from_diagonal(&DVector::from_vec(eigs)) * q.transpose();
    (&a + a.transpose()) * 0.5
}

fn rhs(seed: u64, d: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

fn a_err(a: &DMatrix<f64>, x: &[f64], star: &[f64]) -> f64 {
    let e: Vec<f64> = x.iter().zip(star).map(|(u, v)| u - v).collect();
    dot(&e, &mat_vec(a, &e)).max(0.0).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn cg_a_norm_error_is_nonincreasing(seed in 0u64..10_000, d in 1usize..40, logk in 0.0f64..4.0) {
        let a = spd(seed, d, 10f64.powf(logk));
        let b = rhs(seed, d);
        let star = spd_solve(&a, &b).unwrap();
        let scale = a_err(&a, &vec![0.0; d], &star);
        let mut prev = f64::INFINITY;
        for r in 1..=d {
            let e = a_err(&a, &cg_fixed(&a, &b, r).unwrap().solution, &star);
            prop_assert!(e <= prev + 1e-12 * scale);
            prev = e;
        }
    }

    #[test]
    fn cg_to_dimension_matches_direct_solve(seed in 0u64..10_000, d in 1usize..50, logk in 0.0f64..1.0) {
        let a = spd(seed, d, 10f64.powf(logk));
        let b = rhs(seed, d);
        let star = spd_solve(&a, &b).unwrap();
        let rep = cg_solve(&a, &b, 1e-15, d).unwrap();
        let diff: Vec<f64> = rep.solution.iter().zip(&star).map(|(x, y)| x - y).collect();
        prop_assert!(norm(&diff) <= 1e-8 * norm(&star));
    }

    #[test]
    fn residual_stop_is_honest(seed in 0u64..10_000, d in 1usize..50, logk in 0.0f64..4.0, zeta in 1e-8f64..0.5) {
        let a = spd(seed, d, 10f64.powf(logk));
        let b = rhs(seed, d);
        let rep = cg_solve(&a, &b, zeta, 2 * d).unwrap();
        prop_assert!(rep.iterations <= d);
        if rep.stop_reason == CgStop::ResidualTest {
            let r: Vec<f64> = mat_vec(&a, &rep.solution).iter().zip(&b).map(|(x, y)| x - y).collect();
            prop_assert!(norm(&r) <= zeta * norm(&b));
        }
    }
}

#[test]
fn fixed_mode_spends_exactly_r_applies() {
    let a = spd(3, 30, 100.0);
    let b = rhs(3, 30);
    let rep = cg_fixed(&a, &b, 10).unwrap();
    assert_eq!(rep.iterations, 10);
    assert_eq!(rep.operator_applies, 10);
    assert_eq!(rep.stop_reason, CgStop::MaxIters);
}

/// Components `H_i = diag(c_i)` with mean `diag(m)`, all below one.
fn components(d: usize, pool: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let comps: Vec<Vec<f64>> = (0..pool).map(|_| (0..d).map(|_| 0.2 + 0.6 * rng.random::<f64>()).collect()).collect();
    let mean = (0..d).map(|j| comps.iter().map(|c| c[j]).sum::<f64>() / pool as f64).collect();
    (comps, mean)
}

#[test]
fn sgi_mean_approaches_newton_step() {
    let d = 4;
    let (comps, mean) = components(d, 20);
    let b = vec![1.0, -0.5, 0.25, 2.0];
    let exact: Vec<f64> = b.iter().zip(&mean).map(|(x, m)| x / m).collect();
    let streams = 100u64;
    let mut errors = Vec::new();
    let mut noise = Vec::new();
    for it in [10, 100, 1000] {
        let mut sum = vec![0.0; d];
        let mut sq = vec![0.0; d];
        for s in 0..streams {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let p = sgi_solve(
                |i, p: &[f64]| Ok(p.iter().zip(&comps[i]).map(|(x, c)| x * c).collect()),
                comps.len(),
                &b,
                SgiParams { iterations: it, alpha: 0.5, lambda: 0.2 },
                &mut rng,
            )
            .unwrap();
            for j in 0..d {
                sum[j] += p[j];
                sq[j] += p[j] * p[j];
            }
        }
        let m = streams as f64;
        let avg: Vec<f64> = sum.iter().map(|x| x / m).collect();
        // standard error of the mean, relative to the exact step
        let se: f64 = (0..d).map(|j| (sq[j] / m - avg[j] * avg[j]).max(0.0) / m).sum::<f64>().sqrt();
        let diff: Vec<f64> = avg.iter().zip(&exact).map(|(x, y)| x - y).collect();
        errors.push(norm(&diff) / norm(&exact));
        noise.push(se / norm(&exact));
    }
    for k in 1..3 {
        assert!(errors[k] <= errors[k - 1] + 3.0 * noise[k], "{errors:?} noise {noise:?}");
    }
    assert!(errors[0] > errors[2] + 3.0 * noise[0], "{errors:?} noise {noise:?}");
    assert!(errors[2] <= 3.0 * noise[2] + 1e-3, "{errors:?} noise {noise:?}");
}

#[test]
fn sgi_reports_divergence() {
    let b = vec![1.0; 3];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let err = sgi_solve(
        |_, p: &[f64]| Ok(p.iter().map(|x| 5.0 * x).collect()),
        1,
        &b,
        SgiParams { iterations: 1000, alpha: 1.0, lambda: 1.0 },
        &mut rng,
    )
    .unwrap_err();
    assert!(matches!(err, Error::SgiDivergence { .. }), "{err}");
}
