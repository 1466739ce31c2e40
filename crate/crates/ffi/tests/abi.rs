use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use subnewton_ffi::*;

fn last_error() -> String {
    let p = sn_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn tc() -> SnTheoryConstants {
    SnTheoryConstants {
        mu: 1.0,
        l: 2.0,
        mu_beta: 1.0,
        l_beta: 4.0,
        mu_bar: 1.0,
        l_bar: 4.0,
        v: 0.0,
        sigma: 1.0,
        m: 2.0,
        gamma: 2.0,
        beta: 1,
        n: 100,
        d: 50,
    }
}

#[test]
fn objective_kernels_through_handles() {
    unsafe {
        let x = [1.0, 0.0, 0.0, 1.0, -1.0, 1.0];
        let y = [1.0, 0.0, 0.0];
        let mut ds = ptr::null_mut();
        assert_eq!(sn_dataset_from_dense(x.as_ptr(), y.as_ptr(), 3, 2, &mut ds), SnStatus::Ok);
        let mut obj = ptr::null_mut();
        assert_eq!(sn_objective_new(ds, 0.0, &mut obj), SnStatus::Ok);
        sn_dataset_free(ds);
        let w = [0.0, 0.0];
        let mut v = 0.0;
        assert_eq!(sn_objective_value(obj, w.as_ptr(), &mut v), SnStatus::Ok);
        assert!((v - 2f64.ln()).abs() < 1e-15);
        let mut g = [0.0; 2];
        assert_eq!(sn_objective_gradient(obj, w.as_ptr(), g.as_mut_ptr()), SnStatus::Ok);
        // -(1/6) sum y_i x_i at w = 0, with sum y_i x_i = (2, -2)
        assert!((g[0] + 1.0 / 3.0).abs() < 1e-15 && (g[1] - 1.0 / 3.0).abs() < 1e-15, "{g:?}");
        let p = [1.0, 0.0];
        let mut hv = [0.0; 2];
        let one = [0usize];
        assert_eq!(
            sn_objective_hessian_vector(obj, w.as_ptr(), p.as_ptr(), one.as_ptr(), 1, hv.as_mut_ptr()),
            SnStatus::Ok
        );
        assert_eq!(hv, [0.25, 0.0]);
        let bad = [7usize];
        assert_eq!(
            sn_objective_hessian_vector(obj, w.as_ptr(), p.as_ptr(), bad.as_ptr(), 1, hv.as_mut_ptr()),
            SnStatus::InvalidArgument
        );
        sn_objective_free(obj);
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        let mut ds = ptr::null_mut();
        let missing = CString::new("/nonexistent/data.svm").unwrap();
        assert_eq!(sn_dataset_load_libsvm(missing.as_ptr(), &mut ds), SnStatus::Io);
        assert!(last_error().contains("nonexistent"));
        assert!(ds.is_null());
        assert_eq!(sn_dataset_synthesize(10, 2, 0, ptr::null_mut()), SnStatus::NullPointer);
        assert_eq!(sn_objective_new(ptr::null(), 1.0, &mut ptr::null_mut()), SnStatus::NullPointer);
        assert_eq!(last_error(), "dataset is null");
        sn_clear_last_error();
        assert!(sn_last_error_message().is_null());
        sn_dataset_free(ptr::null_mut());
        sn_objective_free(ptr::null_mut());
        sn_run_record_free(ptr::null_mut());
    }
}

#[test]
fn failed_runs_report_their_cause() {
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(sn_dataset_synthesize(800, 4, 2, &mut ds), SnStatus::Ok);
        let mut obj = ptr::null_mut();
        assert_eq!(sn_objective_new(ds, -1.0, &mut obj), SnStatus::Ok);
        sn_dataset_free(ds);
        let mut cfg = sn_method_config_default();
        cfg.method = SnMethod::NewtonSgi;
        cfg.sgi_iterations = 2000;
        cfg.sgi_alpha = 8.0;
        let budget = SnBudget { max_iters: 5, max_effective_grads: 0.0, target_train_error: 0.0 };
        let w0 = [0.0; 4];
        let mut rec = ptr::null_mut();
        assert_eq!(sn_run(obj, &cfg, &budget, w0.as_ptr(), 1, &mut rec), SnStatus::Ok);
        assert_eq!(sn_run_record_status(rec), SnRunStatus::Failed);
        assert!(last_error().contains("diverged"));
        assert_eq!(sn_run_record_len(rec), 1);
        sn_run_record_free(rec);

        cfg = sn_method_config_default();
        cfg.cg_zeta = 1.5;
        assert_eq!(sn_run(obj, &cfg, &budget, w0.as_ptr(), 1, &mut rec), SnStatus::InvalidArgument);
        sn_objective_free(obj);
    }
}

#[test]
fn formulas_match_worked_examples() {
    unsafe {
        let t = tc();
        let (mut beta, mut clamped) = (0usize, true);
        assert_eq!(sn_required_hessian_sample(&t, &mut beta, &mut clamped), SnStatus::Ok);
        assert_eq!((beta, clamped), (64, false));
        let nine = SnTheoryConstants { l: 1.0, l_beta: 9.0, ..t };
        assert_eq!(sn_required_cg_iters(&nine), 6);
        assert_eq!(sn_zeta_bound(&t), 1.0 / 16.0);
        let (mut c, mut rho, mut alpha) = (0.0, 0.0, 0.0);
        assert_eq!(sn_linear_constants(&t, 4.0, 0.0, &mut c, &mut rho, &mut alpha), SnStatus::Ok);
        assert_eq!((rho, alpha), (0.9375, 0.5));
        assert_eq!(sn_linear_constants(&t, 0.5, 0.0, &mut c, &mut rho, &mut alpha), SnStatus::InvalidArgument);
        assert_eq!(sn_cg_worst_case_bound(9.0, 3), 0.25);
        assert!(sn_zeta_bound(ptr::null()).is_nan());
    }
}

/// Compile the C smoke program against the generated header and the static
/// library, then run it.
#[test]
fn c_program_links_and_runs() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|p| p.parent()).unwrap();
    let lib = profile_dir.join("libsubnewton_ffi.a");
    assert!(lib.exists(), "static library not found at {}", lib.display());
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let out = tempfile::tempdir().unwrap();
    let bin = out.path().join("smoke");
    let status = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .unwrap_or_else(|e| panic!("cannot run {cc}: {e}"));
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}
