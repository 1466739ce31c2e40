//! C ABI over the `subnewton` library.
//!
//! Every fallible function returns an [`SnStatus`]; on failure the message is
//! kept per thread and read with [`sn_last_error_message`]. Handles are
//! opaque, owned by the caller and released with their `_free` function.
//! Panics never cross the boundary; they surface as [`SnStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;
use std::sync::Arc;

use subnewton::analysis::{self, TheoryConstants};
use subnewton::dataset::{self, Dataset, Features};
use subnewton::linsolve;
use subnewton::objective::{IndexSet, LogisticObjective};
use subnewton::optimize::{
    self, Budget, CgConfig, MethodConfig, Reference, RunContext, RunRecord, RunStatus, SgiConfig, StepMode,
};
use subnewton::sampling::SampleSchedule;
use subnewton::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    /// Non-finite values, CG breakdown, SGI divergence or a failed eigensolve.
    Numerical = 5,
    /// Line search exhaustion, non-descent direction or no convergence.
    Convergence = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnMethod {
    Gd = 0,
    Newton = 1,
    SubsampledNewton = 2,
    NewtonCg = 3,
    NewtonSgi = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnStep {
    Armijo = 0,
    Unit = 1,
    Fixed = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnRunStatus {
    MaxIters = 0,
    EffectiveGradBudget = 1,
    TargetReached = 2,
    Converged = 3,
    Stalled = 4,
    Failed = 5,
}

/// Optimizer settings. A `grad_sample` of 0 means full gradients, otherwise
/// it is the initial size of a sample growing by `grad_growth` per
/// iteration. A `hess_sample` of 0 means 5% of the examples. A `cg_fixed_r`
/// above 0 selects fixed-step CG instead of the residual test. An
/// `sgi_iterations` of 0 matches the work of `cg_max_iters` CG steps.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SnMethodConfig {
    pub method: SnMethod,
    pub grad_sample: usize,
    pub grad_growth: f64,
    pub hess_sample: usize,
    pub cg_zeta: f64,
    pub cg_max_iters: usize,
    pub cg_fixed_r: usize,
    pub sgi_iterations: usize,
    pub sgi_alpha: f64,
    pub step: SnStep,
    pub fixed_alpha: f64,
}

/// Stopping rule. A `target_train_error` or `max_effective_grads` of 0 or
/// less is ignored.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SnBudget {
    pub max_iters: usize,
    pub max_effective_grads: f64,
    pub target_train_error: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SnIterEntry {
    pub k: usize,
    pub train_error: f64,
    pub distance: f64,
    pub grad_evals: u64,
    pub hvp_evals: u64,
    pub func_evals: u64,
    pub effective_grad_evals: f64,
    pub step: f64,
    pub inner_iters: usize,
    pub grad_sample: usize,
    pub hess_sample: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SnTheoryConstants {
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

pub struct SnDataset(Arc<Dataset>);

pub struct SnObjective {
    obj: LogisticObjective,
    reference: Option<Reference>,
}

pub struct SnRunRecord(RunRecord);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SnStatus {
    match e {
        Error::Io { .. } => SnStatus::Io,
        Error::Parse { .. } | Error::Config(_) => SnStatus::Parse,
        Error::InvalidArgument(_) | Error::EmptySample | Error::DenseLimit { .. } => SnStatus::InvalidArgument,
        Error::NonFinite(_) | Error::CgBreakdown { .. } | Error::SgiDivergence { .. } | Error::Eigen(_) => {
            SnStatus::Numerical
        }
        Error::NotDescent(_) | Error::LineSearch { .. } | Error::NoConvergence { .. } => SnStatus::Convergence,
    }
}

struct Fail(SnStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SnStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(SnStatus::InvalidArgument, msg.into())
}

/// Run `f`, translating errors and panics into a status and the last-error
/// message.
fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> SnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SnStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            SnStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    unsafe { p.as_ref() }.ok_or_else(|| null(what))
}

unsafe fn input<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(unsafe { slice::from_raw_parts(p, len) })
}

unsafe fn output<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(unsafe { slice::from_raw_parts_mut(p, len) })
}

unsafe fn put<T>(out: *mut *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// Message of the last failed call on this thread, or null if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sn_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn sn_clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn sn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sn_dataset_load_libsvm(path: *const c_char, out: *mut *mut SnDataset) -> SnStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        let s = unsafe { CStr::from_ptr(path) }.to_str().map_err(|_| invalid("path is not UTF-8"))?;
        let ds = dataset::load_libsvm(Path::new(s))?;
        unsafe { put(out, SnDataset(Arc::new(ds)), "out") }
    })
}

/// Gaussian features with logistic labels.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sn_dataset_synthesize(n: usize, d: usize, seed: u64, out: *mut *mut SnDataset) -> SnStatus {
    guard(|| {
        let ds = dataset::synthesize(n, d, seed)?;
        unsafe { put(out, SnDataset(Arc::new(ds)), "out") }
    })
}

/// Dense row-major features (`rows * cols` values) and `rows` labels in
/// {-1, 0, +1}; 0 is read as -1.
///
/// # Safety
/// The arrays must hold the stated number of elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sn_dataset_from_dense(
    features: *const f64,
    labels: *const f64,
    rows: usize,
    cols: usize,
    out: *mut *mut SnDataset,
) -> SnStatus {
    guard(|| {
        let len = rows.checked_mul(cols).ok_or_else(|| invalid("rows * cols overflows"))?;
        let x = unsafe { input(features, len, "features") }?.to_vec();
        let y: Vec<f64> = unsafe { input(labels, rows, "labels") }?
            .iter()
            .map(|&v| if v == 0.0 { -1.0 } else { v })
            .collect();
        let ds = Dataset::new("ffi", Features::dense(rows, cols, x)?, y)?;
        unsafe { put(out, SnDataset(Arc::new(ds)), "out") }
    })
}

/// # Safety
/// `ds` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sn_dataset_free(ds: *mut SnDataset) {
    if !ds.is_null() {
        drop(unsafe { Box::from_raw(ds) });
    }
}

/// Number of examples, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sn_dataset_rows(ds: *const SnDataset) -> usize {
    unsafe { ds.as_ref() }.map_or(0, |d| d.0.len())
}

/// Feature dimension, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sn_dataset_cols(ds: *const SnDataset) -> usize {
    unsafe { ds.as_ref() }.map_or(0, |d| d.0.dim())
}

/// Regularized logistic loss over `ds`. A negative `lambda` selects
/// `1 / rows`. The dataset handle may be freed afterwards.
///
/// # Safety
/// `ds` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sn_objective_new(ds: *const SnDataset, lambda: f64, out: *mut *mut SnObjective) -> SnStatus {
    guard(|| {
        let ds = unsafe { deref(ds, "dataset") }?;
        let lambda = if lambda < 0.0 { 1.0 / ds.0.len().max(1) as f64 } else { lambda };
        let obj = LogisticObjective::new(Arc::clone(&ds.0), lambda)?;
        unsafe { put(out, SnObjective { obj, reference: None }, "out") }
    })
}

/// # Safety
/// `obj` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sn_objective_free(obj: *mut SnObjective) {
    if !obj.is_null() {
        drop(unsafe { Box::from_raw(obj) });
    }
}

/// # Safety
/// `obj` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sn_objective_dim(obj: *const SnObjective) -> usize {
    unsafe { obj.as_ref() }.map_or(0, |o| o.obj.dim())
}

/// # Safety
/// `obj` must be a live handle. `w` has `dim` entries; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sn_objective_value(obj: *const SnObjective, w: *const f64, out: *mut f64) -> SnStatus {
    guard(|| {
        let o = unsafe { deref(obj, "objective") }?;
        let w = unsafe { input(w, o.obj.dim(), "w") }?;
        let v = o.obj.value(w)?;
        let out = unsafe { output(out, 1, "out") }?;
        out[0] = v;
        Ok(())
    })
}

/// Full gradient at `w`, written to `grad` (`dim` entries).
///
/// # Safety
/// `obj` must be a live handle; both arrays hold `dim` entries.
#[no_mangle]
pub unsafe extern "C" fn sn_objective_gradient(obj: *const SnObjective, w: *const f64, grad: *mut f64) -> SnStatus {
    guard(|| {
        let o = unsafe { deref(obj, "objective") }?;
        let d = o.obj.dim();
        let g = o.obj.full_gradient(unsafe { input(w, d, "w") }?)?;
        unsafe { output(grad, d, "grad") }?.copy_from_slice(&g);
        Ok(())
    })
}

/// Hessian-vector product over the examples in `sample` (`sample_len`
/// distinct indices), or over all examples when `sample` is null.
///
/// # Safety
/// `obj` must be a live handle; `w`, `p`, `out` hold `dim` entries.
#[no_mangle]
pub unsafe extern "C" fn sn_objective_hessian_vector(
    obj: *const SnObjective,
    w: *const f64,
    p: *const f64,
    sample: *const usize,
    sample_len: usize,
    out: *mut f64,
) -> SnStatus {
    guard(|| {
        let o = unsafe { deref(obj, "objective") }?;
        let d = o.obj.dim();
        let n = o.obj.len();
        let set = if sample.is_null() {
            IndexSet::full(n)
        } else {
            let idx = unsafe { slice::from_raw_parts(sample, sample_len) }.to_vec();
            IndexSet::new(idx, false, n)?
        };
        let hv = o.obj.hessian_vector(unsafe { input(w, d, "w") }?, &set, unsafe { input(p, d, "p") }?)?;
        unsafe { output(out, d, "out") }?.copy_from_slice(&hv);
        Ok(())
    })
}

fn reference(o: &mut SnObjective) -> Result<&Reference, Fail> {
    if o.reference.is_none() {
        o.reference = Some(optimize::reference_minimizer(&o.obj, 1e-10)?);
    }
    Ok(o.reference.as_ref().expect("just set"))
}

/// Minimizer of the objective, written to `w_star` (`dim` entries), and the
/// minimum value to `f_star` when non-null. Cached on the handle.
///
/// # Safety
/// `obj` must be a live handle; `w_star` holds `dim` entries.
#[no_mangle]
pub unsafe extern "C" fn sn_objective_minimize(obj: *mut SnObjective, w_star: *mut f64, f_star: *mut f64) -> SnStatus {
    guard(|| {
        let o = unsafe { obj.as_mut() }.ok_or_else(|| null("objective"))?;
        let d = o.obj.dim();
        let r = reference(o)?;
        unsafe { output(w_star, d, "w_star") }?.copy_from_slice(&r.w_star);
        if !f_star.is_null() {
            unsafe { *f_star = r.f_star };
        }
        Ok(())
    })
}

/// Defaults: Newton-CG on 5% of the data, residual test 0.01, at most 10 CG
/// steps, Armijo steps.
#[no_mangle]
pub extern "C" fn sn_method_config_default() -> SnMethodConfig {
    SnMethodConfig {
        method: SnMethod::NewtonCg,
        grad_sample: 0,
        grad_growth: 2.0,
        hess_sample: 0,
        cg_zeta: linsolve::DEFAULT_ZETA,
        cg_max_iters: linsolve::DEFAULT_MAX_CG,
        cg_fixed_r: 0,
        sgi_iterations: 0,
        sgi_alpha: 1.0,
        step: SnStep::Armijo,
        fixed_alpha: 1.0,
    }
}

fn method_config(c: &SnMethodConfig, n: usize) -> Result<MethodConfig, Fail> {
    let hess = || -> Result<SampleSchedule, Fail> {
        let size = if c.hess_sample == 0 { ((0.05 * n as f64).round() as usize).max(1) } else { c.hess_sample };
        Ok(SampleSchedule::constant(size, n)?)
    };
    let step = match c.step {
        SnStep::Armijo => StepMode::Armijo,
        SnStep::Unit => StepMode::Unit,
        SnStep::Fixed => StepMode::Fixed(c.fixed_alpha),
    };
    let cfg = match c.method {
        SnMethod::Gd => MethodConfig::gd(),
        SnMethod::Newton => MethodConfig::newton(),
        SnMethod::NewtonCg => {
            let cg = if c.cg_fixed_r > 0 {
                CgConfig::Fixed { r: c.cg_fixed_r }
            } else {
                CgConfig::Residual { zeta: c.cg_zeta, max_cg: c.cg_max_iters }
            };
            MethodConfig::newton_cg(hess()?, cg)
        }
        SnMethod::NewtonSgi => {
            let it = if c.sgi_iterations == 0 {
                linsolve::sgi_iteration_budget(hess()?.size_at(0), c.cg_max_iters)?
            } else {
                c.sgi_iterations
            };
            MethodConfig::newton_sgi(SgiConfig { iterations: it, alpha: c.sgi_alpha })
        }
        SnMethod::SubsampledNewton => {
            let grad = if c.grad_sample == 0 {
                SampleSchedule::full(n)?
            } else {
                SampleSchedule::geometric(c.grad_sample as f64, c.grad_growth, n)?
            };
            MethodConfig::subsampled_newton(grad, hess()?, step)
        }
    }
    .with_step(step);
    cfg.validate()?;
    Ok(cfg)
}

/// Run one optimizer from `w0` (`dim` entries). Method failures are
/// reported through the record status, not the return code.
///
/// # Safety
/// `obj` must be a live handle; `config` and `budget` must be valid
/// pointers; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sn_run(
    obj: *mut SnObjective,
    config: *const SnMethodConfig,
    budget: *const SnBudget,
    w0: *const f64,
    seed: u64,
    out: *mut *mut SnRunRecord,
) -> SnStatus {
    guard(|| {
        let o = unsafe { obj.as_mut() }.ok_or_else(|| null("objective"))?;
        let c = unsafe { deref(config, "config") }?;
        let b = unsafe { deref(budget, "budget") }?;
        let cfg = method_config(c, o.obj.len())?;
        let mut bud = Budget::iters(b.max_iters);
        if b.target_train_error > 0.0 {
            bud = bud.with_target(b.target_train_error);
        }
        if b.max_effective_grads > 0.0 {
            bud.max_effective_grads = Some(b.max_effective_grads);
        }
        let w0 = unsafe { input(w0, o.obj.dim(), "w0") }?.to_vec();
        reference(o)?;
        let ctx = RunContext {
            train: &o.obj,
            test: None,
            reference: o.reference.as_ref().expect("computed above"),
            record_iterates: false,
        };
        let rec = optimize::run(&ctx, &w0, &cfg, &bud, seed)?;
        unsafe { put(out, SnRunRecord(rec), "out") }
    })
}

/// # Safety
/// `rec` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sn_run_record_free(rec: *mut SnRunRecord) {
    if !rec.is_null() {
        drop(unsafe { Box::from_raw(rec) });
    }
}

/// Number of recorded entries (iterations plus the initial point).
///
/// # Safety
/// `rec` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sn_run_record_len(rec: *const SnRunRecord) -> usize {
    unsafe { rec.as_ref() }.map_or(0, |r| r.0.entries.len())
}

/// # Safety
/// `rec` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sn_run_record_entry(rec: *const SnRunRecord, index: usize, out: *mut SnIterEntry) -> SnStatus {
    guard(|| {
        let r = unsafe { deref(rec, "record") }?;
        let e = r
            .0
            .entries
            .get(index)
            .ok_or_else(|| invalid(format!("entry {index} out of range (len {})", r.0.entries.len())))?;
        if out.is_null() {
            return Err(null("out"));
        }
        unsafe {
            *out = SnIterEntry {
                k: e.k,
                train_error: e.train_error,
                distance: e.distance,
                grad_evals: e.grad_evals,
                hvp_evals: e.hvp_evals,
                func_evals: e.func_evals,
                effective_grad_evals: e.effective_grad_evals,
                step: e.step,
                inner_iters: e.inner_iters,
                grad_sample: e.grad_sample,
                hess_sample: e.hess_sample,
            }
        };
        Ok(())
    })
}

/// Why the run stopped. For [`SnRunStatus::Failed`] the cause is also set
/// as the last error message.
///
/// # Safety
/// `rec` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sn_run_record_status(rec: *const SnRunRecord) -> SnRunStatus {
    let Some(r) = (unsafe { rec.as_ref() }) else {
        set_error("record is null".into());
        return SnRunStatus::Failed;
    };
    match &r.0.status {
        RunStatus::MaxIters => SnRunStatus::MaxIters,
        RunStatus::EffectiveGradBudget => SnRunStatus::EffectiveGradBudget,
        RunStatus::TargetReached => SnRunStatus::TargetReached,
        RunStatus::Converged => SnRunStatus::Converged,
        RunStatus::Stalled => SnRunStatus::Stalled,
        RunStatus::Failed(cause) => {
            set_error(cause.clone());
            SnRunStatus::Failed
        }
    }
}

impl From<&SnTheoryConstants> for TheoryConstants {
    fn from(c: &SnTheoryConstants) -> Self {
        TheoryConstants {
            mu: c.mu,
            l: c.l,
            mu_beta: c.mu_beta,
            l_beta: c.l_beta,
            mu_bar: c.mu_bar,
            l_bar: c.l_bar,
            v: c.v,
            sigma: c.sigma,
            m: c.m,
            gamma: c.gamma,
            beta: c.beta,
            n: c.n,
            d: c.d,
        }
    }
}

/// `2 ((sqrt(kappa) - 1) / (sqrt(kappa) + 1))^r`.
#[no_mangle]
pub extern "C" fn sn_cg_worst_case_bound(kappa: f64, r: usize) -> f64 {
    linsolve::cg_worst_case_bound(kappa, r)
}

/// Hessian sample size for the halving guarantee; `clamped` (when non-null)
/// reports whether it was capped at `n`.
///
/// # Safety
/// `tc` must be valid; `beta` writable; `clamped` null or writable.
#[no_mangle]
pub unsafe extern "C" fn sn_required_hessian_sample(
    tc: *const SnTheoryConstants,
    beta: *mut usize,
    clamped: *mut bool,
) -> SnStatus {
    guard(|| {
        let tc = TheoryConstants::from(unsafe { deref(tc, "constants") }?);
        let (b, c) = analysis::required_hessian_sample(&tc);
        if beta.is_null() {
            return Err(null("beta"));
        }
        unsafe { *beta = b };
        if !clamped.is_null() {
            unsafe { *clamped = c };
        }
        Ok(())
    })
}

/// CG steps per iteration for the halving guarantee, at most `tc.d`; 0 for
/// a null pointer.
///
/// # Safety
/// `tc` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn sn_required_cg_iters(tc: *const SnTheoryConstants) -> usize {
    unsafe { tc.as_ref() }.map_or(0, |c| analysis::required_cg_iters(&c.into(), c.d))
}

/// Largest residual-test tolerance covered by the analysis; NaN for null.
///
/// # Safety
/// `tc` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn sn_zeta_bound(tc: *const SnTheoryConstants) -> f64 {
    unsafe { tc.as_ref() }.map_or(f64::NAN, |c| analysis::zeta_bound(&c.into()))
}

/// Linear-rate constants: `c`, `rho_hat` and the fixed step `alpha`.
///
/// # Safety
/// `tc` must be valid; the outputs writable.
#[no_mangle]
pub unsafe extern "C" fn sn_linear_constants(
    tc: *const SnTheoryConstants,
    eta: f64,
    f_gap0: f64,
    c: *mut f64,
    rho_hat: *mut f64,
    alpha: *mut f64,
) -> SnStatus {
    guard(|| {
        let tc = TheoryConstants::from(unsafe { deref(tc, "constants") }?);
        let lin = analysis::compute_linear_constants(&tc, eta, f_gap0)?;
        for (p, v, name) in [(c, lin.c, "c"), (rho_hat, lin.rho_hat, "rho_hat"), (alpha, lin.alpha_fixed, "alpha")] {
            unsafe { output(p, 1, name) }?[0] = v;
        }
        Ok(())
    })
}
