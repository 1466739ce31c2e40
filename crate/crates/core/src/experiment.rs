//! Configuration-driven experiments: config validation, parallel runs over
//! (method, seed) pairs, CSV traces, JSON summaries and replayable manifests.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::analysis::{self, ConstantsReport, EnsembleSummary, TheoryConstants};
use crate::dataset;
use crate::error::{Error, Result};
use crate::linsolve::{sgi_alpha_grid, sgi_iteration_budget, DEFAULT_MAX_CG, DEFAULT_ZETA};
use crate::objective::LogisticObjective;
use crate::optimize::{
    reference_minimizer, run, select_sgi_alpha, Budget, CgConfig, IterEntry, LineSearchParams,
    Method, MethodConfig, Reference, RunContext, RunRecord, RunStatus, SgiConfig, StepMode,
};
use crate::sampling::{EtaRule, SampleSchedule, ScheduleKind, SeedStream};

pub const WORKERS_ENV: &str = "SUBNEWTON_WORKERS";

pub const CSV_COLUMNS: [&str; 13] = [
    "k",
    "train_error",
    "test_error",
    "distance",
    "grad_evals",
    "hvp_evals",
    "func_evals",
    "effective_grad_evals",
    "step",
    "inner_iters",
    "grad_sample",
    "hess_sample",
    "wall_time",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Synthetic { n: usize, d: usize, seed: u64 },
    Libsvm { path: PathBuf, test_path: Option<PathBuf> },
    Csv { path: PathBuf, test_path: Option<PathBuf> },
}

/// A sample size given as a count or as a fraction of the training pool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeSpec {
    Count(usize),
    Fraction(f64),
}

impl SizeSpec {
    pub fn resolve(&self, n: usize) -> usize {
        match *self {
            SizeSpec::Count(c) => c,
            SizeSpec::Fraction(f) => ((f * n as f64).round() as usize).clamp(1, n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleSpec {
    Full,
    Constant { size: SizeSpec, replacement: bool },
    Geometric { x0: f64, eta: f64 },
    Supergeometric { x0: f64, offset: f64, slope: f64 },
}

impl ScheduleSpec {
    pub fn resolve(&self, n: usize) -> Result<SampleSchedule> {
        match *self {
            ScheduleSpec::Full => SampleSchedule::full(n),
            ScheduleSpec::Constant { size, replacement } => {
                Ok(SampleSchedule::constant(size.resolve(n), n)?.with_replacement(replacement))
            }
            ScheduleSpec::Geometric { x0, eta } => SampleSchedule::geometric(x0, eta, n),
            ScheduleSpec::Supergeometric { x0, offset, slope } => SampleSchedule::new(
                ScheduleKind::Supergeometric {
                    x0,
                    rule: EtaRule { offset, slope },
                },
                n,
            ),
        }
    }

    fn constant_size(&self, n: usize) -> Option<usize> {
        match self {
            ScheduleSpec::Full => Some(n),
            ScheduleSpec::Constant { size, .. } => Some(size.resolve(n).min(n)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum StepSpec {
    Armijo,
    Unit,
    Fixed { alpha: f64 },
    /// Fixed step `mu_beta / L` from the estimated constants.
    Curvature,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SgiIterations {
    Fixed(usize),
    Auto { beta: SizeSpec, max_cg: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SgiAlpha {
    Value(f64),
    Scan,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgiSpec {
    pub iterations: SgiIterations,
    pub alpha: SgiAlpha,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub label: String,
    pub method: Method,
    pub grad_sample: Option<ScheduleSpec>,
    pub hess_sample: Option<ScheduleSpec>,
    pub cg: Option<CgConfig>,
    pub sgi: Option<SgiSpec>,
    pub step: StepSpec,
    pub line_search: LineSearchParams,
    pub budget: Option<Budget>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StartSpec {
    Zero,
    /// Standard normal entries times `scale`, drawn from the run seed.
    Gaussian { scale: f64 },
    /// `(1 - t) w*`, a point on the segment from the minimizer to zero.
    NearOptimum { t: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantsSpec {
    pub beta: SizeSpec,
    pub trials: usize,
    pub eta: Option<f64>,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for ConstantsSpec {
    fn default() -> Self {
        ConstantsSpec {
            beta: SizeSpec::Fraction(0.05),
            trials: 5,
            eta: None,
            epsilon: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetSpec,
    pub train_ratio: f64,
    pub split_seed: u64,
    /// `None` means `1 / N_train`.
    pub lambda: Option<f64>,
    pub scaled: bool,
    pub gamma: f64,
    pub seeds: Vec<u64>,
    pub budget: Budget,
    pub methods: Vec<MethodSpec>,
    pub output: PathBuf,
    pub start: StartSpec,
    pub constants: Option<ConstantsSpec>,
    pub record_iterates: bool,
    pub reference_tol: f64,
}

impl ExperimentConfig {
    /// Make relative paths absolute against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.dataset {
            DatasetSpec::Libsvm { path, test_path } | DatasetSpec::Csv { path, test_path } => {
                fix(path);
                if let Some(t) = test_path {
                    fix(t);
                }
            }
            DatasetSpec::Synthetic { .. } => {}
        }
        fix(&mut self.output);
    }

    fn needs_constants(&self) -> bool {
        self.constants.is_some() || self.methods.iter().any(|m| m.step == StepSpec::Curvature)
    }
}

/// Collects every problem found while walking a config document.
struct Walker {
    errors: Vec<String>,
}

impl Walker {
    fn err(&mut self, msg: String) {
        self.errors.push(msg);
    }

    fn keys(&mut self, t: &Table, path: &str, allowed: &[&str]) {
        for k in t.keys() {
            if !allowed.contains(&k.as_str()) {
                self.err(format!("{path}: unknown key '{k}'"));
            }
        }
    }

    fn table<'a>(&mut self, v: &'a Value, path: &str) -> Option<&'a Table> {
        match v {
            Value::Table(t) => Some(t),
            other => {
                self.err(format!("{path}: expected a table, found {}", other.type_str()));
                None
            }
        }
    }

    fn f64(&mut self, t: &Table, key: &str, path: &str) -> Option<f64> {
        match t.get(key)? {
            Value::Float(f) => Some(*f),
            Value::Integer(i) => Some(*i as f64),
            other => {
                self.err(format!("{path}.{key}: expected a number, found {}", other.type_str()));
                None
            }
        }
    }

    fn uint(&mut self, t: &Table, key: &str, path: &str) -> Option<u64> {
        match t.get(key)? {
            Value::Integer(i) if *i >= 0 => Some(*i as u64),
            Value::Integer(i) => {
                self.err(format!("{path}.{key}: must be nonnegative, found {i}"));
                None
            }
            other => {
                self.err(format!("{path}.{key}: expected an integer, found {}", other.type_str()));
                None
            }
        }
    }

    fn str<'a>(&mut self, t: &'a Table, key: &str, path: &str) -> Option<&'a str> {
        match t.get(key)? {
            Value::String(s) => Some(s),
            other => {
                self.err(format!("{path}.{key}: expected a string, found {}", other.type_str()));
                None
            }
        }
    }

    fn bool(&mut self, t: &Table, key: &str, path: &str) -> Option<bool> {
        match t.get(key)? {
            Value::Boolean(b) => Some(*b),
            other => {
                self.err(format!("{path}.{key}: expected a boolean, found {}", other.type_str()));
                None
            }
        }
    }

    fn required<T>(&mut self, v: Option<T>, t: &Table, key: &str, path: &str) -> Option<T> {
        if v.is_none() && !t.contains_key(key) {
            self.err(format!("{path}: missing required key '{key}'"));
        }
        v
    }

    fn req_f64(&mut self, t: &Table, key: &str, path: &str) -> Option<f64> {
        let v = self.f64(t, key, path);
        self.required(v, t, key, path)
    }

    fn req_uint(&mut self, t: &Table, key: &str, path: &str) -> Option<u64> {
        let v = self.uint(t, key, path);
        self.required(v, t, key, path)
    }

    fn req_str(&mut self, t: &Table, key: &str, path: &str) -> Option<String> {
        let v = self.str_owned(t, key, path);
        self.required(v, t, key, path)
    }

    fn pos_f64(&mut self, t: &Table, key: &str, path: &str) -> Option<f64> {
        let v = self.f64(t, key, path);
        self.positive(v, &format!("{path}.{key}"))
    }

    fn req_pos_f64(&mut self, t: &Table, key: &str, path: &str) -> Option<f64> {
        let v = self.pos_f64(t, key, path);
        self.required(v, t, key, path)
    }

    fn positive(&mut self, v: Option<f64>, what: &str) -> Option<f64> {
        match v {
            Some(x) if !(x > 0.0 && x.is_finite()) => {
                self.err(format!("{what}: must be positive and finite, found {x}"));
                None
            }
            other => other,
        }
    }

    fn size(&mut self, t: &Table, path: &str) -> Option<SizeSpec> {
        let count = self.uint(t, "size", path);
        let frac = self.f64(t, "fraction", path);
        match (count, frac) {
            (Some(_), Some(_)) => {
                self.err(format!("{path}: give either 'size' or 'fraction', not both"));
                None
            }
            (Some(0), None) => {
                self.err(format!("{path}.size: must be >= 1"));
                None
            }
            (Some(c), None) => Some(SizeSpec::Count(c as usize)),
            (None, Some(f)) if f > 0.0 && f <= 1.0 => Some(SizeSpec::Fraction(f)),
            (None, Some(f)) => {
                self.err(format!("{path}.fraction: must lie in (0, 1], found {f}"));
                None
            }
            (None, None) => {
                if !t.contains_key("size") && !t.contains_key("fraction") {
                    self.err(format!("{path}: needs 'size' or 'fraction'"));
                }
                None
            }
        }
    }

    fn schedule(&mut self, v: &Value, path: &str) -> Option<ScheduleSpec> {
        if let Value::String(s) = v {
            if s == "full" {
                return Some(ScheduleSpec::Full);
            }
            self.err(format!("{path}: unknown schedule '{s}'"));
            return None;
        }
        let t = self.table(v, path)?;
        let kind = self.req_str(t, "kind", path)?;
        match kind.as_str() {
            "full" => {
                self.keys(t, path, &["kind"]);
                Some(ScheduleSpec::Full)
            }
            "constant" => {
                self.keys(t, path, &["kind", "size", "fraction", "replacement"]);
                let replacement = self.bool(t, "replacement", path).unwrap_or(false);
                Some(ScheduleSpec::Constant {
                    size: self.size(t, path)?,
                    replacement,
                })
            }
            "geometric" => {
                self.keys(t, path, &["kind", "x0", "eta"]);
                let x0 = self.req_f64(t, "x0", path);
                let eta = self.req_f64(t, "eta", path);
                let (x0, eta) = (x0?, eta?);
                if !(x0 >= 1.0 && eta > 1.0) {
                    self.err(format!("{path}: geometric schedule needs x0 >= 1 and eta > 1"));
                    return None;
                }
                Some(ScheduleSpec::Geometric { x0, eta })
            }
            "supergeometric" => {
                self.keys(t, path, &["kind", "x0", "offset", "slope"]);
                let x0 = self.req_f64(t, "x0", path)?;
                let rule = EtaRule::default();
                let offset = self.f64(t, "offset", path).unwrap_or(rule.offset);
                let slope = self.f64(t, "slope", path).unwrap_or(rule.slope);
                if !(x0 >= 1.0 && slope > 0.0 && offset + slope > 1.0) {
                    self.err(format!(
                        "{path}: super-geometric schedule needs x0 >= 1, slope > 0 and offset + slope > 1"
                    ));
                    return None;
                }
                Some(ScheduleSpec::Supergeometric { x0, offset, slope })
            }
            other => {
                self.err(format!("{path}.kind: unknown schedule kind '{other}'"));
                None
            }
        }
    }

    fn str_owned(&mut self, t: &Table, key: &str, path: &str) -> Option<String> {
        self.str(t, key, path).map(str::to_string)
    }

    fn budget(&mut self, v: &Value, path: &str, base: Option<Budget>) -> Option<Budget> {
        let t = self.table(v, path)?;
        self.keys(t, path, &["max_iters", "max_effective_grads", "target_train_error"]);
        let max_iters = self.uint(t, "max_iters", path).map(|v| v as usize);
        let max_iters = match (max_iters, base) {
            (Some(m), _) => m,
            (None, Some(b)) => b.max_iters,
            (None, None) => {
                self.err(format!("{path}: missing required key 'max_iters'"));
                return None;
            }
        };
        let eg = self.pos_f64(t, "max_effective_grads", path);
        let target = self.pos_f64(t, "target_train_error", path);
        Some(Budget {
            max_iters,
            max_effective_grads: eg.or(base.and_then(|b| b.max_effective_grads)),
            target_train_error: target.or(base.and_then(|b| b.target_train_error)),
        })
    }

    fn cg(&mut self, v: &Value, path: &str) -> Option<CgConfig> {
        let t = self.table(v, path)?;
        match self.str(t, "mode", path).unwrap_or("residual") {
            "residual" => {
                self.keys(t, path, &["mode", "zeta", "max_cg"]);
                let zeta = self.f64(t, "zeta", path).unwrap_or(DEFAULT_ZETA);
                let max_cg = self.uint(t, "max_cg", path).map_or(DEFAULT_MAX_CG, |v| v as usize);
                let mut ok = true;
                if !(zeta > 0.0 && zeta < 1.0) {
                    self.err(format!("{path}.zeta: must lie in (0, 1), found {zeta}"));
                    ok = false;
                }
                if max_cg == 0 {
                    self.err(format!("{path}.max_cg: must be >= 1"));
                    ok = false;
                }
                ok.then_some(CgConfig::Residual { zeta, max_cg })
            }
            "fixed" => {
                self.keys(t, path, &["mode", "r"]);
                let r = self.req_uint(t, "r", path)?;
                if r == 0 {
                    self.err(format!("{path}.r: must be >= 1"));
                    return None;
                }
                Some(CgConfig::Fixed { r: r as usize })
            }
            other => {
                self.err(format!("{path}.mode: unknown CG mode '{other}'"));
                None
            }
        }
    }

    fn sgi(&mut self, v: &Value, path: &str) -> Option<SgiSpec> {
        let t = self.table(v, path)?;
        self.keys(t, path, &["iterations", "alpha", "beta", "fraction", "max_cg"]);
        let iterations = match t.get("iterations") {
            Some(Value::Integer(i)) if *i >= 1 => Some(SgiIterations::Fixed(*i as usize)),
            None => self.sgi_auto(t, path),
            Some(Value::String(s)) if s == "auto" => self.sgi_auto(t, path),
            Some(other) => {
                self.err(format!(
                    "{path}.iterations: expected \"auto\" or a positive integer, found {other}"
                ));
                None
            }
        };
        let alpha = match t.get("alpha") {
            None => Some(SgiAlpha::Value(1.0)),
            Some(Value::String(s)) if s == "scan" => Some(SgiAlpha::Scan),
            Some(_) => self.pos_f64(t, "alpha", path).map(SgiAlpha::Value),
        };
        Some(SgiSpec {
            iterations: iterations?,
            alpha: alpha?,
        })
    }

    fn sgi_auto(&mut self, t: &Table, path: &str) -> Option<SgiIterations> {
        let beta = self.size(t, path);
        let max_cg = self.uint(t, "max_cg", path).map_or(DEFAULT_MAX_CG, |v| v as usize);
        if max_cg == 0 {
            self.err(format!("{path}.max_cg: must be >= 1"));
            return None;
        }
        beta.map(|beta| SgiIterations::Auto { beta, max_cg })
    }

    fn step(&mut self, v: &Value, path: &str) -> Option<StepSpec> {
        match v {
            Value::String(s) => match s.as_str() {
                "armijo" => Some(StepSpec::Armijo),
                "unit" => Some(StepSpec::Unit),
                "curvature" => Some(StepSpec::Curvature),
                other => {
                    self.err(format!("{path}: unknown step mode '{other}'"));
                    None
                }
            },
            Value::Table(t) => {
                self.keys(t, path, &["fixed"]);
                self.req_pos_f64(t, "fixed", path)
                .map(|alpha| StepSpec::Fixed { alpha })
            }
            other => {
                self.err(format!("{path}: expected a step mode, found {}", other.type_str()));
                None
            }
        }
    }

    fn line_search(&mut self, v: &Value, path: &str) -> Option<LineSearchParams> {
        let t = self.table(v, path)?;
        self.keys(t, path, &["c1", "backtrack", "alpha0", "max_backtracks"]);
        let d = LineSearchParams::default();
        let p = LineSearchParams {
            c1: self.f64(t, "c1", path).unwrap_or(d.c1),
            backtrack: self.f64(t, "backtrack", path).unwrap_or(d.backtrack),
            alpha0: self.f64(t, "alpha0", path).unwrap_or(d.alpha0),
            max_backtracks: self
                .uint(t, "max_backtracks", path)
                .map_or(d.max_backtracks, |v| v as usize),
        };
        match p.validate() {
            Ok(()) => Some(p),
            Err(e) => {
                self.err(format!("{path}: {e}"));
                None
            }
        }
    }

    fn method(&mut self, v: &Value, idx: usize, base_budget: Option<Budget>) -> Option<MethodSpec> {
        let path = format!("methods[{idx}]");
        let t = self.table(v, &path)?;
        self.keys(
            t,
            &path,
            &["label", "method", "grad_sample", "hess_sample", "cg", "sgi", "step", "line_search", "budget"],
        );
        let method_name = self.req_str(t, "method", &path)?;
        let method = match method_name.as_str() {
            "gd" => Method::Gd,
            "newton" => Method::Newton,
            "subsampled_newton" => Method::SubsampledNewton,
            "newton_cg" => Method::NewtonCg,
            "newton_sgi" => Method::NewtonSgi,
            other => {
                self.err(format!("{path}.method: unknown method '{other}'"));
                return None;
            }
        };
        let label = self
            .str_owned(t, "label", &path)
            .unwrap_or_else(|| method.name().to_string());
        let named = format!("{path} ('{label}')");
        let grad_sample = t.get("grad_sample").and_then(|v| self.schedule(v, &format!("{named}.grad_sample")));
        let hess_sample = t.get("hess_sample").and_then(|v| self.schedule(v, &format!("{named}.hess_sample")));
        let cg = t.get("cg").and_then(|v| self.cg(v, &format!("{named}.cg")));
        let sgi = t.get("sgi").and_then(|v| self.sgi(v, &format!("{named}.sgi")));
        let step = t
            .get("step")
            .map_or(Some(StepSpec::Armijo), |v| self.step(v, &format!("{named}.step")));
        let line_search = t
            .get("line_search")
            .map_or(Some(LineSearchParams::default()), |v| {
                self.line_search(v, &format!("{named}.line_search"))
            });
        let budget = match t.get("budget") {
            Some(v) => Some(self.budget(v, &format!("{named}.budget"), base_budget)?),
            None => None,
        };

        let mut consistent = true;
        let mut need = |w: &mut Walker, present: bool, what: &str| {
            if !present {
                w.err(format!("{named}: {method_name} requires a '{what}' block"));
                consistent = false;
            }
        };
        match method {
            Method::NewtonCg => {
                need(self, t.contains_key("cg"), "cg");
                need(self, t.contains_key("hess_sample"), "hess_sample");
            }
            Method::NewtonSgi => need(self, t.contains_key("sgi"), "sgi"),
            Method::SubsampledNewton => {
                need(self, t.contains_key("grad_sample"), "grad_sample");
                need(self, t.contains_key("hess_sample"), "hess_sample");
            }
            Method::Gd | Method::Newton => {}
        }
        let mut forbid = |w: &mut Walker, key: &str| {
            if t.contains_key(key) {
                w.err(format!("{named}: '{key}' does not apply to {method_name}"));
                consistent = false;
            }
        };
        match method {
            Method::Gd | Method::Newton => {
                for k in ["grad_sample", "hess_sample", "cg", "sgi"] {
                    forbid(self, k);
                }
            }
            Method::NewtonCg => {
                forbid(self, "sgi");
                forbid(self, "grad_sample");
            }
            Method::NewtonSgi => {
                for k in ["cg", "grad_sample", "hess_sample"] {
                    forbid(self, k);
                }
            }
            Method::SubsampledNewton => {
                forbid(self, "cg");
                forbid(self, "sgi");
            }
        }
        if method == Method::NewtonCg {
            if let Some(h) = hess_sample {
                if !matches!(h, ScheduleSpec::Full | ScheduleSpec::Constant { .. }) {
                    self.err(format!("{named}.hess_sample: newton_cg needs a constant sample size"));
                    consistent = false;
                }
            }
        }
        if step == Some(StepSpec::Curvature) && method != Method::SubsampledNewton {
            self.err(format!("{named}.step: 'curvature' applies to subsampled_newton only"));
            consistent = false;
        }
        if step == Some(StepSpec::Curvature) {
            if let Some(h) = hess_sample {
                if h.constant_size(1).is_none() {
                    self.err(format!("{named}.step: 'curvature' needs a constant hess_sample"));
                    consistent = false;
                }
            }
        }
        if !consistent {
            return None;
        }
        Some(MethodSpec {
            label,
            method,
            grad_sample,
            hess_sample,
            cg,
            sgi,
            step: step?,
            line_search: line_search?,
            budget,
        })
    }

    fn dataset(&mut self, v: &Value) -> Option<DatasetSpec> {
        let path = "dataset";
        let t = self.table(v, path)?;
        let kind = self.req_str(t, "kind", path)?;
        match kind.as_str() {
            "synthetic" => {
                self.keys(t, path, &["kind", "n", "d", "seed"]);
                let n = self.req_uint(t, "n", path);
                let d = self.req_uint(t, "d", path);
                let seed = self.uint(t, "seed", path).unwrap_or(0);
                let (n, d) = (n?, d?);
                if n < 2 || d < 1 {
                    self.err(format!("{path}: synthetic data needs n >= 2 and d >= 1"));
                    return None;
                }
                Some(DatasetSpec::Synthetic {
                    n: n as usize,
                    d: d as usize,
                    seed,
                })
            }
            "libsvm" | "csv" => {
                self.keys(t, path, &["kind", "path", "test_path"]);
                let p = self.req_str(t, "path", path)?;
                let test_path = self.str_owned(t, "test_path", path).map(PathBuf::from);
                let p = PathBuf::from(p);
                Some(if kind == "libsvm" {
                    DatasetSpec::Libsvm { path: p, test_path }
                } else {
                    DatasetSpec::Csv { path: p, test_path }
                })
            }
            other => {
                self.err(format!("{path}.kind: unknown dataset kind '{other}'"));
                None
            }
        }
    }

    fn start(&mut self, v: &Value) -> Option<StartSpec> {
        let path = "start";
        if let Value::String(s) = v {
            if s == "zero" {
                return Some(StartSpec::Zero);
            }
            self.err(format!("{path}: unknown start '{s}'"));
            return None;
        }
        let t = self.table(v, path)?;
        let kind = self.req_str(t, "kind", path)?;
        match kind.as_str() {
            "zero" => {
                self.keys(t, path, &["kind"]);
                Some(StartSpec::Zero)
            }
            "gaussian" => {
                self.keys(t, path, &["kind", "scale"]);
                let scale = self.f64(t, "scale", path).unwrap_or(1.0);
                Some(StartSpec::Gaussian { scale })
            }
            "near_optimum" => {
                self.keys(t, path, &["kind", "t"]);
                let tt = self.req_f64(t, "t", path)?;
                Some(StartSpec::NearOptimum { t: tt })
            }
            other => {
                self.err(format!("{path}.kind: unknown start kind '{other}'"));
                None
            }
        }
    }

    fn constants(&mut self, v: &Value) -> Option<ConstantsSpec> {
        let path = "constants";
        let t = self.table(v, path)?;
        self.keys(t, path, &["size", "fraction", "trials", "eta", "epsilon", "seed"]);
        let d = ConstantsSpec::default();
        let beta = if t.contains_key("size") || t.contains_key("fraction") {
            self.size(t, path)?
        } else {
            d.beta
        };
        let trials = self.uint(t, "trials", path).map_or(d.trials, |v| v as usize);
        if trials == 0 {
            self.err(format!("{path}.trials: must be >= 1"));
        }
        let eta = self.f64(t, "eta", path);
        if eta.is_some_and(|e| !(e > 1.0)) {
            self.err(format!("{path}.eta: must exceed 1"));
        }
        let epsilon = self.f64(t, "epsilon", path).unwrap_or(d.epsilon);
        if !(epsilon > 0.0 && epsilon < 1.0) {
            self.err(format!("{path}.epsilon: must lie in (0, 1)"));
        }
        Some(ConstantsSpec {
            beta,
            trials,
            eta,
            epsilon,
            seed: self.uint(t, "seed", path).unwrap_or(d.seed),
        })
    }
}

/// Parse and check a TOML experiment config, reporting every problem found.
pub fn validate_config(text: &str) -> std::result::Result<ExperimentConfig, Vec<String>> {
    let root: Table = toml::from_str(text).map_err(|e| vec![format!("syntax: {e}")])?;
    let mut w = Walker { errors: Vec::new() };
    w.keys(
        &root,
        "config",
        &[
            "name", "dataset", "train_ratio", "split_seed", "lambda", "scaling", "gamma", "seeds",
            "budget", "methods", "output", "start", "constants", "record_iterates", "reference_tol",
        ],
    );
    let name = w.str_owned(&root, "name", "config").unwrap_or_else(|| "experiment".into());
    let dataset = match root.get("dataset") {
        Some(v) => w.dataset(v),
        None => {
            w.err("config: missing required table 'dataset'".into());
            None
        }
    };
    let train_ratio = w.f64(&root, "train_ratio", "config").unwrap_or(0.7);
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        w.err(format!("config.train_ratio: must lie in (0, 1), found {train_ratio}"));
    }
    let split_seed = w.uint(&root, "split_seed", "config").unwrap_or(0);
    let lambda = w.f64(&root, "lambda", "config");
    if lambda.is_some_and(|l| !(l > 0.0 && l.is_finite())) {
        w.err("config.lambda: must be positive".into());
    }
    let scaled = match w.str(&root, "scaling", "config") {
        None | Some("unscaled") => false,
        Some("scaled") => true,
        Some(other) => {
            w.err(format!("config.scaling: expected 'scaled' or 'unscaled', found '{other}'"));
            false
        }
    };
    let gamma = w.f64(&root, "gamma", "config").unwrap_or(2.0);
    if !(gamma > 0.0) {
        w.err("config.gamma: must be positive".into());
    }
    let seeds: Vec<u64> = match root.get("seeds") {
        Some(Value::Array(a)) => a
            .iter()
            .filter_map(|v| match v {
                Value::Integer(i) if *i >= 0 => Some(*i as u64),
                other => {
                    w.err(format!("config.seeds: expected nonnegative integers, found {other}"));
                    None
                }
            })
            .collect(),
        Some(other) => {
            w.err(format!("config.seeds: expected an array, found {}", other.type_str()));
            Vec::new()
        }
        None => Vec::new(),
    };
    if seeds.is_empty() {
        w.err("config.seeds: at least one seed is required".into());
    }
    let budget = match root.get("budget") {
        Some(v) => w.budget(v, "budget", None),
        None => {
            w.err("config: missing required table 'budget'".into());
            None
        }
    };
    let mut methods = Vec::new();
    match root.get("methods") {
        Some(Value::Array(a)) if !a.is_empty() => {
            for (i, m) in a.iter().enumerate() {
                if let Some(spec) = w.method(m, i, budget) {
                    methods.push(spec);
                }
            }
        }
        Some(Value::Array(_)) | None => w.err("config.methods: at least one method is required".into()),
        Some(other) => w.err(format!("config.methods: expected an array of tables, found {}", other.type_str())),
    }
    let mut labels = HashSet::new();
    for m in &methods {
        if !labels.insert(m.label.clone()) {
            w.err(format!("config.methods: duplicate label '{}'", m.label));
        }
    }
    let output = PathBuf::from(w.str(&root, "output", "config").unwrap_or("results"));
    let start = root.get("start").map_or(Some(StartSpec::Zero), |v| w.start(v));
    let constants = root.get("constants").and_then(|v| w.constants(v));
    let record_iterates = w.bool(&root, "record_iterates", "config").unwrap_or(false);
    let reference_tol = w.f64(&root, "reference_tol", "config").unwrap_or(1e-12);
    if !(reference_tol > 0.0) {
        w.err("config.reference_tol: must be positive".into());
    }
    if !w.errors.is_empty() {
        return Err(w.errors);
    }
    Ok(ExperimentConfig {
        name,
        dataset: dataset.expect("checked"),
        train_ratio,
        split_seed,
        lambda,
        scaled,
        gamma,
        seeds,
        budget: budget.expect("checked"),
        methods,
        output,
        start: start.expect("checked"),
        constants,
        record_iterates,
        reference_tol,
    })
}

/// Read a config file and make its paths relative to the file's directory.
pub fn load_config(path: &Path) -> std::result::Result<ExperimentConfig, Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| vec![format!("{}: {e}", path.display())])?;
    let mut cfg = validate_config(&text)?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    Ok(cfg)
}

/// Training and test objectives after splitting and optional scaling.
pub struct Problem {
    pub train: LogisticObjective,
    pub test: LogisticObjective,
    pub scale: f64,
}

pub fn load_problem(cfg: &ExperimentConfig) -> Result<Problem> {
    let (train, test) = match &cfg.dataset {
        DatasetSpec::Synthetic { n, d, seed } => {
            let s = dataset::split(&dataset::synthesize(*n, *d, *seed)?, cfg.train_ratio, cfg.split_seed)?;
            (s.train, s.test)
        }
        DatasetSpec::Libsvm { path, test_path } => match test_path {
            Some(tp) => {
                let tr = dataset::load_libsvm(path)?;
                let te = dataset::load_libsvm_with_dim(tp, tr.dim())?;
                let tr = if te.dim() > tr.dim() {
                    dataset::load_libsvm_with_dim(path, te.dim())?
                } else {
                    tr
                };
                (tr, te)
            }
            None => {
                let s = dataset::split(&dataset::load_libsvm(path)?, cfg.train_ratio, cfg.split_seed)?;
                (s.train, s.test)
            }
        },
        DatasetSpec::Csv { path, test_path } => match test_path {
            Some(tp) => (dataset::load_csv(path)?, dataset::load_csv(tp)?),
            None => {
                let s = dataset::split(&dataset::load_csv(path)?, cfg.train_ratio, cfg.split_seed)?;
                (s.train, s.test)
            }
        },
    };
    if train.dim() != test.dim() {
        return Err(Error::InvalidArgument(format!(
            "train and test dimensions differ ({} vs {})",
            train.dim(),
            test.dim()
        )));
    }
    let lambda = cfg.lambda.unwrap_or(1.0 / train.len() as f64);
    let (train, test, scale) = if cfg.scaled {
        let (tr, s) = dataset::rescale_for_sgi(&train, lambda)?;
        let te = if s == 1.0 { test } else { test.scaled(s, format!("{}-scaled", test.name)) };
        (tr, te, s)
    } else {
        (train, test, 1.0)
    };
    Ok(Problem {
        train: LogisticObjective::new(Arc::new(train), lambda)?,
        test: LogisticObjective::new(Arc::new(test), lambda)?,
        scale,
    })
}

pub fn initial_point(start: &StartSpec, reference: &Reference, seed: u64) -> Vec<f64> {
    let d = reference.w_star.len();
    match *start {
        StartSpec::Zero => vec![0.0; d],
        StartSpec::Gaussian { scale } => {
            let mut rng = SeedStream::new(seed, SeedStream::START).rng(0);
            (0..d)
                .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                .collect()
        }
        StartSpec::NearOptimum { t } => reference.w_star.iter().map(|w| (1.0 - t) * w).collect(),
    }
}

/// Estimate constants for Hessian sample size `beta` at the configured
/// probe set.
pub fn estimate_for(
    problem: &Problem,
    reference: &Reference,
    cfg: &ExperimentConfig,
    beta: usize,
) -> Result<(TheoryConstants, bool)> {
    let spec = cfg.constants.unwrap_or_default();
    let w0 = initial_point(&cfg.start, reference, cfg.seeds.first().copied().unwrap_or(0));
    let mut rng = SeedStream::new(spec.seed, SeedStream::START).rng(1);
    analysis::estimate_constants(&problem.train, &reference.w_star, &w0, beta, spec.trials, cfg.gamma, &mut rng)
}

pub fn constants_for(problem: &Problem, reference: &Reference, cfg: &ExperimentConfig) -> Result<ConstantsReport> {
    let spec = cfg.constants.unwrap_or_default();
    let n = problem.train.len();
    let (tc, upper) = estimate_for(problem, reference, cfg, spec.beta.resolve(n).min(n))?;
    let w0 = initial_point(&cfg.start, reference, cfg.seeds.first().copied().unwrap_or(0));
    let gap0 = problem.train.value(&w0)? - reference.f_star;
    analysis::constants_report(&tc, spec.eta, gap0, spec.epsilon, upper)
}

fn method_config(spec: &MethodSpec, n: usize, alpha_curvature: Option<f64>) -> Result<MethodConfig> {
    let resolve = |s: &Option<ScheduleSpec>| s.map(|s| s.resolve(n)).transpose();
    let step = match spec.step {
        StepSpec::Armijo => StepMode::Armijo,
        StepSpec::Unit => StepMode::Unit,
        StepSpec::Fixed { alpha } => StepMode::Fixed(alpha),
        StepSpec::Curvature => alpha_curvature.map_or(StepMode::Armijo, StepMode::Fixed),
    };
    let sgi = spec
        .sgi
        .map(|s| -> Result<SgiConfig> {
            let iterations = match s.iterations {
                SgiIterations::Fixed(i) => i,
                SgiIterations::Auto { beta, max_cg } => sgi_iteration_budget(beta.resolve(n), max_cg)?,
            };
            let alpha = match s.alpha {
                SgiAlpha::Value(a) => a,
                SgiAlpha::Scan => 1.0,
            };
            Ok(SgiConfig { iterations, alpha })
        })
        .transpose()?;
    let cfg = MethodConfig {
        method: spec.method,
        grad_schedule: resolve(&spec.grad_sample)?,
        hess_schedule: resolve(&spec.hess_sample)?,
        cg: spec.cg,
        sgi,
        step,
        line_search: spec.line_search,
    };
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub label: String,
    pub seed: u64,
    pub status: RunStatus,
    pub csv: String,
    pub iterations: usize,
    pub final_train_error: f64,
    pub final_test_error: Option<f64>,
    pub effective_grad_evals: f64,
    /// Curvature step requested but estimates were unavailable.
    pub curvature_fallback: bool,
    pub sgi_alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: ExperimentConfig,
    pub dataset_hash: String,
    pub lambda: f64,
    pub scale: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub f_star: f64,
    pub runs: Vec<RunOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub runs: Vec<RunOutcome>,
    pub methods: BTreeMap<String, EnsembleSummary>,
    pub constants: Option<ConstantsReport>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub records: Vec<(String, RunRecord)>,
}

impl ExperimentOutcome {
    pub fn all_failed(&self) -> bool {
        self.manifest.runs.iter().all(|r| r.status.is_failure())
    }
}

fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

pub fn write_trace(path: &Path, entries: &[IterEntry]) -> Result<()> {
    let io = |e: std::io::Error| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let tmp = path.with_extension("csv.tmp");
    {
        let mut w = csv::Writer::from_path(&tmp).map_err(|e| Error::Config(format!("{}: {e}", tmp.display())))?;
        let csv_err = |e: csv::Error| Error::Config(format!("{}: {e}", path.display()));
        w.write_record(CSV_COLUMNS).map_err(csv_err)?;
        for e in entries {
            w.write_record([
                e.k.to_string(),
                fmt_f64(e.train_error),
                e.test_error.map(fmt_f64).unwrap_or_default(),
                fmt_f64(e.distance),
                e.grad_evals.to_string(),
                e.hvp_evals.to_string(),
                e.func_evals.to_string(),
                fmt_f64(e.effective_grad_evals),
                fmt_f64(e.step),
                e.inner_iters.to_string(),
                e.grad_sample.to_string(),
                e.hess_sample.to_string(),
                fmt_f64(e.wall_time),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(io)?;
    }
    fs::rename(&tmp, path).map_err(io)
}

/// Parse a trace written by [`write_trace`].
pub fn read_trace(path: &Path) -> Result<Vec<IterEntry>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let headers = r.headers().map_err(|e| Error::Config(e.to_string()))?.clone();
    if headers.iter().ne(CSV_COLUMNS.iter().copied()) {
        return Err(Error::Config(format!("{}: unexpected columns", path.display())));
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Config(e.to_string()))?;
        let bad = |c: &str| Error::Parse {
            path: path.to_path_buf(),
            line: line + 2,
            msg: format!("bad value in column {c}"),
        };
        let f = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(CSV_COLUMNS[i]));
        let u = |i: usize| rec[i].parse::<u64>().map_err(|_| bad(CSV_COLUMNS[i]));
        out.push(IterEntry {
            k: u(0)? as usize,
            train_error: f(1)?,
            test_error: if rec[2].is_empty() { None } else { Some(f(2)?) },
            distance: f(3)?,
            grad_evals: u(4)?,
            hvp_evals: u(5)?,
            func_evals: u(6)?,
            effective_grad_evals: f(7)?,
            step: f(8)?,
            inner_iters: u(9)? as usize,
            grad_sample: u(10)? as usize,
            hess_sample: u(11)? as usize,
            wall_time: f(12)?,
            w: None,
        });
    }
    Ok(out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    let tmp = path.with_extension("json.tmp");
    let io = |e: std::io::Error| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    fs::write(&tmp, text).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n >= 1)
            .ok_or_else(|| Error::Config(format!("{WORKERS_ENV} must be a positive integer, found '{v}'")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::Config(e.to_string()))
}

fn file_stem(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Run every (method, seed) pair and write the artifact directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let problem = load_problem(cfg)?;
    let reference = reference_minimizer(&problem.train, cfg.reference_tol)?;
    let n = problem.train.len();

    let constants = if cfg.needs_constants() {
        Some(constants_for(&problem, &reference, cfg))
    } else {
        None
    };
    let mut curvature_alpha: BTreeMap<usize, Option<f64>> = BTreeMap::new();
    for m in cfg.methods.iter().filter(|m| m.step == StepSpec::Curvature) {
        let beta = m.hess_sample.and_then(|h| h.constant_size(n)).unwrap_or(n);
        curvature_alpha.entry(beta).or_insert_with(|| {
            estimate_for(&problem, &reference, cfg, beta)
                .ok()
                .filter(|(tc, _)| tc.validate().is_ok())
                .map(|(tc, _)| tc.mu_beta / tc.l)
        });
    }

    let dir = cfg.output.clone();
    let runs_dir = dir.join("runs");
    fs::create_dir_all(&runs_dir).map_err(|e| Error::Io {
        path: runs_dir.clone(),
        source: e,
    })?;

    let jobs: Vec<(usize, u64)> = cfg
        .methods
        .iter()
        .enumerate()
        .flat_map(|(i, _)| cfg.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let ctx = RunContext {
        train: &problem.train,
        test: Some(&problem.test),
        reference: &reference,
        record_iterates: cfg.record_iterates,
    };
    let pool = worker_pool()?;
    let results: Vec<Result<(RunOutcome, RunRecord)>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(mi, seed)| {
                let spec = &cfg.methods[mi];
                let beta = spec.hess_sample.and_then(|h| h.constant_size(n)).unwrap_or(n);
                let alpha_thm = curvature_alpha.get(&beta).copied().flatten();
                let mcfg = method_config(spec, n, alpha_thm)?;
                let budget = spec.budget.unwrap_or(cfg.budget);
                let w0 = initial_point(&cfg.start, &reference, seed);
                let (rec, sgi_alpha) = match spec.sgi.map(|s| s.alpha) {
                    Some(SgiAlpha::Scan) => {
                        let (a, r) = select_sgi_alpha(&ctx, &w0, &mcfg, &budget, seed, &sgi_alpha_grid())?;
                        (r, Some(a))
                    }
                    _ => (run(&ctx, &w0, &mcfg, &budget, seed)?, mcfg.sgi.map(|s| s.alpha)),
                };
                let name = format!("{}_seed{seed}.csv", file_stem(&spec.label));
                write_trace(&runs_dir.join(&name), &rec.entries)?;
                let last = rec.last();
                Ok((
                    RunOutcome {
                        label: spec.label.clone(),
                        seed,
                        status: rec.status.clone(),
                        csv: format!("runs/{name}"),
                        iterations: rec.iterations(),
                        final_train_error: last.train_error,
                        final_test_error: last.test_error,
                        effective_grad_evals: last.effective_grad_evals,
                        curvature_fallback: spec.step == StepSpec::Curvature && alpha_thm.is_none(),
                        sgi_alpha,
                    },
                    rec,
                ))
            })
            .collect()
    });

    let mut outcomes = Vec::new();
    let mut records = Vec::new();
    for r in results {
        let (o, rec) = r?;
        records.push((o.label.clone(), rec));
        outcomes.push(o);
    }

    let mut methods = BTreeMap::new();
    for m in &cfg.methods {
        let group: Vec<RunRecord> = records
            .iter()
            .filter(|(l, _)| *l == m.label)
            .map(|(_, r)| r.clone())
            .collect();
        if let Some(s) = analysis::summarize(&group) {
            methods.insert(m.label.clone(), s);
        }
    }
    let constants_report = match constants {
        Some(Ok(c)) => {
            write_json(&dir.join("constants.json"), &c)?;
            Some(c)
        }
        Some(Err(e)) => {
            write_json(&dir.join("constants.json"), &serde_json::json!({ "error": e.to_string() }))?;
            None
        }
        None => None,
    };
    write_json(
        &dir.join("summary.json"),
        &Summary {
            name: cfg.name.clone(),
            runs: outcomes.clone(),
            methods,
            constants: constants_report,
        },
    )?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        dataset_hash: problem.train.data().content_hash(),
        lambda: problem.train.lambda(),
        scale: problem.scale,
        n_train: n,
        n_test: problem.test.len(),
        f_star: reference.f_star,
        runs: outcomes,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(ExperimentOutcome { dir, manifest, records })
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Result of re-running a manifest and comparing its traces.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub dir: PathBuf,
    pub compared: usize,
    /// `(csv, first differing row)` for every trace that differs outside
    /// the wall-time column.
    pub mismatches: Vec<(String, usize)>,
    pub all_failed: bool,
}

/// Re-run the experiment recorded in `manifest_path` into `out` and compare
/// every trace with the original, ignoring wall time.
pub fn replay(manifest_path: &Path, out: &Path) -> Result<ReplayReport> {
    let manifest = read_manifest(manifest_path)?;
    let original_dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut cfg = manifest.config.clone();
    cfg.output = out.to_path_buf();
    let outcome = run_experiment(&cfg)?;
    let mut mismatches = Vec::new();
    for run in &manifest.runs {
        let a = read_trace(&original_dir.join(&run.csv))?;
        let b = read_trace(&out.join(&run.csv))?;
        let strip = |mut e: IterEntry| {
            e.wall_time = 0.0;
            e
        };
        let first_diff = a
            .iter()
            .zip(&b)
            .position(|(x, y)| strip(x.clone()) != strip(y.clone()))
            .or_else(|| (a.len() != b.len()).then(|| a.len().min(b.len())));
        if let Some(row) = first_diff {
            mismatches.push((run.csv.clone(), row));
        }
    }
    Ok(ReplayReport {
        dir: out.to_path_buf(),
        compared: manifest.runs.len(),
        mismatches,
        all_failed: outcome.all_failed(),
    })
}
