//! The l2-regularized logistic loss
//!
//! ```text
//! R(w) = 1/N sum_i log(1 + exp(-y_i w'x_i)) + lambda/2 |w|^2
//! ```
//!
//! with full and subsampled gradients, Hessian-vector products and dense
//! Hessians. Every kernel adds the number of component evaluations it
//! performed to a per-objective tally, which the optimizers' run counters can
//! be checked against.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::all_finite;

/// Largest dimension for which a dense Hessian is materialized.
pub const DENSE_LIMIT: usize = 5000;

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(-z))` without overflow.
#[inline]
pub fn log_loss(z: f64) -> f64 {
    (-z).max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Second derivative of [`log_loss`]: `exp(-z) / (1 + exp(-z))^2`.
#[inline]
pub fn curvature(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 - s)
}

/// Sample of component indices into `0..N`. Indices are kept sorted so that
/// accumulation order does not depend on how the sample was drawn.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexSet {
    indices: Vec<usize>,
    replacement: bool,
}

impl IndexSet {
    pub fn new(mut indices: Vec<usize>, replacement: bool, pool: usize) -> Result<Self> {
        indices.sort_unstable();
        if let Some(&last) = indices.last() {
            if last >= pool {
                return Err(Error::InvalidArgument(format!(
                    "index {last} outside pool of size {pool}"
                )));
            }
        }
        if !replacement && indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument(
                "duplicate index in a sample drawn without replacement".into(),
            ));
        }
        Ok(IndexSet {
            indices,
            replacement,
        })
    }

    pub fn full(n: usize) -> Self {
        IndexSet {
            indices: (0..n).collect(),
            replacement: false,
        }
    }

    pub fn singleton(i: usize) -> Self {
        IndexSet {
            indices: vec![i],
            replacement: false,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn replacement(&self) -> bool {
        self.replacement
    }
}

/// Component-evaluation counts. One full gradient over `N` examples is `N`
/// gradient evaluations.
#[derive(Debug, Default)]
pub struct Counters {
    grad: AtomicU64,
    hvp: AtomicU64,
    func: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CounterSnapshot {
    pub grad: u64,
    pub hvp: u64,
    pub func: u64,
}

impl CounterSnapshot {
    pub fn total(&self) -> u64 {
        self.grad + self.hvp + self.func
    }
}

impl Counters {
    pub fn add_grad(&self, n: usize) {
        self.grad.fetch_add(n as u64, Ordering::Relaxed);
    }
    pub fn add_hvp(&self, n: usize) {
        self.hvp.fetch_add(n as u64, Ordering::Relaxed);
    }
    pub fn add_func(&self, n: usize) {
        self.func.fetch_add(n as u64, Ordering::Relaxed);
    }
    pub fn snapshot(&self) -> CounterSnapshot {
        CounterSnapshot {
            grad: self.grad.load(Ordering::Relaxed),
            hvp: self.hvp.load(Ordering::Relaxed),
            func: self.func.load(Ordering::Relaxed),
        }
    }
}

/// Logistic loss over a (training) dataset with l2 regularization.
#[derive(Debug)]
pub struct LogisticObjective {
    data: Arc<Dataset>,
    lambda: f64,
    tally: Counters,
}

impl Clone for LogisticObjective {
    /// Clones share the data but start a fresh tally.
    fn clone(&self) -> Self {
        LogisticObjective {
            data: Arc::clone(&self.data),
            lambda: self.lambda,
            tally: Counters::default(),
        }
    }
}

impl LogisticObjective {
    pub fn new(data: Arc<Dataset>, lambda: f64) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("objective over an empty dataset".into()));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be finite and >= 0 (got {lambda})"
            )));
        }
        Ok(LogisticObjective {
            data,
            lambda,
            tally: Counters::default(),
        })
    }

    pub fn data(&self) -> &Arc<Dataset> {
        &self.data
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    /// Component evaluations performed through this instance so far.
    pub fn tally(&self) -> CounterSnapshot {
        self.tally.snapshot()
    }

    /// `y_i w'x_i`
    #[inline]
    pub fn margin(&self, i: usize, w: &[f64]) -> f64 {
        self.data.labels[i] * self.data.features.row_dot(i, w)
    }

    fn check_w(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "weight vector has length {}, expected {}",
                w.len(),
                self.dim()
            )));
        }
        if !all_finite(w) {
            return Err(Error::NonFinite("weight vector".into()));
        }
        Ok(())
    }

    /// Average loss over all examples, without the regularizer.
    pub fn mean_loss(&self, w: &[f64]) -> Result<f64> {
        self.check_w(w)?;
        let n = self.len();
        self.tally.add_func(n);
        let total: f64 = (0..n).map(|i| log_loss(self.margin(i, w))).sum();
        Ok(total / n as f64)
    }

    /// `R(w)` over the full dataset.
    pub fn value(&self, w: &[f64]) -> Result<f64> {
        let reg: f64 = w.iter().map(|v| v * v).sum::<f64>();
        Ok(self.mean_loss(w)? + 0.5 * self.lambda * reg)
    }

    /// Subsampled gradient `1/|X| sum_{i in X} grad F_i(w)`, including `lambda w`.
    pub fn gradient(&self, w: &[f64], sample: &IndexSet) -> Result<Vec<f64>> {
        self.check_w(w)?;
        if sample.is_empty() {
            return Err(Error::EmptySample);
        }
        self.tally.add_grad(sample.len());
        let mut g = vec![0.0; self.dim()];
        for &i in sample.indices() {
            let y = self.data.labels[i];
            let coef = -y * sigmoid(-self.margin(i, w));
            self.data.features.row_axpy(i, coef, &mut g);
        }
        let inv = 1.0 / sample.len() as f64;
        for (gi, wi) in g.iter_mut().zip(w) {
            *gi = *gi * inv + self.lambda * wi;
        }
        Ok(g)
    }

    pub fn full_gradient(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.gradient(w, &IndexSet::full(self.len()))
    }

    /// Subsampled Hessian-vector product at `w`.
    pub fn hessian_vector(&self, w: &[f64], sample: &IndexSet, p: &[f64]) -> Result<Vec<f64>> {
        self.hessian_at(w, sample)?.apply(p)
    }

    /// Freeze the curvature weights of a sampled Hessian at `w` so repeated
    /// products (e.g. inside CG) do not recompute margins.
    pub fn hessian_at<'a>(&'a self, w: &[f64], sample: &'a IndexSet) -> Result<SampledHessian<'a>> {
        self.check_w(w)?;
        if sample.is_empty() {
            return Err(Error::EmptySample);
        }
        let weights = sample
            .indices()
            .iter()
            .map(|&i| curvature(self.margin(i, w)))
            .collect();
        Ok(SampledHessian {
            obj: self,
            sample,
            weights,
        })
    }

    /// Dense `1/|S| sum s_i x_i x_i' + lambda I`.
    pub fn dense_hessian(&self, w: &[f64], sample: &IndexSet) -> Result<DMatrix<f64>> {
        let d = self.dim();
        if d > DENSE_LIMIT {
            return Err(Error::DenseLimit {
                dim: d,
                limit: DENSE_LIMIT,
            });
        }
        let h = self.hessian_at(w, sample)?;
        let mut m = DMatrix::<f64>::zeros(d, d);
        let mut row = vec![0.0; d];
        for (&i, &s) in sample.indices().iter().zip(&h.weights) {
            row.iter_mut().for_each(|v| *v = 0.0);
            self.data.features.row_axpy(i, 1.0, &mut row);
            for (a, &xa) in row.iter().enumerate() {
                if xa == 0.0 {
                    continue;
                }
                let c = s * xa;
                for (b, &xb) in row.iter().enumerate() {
                    m[(a, b)] += c * xb;
                }
            }
        }
        m /= sample.len() as f64;
        for j in 0..d {
            m[(j, j)] += self.lambda;
        }
        // one dense Hessian costs d Hessian-vector products
        self.tally.add_hvp(sample.len() * d);
        Ok(m)
    }
}

/// A subsampled Hessian with its curvature weights evaluated.
#[derive(Debug)]
pub struct SampledHessian<'a> {
    obj: &'a LogisticObjective,
    sample: &'a IndexSet,
    weights: Vec<f64>,
}

impl SampledHessian<'_> {
    pub fn dim(&self) -> usize {
        self.obj.dim()
    }

    pub fn sample_len(&self) -> usize {
        self.sample.len()
    }

    /// `H p`; counts `|S|` component products.
    pub fn apply(&self, p: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        if p.len() != d {
            return Err(Error::InvalidArgument(format!(
                "vector has length {}, expected {d}",
                p.len()
            )));
        }
        self.obj.tally.add_hvp(self.sample.len());
        let feats = &self.obj.data.features;
        let mut out = vec![0.0; d];
        for (&i, &s) in self.sample.indices().iter().zip(&self.weights) {
            let c = s * feats.row_dot(i, p);
            if c != 0.0 {
                feats.row_axpy(i, c, &mut out);
            }
        }
        let inv = 1.0 / self.sample.len() as f64;
        for (o, pi) in out.iter_mut().zip(p) {
            *o = *o * inv + self.obj.lambda * pi;
        }
        Ok(out)
    }
}
