//! Binary classification datasets: loading, synthesis, splitting and rescaling.
//!
//! Labels are always stored as `-1.0` / `+1.0`; files using `0/1` labels are
//! normalized at load time.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::objective::sigmoid;

/// Feature storage. Dense matrices are row-major; sparse ones are CSR.
#[derive(Debug, Clone, PartialEq)]
pub enum Features {
    Dense {
        rows: usize,
        cols: usize,
        values: Vec<f64>,
    },
    Sparse {
        cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<u32>,
        values: Vec<f64>,
    },
}

impl Features {
    pub fn dense(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "dense features: expected {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        Ok(Features::Dense { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        match self {
            Features::Dense { rows, .. } => *rows,
            Features::Sparse { row_ptr, .. } => row_ptr.len() - 1,
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Features::Dense { cols, .. } | Features::Sparse { cols, .. } => *cols,
        }
    }

    /// `x_i' w`
    #[inline]
    pub fn row_dot(&self, i: usize, w: &[f64]) -> f64 {
        match self {
            Features::Dense { cols, values, .. } => {
                let row = &values[i * cols..(i + 1) * cols];
                row.iter().zip(w).map(|(a, b)| a * b).sum()
            }
            Features::Sparse {
                row_ptr,
                col_idx,
                values,
                ..
            } => {
                let (lo, hi) = (row_ptr[i], row_ptr[i + 1]);
                col_idx[lo..hi]
                    .iter()
                    .zip(&values[lo..hi])
                    .map(|(&j, v)| v * w[j as usize])
                    .sum()
            }
        }
    }

    /// `out += alpha * x_i`
    #[inline]
    pub fn row_axpy(&self, i: usize, alpha: f64, out: &mut [f64]) {
        match self {
            Features::Dense { cols, values, .. } => {
                let row = &values[i * cols..(i + 1) * cols];
                for (o, v) in out.iter_mut().zip(row) {
                    *o += alpha * v;
                }
            }
            Features::Sparse {
                row_ptr,
                col_idx,
                values,
                ..
            } => {
                let (lo, hi) = (row_ptr[i], row_ptr[i + 1]);
                for (&j, v) in col_idx[lo..hi].iter().zip(&values[lo..hi]) {
                    out[j as usize] += alpha * v;
                }
            }
        }
    }

    pub fn row_sq_norm(&self, i: usize) -> f64 {
        self.row_entries(i).map(|(_, v)| v * v).sum()
    }

    /// Nonzero-or-stored entries of row `i` as `(column, value)`.
    pub fn row_entries(&self, i: usize) -> Box<dyn Iterator<Item = (usize, f64)> + '_> {
        match self {
            Features::Dense { cols, values, .. } => Box::new(
                values[i * cols..(i + 1) * cols]
                    .iter()
                    .copied()
                    .enumerate(),
            ),
            Features::Sparse {
                row_ptr,
                col_idx,
                values,
                ..
            } => {
                let (lo, hi) = (row_ptr[i], row_ptr[i + 1]);
                Box::new(
                    col_idx[lo..hi]
                        .iter()
                        .zip(&values[lo..hi])
                        .map(|(&j, &v)| (j as usize, v)),
                )
            }
        }
    }

    pub fn row_dense(&self, i: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.cols()];
        self.row_axpy(i, 1.0, &mut row);
        row
    }

    fn scaled(&self, s: f64) -> Features {
        let mut out = self.clone();
        match &mut out {
            Features::Dense { values, .. } | Features::Sparse { values, .. } => {
                values.iter_mut().for_each(|v| *v *= s)
            }
        }
        out
    }

    fn select(&self, idx: &[usize]) -> Features {
        match self {
            Features::Dense { cols, values, .. } => {
                let mut out = Vec::with_capacity(idx.len() * cols);
                for &i in idx {
                    out.extend_from_slice(&values[i * cols..(i + 1) * cols]);
                }
                Features::Dense {
                    rows: idx.len(),
                    cols: *cols,
                    values: out,
                }
            }
            Features::Sparse {
                cols,
                row_ptr,
                col_idx,
                values,
            } => {
                let mut rp = vec![0];
                let mut ci = Vec::new();
                let mut vs = Vec::new();
                for &i in idx {
                    let (lo, hi) = (row_ptr[i], row_ptr[i + 1]);
                    ci.extend_from_slice(&col_idx[lo..hi]);
                    vs.extend_from_slice(&values[lo..hi]);
                    rp.push(ci.len());
                }
                Features::Sparse {
                    cols: *cols,
                    row_ptr: rp,
                    col_idx: ci,
                    values: vs,
                }
            }
        }
    }

    fn values(&self) -> &[f64] {
        match self {
            Features::Dense { values, .. } | Features::Sparse { values, .. } => values,
        }
    }
}

/// A binary classification dataset with labels in `{-1, +1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Features,
    pub labels: Vec<f64>,
    pub name: String,
}

impl Dataset {
    pub fn new(name: impl Into<String>, features: Features, labels: Vec<f64>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 1.0 && y != -1.0) {
            return Err(Error::InvalidArgument(format!("label {bad} is not -1 or +1")));
        }
        if !features.values().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("feature matrix".into()));
        }
        Ok(Dataset {
            features,
            labels,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn max_row_sq_norm(&self) -> f64 {
        (0..self.len())
            .map(|i| self.features.row_sq_norm(i))
            .fold(0.0, f64::max)
    }

    pub fn select(&self, idx: &[usize], name: impl Into<String>) -> Dataset {
        Dataset {
            features: self.features.select(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            name: name.into(),
        }
    }

    /// Every feature multiplied by `s`.
    pub fn scaled(&self, s: f64, name: impl Into<String>) -> Dataset {
        Dataset {
            features: self.features.scaled(s),
            labels: self.labels.clone(),
            name: name.into(),
        }
    }

    /// SHA-256 over dimensions, densified rows, and labels.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.len() as u64).to_le_bytes());
        h.update((self.dim() as u64).to_le_bytes());
        for i in 0..self.len() {
            for v in self.features.row_dense(i) {
                h.update(v.to_bits().to_le_bytes());
            }
            h.update(self.labels[i].to_bits().to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Train/test partition of a source dataset.
#[derive(Debug, Clone)]
pub struct SplitDataset {
    pub train: Dataset,
    pub test: Dataset,
    pub split_seed: u64,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

fn parse_label(tok: &str) -> Option<f64> {
    let v: f64 = tok.parse().ok()?;
    if v == 1.0 {
        Some(1.0)
    } else if v == -1.0 || v == 0.0 {
        Some(-1.0)
    } else {
        None
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Load a file in libsvm format (`label idx:val ...`, 1-based ascending indices).
pub fn load_libsvm(path: &Path) -> Result<Dataset> {
    load_libsvm_with_dim(path, 0)
}

/// Like [`load_libsvm`], with the dimension forced to at least `min_dim`
/// (useful when a test file does not mention the trailing features).
pub fn load_libsvm_with_dim(path: &Path, min_dim: usize) -> Result<Dataset> {
    let reader = open(path)?;
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut row_ptr = vec![0usize];
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut max_idx = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut toks = line.split_whitespace();
        let label_tok = toks.next().unwrap_or_default();
        let label = parse_label(label_tok)
            .ok_or_else(|| perr(lineno, format!("label {label_tok:?} not in {{0, 1, -1, +1}}")))?;
        let mut prev = 0usize;
        for tok in toks {
            let (i, v) = tok
                .split_once(':')
                .ok_or_else(|| perr(lineno, format!("expected idx:val, got {tok:?}")))?;
            let i: usize = i
                .parse()
                .map_err(|_| perr(lineno, format!("bad index {i:?}")))?;
            let v: f64 = v
                .parse()
                .map_err(|_| perr(lineno, format!("bad value {v:?}")))?;
            if i == 0 || i <= prev {
                return Err(perr(
                    lineno,
                    format!("index {i} is not 1-based ascending (previous {prev})"),
                ));
            }
            if !v.is_finite() {
                return Err(perr(lineno, format!("non-finite value {v}")));
            }
            prev = i;
            max_idx = max_idx.max(i);
            col_idx.push((i - 1) as u32);
            values.push(v);
        }
        row_ptr.push(col_idx.len());
        labels.push(label);
    }
    let features = Features::Sparse {
        cols: max_idx.max(min_dim),
        row_ptr,
        col_idx,
        values,
    };
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(name, features, labels)
}

/// Write a dataset in libsvm format, omitting exact zeros.
pub fn write_libsvm<W: Write>(ds: &Dataset, mut out: W) -> std::io::Result<()> {
    for i in 0..ds.len() {
        write!(out, "{}", if ds.labels[i] > 0.0 { "+1" } else { "-1" })?;
        for (j, v) in ds.features.row_entries(i) {
            if v != 0.0 {
                write!(out, " {}:{}", j + 1, v)?;
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Load comma-separated floats, last column the label. A first line with any
/// non-numeric field is treated as a header.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut cols: Option<usize> = None;
    for (n, rec) in rdr.records().enumerate() {
        let lineno = n + 1;
        let perr = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            msg,
        };
        let rec = rec.map_err(|e| perr(e.to_string()))?;
        if rec.is_empty() || (rec.len() == 1 && rec[0].is_empty()) {
            continue;
        }
        let parsed: Vec<Option<f64>> = rec.iter().map(|f| f.parse().ok()).collect();
        if lineno == 1 && parsed.iter().any(Option::is_none) {
            continue;
        }
        if rec.len() < 2 {
            return Err(perr("need at least one feature and a label".into()));
        }
        let width = rec.len() - 1;
        match cols {
            None => cols = Some(width),
            Some(c) if c != width => {
                return Err(perr(format!("expected {} features, got {width}", c)))
            }
            _ => {}
        }
        for (j, p) in parsed[..width].iter().enumerate() {
            let v = p.ok_or_else(|| perr(format!("field {} is not a number", j + 1)))?;
            values.push(v);
        }
        let label_tok = &rec[width];
        labels.push(
            parse_label(label_tok)
                .ok_or_else(|| perr(format!("label {label_tok:?} not in {{0, 1, -1, +1}}")))?,
        );
    }
    let cols = cols.unwrap_or(0);
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(name, Features::dense(labels.len(), cols, values)?, labels)
}

/// Random train/test split: a seeded uniform permutation, the first
/// `round(ratio * N)` entries go to train.
pub fn split(ds: &Dataset, ratio: f64, seed: u64) -> Result<SplitDataset> {
    let n = ds.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "cannot split a dataset with {n} examples"
        )));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split ratio {ratio} not in (0, 1)"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
    let mut train_indices = perm[..n_train].to_vec();
    let mut test_indices = perm[n_train..].to_vec();
    train_indices.sort_unstable();
    test_indices.sort_unstable();
    Ok(SplitDataset {
        train: ds.select(&train_indices, format!("{}-train", ds.name)),
        test: ds.select(&test_indices, format!("{}-test", ds.name)),
        split_seed: seed,
        train_indices,
        test_indices,
    })
}

/// Gaussian features with labels drawn from a logistic model around a hidden
/// Gaussian weight vector.
pub fn synthesize(n: usize, d: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument(format!(
            "synthetic dataset needs n >= 1 and d >= 1 (got n={n}, d={d})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w_true: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let mut values = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let margin: f64 = row.iter().zip(&w_true).map(|(a, b)| a * b).sum();
        let u: f64 = rng.random();
        labels.push(if u < sigmoid(margin) { 1.0 } else { -1.0 });
        values.extend(row);
    }
    Dataset::new(
        format!("synthetic-{n}x{d}-s{seed}"),
        Features::dense(n, d, values)?,
        labels,
    )
}

/// Scale all features by one factor so that every component logistic Hessian
/// `s_i x x' + lambda I` (with `s_i <= 1/4`) has spectral norm below one.
pub fn rescale_for_sgi(ds: &Dataset, lambda: f64) -> Result<(Dataset, f64)> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!(
            "rescaling needs 0 <= lambda < 1 (got {lambda})"
        )));
    }
    let max_sq = ds.max_row_sq_norm();
    if max_sq / 4.0 + lambda < 1.0 {
        return Ok((ds.clone(), 1.0));
    }
    let s = (0.99 * (1.0 - lambda) * 4.0 / max_sq).sqrt().min(1.0);
    Ok((ds.scaled(s, format!("{}-scaled", ds.name)), s))
}
