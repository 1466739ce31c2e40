//! Subsampled and inexact Newton methods for l2-regularized logistic
//! regression, with exact cost accounting and the constants that govern
//! their convergence.
//!
//! ```no_run
//! use std::sync::Arc;
//! use subnewton::{dataset, objective::LogisticObjective, optimize};
//!
//! let data = dataset::split(&dataset::synthesize(2000, 20, 1)?, 0.7, 0)?;
//! let n = data.train.len();
//! let obj = LogisticObjective::new(Arc::new(data.train), 1.0 / n as f64)?;
//! let reference = optimize::reference_minimizer(&obj, 1e-12)?;
//! let ctx = optimize::RunContext { train: &obj, test: None, reference: &reference, record_iterates: false };
//! let cfg = optimize::MethodConfig::newton_cg(
//!     subnewton::sampling::SampleSchedule::constant(n / 10, n)?,
//!     optimize::CgConfig::default(),
//! );
//! let rec = optimize::run(&ctx, &vec![0.0; 20], &cfg, &optimize::Budget::iters(20), 7)?;
//! println!("{:?} after {} iterations", rec.status, rec.iterations());
//! # Ok::<(), subnewton::Error>(())
//! ```

// `!(x > 0.0)` is the idiom for rejecting NaN along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod linsolve;
pub mod objective;
pub mod optimize;
pub mod sampling;

pub use error::{Error, Result};
