//! Sample-size schedules and seeded index draws for gradient and Hessian
//! subsampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::IndexSet;

/// Growth rule for `eta_k` in a super-geometric schedule: `offset + slope * k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaRule {
    pub offset: f64,
    pub slope: f64,
}

impl Default for EtaRule {
    fn default() -> Self {
        EtaRule {
            offset: 1.0,
            slope: 1.0,
        }
    }
}

impl EtaRule {
    pub fn eta(&self, k: usize) -> f64 {
        self.offset + self.slope * k as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant { beta: usize },
    Geometric { x0: f64, eta: f64 },
    Supergeometric { x0: f64, rule: EtaRule },
}

/// A per-iteration sample size, clamped to `[1, cap]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSchedule {
    pub kind: ScheduleKind,
    pub cap: usize,
    pub replacement: bool,
}

impl SampleSchedule {
    pub fn new(kind: ScheduleKind, cap: usize) -> Result<Self> {
        if cap == 0 {
            return Err(Error::InvalidArgument("sample pool is empty".into()));
        }
        match kind {
            ScheduleKind::Constant { beta: 0 } => {
                return Err(Error::InvalidArgument("constant sample size must be >= 1".into()))
            }
            ScheduleKind::Geometric { x0, eta } if !(x0 >= 1.0 && eta > 1.0) => {
                return Err(Error::InvalidArgument(format!(
                    "geometric schedule needs x0 >= 1 and eta > 1 (got x0={x0}, eta={eta})"
                )))
            }
            ScheduleKind::Supergeometric { x0, rule }
                if !(x0 >= 1.0 && rule.slope > 0.0 && rule.eta(1) > 1.0) =>
            {
                return Err(Error::InvalidArgument(format!(
                    "super-geometric schedule needs x0 >= 1, increasing eta_k and eta_1 > 1 \
                     (got x0={x0}, eta_k={} + {} k)",
                    rule.offset, rule.slope
                )))
            }
            _ => {}
        }
        Ok(SampleSchedule {
            kind,
            cap,
            replacement: false,
        })
    }

    pub fn constant(beta: usize, cap: usize) -> Result<Self> {
        Self::new(ScheduleKind::Constant { beta }, cap)
    }

    pub fn full(cap: usize) -> Result<Self> {
        Self::constant(cap, cap)
    }

    pub fn geometric(x0: f64, eta: f64, cap: usize) -> Result<Self> {
        Self::new(ScheduleKind::Geometric { x0, eta }, cap)
    }

    pub fn supergeometric(x0: f64, cap: usize) -> Result<Self> {
        Self::new(
            ScheduleKind::Supergeometric {
                x0,
                rule: EtaRule::default(),
            },
            cap,
        )
    }

    pub fn with_replacement(mut self, replacement: bool) -> Self {
        self.replacement = replacement;
        self
    }

    /// Unclamped size before saturation; `None` on overflow.
    fn raw_size(&self, k: usize) -> Option<f64> {
        let v = match self.kind {
            ScheduleKind::Constant { beta } => beta as f64,
            ScheduleKind::Geometric { x0, eta } => (x0 * eta.powi(k as i32)).ceil(),
            ScheduleKind::Supergeometric { x0, rule } => {
                (x0 * rule.eta(k).powi(k as i32)).ceil()
            }
        };
        v.is_finite().then_some(v)
    }

    pub fn size_at(&self, k: usize) -> usize {
        let cap = if self.replacement && matches!(self.kind, ScheduleKind::Constant { .. }) {
            usize::MAX
        } else {
            self.cap
        };
        match self.raw_size(k) {
            Some(v) if v < cap as f64 => (v as usize).max(1),
            _ => cap,
        }
    }

    /// First iteration whose size reaches the pool, if any within `horizon`.
    pub fn saturation_iter(&self, horizon: usize) -> Option<usize> {
        (0..horizon).find(|&k| self.size_at(k) >= self.cap)
    }

    /// Draw the sample for iteration `k` from `stream`.
    pub fn draw(&self, k: usize, pool: usize, stream: &SeedStream) -> Result<IndexSet> {
        if pool == 0 {
            return Err(Error::InvalidArgument("sample pool is empty".into()));
        }
        let m = self.size_at(k);
        let mut rng = stream.rng(k as u64);
        if self.replacement {
            let idx = (0..m).map(|_| rng.random_range(0..pool)).collect();
            return IndexSet::new(idx, true, pool);
        }
        if m >= pool {
            return Ok(IndexSet::full(pool));
        }
        let idx = rand::seq::index::sample(&mut rng, pool, m).into_vec();
        IndexSet::new(idx, false, pool)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// An independent random stream identified by `(seed, tag)`; iteration `k`
/// of the stream gets its own generator, so draws do not depend on how many
/// numbers earlier iterations consumed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    pub seed: u64,
    pub tag: u64,
}

impl SeedStream {
    pub const GRADIENT: u64 = 1;
    pub const HESSIAN: u64 = 2;
    pub const INNER: u64 = 3;
    pub const START: u64 = 4;

    pub fn new(seed: u64, tag: u64) -> Self {
        SeedStream { seed, tag }
    }

    pub fn rng(&self, k: u64) -> ChaCha8Rng {
        let mixed = splitmix64(splitmix64(self.seed) ^ splitmix64(self.tag.wrapping_mul(0x1000_0001)) ^ k.wrapping_mul(0x632b_e59b_d9b4_e019));
        ChaCha8Rng::seed_from_u64(mixed)
    }
}

/// Gradient and Hessian streams of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSeeds {
    pub gradient: SeedStream,
    pub hessian: SeedStream,
    pub inner: SeedStream,
}

impl RunSeeds {
    pub fn from_seed(seed: u64) -> Self {
        RunSeeds {
            gradient: SeedStream::new(seed, SeedStream::GRADIENT),
            hessian: SeedStream::new(seed, SeedStream::HESSIAN),
            inner: SeedStream::new(seed, SeedStream::INNER),
        }
    }
}
