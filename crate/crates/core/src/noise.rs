//! Background allocation noise.
//!
//! A profile lists per-tick mean rates. Each tick the counts are drawn from
//! Poisson distributions and the resulting operations are shuffled, so noise
//! arrives in an unpredictable order but is fully determined by the RNG.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

/// One stressor family allocating objects of a fixed size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSource {
    pub label: String,
    pub size: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct NoiseProfile {
    #[serde(default)]
    pub cache_allocs: Vec<NoiseSource>,
    /// Frees of randomly chosen live noise objects.
    #[serde(default)]
    pub object_frees: f64,
    #[serde(default)]
    pub page_allocs: f64,
    #[serde(default)]
    pub page_frees: f64,
}

/// Per-stressor rates of the busy preset. Each family runs two stressors.
const BUSY_OBJECT_RATE: f64 = 0.15;
const BUSY_PAGE_RATE: f64 = 0.02;
const STRESSORS_PER_FAMILY: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoisePreset {
    Idle,
    Busy,
}

impl NoisePreset {
    pub fn profile(self) -> NoiseProfile {
        match self {
            NoisePreset::Idle => NoiseProfile::idle(),
            NoisePreset::Busy => NoiseProfile::busy(),
        }
    }
}

impl NoiseProfile {
    pub fn idle() -> Self {
        Self::default()
    }

    /// sock, shm and timerfd object stressors plus raw page churn.
    pub fn busy() -> Self {
        let family = BUSY_OBJECT_RATE * STRESSORS_PER_FAMILY;
        let source = |label: &str, size| NoiseSource {
            label: label.into(),
            size,
            rate: family,
        };
        Self {
            cache_allocs: vec![source("sock", 2048), source("shm", 64), source("timerfd", 256)],
            object_frees: 3.0 * family,
            page_allocs: BUSY_PAGE_RATE * STRESSORS_PER_FAMILY,
            page_frees: BUSY_PAGE_RATE * STRESSORS_PER_FAMILY,
        }
    }

    /// The object-cache part of the profile; page churn removed.
    pub fn objects_only(mut self) -> Self {
        self.page_allocs = 0.0;
        self.page_frees = 0.0;
        self
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        for s in &mut self.cache_allocs {
            s.rate *= factor;
        }
        self.object_frees *= factor;
        self.page_allocs *= factor;
        self.page_frees *= factor;
        self
    }

    fn rates(&self) -> impl Iterator<Item = f64> + '_ {
        self.cache_allocs
            .iter()
            .map(|s| s.rate)
            .chain([self.object_frees, self.page_allocs, self.page_frees])
    }

    pub fn is_valid(&self) -> bool {
        self.rates().all(|r| r.is_finite() && r >= 0.0) && self.cache_allocs.iter().all(|s| s.size > 0)
    }

    pub fn is_idle(&self) -> bool {
        self.rates().all(|r| r == 0.0)
    }

    /// Every rate of `self` is at least the matching rate of `other`, and at
    /// least one is larger. Sources are matched by label.
    pub fn dominates(&self, other: &NoiseProfile) -> bool {
        let src = |p: &NoiseProfile, label: &str| {
            p.cache_allocs
                .iter()
                .filter(|s| s.label == label)
                .map(|s| s.rate)
                .sum::<f64>()
        };
        let labels = self.cache_allocs.iter().chain(&other.cache_allocs).map(|s| s.label.as_str());
        let pairs: Vec<(f64, f64)> = labels
            .map(|l| (src(self, l), src(other, l)))
            .chain([
                (self.object_frees, other.object_frees),
                (self.page_allocs, other.page_allocs),
                (self.page_frees, other.page_frees),
            ])
            .collect();
        pairs.iter().all(|(a, b)| a >= b) && pairs.iter().any(|(a, b)| a > b)
    }

    /// Draws one tick's worth of operations in random order.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<NoiseOp> {
        let mut ops = Vec::new();
        for (i, s) in self.cache_allocs.iter().enumerate() {
            ops.extend(std::iter::repeat_n(NoiseOp::Alloc(i), poisson(rng, s.rate)));
        }
        ops.extend(std::iter::repeat_n(NoiseOp::FreeObject, poisson(rng, self.object_frees)));
        ops.extend(std::iter::repeat_n(NoiseOp::AllocPage, poisson(rng, self.page_allocs)));
        ops.extend(std::iter::repeat_n(NoiseOp::FreePage, poisson(rng, self.page_frees)));
        ops.shuffle(rng);
        ops
    }
}

/// A single noise action. `Alloc` indexes into `cache_allocs`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseOp {
    Alloc(usize),
    FreeObject,
    AllocPage,
    FreePage,
}

fn poisson<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> usize {
    if rate <= 0.0 {
        return 0;
    }
    Poisson::new(rate).expect("positive finite rate").sample(rng) as usize
}

/// Smallest `k` with `P(X <= k) >= u` for `X ~ Poisson(rate)`.
///
/// With `u` held fixed the result is non-decreasing in `rate`, which couples
/// runs that differ only in rate.
pub fn poisson_quantile(rate: f64, u: f64) -> usize {
    if rate <= 0.0 {
        return 0;
    }
    let mut p = (-rate).exp();
    let mut cdf = p;
    let mut k = 0usize;
    while cdf < u && k < 10_000 {
        k += 1;
        p *= rate / k as f64;
        cdf += p;
    }
    k
}

/// Splits `ops` across `steps + 1` gaps around `steps` atomic steps. Gap `i`
/// runs before step `i`; the last gap runs after the final step.
pub fn interleave<R: Rng + ?Sized>(ops: Vec<NoiseOp>, steps: usize, rng: &mut R) -> Vec<Vec<NoiseOp>> {
    let mut gaps = vec![Vec::new(); steps + 1];
    for op in ops {
        gaps[rng.random_range(0..=steps)].push(op);
    }
    gaps
}
