//! Shared domain types: vectors, neighbors, search results, distance metrics,
//! and the cache configuration record.
//!
//! Everything here is an immutable value after construction and can be shared
//! freely across threads. Distances are plain (non-squared) L2 or cosine
//! distance, computed with 64-bit accumulation over 32-bit components, so
//! learned thresholds compare directly against backend-reported distances.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense embedding vector of 32-bit floats.
///
/// Construction rejects NaN and infinite components; dimensionality is fixed
/// at creation.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector {
    components: Vec<f32>,
}

impl Vector {
    pub fn new(components: Vec<f32>) -> Result<Self> {
        for (position, c) in components.iter().enumerate() {
            if !c.is_finite() {
                return Err(Error::NonFinite { position });
            }
        }
        Ok(Self { components })
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[f32] {
        &self.components
    }

    pub fn into_components(self) -> Vec<f32> {
        self.components
    }
}

impl AsRef<[f32]> for Vector {
    fn as_ref(&self) -> &[f32] {
        &self.components
    }
}

/// One search result entry: a backend vector id and its distance to the query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: u64,
    pub distance: f64,
}

impl Neighbor {
    pub fn new(id: u64, distance: f64) -> Self {
        debug_assert!(distance.is_finite() && distance >= 0.0);
        Self { id, distance }
    }
}

/// Where a query was answered from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ServedFrom {
    Cache,
    Backend,
}

/// A sorted list of neighbors plus the tier that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    neighbors: Vec<Neighbor>,
    served_from: ServedFrom,
}

impl SearchResult {
    /// Build a result, rejecting unsorted distances or duplicate ids.
    pub fn new(neighbors: Vec<Neighbor>, served_from: ServedFrom) -> Result<Self> {
        let mut seen = std::collections::HashSet::with_capacity(neighbors.len());
        for pair in neighbors.windows(2) {
            if pair[1].distance < pair[0].distance {
                return Err(Error::UnsortedResult);
            }
        }
        for n in &neighbors {
            if !seen.insert(n.id) {
                return Err(Error::DuplicateId(n.id));
            }
        }
        Ok(Self {
            neighbors,
            served_from,
        })
    }

    pub fn neighbors(&self) -> &[Neighbor] {
        &self.neighbors
    }

    pub fn served_from(&self) -> ServedFrom {
        self.served_from
    }

    pub fn ids(&self) -> Vec<u64> {
        self.neighbors.iter().map(|n| n.id).collect()
    }

    pub fn distances(&self) -> Vec<f64> {
        self.neighbors.iter().map(|n| n.distance).collect()
    }
}

/// Distance metric used across the cache, backend, and workload tools.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    /// Plain (non-squared) L2 norm of a - b.
    #[default]
    Euclidean,
    /// 1 - (a.b) / (|a||b|).
    CosineDistance,
}

/// Compute the distance between two vectors under `metric`.
///
/// Components are f32 but products accumulate in f64. Errors on dimension
/// mismatch, and on a zero vector under cosine distance.
pub fn distance(a: &Vector, b: &Vector, metric: DistanceMetric) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    distance_slices(a.components(), b.components(), metric)
}

/// Slice-level distance kernel shared by the index and backend hot paths.
/// Callers must have validated dimensions.
pub(crate) fn distance_slices(a: &[f32], b: &[f32], metric: DistanceMetric) -> Result<f64> {
    match metric {
        DistanceMetric::Euclidean => Ok(euclidean(a, b)),
        DistanceMetric::CosineDistance => {
            let mut dot = 0.0f64;
            let mut norm_a = 0.0f64;
            let mut norm_b = 0.0f64;
            for (x, y) in a.iter().zip(b) {
                let (x, y) = (*x as f64, *y as f64);
                dot += x * y;
                norm_a += x * x;
                norm_b += y * y;
            }
            if norm_a == 0.0 || norm_b == 0.0 {
                return Err(Error::ZeroVectorCosine);
            }
            // Rounding can push the ratio a hair past 1 for identical inputs.
            Ok((1.0 - dot / (norm_a.sqrt() * norm_b.sqrt())).max(0.0))
        }
    }
}

fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = (*x - *y) as f64;
        acc += d * d;
    }
    acc.sqrt()
}

/// Cache scan strategy: stop at the first hitting mini-index, scan all of
/// them, or switch between the two based on the recent hit ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SearchStrategy {
    Eager,
    Exhaustive,
    #[default]
    Adaptive,
}

/// Top-level cache configuration.
///
/// Total capacity is `n_mini_index * c_mini_index` vectors. `deviation_factor`
/// is the multiplicative slack applied to learned thresholds on hit decisions;
/// `adaptivity_rate` is the EMA weight for threshold updates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheConfig {
    /// Largest k any query may request.
    pub k_max: usize,
    /// Hit-decision slack D: hit iff d_cache[k] <= (1 + D) * theta.
    pub deviation_factor: f64,
    /// EMA weight alpha in [0, 1] for threshold learning.
    pub adaptivity_rate: f64,
    /// Number of mini-indexes in the pool.
    pub n_mini_index: usize,
    /// Capacity of each mini-index, in vectors.
    pub c_mini_index: usize,
    /// Scan strategy.
    pub strategy: SearchStrategy,
    /// Adaptive mode switches to EAGER when the recent hit ratio reaches this.
    pub adaptive_hit_ratio_threshold: f64,
    /// Number of recent hit/miss decisions the adaptive trend looks at.
    pub adaptive_window: usize,
    pub metric: DistanceMetric,
    /// Run fill and threshold learning synchronously inside `search`, giving
    /// reproducible traces. Production mode hands them to a background worker.
    pub deterministic_mode: bool,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self {
            k_max: 100,
            deviation_factor: 0.1,
            adaptivity_rate: 0.9,
            n_mini_index: 4,
            c_mini_index: 25_000,
            strategy: SearchStrategy::Adaptive,
            adaptive_hit_ratio_threshold: 0.9,
            adaptive_window: 100,
            metric: DistanceMetric::Euclidean,
            deterministic_mode: false,
        }
    }
}

impl CacheConfig {
    /// Total cache capacity in vectors.
    pub fn total_capacity(&self) -> usize {
        self.n_mini_index * self.c_mini_index
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_max == 0 {
            return Err(Error::InvalidConfig("k_max must be positive".into()));
        }
        if self.n_mini_index == 0 || self.c_mini_index == 0 {
            return Err(Error::InvalidConfig(
                "n_mini_index and c_mini_index must be positive".into(),
            ));
        }
        if self.c_mini_index < self.k_max {
            return Err(Error::InvalidConfig(format!(
                "c_mini_index ({}) must be >= k_max ({}) so one miss fits in one mini-index",
                self.c_mini_index, self.k_max
            )));
        }
        if !(0.0..=1.0).contains(&self.adaptivity_rate) {
            return Err(Error::InvalidConfig(
                "adaptivity_rate must be in [0, 1]".into(),
            ));
        }
        if self.deviation_factor < 0.0 || !self.deviation_factor.is_finite() {
            return Err(Error::InvalidConfig(
                "deviation_factor must be finite and >= 0".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.adaptive_hit_ratio_threshold) {
            return Err(Error::InvalidConfig(
                "adaptive_hit_ratio_threshold must be in [0, 1]".into(),
            ));
        }
        if self.adaptive_window == 0 {
            return Err(Error::InvalidConfig(
                "adaptive_window must be positive".into(),
            ));
        }
        Ok(())
    }
}
