//! Benchmark harness: trace replay against a configured backend with and
//! without the cache, ground-truth computation, and per-window-step metrics.

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{Dataset, DelayedBackend, ExactBackend, VectorBackend};
use crate::engine::QvCache;
use crate::error::{Error, Result};
use crate::mini_index::MiniIndexConfig;
use crate::model::{CacheConfig, ServedFrom, Vector};
use crate::workload::TraceEntry;

/// Fraction of the exact top-k ids present in the returned id set.
pub fn compute_recall(result_ids: &[u64], ground_truth_ids: &[u64], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be positive".into()));
    }
    if ground_truth_ids.len() != k {
        return Err(Error::InvalidConfig(format!(
            "ground truth must have exactly k = {k} ids, got {}",
            ground_truth_ids.len()
        )));
    }
    if result_ids.len() > k {
        return Err(Error::InvalidConfig(format!(
            "result has {} ids, more than k = {k}",
            result_ids.len()
        )));
    }
    let hits = result_ids
        .iter()
        .filter(|id| ground_truth_ids.contains(id))
        .count();
    Ok(hits as f64 / k as f64)
}

/// Exact top-k ids for every trace entry, memoized per distinct query vector
/// and computed in parallel.
pub fn ground_truth(dataset: &Dataset, trace: &[TraceEntry], k: usize) -> Result<Vec<Vec<u64>>> {
    if k > dataset.len() {
        return Err(Error::KTooLarge {
            k,
            available: dataset.len(),
        });
    }
    // Memoize on the query's bit pattern: identical vectors share one search.
    use std::collections::HashMap;
    let mut unique: HashMap<Vec<u32>, usize> = HashMap::new();
    let mut owners: Vec<usize> = Vec::with_capacity(trace.len());
    let mut queries: Vec<&Vector> = Vec::new();
    for entry in trace {
        let bits: Vec<u32> = entry.query.components().iter().map(|c| c.to_bits()).collect();
        let slot = *unique.entry(bits).or_insert_with(|| {
            queries.push(&entry.query);
            queries.len() - 1
        });
        owners.push(slot);
    }
    let per_query: Vec<Vec<u64>> = queries
        .par_iter()
        .map(|q| {
            dataset
                .brute_force_search(q, k)
                .map(|ns| ns.iter().map(|n| n.id).collect())
        })
        .collect::<Result<_>>()?;
    Ok(owners.into_iter().map(|slot| per_query[slot].clone()).collect())
}

/// Largest number of distinct ground-truth ids referenced within any single
/// window step: an empirical working-set estimate.
pub fn estimate_working_set(trace: &[TraceEntry], truth: &[Vec<u64>]) -> usize {
    use std::collections::HashSet;
    let mut best = 0;
    let mut current: HashSet<u64> = HashSet::new();
    let mut step = u32::MAX;
    for (entry, ids) in trace.iter().zip(truth) {
        if entry.window_step != step {
            best = best.max(current.len());
            current.clear();
            step = entry.window_step;
        }
        current.extend(ids.iter().copied());
    }
    best.max(current.len())
}

/// Backend selection for a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BackendChoice {
    #[default]
    Exact,
    Delayed {
        search_ms: f64,
        fetch_ms: f64,
    },
}

impl BackendChoice {
    /// Parse "exact" or "delayed:<search_ms>:<fetch_ms>".
    pub fn parse(spec: &str) -> Result<Self> {
        if spec == "exact" {
            return Ok(Self::Exact);
        }
        if let Some(rest) = spec.strip_prefix("delayed:") {
            let mut parts = rest.split(':');
            let search_ms = parts
                .next()
                .and_then(|p| p.parse().ok())
                .ok_or_else(|| Error::InvalidConfig(format!("bad backend spec '{spec}'")))?;
            let fetch_ms = parts
                .next()
                .and_then(|p| p.parse().ok())
                .ok_or_else(|| Error::InvalidConfig(format!("bad backend spec '{spec}'")))?;
            if parts.next().is_some() {
                return Err(Error::InvalidConfig(format!("bad backend spec '{spec}'")));
            }
            return Ok(Self::Delayed {
                search_ms,
                fetch_ms,
            });
        }
        Err(Error::InvalidConfig(format!(
            "unknown backend '{spec}' (expected exact or delayed:<search_ms>:<fetch_ms>)"
        )))
    }

    pub fn build(&self, dataset: Dataset) -> Arc<dyn VectorBackend> {
        match *self {
            Self::Exact => Arc::new(ExactBackend::new(dataset)),
            Self::Delayed {
                search_ms,
                fetch_ms,
            } => Arc::new(DelayedBackend::new(
                ExactBackend::new(dataset),
                Duration::from_secs_f64(search_ms / 1e3),
                Duration::from_secs_f64(fetch_ms / 1e3),
            )),
        }
    }
}

/// Full benchmark configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchConfig {
    /// Result size requested per query.
    pub k: usize,
    pub cache: CacheConfig,
    pub backend: BackendChoice,
    /// Skip the cache entirely: every query goes to the backend.
    pub no_cache: bool,
    /// Graph parameter overrides for the mini-indexes (capacity always comes
    /// from the cache config).
    pub max_degree: usize,
    pub search_list_size: usize,
    pub prune_alpha: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        let mini = MiniIndexConfig::with_capacity(0);
        Self {
            k: 10,
            cache: CacheConfig {
                k_max: 10,
                deterministic_mode: true,
                ..CacheConfig::default()
            },
            backend: BackendChoice::Exact,
            no_cache: false,
            max_degree: mini.max_degree,
            search_list_size: mini.search_list_size,
            prune_alpha: mini.prune_alpha,
        }
    }
}

impl BenchConfig {
    fn mini_config(&self) -> MiniIndexConfig {
        MiniIndexConfig {
            capacity: self.cache.c_mini_index,
            max_degree: self.max_degree,
            search_list_size: self.search_list_size,
            prune_alpha: self.prune_alpha,
        }
    }
}

/// Metrics for one window step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepMetrics {
    pub window_step: u32,
    pub queries: usize,
    pub hits: usize,
    pub misses: usize,
    pub hit_ratio: f64,
    /// p50 over cache-hit queries; absent when the step had no hits.
    pub hit_latency_p50_s: Option<f64>,
    pub overall_latency_p50_s: f64,
    pub qps: f64,
    /// Mean recall over the step; absent when no ground truth was supplied.
    pub recall_at_k: Option<f64>,
    pub cumulative_vectors_fetched: u64,
    pub live_cached_vectors: usize,
    pub active_regions: usize,
    pub mean_mini_indexes_scanned: f64,
    pub evictions_so_far: u64,
}

/// Whole-run report: per-step metrics plus run-level aggregates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub steps: Vec<StepMetrics>,
    pub total_queries: usize,
    pub aggregate_hit_ratio: f64,
    /// Aggregate recall over all queries; absent without ground truth.
    pub aggregate_recall: Option<f64>,
    pub hit_latency_p50_s: Option<f64>,
    pub miss_latency_p50_s: Option<f64>,
    pub working_set_estimate: Option<usize>,
    pub total_capacity: usize,
    #[serde(skip)]
    pub eviction_events: Vec<(u32, usize)>,
}

fn percentile_50(samples: &mut Vec<f64>) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    samples.sort_by(|a, b| a.total_cmp(b));
    Some(samples[(samples.len() - 1) / 2])
}

/// Replay a trace through the cache (or straight to the backend with
/// `no_cache`) and aggregate metrics per window step.
///
/// `truth` supplies per-entry exact top-k ids; pass `None` to skip recall.
pub fn run_benchmark(
    dataset: &Dataset,
    trace: &[TraceEntry],
    projector: &crate::threshold::Projector,
    config: &BenchConfig,
    truth: Option<&[Vec<u64>]>,
) -> Result<BenchReport> {
    if let Some(truth) = truth {
        if truth.len() != trace.len() {
            return Err(Error::InvalidConfig(format!(
                "ground truth has {} entries for a trace of {}",
                truth.len(),
                trace.len()
            )));
        }
    }
    let backend = config.backend.build(dataset.clone());
    let cache = if config.no_cache {
        None
    } else {
        Some(QvCache::with_graph_config(
            config.cache.clone(),
            config.mini_config(),
            projector.clone(),
            Arc::clone(&backend),
        )?)
    };

    let mut steps: Vec<StepMetrics> = Vec::new();
    let mut eviction_events: Vec<(u32, usize)> = Vec::new();
    let mut hit_latencies: Vec<f64> = Vec::new();
    let mut miss_latencies: Vec<f64> = Vec::new();
    let mut total_hits = 0usize;
    let mut recall_sum = 0.0f64;

    let mut position = 0usize;
    while position < trace.len() {
        let step = trace[position].window_step;
        let end = trace[position..]
            .iter()
            .position(|e| e.window_step != step)
            .map(|offset| position + offset)
            .unwrap_or(trace.len());
        let entries = &trace[position..end];

        let scanned_before = cache.as_ref().map_or(0, |c| c.stats().mini_indexes_scanned_total);
        let mut step_hits = 0usize;
        let mut step_latencies: Vec<f64> = Vec::new();
        let mut step_hit_latencies: Vec<f64> = Vec::new();
        let mut step_recall = 0.0f64;
        let step_started = Instant::now();

        for (offset, entry) in entries.iter().enumerate() {
            let started = Instant::now();
            let (ids, served) = match &cache {
                Some(cache) => {
                    let result = cache.search(&entry.query, config.k)?;
                    (result.ids(), result.served_from())
                }
                None => {
                    let neighbors = backend.search(&entry.query, config.k)?;
                    (
                        neighbors.iter().map(|n| n.id).collect(),
                        ServedFrom::Backend,
                    )
                }
            };
            let elapsed = started.elapsed().as_secs_f64();
            step_latencies.push(elapsed);
            if served == ServedFrom::Cache {
                step_hits += 1;
                step_hit_latencies.push(elapsed);
                hit_latencies.push(elapsed);
            } else {
                miss_latencies.push(elapsed);
            }
            if let Some(truth) = truth {
                let r = compute_recall(&ids, &truth[position + offset], config.k)?;
                step_recall += r;
                recall_sum += r;
            }
        }

        let wall = step_started.elapsed().as_secs_f64();
        total_hits += step_hits;
        let stats = cache.as_ref().map(|c| c.stats()).unwrap_or_default();
        if let Some(cache) = &cache {
            for event in cache.take_eviction_events() {
                eviction_events.push((step, event.evicted_live));
            }
        }
        steps.push(StepMetrics {
            window_step: step,
            queries: entries.len(),
            hits: step_hits,
            misses: entries.len() - step_hits,
            hit_ratio: step_hits as f64 / entries.len() as f64,
            hit_latency_p50_s: percentile_50(&mut step_hit_latencies),
            overall_latency_p50_s: percentile_50(&mut step_latencies).unwrap_or(0.0),
            qps: entries.len() as f64 / wall.max(1e-12),
            recall_at_k: truth.map(|_| step_recall / entries.len() as f64),
            cumulative_vectors_fetched: stats.vectors_fetched,
            live_cached_vectors: cache.as_ref().map_or(0, |c| c.live_vectors()),
            active_regions: cache.as_ref().map_or(0, |c| c.active_regions()),
            mean_mini_indexes_scanned: (stats.mini_indexes_scanned_total - scanned_before) as f64
                / entries.len() as f64,
            evictions_so_far: stats.evictions,
        });
        position = end;
    }

    let total_queries = trace.len();
    Ok(BenchReport {
        config: config.clone(),
        steps,
        total_queries,
        aggregate_hit_ratio: total_hits as f64 / total_queries.max(1) as f64,
        aggregate_recall: truth.map(|_| recall_sum / total_queries.max(1) as f64),
        hit_latency_p50_s: percentile_50(&mut hit_latencies),
        miss_latency_p50_s: percentile_50(&mut miss_latencies),
        working_set_estimate: truth.map(|t| estimate_working_set(trace, t)),
        total_capacity: config.cache.total_capacity(),
        eviction_events,
    })
}

impl BenchReport {
    /// One CSV row per window step.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        use std::io::Write;
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(
            out,
            "window_step,queries,hits,misses,hit_ratio,hit_latency_p50_s,overall_latency_p50_s,\
             qps,recall_at_k,cumulative_vectors_fetched,live_cached_vectors,active_regions,\
             mean_mini_indexes_scanned,evictions_so_far"
        )?;
        for s in &self.steps {
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                s.window_step,
                s.queries,
                s.hits,
                s.misses,
                s.hit_ratio,
                opt(s.hit_latency_p50_s),
                s.overall_latency_p50_s,
                s.qps,
                opt(s.recall_at_k),
                s.cumulative_vectors_fetched,
                s.live_cached_vectors,
                s.active_regions,
                s.mean_mini_indexes_scanned,
                s.evictions_so_far,
            )?;
        }
        Ok(())
    }

    /// JSON sidecar with the full config and run-level aggregates.
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }

    /// Step metrics grouped as (position, repeats) given the workload's
    /// repeat count.
    pub fn positions(&self, n_repeat: usize) -> Vec<&[StepMetrics]> {
        self.steps.chunks(n_repeat).collect()
    }
}
