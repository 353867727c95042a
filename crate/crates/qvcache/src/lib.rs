//! qvcache — a similarity-aware, query-level cache for approximate
//! nearest-neighbor search.
//!
//! Exact query repetition is rare in vector search; semantically similar
//! queries are not. This crate caches the neighbor sets of recent queries in
//! a pool of small in-memory proximity graphs (mini-indexes) and answers a new
//! query from the cache whenever its k-th candidate distance falls within a
//! distance threshold learned online for that query's region of space. Misses
//! fall through to a pluggable backend, whose results feed both the cache fill
//! and the threshold learner. Memory stays bounded: eviction resets whole
//! mini-indexes, never individual vectors.
//!
//! Alongside the cache itself, the crate ships the surrounding benchmark kit:
//! a Gaussian-mixture dataset generator, fvecs/bvecs/ivecs loaders, a workload
//! generator with controllable temporal-semantic locality, ground-truth and
//! recall tooling, and a benchmark runner reporting per-window-step metrics.
//!
//! ## Examples
//!
//! Each major capability has a runnable example:
//!
//! ```bash
//! cargo run --release --example mini_index_basics     # graph insert/search/reset
//! cargo run --release --example cache_lifecycle       # miss -> fill -> hit flow
//! cargo run --release --example threshold_learning    # regional EMA thresholds
//! cargo run --release --example pca_projection        # projector training
//! cargo run --release --example workload_trace        # sliding-window traces
//! cargo run --release --example strategy_comparison   # EAGER vs EXHAUSTIVE vs ADAPTIVE
//! cargo run --release --example capacity_eviction     # eviction under pressure
//! cargo run --release --example full_benchmark        # end-to-end benchmark
//! ```
//!
//! The `qvcache` binary wraps the same machinery as a small CLI
//! (`gen-synthetic`, `train-pca`, `gen-trace`, `ground-truth`, `run`).

pub mod backend;
pub mod bench;
pub mod engine;
pub mod error;
pub mod mini_index;
pub mod model;
pub mod pca;
pub mod synthetic;
pub mod threshold;
pub mod workload;

pub use backend::{
    load_bvecs, load_fvecs, load_ivecs, write_fvecs, write_ivecs, CountingBackend, Dataset,
    DelayedBackend, ExactBackend, VectorBackend,
};
pub use engine::{CacheStats, EvictionEvent, QvCache};
pub use error::{Error, Result};
pub use mini_index::{InsertOutcome, MiniIndex, MiniIndexConfig};
pub use model::{
    distance, CacheConfig, DistanceMetric, Neighbor, SearchResult, SearchStrategy, ServedFrom,
    Vector,
};
pub use pca::{sample_dataset, train};
pub use synthetic::GaussianMixture;
pub use threshold::{Projector, RegionKey, ThresholdStore};
pub use workload::{
    generate_trace, load_trace, perturb, save_trace, split_queries, TraceEntry, WorkloadParams,
};
