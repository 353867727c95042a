//! The cache engine: a pool of mini-indexes in front of a backend.
//!
//! Every query first runs a cache search over the mini-indexes, scanned
//! hottest-first. A per-index candidate set counts as a hit when its k-th
//! distance is within the learned regional threshold (inflated by the
//! deviation factor). Hits are answered from the cache; misses go to the
//! backend, then feed the cache fill and threshold learning paths — inline in
//! deterministic mode, on a background worker otherwise.
//!
//! Memory is bounded by construction: fills target the hottest mini-index
//! with room, and when none has room the coldest index is reset whole.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::thread::JoinHandle;

use crate::backend::VectorBackend;
use crate::error::{Error, Result};
use crate::mini_index::{InsertOutcome, MiniIndex, MiniIndexConfig};
use crate::model::{CacheConfig, Neighbor, SearchResult, SearchStrategy, ServedFrom, Vector};
use crate::threshold::{Projector, RegionKey, ThresholdStore};

/// Counter snapshot.
#[derive(Debug, Clone, Copy, Default, serde::Serialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
    pub vectors_fetched: u64,
    pub mini_indexes_scanned_total: u64,
}

/// One whole-index eviction, with the live totals around it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvictionEvent {
    pub slot: usize,
    pub evicted_live: usize,
    pub live_before: usize,
    pub live_after: usize,
}

struct Counters {
    hits: AtomicU64,
    misses: AtomicU64,
    evictions: AtomicU64,
    vectors_fetched: AtomicU64,
    scanned_total: AtomicU64,
}

impl Counters {
    fn new() -> Self {
        Self {
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            evictions: AtomicU64::new(0),
            vectors_fetched: AtomicU64::new(0),
            scanned_total: AtomicU64::new(0),
        }
    }
}

/// Eviction order and membership live under one lock so lookups and fills see
/// them change atomically.
struct PoolState {
    /// Mini-index slots from hottest (front) to coldest (back).
    eviction_order: Vec<usize>,
    /// id -> slot holding it; an id is live in exactly one mini-index.
    membership: HashMap<u64, usize>,
}

struct CacheCore {
    config: CacheConfig,
    projector: Projector,
    backend: Arc<dyn VectorBackend>,
    mini_indexes: Vec<RwLock<MiniIndex>>,
    state: Mutex<PoolState>,
    decision_log: Mutex<VecDeque<bool>>,
    thresholds: RwLock<ThresholdStore>,
    counters: Counters,
    eviction_events: Mutex<Vec<EvictionEvent>>,
}

struct MissEvent {
    query: Vector,
    k: usize,
    ids: Vec<u64>,
    distances: Vec<f64>,
}

struct Worker {
    sender: Option<mpsc::Sender<MissEvent>>,
    handle: Option<JoinHandle<()>>,
    pending: Arc<(Mutex<usize>, Condvar)>,
}

/// Similarity-aware query cache over any [`VectorBackend`].
pub struct QvCache {
    core: Arc<CacheCore>,
    worker: Option<Worker>,
}

impl QvCache {
    /// Build a cache with default graph parameters for the mini-indexes.
    pub fn new(
        config: CacheConfig,
        projector: Projector,
        backend: Arc<dyn VectorBackend>,
    ) -> Result<Self> {
        let mini = MiniIndexConfig::with_capacity(config.c_mini_index);
        Self::with_graph_config(config, mini, projector, backend)
    }

    pub fn with_graph_config(
        config: CacheConfig,
        mini: MiniIndexConfig,
        projector: Projector,
        backend: Arc<dyn VectorBackend>,
    ) -> Result<Self> {
        config.validate()?;
        mini.validate()?;
        if mini.capacity != config.c_mini_index {
            return Err(Error::InvalidConfig(format!(
                "mini-index capacity {} must equal c_mini_index {}",
                mini.capacity, config.c_mini_index
            )));
        }
        if mini.search_list_size < config.k_max {
            return Err(Error::InvalidConfig(format!(
                "search_list_size {} must be >= k_max {}",
                mini.search_list_size, config.k_max
            )));
        }
        let mini_indexes = (0..config.n_mini_index)
            .map(|_| Ok(RwLock::new(MiniIndex::new(mini, config.metric)?)))
            .collect::<Result<Vec<_>>>()?;
        let thresholds = ThresholdStore::new(config.adaptivity_rate, None)?;
        let deterministic = config.deterministic_mode;

        let core = Arc::new(CacheCore {
            state: Mutex::new(PoolState {
                eviction_order: (0..config.n_mini_index).collect(),
                membership: HashMap::new(),
            }),
            decision_log: Mutex::new(VecDeque::with_capacity(config.adaptive_window)),
            thresholds: RwLock::new(thresholds),
            counters: Counters::new(),
            eviction_events: Mutex::new(Vec::new()),
            mini_indexes,
            config,
            projector,
            backend,
        });

        let worker = if deterministic {
            None
        } else {
            Some(Worker::spawn(Arc::clone(&core)))
        };
        Ok(Self { core, worker })
    }

    pub fn config(&self) -> &CacheConfig {
        &self.core.config
    }

    pub fn projector(&self) -> &Projector {
        &self.core.projector
    }

    /// Tiered lookup: cache first, backend on a miss. Misses schedule the
    /// cache fill and threshold update; in deterministic mode both complete
    /// before this returns, and their failures are logged, never surfaced.
    pub fn search(&self, query: &Vector, k: usize) -> Result<SearchResult> {
        if k == 0 || k > self.core.config.k_max {
            return Err(Error::InvalidConfig(format!(
                "k must be in 1..={}, got {k}",
                self.core.config.k_max
            )));
        }
        let (neighbors, is_hit, scanned) = self.core.cache_search(query, k)?;
        self.core
            .counters
            .scanned_total
            .fetch_add(scanned as u64, Ordering::Relaxed);
        self.core.push_decision(is_hit);

        if is_hit {
            self.core.counters.hits.fetch_add(1, Ordering::Relaxed);
            return SearchResult::new(neighbors, ServedFrom::Cache);
        }

        let backend_neighbors = self.core.backend.search(query, k)?;
        self.core.counters.misses.fetch_add(1, Ordering::Relaxed);
        let event = MissEvent {
            query: query.clone(),
            k,
            ids: backend_neighbors.iter().map(|n| n.id).collect(),
            distances: backend_neighbors.iter().map(|n| n.distance).collect(),
        };
        match &self.worker {
            None => self.core.fill_and_learn(event),
            Some(worker) => worker.enqueue(event),
        }
        SearchResult::new(backend_neighbors, ServedFrom::Backend)
    }

    /// Scan the pool for candidates without touching the backend. Returns the
    /// re-ranked candidates, the hit flag, and how many mini-indexes were
    /// scanned.
    pub fn cache_search(&self, query: &Vector, k: usize) -> Result<(Vec<Neighbor>, bool, usize)> {
        self.core.cache_search(query, k)
    }

    /// Hit decision for a candidate distance list (sorted ascending).
    pub fn is_hit(&self, query: &Vector, k: usize, cache_distances: &[f64]) -> Result<bool> {
        let region = self.core.projector.region_key(query)?;
        let theta = self.core.thresholds.read().unwrap().lookup(k, region);
        Ok(hit_decision(
            theta,
            k,
            cache_distances,
            self.core.config.deviation_factor,
        ))
    }

    /// Insert one miss's fetched vectors, deduplicated against the pool.
    pub fn cache_fill(&self, entries: Vec<(u64, Vector)>) -> Result<()> {
        self.core.cache_fill(entries)
    }

    /// Fold an observed backend distance list into the regional threshold.
    pub fn learn_threshold(&self, query: &Vector, k: usize, backend_distances: &[f64]) -> Result<RegionKey> {
        self.core
            .thresholds
            .write()
            .unwrap()
            .learn(&self.core.projector, query, k, backend_distances)
    }

    pub fn lookup_threshold(&self, k: usize, region: RegionKey) -> Option<f64> {
        self.core.thresholds.read().unwrap().lookup(k, region)
    }

    /// Fraction of hits among the recent decision window; 0 when empty.
    pub fn hit_ratio_trend(&self) -> f64 {
        self.core.hit_ratio_trend()
    }

    pub fn stats(&self) -> CacheStats {
        let c = &self.core.counters;
        CacheStats {
            hits: c.hits.load(Ordering::Relaxed),
            misses: c.misses.load(Ordering::Relaxed),
            evictions: c.evictions.load(Ordering::Relaxed),
            vectors_fetched: c.vectors_fetched.load(Ordering::Relaxed),
            mini_indexes_scanned_total: c.scanned_total.load(Ordering::Relaxed),
        }
    }

    /// Total live vectors across the pool.
    pub fn live_vectors(&self) -> usize {
        self.core.state.lock().unwrap().membership.len()
    }

    pub fn live_per_index(&self) -> Vec<usize> {
        self.core
            .mini_indexes
            .iter()
            .map(|m| m.read().unwrap().live_count())
            .collect()
    }

    /// Count of learned (k, region) threshold entries.
    pub fn active_regions(&self) -> usize {
        self.core.thresholds.read().unwrap().len()
    }

    /// Current slot order from hottest to coldest.
    pub fn eviction_order(&self) -> Vec<usize> {
        self.core.state.lock().unwrap().eviction_order.clone()
    }

    pub fn membership_slot(&self, id: u64) -> Option<usize> {
        self.core.state.lock().unwrap().membership.get(&id).copied()
    }

    /// Drain recorded eviction events.
    pub fn take_eviction_events(&self) -> Vec<EvictionEvent> {
        std::mem::take(&mut *self.core.eviction_events.lock().unwrap())
    }

    /// Block until all queued fill/learn work has completed. A no-op in
    /// deterministic mode.
    pub fn flush(&self) {
        if let Some(worker) = &self.worker {
            worker.wait_idle();
        }
    }
}

impl Drop for QvCache {
    fn drop(&mut self) {
        if let Some(worker) = &mut self.worker {
            worker.shutdown();
        }
    }
}

fn hit_decision(theta: Option<f64>, k: usize, distances: &[f64], deviation: f64) -> bool {
    if distances.len() < k {
        return false;
    }
    match theta {
        Some(theta) => distances[k - 1] <= (1.0 + deviation) * theta,
        None => false,
    }
}

impl CacheCore {
    fn resolve_strategy(&self) -> SearchStrategy {
        match self.config.strategy {
            SearchStrategy::Adaptive => {
                if self.hit_ratio_trend() < self.config.adaptive_hit_ratio_threshold {
                    SearchStrategy::Exhaustive
                } else {
                    SearchStrategy::Eager
                }
            }
            other => other,
        }
    }

    fn hit_ratio_trend(&self) -> f64 {
        let log = self.decision_log.lock().unwrap();
        if log.is_empty() {
            return 0.0;
        }
        log.iter().filter(|hit| **hit).count() as f64 / log.len() as f64
    }

    fn push_decision(&self, hit: bool) {
        let mut log = self.decision_log.lock().unwrap();
        if log.len() == self.config.adaptive_window {
            log.pop_front();
        }
        log.push_back(hit);
    }

    fn cache_search(&self, query: &Vector, k: usize) -> Result<(Vec<Neighbor>, bool, usize)> {
        let strategy = self.resolve_strategy();
        let region = self.projector.region_key(query)?;
        let theta = self.thresholds.read().unwrap().lookup(k, region);
        let order = self.state.lock().unwrap().eviction_order.clone();

        let mut candidates: Vec<Neighbor> = Vec::new();
        let mut is_hit = false;
        let mut scanned = 0usize;
        for slot in order {
            let found = self.mini_indexes[slot].read().unwrap().search(query, k)?;
            scanned += 1;
            let distances: Vec<f64> = found.iter().map(|n| n.distance).collect();
            if hit_decision(theta, k, &distances, self.config.deviation_factor) {
                candidates.extend(found);
                is_hit = true;
                self.promote(slot);
                if strategy == SearchStrategy::Eager {
                    break;
                }
            }
        }

        // Re-rank: dedupe by id keeping the minimum distance, sort, truncate.
        let mut best: HashMap<u64, f64> = HashMap::with_capacity(candidates.len());
        for n in candidates {
            best.entry(n.id)
                .and_modify(|d| *d = d.min(n.distance))
                .or_insert(n.distance);
        }
        let mut merged: Vec<Neighbor> = best
            .into_iter()
            .map(|(id, distance)| Neighbor::new(id, distance))
            .collect();
        merged.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.id.cmp(&b.id)));
        merged.truncate(k);
        Ok((merged, is_hit, scanned))
    }

    fn promote(&self, slot: usize) {
        let mut state = self.state.lock().unwrap();
        if let Some(pos) = state.eviction_order.iter().position(|&s| s == slot) {
            state.eviction_order.remove(pos);
            state.eviction_order.insert(0, slot);
        }
    }

    fn cache_fill(&self, entries: Vec<(u64, Vector)>) -> Result<()> {
        let mut state = self.state.lock().unwrap();
        let fresh: Vec<(u64, Vector)> = entries
            .into_iter()
            .filter(|(id, _)| !state.membership.contains_key(id))
            .collect();
        if fresh.is_empty() {
            return Ok(());
        }
        if fresh.len() > self.config.c_mini_index {
            return Err(Error::InvalidConfig(format!(
                "fill of {} vectors exceeds mini-index capacity {}",
                fresh.len(),
                self.config.c_mini_index
            )));
        }

        // Hottest index with room for the whole batch, else evict the coldest.
        let target = state
            .eviction_order
            .iter()
            .copied()
            .find(|&slot| self.mini_indexes[slot].read().unwrap().free_capacity() >= fresh.len());
        let slot = match target {
            Some(slot) => slot,
            None => {
                let victim = *state.eviction_order.last().expect("non-empty pool");
                let mut index = self.mini_indexes[victim].write().unwrap();
                let evicted_ids: Vec<u64> = index.ids().collect();
                let live_before = state.membership.len();
                index.reset();
                for id in &evicted_ids {
                    state.membership.remove(id);
                }
                self.counters.evictions.fetch_add(1, Ordering::Relaxed);
                self.eviction_events.lock().unwrap().push(EvictionEvent {
                    slot: victim,
                    evicted_live: evicted_ids.len(),
                    live_before,
                    live_after: state.membership.len(),
                });
                victim
            }
        };

        {
            let mut index = self.mini_indexes[slot].write().unwrap();
            for (id, vector) in fresh {
                match index.insert(id, vector)? {
                    InsertOutcome::Inserted => {
                        state.membership.insert(id, slot);
                    }
                    // Capacity was checked and membership filtered dupes.
                    outcome => log::warn!("unexpected fill outcome {outcome:?} for id {id}"),
                }
            }
        }

        if let Some(pos) = state.eviction_order.iter().position(|&s| s == slot) {
            state.eviction_order.remove(pos);
            state.eviction_order.insert(0, slot);
        }
        Ok(())
    }

    /// Miss follow-up: fetch the returned ids, colocate them in the pool, and
    /// update the regional threshold. Failures are logged, never surfaced.
    fn fill_and_learn(&self, event: MissEvent) {
        match self.backend.fetch(&event.ids) {
            Ok(vectors) => {
                self.counters
                    .vectors_fetched
                    .fetch_add(event.ids.len() as u64, Ordering::Relaxed);
                let entries = event.ids.iter().copied().zip(vectors).collect();
                if let Err(e) = self.cache_fill(entries) {
                    log::warn!("cache fill failed: {e}");
                }
            }
            Err(e) => log::warn!("vector fetch failed: {e}"),
        }
        if let Err(e) =
            self.thresholds
                .write()
                .unwrap()
                .learn(&self.projector, &event.query, event.k, &event.distances)
        {
            log::warn!("threshold update failed: {e}");
        }
    }
}

impl Worker {
    fn spawn(core: Arc<CacheCore>) -> Self {
        let (sender, receiver) = mpsc::channel::<MissEvent>();
        let pending = Arc::new((Mutex::new(0usize), Condvar::new()));
        let worker_pending = Arc::clone(&pending);
        let handle = std::thread::spawn(move || {
            while let Ok(event) = receiver.recv() {
                core.fill_and_learn(event);
                let (count, cv) = &*worker_pending;
                *count.lock().unwrap() -= 1;
                cv.notify_all();
            }
        });
        Self {
            sender: Some(sender),
            handle: Some(handle),
            pending,
        }
    }

    fn enqueue(&self, event: MissEvent) {
        let (count, _) = &*self.pending;
        *count.lock().unwrap() += 1;
        if let Some(sender) = &self.sender {
            if sender.send(event).is_err() {
                let (count, cv) = &*self.pending;
                *count.lock().unwrap() -= 1;
                cv.notify_all();
                log::warn!("fill worker is gone; dropping miss event");
            }
        }
    }

    fn wait_idle(&self) {
        let (count, cv) = &*self.pending;
        let mut guard = count.lock().unwrap();
        while *guard > 0 {
            guard = cv.wait(guard).unwrap();
        }
    }

    fn shutdown(&mut self) {
        self.sender.take();
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{CountingBackend, Dataset, ExactBackend};
    use crate::model::DistanceMetric;
    use crate::synthetic::GaussianMixture;

    fn vecf(c: &[f32]) -> Vector {
        Vector::new(c.to_vec()).unwrap()
    }

    fn small_config(n: usize, c: usize) -> CacheConfig {
        CacheConfig {
            k_max: 3,
            n_mini_index: n,
            c_mini_index: c,
            deterministic_mode: true,
            ..CacheConfig::default()
        }
    }

    fn grid_projector() -> Projector {
        Projector::identity(2, 8, -10.0, 2.5).unwrap()
    }

    fn line_cache(n: usize, c: usize) -> (QvCache, Arc<CountingBackend<ExactBackend>>) {
        let vectors = (0..20)
            .map(|i| Vector::new(vec![i as f32, 0.0]).unwrap())
            .collect();
        let dataset = Dataset::new(vectors, DistanceMetric::Euclidean).unwrap();
        let backend = Arc::new(CountingBackend::new(ExactBackend::new(dataset)));
        let cache = QvCache::new(
            small_config(n, c),
            grid_projector(),
            backend.clone() as Arc<dyn VectorBackend>,
        )
        .unwrap();
        (cache, backend)
    }

    #[test]
    fn cold_cache_misses_then_fills() {
        let (cache, backend) = line_cache(2, 8);
        let q = vecf(&[5.2, 0.0]);
        let result = cache.search(&q, 3).unwrap();
        assert_eq!(result.served_from(), ServedFrom::Backend);
        assert_eq!(backend.search_calls(), 1);
        assert_eq!(cache.live_vectors(), 3);
        for id in result.ids() {
            assert!(cache.membership_slot(id).is_some());
        }
        assert_eq!(cache.stats().misses, 1);
    }

    #[test]
    fn repeat_query_hits_with_zero_deviation() {
        let vectors = GaussianMixture::random(8, 4, 0.2, 40)
            .sample(1_000, 41)
            .into_vectors();
        let dataset = Dataset::new(vectors, DistanceMetric::Euclidean).unwrap();
        let sample = crate::pca::sample_dataset(&dataset, 0.5, 1).unwrap();
        let projector = crate::pca::train(&sample, 4, 8, 2).unwrap();
        let backend = Arc::new(CountingBackend::new(ExactBackend::new(dataset.clone())));
        let cache = QvCache::new(
            CacheConfig {
                k_max: 10,
                deviation_factor: 0.0,
                n_mini_index: 2,
                c_mini_index: 100,
                deterministic_mode: true,
                ..CacheConfig::default()
            },
            projector,
            backend.clone() as Arc<dyn VectorBackend>,
        )
        .unwrap();

        let q = dataset.vector(123).unwrap().clone();
        let first = cache.search(&q, 10).unwrap();
        assert_eq!(first.served_from(), ServedFrom::Backend);
        let calls_after_miss = backend.search_calls();

        let second = cache.search(&q, 10).unwrap();
        assert_eq!(second.served_from(), ServedFrom::Cache);
        // Exact same query over the very vectors that were cached: identical
        // id set, and the k-th distance equals the learned threshold.
        assert_eq!(first.ids(), second.ids());
        assert_eq!(
            first.distances().last().unwrap(),
            second.distances().last().unwrap()
        );
        // A hit never consults the backend.
        assert_eq!(backend.search_calls(), calls_after_miss);
    }

    #[test]
    fn unlearned_region_is_a_miss() {
        let (cache, _) = line_cache(2, 8);
        // Warm one region.
        cache.search(&vecf(&[5.0, 0.0]), 3).unwrap();
        // A far-away query has no threshold yet: must go to the backend even
        // though the cache holds vectors.
        let result = cache.search(&vecf(&[18.0, 0.0]), 3).unwrap();
        assert_eq!(result.served_from(), ServedFrom::Backend);
    }

    #[test]
    fn is_hit_arithmetic() {
        let cache = QvCache::new(
            CacheConfig {
                deviation_factor: 0.25,
                ..small_config(2, 8)
            },
            grid_projector(),
            Arc::new(ExactBackend::new(
                Dataset::new(vec![vecf(&[0.0, 0.0])], DistanceMetric::Euclidean).unwrap(),
            )),
        )
        .unwrap();
        let q = vecf(&[5.0, 0.0]);
        // theta initializes to the k-th backend distance: 1.0.
        cache.learn_threshold(&q, 2, &[0.5, 1.0]).unwrap();
        assert!(cache.is_hit(&q, 2, &[0.1, 1.2]).unwrap());
        assert!(!cache.is_hit(&q, 2, &[0.1, 1.3]).unwrap());
        // Fewer than k candidates is never a hit.
        assert!(!cache.is_hit(&q, 2, &[0.1]).unwrap());
        // No threshold for an unseen region.
        assert!(!cache.is_hit(&vecf(&[-9.0, -9.0]), 2, &[0.0, 0.0]).unwrap());
    }

    #[test]
    fn fill_targets_hottest_with_room_and_colocates() {
        let (cache, _) = line_cache(4, 3);
        cache
            .cache_fill(vec![(0, vecf(&[0.0, 0.0])), (1, vecf(&[1.0, 0.0]))])
            .unwrap();
        let first_slot = cache.membership_slot(0).unwrap();
        assert_eq!(cache.membership_slot(1).unwrap(), first_slot);
        assert_eq!(cache.eviction_order()[0], first_slot);

        // Next fill of 2 does not fit in the now 2/3-full slot; it goes to the
        // hottest slot with room and that slot becomes MRU.
        cache
            .cache_fill(vec![(2, vecf(&[2.0, 0.0])), (3, vecf(&[3.0, 0.0]))])
            .unwrap();
        let second_slot = cache.membership_slot(2).unwrap();
        assert_ne!(second_slot, first_slot);
        assert_eq!(cache.membership_slot(3).unwrap(), second_slot);
        assert_eq!(cache.eviction_order()[0], second_slot);
    }

    #[test]
    fn full_pool_evicts_coldest_which_becomes_mru() {
        let vectors = (0..20)
            .map(|i| Vector::new(vec![i as f32, 0.0]).unwrap())
            .collect();
        let dataset = Dataset::new(vectors, DistanceMetric::Euclidean).unwrap();
        let cache = QvCache::new(
            CacheConfig {
                k_max: 2,
                n_mini_index: 2,
                c_mini_index: 2,
                deterministic_mode: true,
                ..CacheConfig::default()
            },
            grid_projector(),
            Arc::new(ExactBackend::new(dataset)),
        )
        .unwrap();
        cache
            .cache_fill(vec![(0, vecf(&[0.0, 0.0])), (1, vecf(&[1.0, 0.0]))])
            .unwrap();
        cache
            .cache_fill(vec![(2, vecf(&[2.0, 0.0])), (3, vecf(&[3.0, 0.0]))])
            .unwrap();
        let coldest = *cache.eviction_order().last().unwrap();
        cache
            .cache_fill(vec![(4, vecf(&[4.0, 0.0])), (5, vecf(&[5.0, 0.0]))])
            .unwrap();
        assert_eq!(cache.stats().evictions, 1);
        assert_eq!(cache.eviction_order()[0], coldest);
        assert_eq!(cache.membership_slot(4), Some(coldest));
        // Evicted ids are gone from membership.
        assert_eq!(cache.live_vectors(), 4);
        let events = cache.take_eviction_events();
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].evicted_live, 2);
        assert_eq!(events[0].live_before - events[0].evicted_live, events[0].live_after);
    }

    #[test]
    fn fully_cached_fill_is_a_noop() {
        let (cache, _) = line_cache(2, 4);
        // Fill slot A to capacity, then land one entry in slot B so the MRU
        // slot differs from id 0's home.
        cache
            .cache_fill((0..4u64).map(|i| (i, vecf(&[i as f32, 0.0]))).collect())
            .unwrap();
        cache.cache_fill(vec![(9, vecf(&[9.0, 0.0]))]).unwrap();
        let order_mid = cache.eviction_order();
        assert_ne!(cache.membership_slot(9), cache.membership_slot(0));
        assert_eq!(order_mid[0], cache.membership_slot(9).unwrap());
        // Re-filling an already cached id inserts nothing and promotes nothing.
        cache.cache_fill(vec![(0, vecf(&[0.0, 0.0]))]).unwrap();
        assert_eq!(cache.eviction_order(), order_mid);
        assert_eq!(cache.live_vectors(), 5);
    }

    #[test]
    fn hit_ratio_trend_counts_recent_window() {
        let (cache, _) = line_cache(2, 8);
        assert_eq!(cache.hit_ratio_trend(), 0.0);
        cache.core.push_decision(true);
        cache.core.push_decision(false);
        cache.core.push_decision(true);
        cache.core.push_decision(true);
        assert!((cache.hit_ratio_trend() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn adaptive_resolves_by_trend() {
        let (cache, _) = line_cache(2, 8);
        // Empty log -> trend 0 -> exhaustive.
        assert_eq!(cache.core.resolve_strategy(), SearchStrategy::Exhaustive);
        for _ in 0..19 {
            cache.core.push_decision(true);
        }
        cache.core.push_decision(false);
        // Trend 0.95 over the window -> eager.
        assert!((cache.hit_ratio_trend() - 0.95).abs() < 1e-12);
        assert_eq!(cache.core.resolve_strategy(), SearchStrategy::Eager);
    }

    #[test]
    fn eager_stops_at_first_hit_exhaustive_scans_all() {
        let vectors = (0..40)
            .map(|i| Vector::new(vec![i as f32, 0.0]).unwrap())
            .collect();
        let dataset = Dataset::new(vectors, DistanceMetric::Euclidean).unwrap();
        for (strategy, expected_scans) in [
            (SearchStrategy::Eager, 1usize),
            (SearchStrategy::Exhaustive, 4usize),
        ] {
            let cache = QvCache::new(
                CacheConfig {
                    strategy,
                    ..small_config(4, 8)
                },
                grid_projector(),
                Arc::new(ExactBackend::new(dataset.clone())),
            )
            .unwrap();
            let q = vecf(&[5.2, 0.0]);
            cache.search(&q, 3).unwrap(); // miss, fills + learns
            let (_, is_hit, scanned) = cache.cache_search(&q, 3).unwrap();
            assert!(is_hit);
            assert_eq!(scanned, expected_scans);
        }
    }

    #[test]
    fn exhaustive_candidates_superset_of_eager() {
        // Two engines driven into the identical state, differing only in scan
        // strategy; on a frozen pool the exhaustive candidate pool contains
        // the eager one, so its re-ranked top-k is at least as close.
        let mixture = GaussianMixture::random(4, 2, 0.3, 50);
        let dataset = mixture.sample(400, 51);
        let projector = crate::pca::train(
            &crate::pca::sample_dataset(&dataset, 0.5, 1).unwrap(),
            2,
            8,
            2,
        )
        .unwrap();
        let build = |strategy| {
            let cache = QvCache::new(
                CacheConfig {
                    k_max: 5,
                    strategy,
                    n_mini_index: 4,
                    c_mini_index: 10,
                    deterministic_mode: true,
                    ..CacheConfig::default()
                },
                projector.clone(),
                Arc::new(ExactBackend::new(dataset.clone())) as Arc<dyn VectorBackend>,
            )
            .unwrap();
            for i in 0..40u64 {
                let q = dataset.vector(i * 7 % 400).unwrap().clone();
                cache.cache_fill(
                    dataset
                        .brute_force_search(&q, 5)
                        .unwrap()
                        .iter()
                        .map(|n| (n.id, dataset.vector(n.id).unwrap().clone()))
                        .collect(),
                )
                .unwrap();
                let d: Vec<f64> = dataset
                    .brute_force_search(&q, 5)
                    .unwrap()
                    .iter()
                    .map(|n| n.distance)
                    .collect();
                cache.learn_threshold(&q, 5, &d).unwrap();
            }
            cache
        };
        let eager = build(SearchStrategy::Eager);
        let exhaustive = build(SearchStrategy::Exhaustive);
        assert_eq!(eager.eviction_order(), exhaustive.eviction_order());

        let mut hits = 0;
        for i in 0..50u64 {
            let probe = dataset.vector(i * 3 % 400).unwrap().clone();
            let (eager_hits, hit_e, scanned_e) = eager.cache_search(&probe, 5).unwrap();
            let (exh_hits, hit_x, scanned_x) = exhaustive.cache_search(&probe, 5).unwrap();
            assert_eq!(hit_e, hit_x);
            assert!(scanned_e <= scanned_x);
            assert_eq!(scanned_x, 4);
            if hit_e {
                hits += 1;
                // The exhaustive candidate pool contains every hitting index's
                // candidates, so its merged top-k is no worse at every rank.
                for (a, b) in exh_hits.iter().zip(&eager_hits) {
                    assert!(a.distance <= b.distance);
                }
            }
        }
        assert!(hits > 0, "probe set produced no hits");
    }

    #[test]
    fn memory_bound_under_random_fills() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(77);
        let (cache, _) = line_cache(3, 4);
        let n_total = 12;
        for round in 0..300u64 {
            let m = rng.gen_range(1..=3usize);
            let entries: Vec<(u64, Vector)> = (0..m)
                .map(|i| {
                    let id = round * 10 + i as u64;
                    (id, vecf(&[(id % 40) as f32, 0.0]))
                })
                .collect();
            cache.cache_fill(entries).unwrap();
            assert!(cache.live_vectors() <= n_total);
            let per_index = cache.live_per_index();
            assert_eq!(per_index.iter().sum::<usize>(), cache.live_vectors());
        }
        assert!(cache.stats().evictions > 0);
        for event in cache.take_eviction_events() {
            assert_eq!(event.live_before - event.evicted_live, event.live_after);
        }
    }

    #[test]
    fn background_worker_completes_fills() {
        let vectors = (0..50)
            .map(|i| Vector::new(vec![i as f32, 0.0]).unwrap())
            .collect();
        let dataset = Dataset::new(vectors, DistanceMetric::Euclidean).unwrap();
        let cache = QvCache::new(
            CacheConfig {
                k_max: 5,
                n_mini_index: 2,
                c_mini_index: 30,
                deterministic_mode: false,
                ..CacheConfig::default()
            },
            grid_projector(),
            Arc::new(ExactBackend::new(dataset)),
        )
        .unwrap();
        let q = vecf(&[7.3, 0.0]);
        let result = cache.search(&q, 5).unwrap();
        assert_eq!(result.served_from(), ServedFrom::Backend);
        cache.flush();
        assert_eq!(cache.live_vectors(), 5);
        assert_eq!(cache.active_regions(), 1);
    }
}
