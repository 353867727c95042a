//! Bounded-capacity dynamic proximity graph: the unit of cache storage and
//! eviction.
//!
//! Vectors are inserted online; each insertion runs a greedy beam search over
//! the existing graph to collect candidate neighbors, then prunes them with a
//! distance-slack rule down to the degree bound. Lookups run the same beam
//! search. Eviction is whole-index `reset` only; there is no per-node delete.
//!
//! Writers must be serialized externally (the cache engine guarantees this);
//! concurrent readers are safe.

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};
use crate::model::{distance_slices, DistanceMetric, Neighbor, Vector};

/// Graph hyperparameters plus the capacity bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiniIndexConfig {
    /// Maximum number of live vectors.
    pub capacity: usize,
    /// Out-degree bound per node.
    pub max_degree: usize,
    /// Beam width for search and insertion candidate collection.
    pub search_list_size: usize,
    /// Pruning slack: a candidate is dropped when an already-kept neighbor is
    /// more than `1/prune_alpha` times closer to it than the query point is.
    pub prune_alpha: f64,
}

impl MiniIndexConfig {
    /// Default graph parameters at the given capacity.
    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            capacity,
            max_degree: 32,
            search_list_size: 64,
            prune_alpha: 1.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 {
            return Err(Error::InvalidConfig("capacity must be positive".into()));
        }
        if self.max_degree < 2 {
            return Err(Error::InvalidConfig("max_degree must be >= 2".into()));
        }
        if self.search_list_size == 0 {
            return Err(Error::InvalidConfig(
                "search_list_size must be positive".into(),
            ));
        }
        if self.prune_alpha < 1.0 {
            return Err(Error::InvalidConfig("prune_alpha must be >= 1".into()));
        }
        Ok(())
    }
}

/// Outcome of an insertion attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    Inserted,
    RejectedFull,
    RejectedDuplicate,
}

struct Node {
    vector: Vector,
    neighbors: Vec<u64>,
}

pub struct MiniIndex {
    config: MiniIndexConfig,
    metric: DistanceMetric,
    nodes: HashMap<u64, Node>,
    /// In-degree per node, kept so pruning never severs a node's last
    /// incoming edge.
    in_degree: HashMap<u64, usize>,
    entry_point: Option<u64>,
    dim: Option<usize>,
}

impl MiniIndex {
    pub fn new(config: MiniIndexConfig, metric: DistanceMetric) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            metric,
            nodes: HashMap::with_capacity(config.capacity),
            in_degree: HashMap::with_capacity(config.capacity),
            entry_point: None,
            dim: None,
        })
    }

    pub fn config(&self) -> &MiniIndexConfig {
        &self.config
    }

    pub fn live_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn capacity(&self) -> usize {
        self.config.capacity
    }

    pub fn free_capacity(&self) -> usize {
        self.config.capacity - self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, id: u64) -> bool {
        self.nodes.contains_key(&id)
    }

    pub fn entry_point(&self) -> Option<u64> {
        self.entry_point
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.nodes.keys().copied()
    }

    /// Insert a vector under `id`. Rejects (without error) when the index is
    /// full or the id is already present.
    pub fn insert(&mut self, id: u64, vector: Vector) -> Result<InsertOutcome> {
        if let Some(dim) = self.dim {
            if vector.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: vector.dim(),
                });
            }
        }
        if self.nodes.len() >= self.config.capacity {
            return Ok(InsertOutcome::RejectedFull);
        }
        if self.nodes.contains_key(&id) {
            return Ok(InsertOutcome::RejectedDuplicate);
        }

        if self.nodes.is_empty() {
            self.dim = Some(vector.dim());
            self.nodes.insert(
                id,
                Node {
                    vector,
                    neighbors: Vec::new(),
                },
            );
            self.in_degree.insert(id, 0);
            self.entry_point = Some(id);
            return Ok(InsertOutcome::Inserted);
        }

        // Candidate neighbors come from the nodes the beam search expanded.
        let beam = self.config.search_list_size.max(self.config.max_degree);
        let (_, mut expanded) = self.beam_search(vector.components(), beam);
        expanded.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let neighbors = self.prune_candidates(&expanded, &[]);

        for &nb in &neighbors {
            *self.in_degree.entry(nb).or_insert(0) += 1;
        }
        self.nodes.insert(
            id,
            Node {
                vector,
                neighbors: neighbors.clone(),
            },
        );
        self.in_degree.entry(id).or_insert(0);

        // Back edges, re-pruning any adjacency that overflows.
        for nb in neighbors {
            self.add_back_edge(nb, id);
        }
        if self.in_degree[&id] == 0 {
            self.rescue_orphan(id);
        }

        Ok(InsertOutcome::Inserted)
    }

    /// Greedy beam search; returns up to `min(k, live_count)` neighbors sorted
    /// ascending by distance, ties broken by ascending id. An empty index
    /// yields an empty list.
    pub fn search(&self, query: &Vector, k: usize) -> Result<Vec<Neighbor>> {
        if self.nodes.is_empty() || k == 0 {
            return Ok(Vec::new());
        }
        let dim = self.dim.expect("non-empty index has a dimension");
        if query.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: query.dim(),
            });
        }
        let beam = self.config.search_list_size.max(k);
        let (mut best, _) = self.beam_search(query.components(), beam);
        best.truncate(k);
        Ok(best
            .into_iter()
            .map(|(d, id)| Neighbor::new(id, d))
            .collect())
    }

    /// Drop every node and clear the entry point; the index is immediately
    /// reusable.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.in_degree.clear();
        self.entry_point = None;
        self.dim = None;
    }

    fn dist(&self, a: &[f32], b: &[f32]) -> f64 {
        // Dimensions are validated at the insert/search boundary.
        distance_slices(a, b, self.metric).expect("validated dimensions")
    }

    /// Beam search from the entry point. Returns (best, expanded): `best` is
    /// the final beam sorted by (distance, id); `expanded` lists the nodes
    /// actually visited, with distances, in expansion order.
    fn beam_search(&self, query: &[f32], beam: usize) -> (Vec<(f64, u64)>, Vec<(f64, u64)>) {
        let entry = match self.entry_point {
            Some(e) => e,
            None => return (Vec::new(), Vec::new()),
        };
        let entry_dist = self.dist(query, self.nodes[&entry].vector.components());

        let mut best: Vec<(f64, u64)> = vec![(entry_dist, entry)];
        let mut scored: HashSet<u64> = HashSet::from([entry]);
        let mut done: HashSet<u64> = HashSet::new();
        let mut expanded: Vec<(f64, u64)> = Vec::new();

        loop {
            let next = best
                .iter()
                .find(|(_, id)| !done.contains(id))
                .copied();
            let (d, u) = match next {
                Some(x) => x,
                None => break,
            };
            done.insert(u);
            expanded.push((d, u));

            for &nb in &self.nodes[&u].neighbors {
                if !scored.insert(nb) {
                    continue;
                }
                let dn = self.dist(query, self.nodes[&nb].vector.components());
                let pos = best
                    .binary_search_by(|probe| probe.0.total_cmp(&dn).then(probe.1.cmp(&nb)))
                    .unwrap_err();
                if pos < beam {
                    best.insert(pos, (dn, nb));
                    if best.len() > beam {
                        best.pop();
                    }
                }
            }
        }
        (best, expanded)
    }

    /// Slack-based pruning: walk candidates in ascending (distance, id) order,
    /// keeping c unless an already-kept neighbor n has
    /// `d(n, c) * prune_alpha < d(point, c)`. Ids in `protected` are kept
    /// unconditionally; the result is capped at `max_degree`.
    fn prune_candidates(&self, candidates: &[(f64, u64)], protected: &[u64]) -> Vec<u64> {
        let max_degree = self.config.max_degree;
        let alpha = self.config.prune_alpha;
        let mut kept: Vec<u64> = Vec::with_capacity(max_degree.min(candidates.len()));
        let mut protected_left = candidates
            .iter()
            .filter(|(_, id)| protected.contains(id))
            .count()
            .min(max_degree);

        for &(dist_pc, c) in candidates {
            if kept.len() >= max_degree {
                break;
            }
            if protected.contains(&c) {
                kept.push(c);
                protected_left -= 1;
                continue;
            }
            // Leave room for protected candidates not seen yet.
            if kept.len() + protected_left >= max_degree {
                continue;
            }
            let c_vec = self.nodes[&c].vector.components();
            let dominated = kept.iter().any(|&n| {
                let d_nc = self.dist(self.nodes[&n].vector.components(), c_vec);
                d_nc * alpha < dist_pc
            });
            if !dominated {
                kept.push(c);
            }
        }
        kept
    }

    /// Add edge `from -> to`, re-pruning `from`'s adjacency if it overflows.
    fn add_back_edge(&mut self, from: u64, to: u64) {
        let node = self.nodes.get(&from).expect("back-edge source is live");
        if node.neighbors.contains(&to) {
            return;
        }
        if node.neighbors.len() < self.config.max_degree {
            self.nodes.get_mut(&from).unwrap().neighbors.push(to);
            *self.in_degree.get_mut(&to).unwrap() += 1;
            return;
        }

        // Overflow: prune over old neighbors plus the new node. Edges that are
        // some node's only incoming edge are protected from removal.
        let from_vec = self.nodes[&from].vector.clone();
        let mut candidates: Vec<(f64, u64)> = self.nodes[&from]
            .neighbors
            .iter()
            .chain(std::iter::once(&to))
            .map(|&c| {
                (
                    self.dist(from_vec.components(), self.nodes[&c].vector.components()),
                    c,
                )
            })
            .collect();
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let protected: Vec<u64> = self.nodes[&from]
            .neighbors
            .iter()
            .copied()
            .filter(|n| self.in_degree[n] == 1)
            .collect();
        let new_neighbors = self.prune_candidates(&candidates, &protected);

        let old_neighbors = std::mem::take(&mut self.nodes.get_mut(&from).unwrap().neighbors);
        for n in &old_neighbors {
            if !new_neighbors.contains(n) {
                *self.in_degree.get_mut(n).unwrap() -= 1;
            }
        }
        if new_neighbors.contains(&to) {
            *self.in_degree.get_mut(&to).unwrap() += 1;
        }
        self.nodes.get_mut(&from).unwrap().neighbors = new_neighbors;
    }

    /// Guarantee the freshly inserted node keeps at least one incoming edge,
    /// so it stays reachable from the entry point.
    fn rescue_orphan(&mut self, id: u64) {
        let out: Vec<u64> = self.nodes[&id].neighbors.clone();
        for nb in &out {
            if self.nodes[nb].neighbors.len() < self.config.max_degree {
                self.nodes.get_mut(nb).unwrap().neighbors.push(id);
                *self.in_degree.get_mut(&id).unwrap() += 1;
                return;
            }
        }
        // All targets are full: replace the furthest evictable neighbor of the
        // nearest out-neighbor (preferring edges that are not a last in-edge).
        for only_safe in [true, false] {
            for nb in &out {
                let nb_vec = self.nodes[nb].vector.clone();
                let victim = self.nodes[nb]
                    .neighbors
                    .iter()
                    .copied()
                    .filter(|v| !only_safe || self.in_degree[v] > 1)
                    .map(|v| {
                        (
                            self.dist(nb_vec.components(), self.nodes[&v].vector.components()),
                            v,
                        )
                    })
                    .max_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                if let Some((_, victim)) = victim {
                    let neighbors = &mut self.nodes.get_mut(nb).unwrap().neighbors;
                    let pos = neighbors.iter().position(|&v| v == victim).unwrap();
                    neighbors[pos] = id;
                    *self.in_degree.get_mut(&victim).unwrap() -= 1;
                    *self.in_degree.get_mut(&id).unwrap() += 1;
                    return;
                }
            }
        }
    }
}
