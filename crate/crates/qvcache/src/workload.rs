//! Workload generation with temporal-semantic locality.
//!
//! Base queries are partitioned into disjoint splits; a window of splits
//! slides over them. Each window position is dispatched `n_repeat` times, and
//! every dispatch emits a fresh perturbed copy of every query in the window
//! (interpolated toward a random dataset vector), shuffled within the step.
//! Repeated steps therefore contain semantically similar but never identical
//! queries, which is exactly what a similarity cache has to handle.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backend::Dataset;
use crate::error::{Error, Result};
use crate::model::Vector;

const TRACE_MAGIC: &[u8; 4] = b"QVTR";
const TRACE_VERSION: u32 = 1;

/// Parameters of the sliding-window workload.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WorkloadParams {
    /// Number of disjoint query splits.
    pub n_split: usize,
    /// Noise ratio eta in [0, 1]: 0 replays base queries exactly.
    pub noise_ratio: f64,
    /// Number of splits visible per window position.
    pub window_size: usize,
    /// Splits replaced per window slide.
    pub stride: usize,
    /// Dispatches per window position.
    pub n_repeat: usize,
    /// Full passes over the split sequence.
    pub n_round: usize,
    pub seed: u64,
}

impl Default for WorkloadParams {
    fn default() -> Self {
        Self {
            n_split: 10,
            noise_ratio: 0.01,
            window_size: 4,
            stride: 1,
            n_repeat: 3,
            n_round: 1,
            seed: 0,
        }
    }
}

impl WorkloadParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_split == 0 || self.window_size == 0 || self.stride == 0 {
            return Err(Error::InvalidConfig(
                "n_split, window_size, and stride must be positive".into(),
            ));
        }
        if self.n_repeat == 0 || self.n_round == 0 {
            return Err(Error::InvalidConfig(
                "n_repeat and n_round must be positive".into(),
            ));
        }
        if self.window_size > self.n_split {
            return Err(Error::InvalidConfig(
                "window_size must not exceed n_split".into(),
            ));
        }
        if self.stride > self.window_size {
            return Err(Error::InvalidConfig(
                "stride must not exceed window_size".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.noise_ratio) {
            return Err(Error::InvalidConfig(
                "noise_ratio must be in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// Window positions per round.
    pub fn positions(&self) -> usize {
        (self.n_split - self.window_size) / self.stride + 1
    }

    /// Total window steps across all rounds.
    pub fn total_steps(&self) -> usize {
        self.n_round * self.n_repeat * self.positions()
    }
}

/// One dispatched query in a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub window_step: u32,
    pub base_query_id: u32,
    pub query: Vector,
}

/// Componentwise interpolation toward `r`: eta = 0 returns `q` exactly,
/// eta = 1 returns `r` exactly.
pub fn perturb(q: &Vector, r: &Vector, eta: f64) -> Result<Vector> {
    if q.dim() != r.dim() {
        return Err(Error::DimensionMismatch {
            expected: q.dim(),
            got: r.dim(),
        });
    }
    let eta = eta as f32;
    let components = q
        .components()
        .iter()
        .zip(r.components())
        .map(|(a, b)| (1.0 - eta) * a + eta * b)
        .collect();
    Vector::new(components)
}

/// Partition query indices into `n_split` contiguous disjoint subsets; the
/// remainder spreads over the first subsets.
pub fn split_queries(n_queries: usize, n_split: usize) -> Result<Vec<Vec<u32>>> {
    if n_split == 0 {
        return Err(Error::InvalidConfig("n_split must be positive".into()));
    }
    if n_queries < n_split {
        return Err(Error::InvalidConfig(format!(
            "cannot split {n_queries} queries into {n_split} subsets"
        )));
    }
    let base = n_queries / n_split;
    let remainder = n_queries % n_split;
    let mut splits = Vec::with_capacity(n_split);
    let mut next = 0u32;
    for i in 0..n_split {
        let size = base + usize::from(i < remainder);
        splits.push((next..next + size as u32).collect());
        next += size as u32;
    }
    Ok(splits)
}

/// Generate the full trace. Fully deterministic: the RNG for each window step
/// is derived from (seed, round, position, repeat).
pub fn generate_trace(
    queries: &[Vector],
    dataset: &Dataset,
    params: &WorkloadParams,
) -> Result<Vec<TraceEntry>> {
    params.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(q) = queries.first() {
        if q.dim() != dataset.dim() {
            return Err(Error::DimensionMismatch {
                expected: dataset.dim(),
                got: q.dim(),
            });
        }
    }
    let splits = split_queries(queries.len(), params.n_split)?;
    let mut trace = Vec::new();
    let mut step: u32 = 0;

    for round in 0..params.n_round {
        for position in 0..params.positions() {
            let window = &splits[position * params.stride..position * params.stride + params.window_size];
            for repeat in 0..params.n_repeat {
                let mut rng = step_rng(params.seed, round, position, repeat);
                let mut entries: Vec<TraceEntry> = Vec::new();
                for split in window {
                    for &qid in split {
                        let r = dataset
                            .vector(rng.gen_range(0..dataset.len()) as u64)
                            .expect("index in range");
                        let query = perturb(&queries[qid as usize], r, params.noise_ratio)?;
                        entries.push(TraceEntry {
                            window_step: step,
                            base_query_id: qid,
                            query,
                        });
                    }
                }
                entries.shuffle(&mut rng);
                trace.extend(entries);
                step += 1;
            }
        }
    }
    Ok(trace)
}

/// Distinct per-step RNG stream; SplitMix-style mixing of the coordinates.
fn step_rng(seed: u64, round: usize, position: usize, repeat: usize) -> ChaCha8Rng {
    let mut state = seed;
    for part in [round as u64, position as u64, repeat as u64] {
        state = state.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(part);
        state = (state ^ (state >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        state = (state ^ (state >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        state ^= state >> 31;
    }
    ChaCha8Rng::seed_from_u64(state)
}

/// Write a trace: header (magic, version, dim, entry count as little-endian
/// u32), then per entry window_step u32, base_query_id u32, and the query
/// components as f32, all little-endian.
pub fn write_trace<W: Write>(w: &mut W, trace: &[TraceEntry]) -> Result<()> {
    let dim = trace.first().map_or(0, |e| e.query.dim());
    w.write_all(TRACE_MAGIC)?;
    w.write_all(&TRACE_VERSION.to_le_bytes())?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    w.write_all(&(trace.len() as u32).to_le_bytes())?;
    for entry in trace {
        w.write_all(&entry.window_step.to_le_bytes())?;
        w.write_all(&entry.base_query_id.to_le_bytes())?;
        for c in entry.query.components() {
            w.write_all(&c.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_trace(path: &Path, trace: &[TraceEntry]) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    write_trace(&mut writer, trace)
}

pub fn read_trace<R: Read>(r: &mut R, path_label: &str) -> Result<Vec<TraceEntry>> {
    let fail = |offset: u64, message: &str| Error::Format {
        path: path_label.to_string(),
        offset,
        message: message.to_string(),
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| fail(0, "truncated header"))?;
    if &magic != TRACE_MAGIC {
        return Err(fail(0, "bad magic, expected QVTR"));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word).map_err(|_| fail(4, "truncated version"))?;
    if u32::from_le_bytes(word) != TRACE_VERSION {
        return Err(fail(4, "unsupported version"));
    }
    r.read_exact(&mut word).map_err(|_| fail(8, "truncated dim"))?;
    let dim = u32::from_le_bytes(word) as usize;
    r.read_exact(&mut word).map_err(|_| fail(12, "truncated count"))?;
    let count = u32::from_le_bytes(word) as usize;

    let mut trace = Vec::with_capacity(count);
    let entry_bytes = (8 + dim * 4) as u64;
    for i in 0..count {
        let offset = 16 + i as u64 * entry_bytes;
        r.read_exact(&mut word).map_err(|_| fail(offset, "truncated entry"))?;
        let window_step = u32::from_le_bytes(word);
        r.read_exact(&mut word).map_err(|_| fail(offset, "truncated entry"))?;
        let base_query_id = u32::from_le_bytes(word);
        let mut components = Vec::with_capacity(dim);
        for _ in 0..dim {
            r.read_exact(&mut word).map_err(|_| fail(offset, "truncated entry"))?;
            components.push(f32::from_le_bytes(word));
        }
        trace.push(TraceEntry {
            window_step,
            base_query_id,
            query: Vector::new(components)
                .map_err(|_| fail(offset, "non-finite query component"))?,
        });
    }
    Ok(trace)
}

pub fn load_trace(path: &Path) -> Result<Vec<TraceEntry>> {
    let mut reader = BufReader::new(File::open(path)?);
    read_trace(&mut reader, &path.display().to_string())
}
