//! Backend abstraction and reference implementations.
//!
//! Any vector database exposing `search(Q, k)` and `fetch(ids)` can sit behind
//! the cache. This module ships an exact brute-force backend over an in-memory
//! dataset, a fixed-latency wrapper that stands in for disk or network
//! backends, and loaders/writers for the fvecs/bvecs/ivecs container formats.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use crate::error::{Error, Result};
use crate::model::{distance, DistanceMetric, Neighbor, Vector};

/// The two-call interface every backend must provide.
pub trait VectorBackend: Send + Sync {
    /// Exact or approximate top-k: ids with distances, sorted ascending.
    fn search(&self, query: &Vector, k: usize) -> Result<Vec<Neighbor>>;
    /// Vectors for the given ids, in request order.
    fn fetch(&self, ids: &[u64]) -> Result<Vec<Vector>>;
}

/// An in-memory vector collection; ids are 0-based positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    vectors: Vec<Vector>,
    metric: DistanceMetric,
}

impl Dataset {
    pub fn new(vectors: Vec<Vector>, metric: DistanceMetric) -> Result<Self> {
        if let Some(first) = vectors.first() {
            let dim = first.dim();
            for (i, v) in vectors.iter().enumerate() {
                if v.dim() != dim {
                    return Err(Error::InvalidConfig(format!(
                        "vector {i} has dimension {}, expected {dim}",
                        v.dim()
                    )));
                }
            }
        }
        Ok(Self { vectors, metric })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, |v| v.dim())
    }

    pub fn metric(&self) -> DistanceMetric {
        self.metric
    }

    pub fn with_metric(mut self, metric: DistanceMetric) -> Self {
        self.metric = metric;
        self
    }

    pub fn vectors(&self) -> &[Vector] {
        &self.vectors
    }

    pub fn into_vectors(self) -> Vec<Vector> {
        self.vectors
    }

    pub fn vector(&self, id: u64) -> Result<&Vector> {
        self.vectors
            .get(id as usize)
            .ok_or(Error::UnknownId(id))
    }

    /// Exact top-k by the dataset metric, ascending, ties broken by lower id.
    pub fn brute_force_search(&self, query: &Vector, k: usize) -> Result<Vec<Neighbor>> {
        if k > self.vectors.len() {
            return Err(Error::KTooLarge {
                k,
                available: self.vectors.len(),
            });
        }
        // Parallel chunked scan with a per-chunk top-k merge: results are
        // independent of the chunking because the final sort is total.
        use rayon::prelude::*;
        let chunk = 16_384;
        let mut best: Vec<(f64, u64)> = self
            .vectors
            .par_chunks(chunk)
            .enumerate()
            .map(|(c, vs)| -> Result<Vec<(f64, u64)>> {
                let base = (c * chunk) as u64;
                let mut local: Vec<(f64, u64)> = Vec::with_capacity(k + 1);
                for (i, v) in vs.iter().enumerate() {
                    let d = distance(query, v, self.metric)?;
                    let id = base + i as u64;
                    let pos = local
                        .binary_search_by(|p| p.0.total_cmp(&d).then(p.1.cmp(&id)))
                        .unwrap_err();
                    if pos < k {
                        local.insert(pos, (d, id));
                        local.truncate(k);
                    }
                }
                Ok(local)
            })
            .try_reduce(Vec::new, |mut a, b| {
                a.extend(b);
                a.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
                a.truncate(k);
                Ok(a)
            })?;
        best.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        best.truncate(k);
        Ok(best.into_iter().map(|(d, id)| Neighbor::new(id, d)).collect())
    }

    pub fn fetch(&self, ids: &[u64]) -> Result<Vec<Vector>> {
        ids.iter().map(|&id| self.vector(id).cloned()).collect()
    }
}

/// Exact backend: brute-force search over a dataset.
pub struct ExactBackend {
    dataset: Dataset,
}

impl ExactBackend {
    pub fn new(dataset: Dataset) -> Self {
        Self { dataset }
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }
}

impl VectorBackend for ExactBackend {
    fn search(&self, query: &Vector, k: usize) -> Result<Vec<Neighbor>> {
        self.dataset.brute_force_search(query, k)
    }

    fn fetch(&self, ids: &[u64]) -> Result<Vec<Vector>> {
        self.dataset.fetch(ids)
    }
}

/// Wraps a backend so every call blocks at least the configured delay. Makes
/// the hit-vs-miss latency contrast measurable with an in-memory backend.
pub struct DelayedBackend<B> {
    inner: B,
    search_delay: Duration,
    fetch_delay: Duration,
}

impl<B: VectorBackend> DelayedBackend<B> {
    pub fn new(inner: B, search_delay: Duration, fetch_delay: Duration) -> Self {
        Self {
            inner,
            search_delay,
            fetch_delay,
        }
    }
}

impl<B: VectorBackend> VectorBackend for DelayedBackend<B> {
    fn search(&self, query: &Vector, k: usize) -> Result<Vec<Neighbor>> {
        std::thread::sleep(self.search_delay);
        self.inner.search(query, k)
    }

    fn fetch(&self, ids: &[u64]) -> Result<Vec<Vector>> {
        std::thread::sleep(self.fetch_delay);
        self.inner.fetch(ids)
    }
}

/// Counts calls through to the inner backend; used to verify that cache hits
/// never reach it.
pub struct CountingBackend<B> {
    inner: B,
    searches: AtomicU64,
    fetches: AtomicU64,
}

impl<B: VectorBackend> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            searches: AtomicU64::new(0),
            fetches: AtomicU64::new(0),
        }
    }

    pub fn search_calls(&self) -> u64 {
        self.searches.load(Ordering::Relaxed)
    }

    pub fn fetch_calls(&self) -> u64 {
        self.fetches.load(Ordering::Relaxed)
    }
}

impl<B: VectorBackend> VectorBackend for CountingBackend<B> {
    fn search(&self, query: &Vector, k: usize) -> Result<Vec<Neighbor>> {
        self.searches.fetch_add(1, Ordering::Relaxed);
        self.inner.search(query, k)
    }

    fn fetch(&self, ids: &[u64]) -> Result<Vec<Vector>> {
        self.fetches.fetch_add(1, Ordering::Relaxed);
        self.inner.fetch(ids)
    }
}

// ---------------------------------------------------------------------------
// fvecs / bvecs / ivecs container formats
//
// Per record: a 4-byte little-endian signed dimension count d, then d values
// (fvecs: f32 LE; bvecs: u8; ivecs: i32 LE). All records must share d.
// ---------------------------------------------------------------------------

fn format_error(path: &Path, offset: u64, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        offset,
        message: message.into(),
    }
}

fn read_records<T>(
    path: &Path,
    value_size: usize,
    mut parse: impl FnMut(&[u8]) -> T,
) -> Result<Vec<Vec<T>>> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut records: Vec<Vec<T>> = Vec::new();
    let mut offset: u64 = 0;
    let mut header = [0u8; 4];
    let mut expected_dim: Option<i32> = None;

    loop {
        match reader.read_exact(&mut header) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let d = i32::from_le_bytes(header);
        if d <= 0 {
            return Err(format_error(
                path,
                offset,
                format!("non-positive dimension {d}"),
            ));
        }
        match expected_dim {
            None => expected_dim = Some(d),
            Some(expected) if expected != d => {
                return Err(format_error(
                    path,
                    offset,
                    format!("inconsistent dimension {d}, expected {expected}"),
                ));
            }
            _ => {}
        }
        let mut payload = vec![0u8; d as usize * value_size];
        reader.read_exact(&mut payload).map_err(|_| {
            format_error(path, offset, "truncated record")
        })?;
        records.push(payload.chunks_exact(value_size).map(&mut parse).collect());
        offset += 4 + payload.len() as u64;
    }
    Ok(records)
}

/// Load an fvecs file as a dataset (Euclidean metric by default).
pub fn load_fvecs(path: &Path) -> Result<Dataset> {
    let records = read_records(path, 4, |b| {
        f32::from_le_bytes([b[0], b[1], b[2], b[3]])
    })?;
    let vectors = records
        .into_iter()
        .map(Vector::new)
        .collect::<Result<Vec<_>>>()
        .map_err(|e| match e {
            Error::NonFinite { position } => format_error(
                path,
                0,
                format!("non-finite component at position {position}"),
            ),
            other => other,
        })?;
    Dataset::new(vectors, DistanceMetric::Euclidean)
}

/// Load a bvecs file, widening bytes to f32 components.
pub fn load_bvecs(path: &Path) -> Result<Dataset> {
    let records = read_records(path, 1, |b| b[0] as f32)?;
    let vectors = records
        .into_iter()
        .map(Vector::new)
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(vectors, DistanceMetric::Euclidean)
}

/// Load an ivecs file as integer id lists (the ground-truth convention).
pub fn load_ivecs(path: &Path) -> Result<Vec<Vec<i32>>> {
    read_records(path, 4, |b| i32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

pub fn write_fvecs(path: &Path, vectors: &[Vector]) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    for v in vectors {
        writer.write_all(&(v.dim() as i32).to_le_bytes())?;
        for c in v.components() {
            writer.write_all(&c.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn write_ivecs(path: &Path, records: &[Vec<i32>]) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    for record in records {
        writer.write_all(&(record.len() as i32).to_le_bytes())?;
        for value in record {
            writer.write_all(&value.to_le_bytes())?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line_dataset() -> Dataset {
        let vectors = (0..4)
            .map(|i| Vector::new(vec![i as f32]).unwrap())
            .collect();
        Dataset::new(vectors, DistanceMetric::Euclidean).unwrap()
    }

    #[test]
    fn brute_force_hand_computed() {
        let d = line_dataset();
        let got = d
            .brute_force_search(&Vector::new(vec![0.6]).unwrap(), 2)
            .unwrap();
        assert_eq!(got[0].id, 1);
        assert!((got[0].distance - 0.4).abs() < 1e-6);
        assert_eq!(got[1].id, 0);
        assert!((got[1].distance - 0.6).abs() < 1e-6);
    }

    #[test]
    fn brute_force_full_and_too_large() {
        let d = line_dataset();
        let all = d
            .brute_force_search(&Vector::new(vec![-1.0]).unwrap(), 4)
            .unwrap();
        assert_eq!(all.iter().map(|n| n.id).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        assert!(matches!(
            d.brute_force_search(&Vector::new(vec![0.0]).unwrap(), 5),
            Err(Error::KTooLarge { k: 5, available: 4 })
        ));
    }

    #[test]
    fn equidistant_tie_goes_to_lower_id() {
        let d = line_dataset();
        // 1.5 is equidistant from ids 1 and 2.
        let got = d
            .brute_force_search(&Vector::new(vec![1.5]).unwrap(), 2)
            .unwrap();
        assert_eq!(got[0].id, 1);
        assert_eq!(got[1].id, 2);
    }

    #[test]
    fn fetch_order_and_unknown_id() {
        let d = line_dataset();
        let got = d.fetch(&[2, 0]).unwrap();
        assert_eq!(got[0].components(), &[2.0]);
        assert_eq!(got[1].components(), &[0.0]);
        assert!(d.fetch(&[]).unwrap().is_empty());
        assert!(matches!(d.fetch(&[4]), Err(Error::UnknownId(4))));
    }

    #[test]
    fn search_distances_match_refetched_vectors() {
        let d = line_dataset();
        let q = Vector::new(vec![0.9]).unwrap();
        let result = d.brute_force_search(&q, 3).unwrap();
        for n in &result {
            let v = d.fetch(&[n.id]).unwrap().remove(0);
            let recomputed = distance(&q, &v, d.metric()).unwrap();
            assert_eq!(n.distance, recomputed);
        }
    }

    #[test]
    fn delayed_backend_adds_latency_not_results() {
        let d = line_dataset();
        let q = Vector::new(vec![0.6]).unwrap();
        let plain = ExactBackend::new(d.clone());
        let expected = plain.search(&q, 2).unwrap();

        let zero = DelayedBackend::new(
            ExactBackend::new(d.clone()),
            Duration::ZERO,
            Duration::ZERO,
        );
        assert_eq!(zero.search(&q, 2).unwrap(), expected);

        let slow = DelayedBackend::new(ExactBackend::new(d.clone()), Duration::from_millis(5), Duration::ZERO);
        let start = std::time::Instant::now();
        assert_eq!(slow.search(&q, 2).unwrap(), expected);
        assert!(start.elapsed() >= Duration::from_millis(5));

        let nested = DelayedBackend::new(
            DelayedBackend::new(ExactBackend::new(d), Duration::from_millis(2), Duration::ZERO),
            Duration::from_millis(3),
            Duration::ZERO,
        );
        let start = std::time::Instant::now();
        nested.search(&q, 2).unwrap();
        assert!(start.elapsed() >= Duration::from_millis(5));
    }

    #[test]
    fn fvecs_single_record_and_errors() {
        let dir = tempfile::tempdir().unwrap();

        let single = dir.path().join("one.fvecs");
        let mut bytes = 2i32.to_le_bytes().to_vec();
        bytes.extend(1.0f32.to_le_bytes());
        bytes.extend(2.0f32.to_le_bytes());
        std::fs::write(&single, &bytes).unwrap();
        let ds = load_fvecs(&single).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.vector(0).unwrap().components(), &[1.0, 2.0]);

        let empty = dir.path().join("empty.fvecs");
        std::fs::write(&empty, b"").unwrap();
        assert_eq!(load_fvecs(&empty).unwrap().len(), 0);

        // d=2 record followed by d=3 record.
        let mixed = dir.path().join("mixed.fvecs");
        let mut bytes = 2i32.to_le_bytes().to_vec();
        bytes.extend(1.0f32.to_le_bytes());
        bytes.extend(2.0f32.to_le_bytes());
        bytes.extend(3i32.to_le_bytes());
        bytes.extend([0u8; 12]);
        std::fs::write(&mixed, &bytes).unwrap();
        let err = load_fvecs(&mixed).unwrap_err();
        match err {
            Error::Format { offset, .. } => assert_eq!(offset, 12),
            other => panic!("unexpected error {other}"),
        }

        // Truncated payload.
        let truncated = dir.path().join("short.fvecs");
        let mut bytes = 2i32.to_le_bytes().to_vec();
        bytes.extend(1.0f32.to_le_bytes());
        std::fs::write(&truncated, &bytes).unwrap();
        assert!(matches!(load_fvecs(&truncated), Err(Error::Format { .. })));

        // Non-positive dimension.
        let bad_dim = dir.path().join("bad.fvecs");
        std::fs::write(&bad_dim, (-1i32).to_le_bytes()).unwrap();
        assert!(matches!(load_fvecs(&bad_dim), Err(Error::Format { .. })));
    }

    #[test]
    fn bvecs_and_ivecs_round_trip() {
        let dir = tempfile::tempdir().unwrap();

        let bpath = dir.path().join("x.bvecs");
        let mut bytes = 3i32.to_le_bytes().to_vec();
        bytes.extend([5u8, 0, 255]);
        std::fs::write(&bpath, &bytes).unwrap();
        let ds = load_bvecs(&bpath).unwrap();
        assert_eq!(ds.vector(0).unwrap().components(), &[5.0, 0.0, 255.0]);

        let ipath = dir.path().join("x.ivecs");
        let lists = vec![vec![3, 1, 4], vec![1, 5, 9]];
        write_ivecs(&ipath, &lists).unwrap();
        assert_eq!(load_ivecs(&ipath).unwrap(), lists);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn fvecs_round_trip_is_bitwise(
            rows in proptest::collection::vec(
                proptest::collection::vec(-1e30f32..1e30, 4),
                1..20,
            )
        ) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("rt.fvecs");
            let vectors: Vec<Vector> = rows.into_iter().map(|r| Vector::new(r).unwrap()).collect();
            write_fvecs(&path, &vectors).unwrap();
            let loaded = load_fvecs(&path).unwrap();
            prop_assert_eq!(loaded.vectors(), &vectors[..]);
            // Second write produces identical bytes.
            let path2 = dir.path().join("rt2.fvecs");
            write_fvecs(&path2, loaded.vectors()).unwrap();
            prop_assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
        }
    }
}
