//! Region-keyed distance thresholds.
//!
//! Queries are projected to a low-dimensional space, bucketed per dimension,
//! and the resulting region key selects an independently learned threshold per
//! requested k. Thresholds start at the first observed backend k-th distance
//! for their region and then track it with an exponential moving average.
//! Regions are allocated lazily; a missing entry means the region has never
//! been queried.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Vector;

const PROJECTOR_MAGIC: &[u8; 4] = b"QVPJ";
const PROJECTOR_VERSION: u32 = 1;

/// Discretized identifier of the sub-space a query falls into: one bucket
/// digit per reduced dimension, packed base-`n_buckets` into 128 bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RegionKey(pub u128);

/// Linear projection plus per-dimension bucket bounds.
///
/// Rows of `matrix` must be unit-norm and pairwise orthogonal (within 1e-4);
/// bucket widths must be positive. The key space `n_buckets^d_reduced` must
/// fit in 128 bits.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    matrix: Vec<f32>, // d_reduced x dim_in, row-major
    dim_in: usize,
    d_reduced: usize,
    n_buckets: u32,
    bucket_min: Vec<f32>,
    bucket_width: Vec<f32>,
}

impl Projector {
    pub fn new(
        matrix: Vec<f32>,
        dim_in: usize,
        d_reduced: usize,
        n_buckets: u32,
        bucket_min: Vec<f32>,
        bucket_width: Vec<f32>,
    ) -> Result<Self> {
        if dim_in == 0 || d_reduced == 0 {
            return Err(Error::InvalidConfig(
                "projector dimensions must be positive".into(),
            ));
        }
        if n_buckets == 0 {
            return Err(Error::InvalidConfig("n_buckets must be positive".into()));
        }
        if matrix.len() != d_reduced * dim_in {
            return Err(Error::InvalidConfig(format!(
                "matrix has {} entries, expected {}",
                matrix.len(),
                d_reduced * dim_in
            )));
        }
        if bucket_min.len() != d_reduced || bucket_width.len() != d_reduced {
            return Err(Error::InvalidConfig(
                "bucket bounds must have d_reduced entries".into(),
            ));
        }
        if bucket_width.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidConfig(
                "bucket widths must be positive and finite".into(),
            ));
        }
        check_key_space(n_buckets, d_reduced)?;

        let p = Self {
            matrix,
            dim_in,
            d_reduced,
            n_buckets,
            bucket_min,
            bucket_width,
        };
        p.check_orthonormal()?;
        Ok(p)
    }

    /// Identity projection with the given bucketing; handy for tests and for
    /// the single-global-threshold mode (d_reduced = 1, n_buckets = 1).
    pub fn identity(dim: usize, n_buckets: u32, bucket_min: f32, bucket_width: f32) -> Result<Self> {
        let mut matrix = vec![0.0f32; dim * dim];
        for i in 0..dim {
            matrix[i * dim + i] = 1.0;
        }
        Self::new(
            matrix,
            dim,
            dim,
            n_buckets,
            vec![bucket_min; dim],
            vec![bucket_width; dim],
        )
    }

    fn check_orthonormal(&self) -> Result<()> {
        const TOL: f64 = 1e-4;
        for i in 0..self.d_reduced {
            for j in i..self.d_reduced {
                let dot: f64 = self.row(i)
                    .iter()
                    .zip(self.row(j))
                    .map(|(a, b)| *a as f64 * *b as f64)
                    .sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot - expect).abs() > TOL {
                    return Err(Error::InvalidConfig(format!(
                        "projection rows {i} and {j} are not orthonormal (dot = {dot})"
                    )));
                }
            }
        }
        Ok(())
    }

    fn row(&self, i: usize) -> &[f32] {
        &self.matrix[i * self.dim_in..(i + 1) * self.dim_in]
    }

    /// One row of the projection matrix.
    pub fn matrix_row(&self, i: usize) -> &[f32] {
        self.row(i)
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn d_reduced(&self) -> usize {
        self.d_reduced
    }

    pub fn n_buckets(&self) -> u32 {
        self.n_buckets
    }

    pub fn bucket_min(&self) -> &[f32] {
        &self.bucket_min
    }

    pub fn bucket_width(&self) -> &[f32] {
        &self.bucket_width
    }

    /// Project the query and return its reduced-space coordinates.
    pub fn project(&self, query: &Vector) -> Result<Vec<f64>> {
        if query.dim() != self.dim_in {
            return Err(Error::DimensionMismatch {
                expected: self.dim_in,
                got: query.dim(),
            });
        }
        let q = query.components();
        Ok((0..self.d_reduced)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(q)
                    .map(|(m, x)| *m as f64 * *x as f64)
                    .sum()
            })
            .collect())
    }

    /// Bucket each reduced coordinate and pack the digits into a key.
    /// Out-of-range coordinates clamp to the edge buckets.
    pub fn region_key(&self, query: &Vector) -> Result<RegionKey> {
        let projected = self.project(query)?;
        let n = self.n_buckets as i64;
        let mut key: u128 = 0;
        // Digit i occupies the i-th base-n_buckets position (least
        // significant first), so the encoding is injective by construction.
        for (i, y) in projected.iter().enumerate().rev() {
            let raw = ((y - self.bucket_min[i] as f64) / self.bucket_width[i] as f64).floor();
            let digit = if raw.is_nan() {
                0
            } else {
                (raw as i64).clamp(0, n - 1)
            };
            key = key * self.n_buckets as u128 + digit as u128;
        }
        Ok(RegionKey(key))
    }

    /// Serialize as a flat binary file: magic, version, dim_in, d_reduced,
    /// n_buckets (u32 little-endian), then the row-major matrix, bucket_min,
    /// and bucket_width as little-endian f32.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(PROJECTOR_MAGIC)?;
        w.write_all(&PROJECTOR_VERSION.to_le_bytes())?;
        w.write_all(&(self.dim_in as u32).to_le_bytes())?;
        w.write_all(&(self.d_reduced as u32).to_le_bytes())?;
        w.write_all(&self.n_buckets.to_le_bytes())?;
        for value in self
            .matrix
            .iter()
            .chain(&self.bucket_min)
            .chain(&self.bucket_width)
        {
            w.write_all(&value.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut file)
    }

    pub fn read_from<R: Read>(r: &mut R, path_label: &str) -> Result<Self> {
        let format_err = |offset: u64, message: &str| Error::Format {
            path: path_label.to_string(),
            offset,
            message: message.to_string(),
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| format_err(0, "truncated header"))?;
        if &magic != PROJECTOR_MAGIC {
            return Err(format_err(0, "bad magic, expected QVPJ"));
        }
        let mut word = [0u8; 4];
        let mut read_u32 = |r: &mut R, offset: u64, what: &str| -> Result<u32> {
            r.read_exact(&mut word)
                .map_err(|_| format_err(offset, what))?;
            Ok(u32::from_le_bytes(word))
        };
        let version = read_u32(r, 4, "truncated version")?;
        if version != PROJECTOR_VERSION {
            return Err(format_err(4, "unsupported version"));
        }
        let dim_in = read_u32(r, 8, "truncated dim_in")? as usize;
        let d_reduced = read_u32(r, 12, "truncated d_reduced")? as usize;
        let n_buckets = read_u32(r, 16, "truncated n_buckets")?;

        let count = d_reduced
            .checked_mul(dim_in)
            .and_then(|m| m.checked_add(2 * d_reduced))
            .ok_or_else(|| format_err(8, "dimensions overflow"))?;
        let mut values = Vec::with_capacity(count);
        let mut buf = [0u8; 4];
        for i in 0..count {
            r.read_exact(&mut buf)
                .map_err(|_| format_err(20 + 4 * i as u64, "truncated payload"))?;
            values.push(f32::from_le_bytes(buf));
        }
        let matrix = values[..d_reduced * dim_in].to_vec();
        let bucket_min = values[d_reduced * dim_in..d_reduced * dim_in + d_reduced].to_vec();
        let bucket_width = values[d_reduced * dim_in + d_reduced..].to_vec();
        Self::new(matrix, dim_in, d_reduced, n_buckets, bucket_min, bucket_width)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut file, &path.display().to_string())
    }
}

fn check_key_space(n_buckets: u32, d_reduced: usize) -> Result<()> {
    // n_buckets^d_reduced must be <= 2^128.
    let mut acc: u128 = 1;
    for _ in 0..d_reduced {
        match acc.checked_mul(n_buckets as u128) {
            Some(next) => acc = next,
            None => {
                // Exactly 2^128 is still injective over u128 keys.
                let per_digit_bits = if n_buckets.is_power_of_two() {
                    n_buckets.trailing_zeros() as usize
                } else {
                    return Err(Error::KeySpaceOverflow);
                };
                if per_digit_bits * d_reduced == 128 {
                    return Ok(());
                }
                return Err(Error::KeySpaceOverflow);
            }
        }
    }
    Ok(())
}

/// Lazily allocated map from (k, region) to a learned distance threshold.
#[derive(Debug, Clone)]
pub struct ThresholdStore {
    table: HashMap<(usize, RegionKey), Entry>,
    adaptivity_rate: f64,
    max_regions: Option<usize>,
    clock: u64,
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    theta: f64,
    last_update: u64,
}

impl ThresholdStore {
    pub fn new(adaptivity_rate: f64, max_regions: Option<usize>) -> Result<Self> {
        if !(0.0..=1.0).contains(&adaptivity_rate) {
            return Err(Error::InvalidConfig(
                "adaptivity_rate must be in [0, 1]".into(),
            ));
        }
        if max_regions == Some(0) {
            return Err(Error::InvalidConfig("max_regions must be positive".into()));
        }
        Ok(Self {
            table: HashMap::new(),
            adaptivity_rate,
            max_regions,
            clock: 0,
        })
    }

    pub fn adaptivity_rate(&self) -> f64 {
        self.adaptivity_rate
    }

    /// Number of live (k, region) entries.
    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn lookup(&self, k: usize, region: RegionKey) -> Option<f64> {
        self.table.get(&(k, region)).map(|e| e.theta)
    }

    /// Fold the backend's k-th neighbor distance into the threshold for the
    /// query's region. A first observation initializes the threshold to the
    /// distance itself; later ones apply the EMA update. When a region cap is
    /// set, the least-recently-updated entry is evicted on overflow.
    pub fn learn(
        &mut self,
        projector: &Projector,
        query: &Vector,
        k: usize,
        backend_distances: &[f64],
    ) -> Result<RegionKey> {
        if backend_distances.len() < k {
            return Err(Error::TooFewDistances {
                needed: k,
                got: backend_distances.len(),
            });
        }
        if k == 0 {
            return Err(Error::InvalidConfig("k must be positive".into()));
        }
        let region = projector.region_key(query)?;
        let observed = backend_distances[k - 1];
        self.clock += 1;
        let clock = self.clock;
        self.table
            .entry((k, region))
            .and_modify(|e| {
                e.theta = (1.0 - self.adaptivity_rate) * e.theta + self.adaptivity_rate * observed;
                e.last_update = clock;
            })
            .or_insert(Entry {
                theta: observed,
                last_update: clock,
            });

        if let Some(cap) = self.max_regions {
            while self.table.len() > cap {
                let victim = self
                    .table
                    .iter()
                    .min_by_key(|(_, e)| e.last_update)
                    .map(|(key, _)| *key)
                    .expect("non-empty table");
                self.table.remove(&victim);
            }
        }
        Ok(region)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vecf(c: &[f32]) -> Vector {
        Vector::new(c.to_vec()).unwrap()
    }

    fn plane_projector(n_buckets: u32) -> Projector {
        Projector::identity(2, n_buckets, 0.0, 1.0).unwrap()
    }

    #[test]
    fn region_key_direct_bucketing() {
        let p = plane_projector(8);
        let key = p.region_key(&vecf(&[3.5, 7.2])).unwrap();
        // digit 0 = 3, digit 1 = 7, packed little-endian base 8
        assert_eq!(key, RegionKey(3 + 7 * 8));
    }

    #[test]
    fn region_key_clamps_to_edges() {
        let p = plane_projector(8);
        let key = p.region_key(&vecf(&[9.5, -1.0])).unwrap();
        assert_eq!(key, RegionKey(7 + 0 * 8));
    }

    #[test]
    fn region_key_is_stable() {
        let p = plane_projector(8);
        let a = p.region_key(&vecf(&[2.1, 4.9])).unwrap();
        let b = p.region_key(&vecf(&[2.8, 4.2])).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, p.region_key(&vecf(&[2.1, 4.9])).unwrap());
    }

    #[test]
    fn key_space_bounds() {
        assert!(check_key_space(8, 16).is_ok());
        assert!(check_key_space(256, 16).is_ok()); // exactly 2^128
        assert!(check_key_space(256, 17).is_err());
        assert!(check_key_space(10, 39).is_err());
    }

    #[test]
    fn learn_initializes_then_ema() {
        let p = plane_projector(8);
        let mut store = ThresholdStore::new(0.9, None).unwrap();
        let q = vecf(&[1.0, 1.0]);
        let region = p.region_key(&q).unwrap();

        assert_eq!(store.lookup(10, region), None);
        store.learn(&p, &q, 10, &[0.0; 9].iter().chain(&[2.5]).copied().collect::<Vec<_>>()).unwrap();
        assert_eq!(store.lookup(10, region), Some(2.5));
    }

    #[test]
    fn ema_arithmetic() {
        let p = plane_projector(8);
        let q = vecf(&[1.0, 1.0]);
        let region = p.region_key(&q).unwrap();

        let mut store = ThresholdStore::new(0.9, None).unwrap();
        store.learn(&p, &q, 1, &[10.0]).unwrap();
        store.learn(&p, &q, 1, &[20.0]).unwrap();
        assert!((store.lookup(1, region).unwrap() - 19.0).abs() < 1e-12);

        let mut frozen = ThresholdStore::new(0.0, None).unwrap();
        frozen.learn(&p, &q, 1, &[10.0]).unwrap();
        frozen.learn(&p, &q, 1, &[123.0]).unwrap();
        assert_eq!(frozen.lookup(1, region), Some(10.0));
    }

    #[test]
    fn learn_requires_k_distances() {
        let p = plane_projector(8);
        let mut store = ThresholdStore::new(0.9, None).unwrap();
        let err = store
            .learn(&p, &vecf(&[1.0, 1.0]), 3, &[1.0, 2.0])
            .unwrap_err();
        assert!(matches!(err, Error::TooFewDistances { needed: 3, got: 2 }));
    }

    #[test]
    fn distinct_k_are_independent() {
        let p = plane_projector(8);
        let q = vecf(&[1.0, 1.0]);
        let region = p.region_key(&q).unwrap();
        let mut store = ThresholdStore::new(0.9, None).unwrap();
        store.learn(&p, &q, 1, &[3.0]).unwrap();
        store.learn(&p, &q, 2, &[3.0, 5.0]).unwrap();
        assert_eq!(store.lookup(1, region), Some(3.0));
        assert_eq!(store.lookup(2, region), Some(5.0));
        // Updating one leaves the other untouched.
        store.learn(&p, &q, 1, &[7.0]).unwrap();
        assert_eq!(store.lookup(2, region), Some(5.0));
    }

    #[test]
    fn geometric_convergence() {
        // |theta_n - c| = (1 - alpha)^n |theta_0 - c|
        let p = plane_projector(8);
        let q = vecf(&[0.5, 0.5]);
        for theta0 in [0.0, 1.0, 1e6] {
            let mut store = ThresholdStore::new(0.9, None).unwrap();
            store.learn(&p, &q, 1, &[theta0]).unwrap();
            let c = 2.5;
            for _ in 0..15 {
                store.learn(&p, &q, 1, &[c]).unwrap();
            }
            let theta = store.lookup(1, p.region_key(&q).unwrap()).unwrap();
            assert!(
                (theta - c).abs() <= 1e-6,
                "theta0 {theta0}: |{theta} - {c}| > 1e-6"
            );
        }
    }

    #[test]
    fn region_cap_evicts_least_recently_updated() {
        let p = plane_projector(8);
        let mut store = ThresholdStore::new(0.5, Some(2)).unwrap();
        let (q0, q1, q2) = (vecf(&[0.5, 0.5]), vecf(&[1.5, 0.5]), vecf(&[2.5, 0.5]));
        store.learn(&p, &q0, 1, &[1.0]).unwrap();
        store.learn(&p, &q1, 1, &[1.0]).unwrap();
        store.learn(&p, &q0, 1, &[1.0]).unwrap(); // refresh q0
        store.learn(&p, &q2, 1, &[1.0]).unwrap(); // evicts q1's region
        assert_eq!(store.len(), 2);
        assert!(store.lookup(1, p.region_key(&q0).unwrap()).is_some());
        assert!(store.lookup(1, p.region_key(&q1).unwrap()).is_none());
        assert!(store.lookup(1, p.region_key(&q2).unwrap()).is_some());
    }

    #[test]
    fn projector_round_trips_bitwise() {
        let p = Projector::new(
            vec![0.6, 0.8, -0.8, 0.6],
            2,
            2,
            8,
            vec![-1.0, -2.0],
            vec![0.5, 0.25],
        )
        .unwrap();
        let mut bytes = Vec::new();
        p.write_to(&mut bytes).unwrap();
        let p2 = Projector::read_from(&mut bytes.as_slice(), "mem").unwrap();
        assert_eq!(p, p2);

        let mut bytes2 = Vec::new();
        p2.write_to(&mut bytes2).unwrap();
        assert_eq!(bytes, bytes2);
    }

    #[test]
    fn projector_rejects_bad_input() {
        // Non-orthonormal rows.
        assert!(Projector::new(vec![1.0, 0.0, 1.0, 0.0], 2, 2, 8, vec![0.0; 2], vec![1.0; 2]).is_err());
        // Zero bucket width.
        assert!(Projector::new(vec![1.0, 0.0], 2, 1, 8, vec![0.0], vec![0.0]).is_err());
        // Truncated file.
        let err = Projector::read_from(&mut &b"QVPJ\x01\x00\x00\x00"[..], "mem").unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }
}
