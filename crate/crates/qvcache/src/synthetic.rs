//! Synthetic Gaussian-mixture datasets, so benchmarks and tests run without
//! any downloads.
//!
//! Clusters may be isotropic or low-rank: embedding data in the wild varies
//! along far fewer directions than its ambient dimensionality, and the
//! low-rank mode reproduces that. Each low-rank cluster spreads its variance
//! over a random orthonormal subspace plus a little ambient noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::backend::Dataset;
use crate::error::{Error, Result};
use crate::model::{DistanceMetric, Vector};

/// A fixed set of cluster centers with per-cluster standard deviations.
/// Sampling assigns each point to a cluster uniformly.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    centers: Vec<Vec<f32>>,
    stds: Vec<f32>,
    /// Per-cluster orthonormal subspace bases (row-major, intrinsic x dim).
    /// Empty means isotropic clusters.
    bases: Vec<Vec<f32>>,
    intrinsic_dim: usize,
    ambient_noise: f32,
}

impl GaussianMixture {
    /// Isotropic clusters around the given centers.
    pub fn new(centers: Vec<Vec<f32>>, stds: Vec<f32>) -> Result<Self> {
        Self::validate(&centers, &stds)?;
        Ok(Self {
            centers,
            stds,
            bases: Vec::new(),
            intrinsic_dim: 0,
            ambient_noise: 0.0,
        })
    }

    /// Low-rank clusters: each spreads `std` over its own random
    /// `intrinsic_dim`-dimensional subspace, plus `ambient_noise` isotropic.
    pub fn new_low_rank(
        centers: Vec<Vec<f32>>,
        stds: Vec<f32>,
        intrinsic_dim: usize,
        ambient_noise: f32,
        seed: u64,
    ) -> Result<Self> {
        Self::validate(&centers, &stds)?;
        let dim = centers[0].len();
        if intrinsic_dim == 0 || intrinsic_dim > dim {
            return Err(Error::InvalidConfig(format!(
                "intrinsic_dim must be in 1..={dim}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ba5_e77e);
        let bases = (0..centers.len())
            .map(|_| random_orthonormal_rows(dim, intrinsic_dim, &mut rng))
            .collect();
        Ok(Self {
            centers,
            stds,
            bases,
            intrinsic_dim,
            ambient_noise,
        })
    }

    /// Isotropic clusters with standard-normal centers and one shared std.
    pub fn random(dim: usize, n_clusters: usize, std: f32, seed: u64) -> Self {
        let centers = random_centers(dim, n_clusters, seed);
        Self {
            centers,
            stds: vec![std; n_clusters],
            bases: Vec::new(),
            intrinsic_dim: 0,
            ambient_noise: 0.0,
        }
    }

    /// Low-rank clusters with standard-normal centers and one shared std.
    pub fn random_low_rank(
        dim: usize,
        n_clusters: usize,
        std: f32,
        intrinsic_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        let centers = random_centers(dim, n_clusters, seed);
        Self::new_low_rank(centers, vec![std; n_clusters], intrinsic_dim, std / 20.0, seed)
    }

    fn validate(centers: &[Vec<f32>], stds: &[f32]) -> Result<()> {
        if centers.is_empty() {
            return Err(Error::InvalidConfig("need at least one cluster".into()));
        }
        if centers.len() != stds.len() {
            return Err(Error::InvalidConfig(
                "centers and stds must have equal length".into(),
            ));
        }
        let dim = centers[0].len();
        if dim == 0 || centers.iter().any(|c| c.len() != dim) {
            return Err(Error::InvalidConfig(
                "cluster centers must share a positive dimension".into(),
            ));
        }
        if stds.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::InvalidConfig(
                "cluster stds must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.centers[0].len()
    }

    pub fn n_clusters(&self) -> usize {
        self.centers.len()
    }

    pub fn centers(&self) -> &[Vec<f32>] {
        &self.centers
    }

    /// Draw `n` points; deterministic given `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unit = Normal::new(0.0f32, 1.0).expect("valid normal");
        let dim = self.dim();
        let vectors = (0..n)
            .map(|_| {
                let cluster = rng.gen_range(0..self.centers.len());
                let std = self.stds[cluster];
                let mut point = self.centers[cluster].clone();
                if self.bases.is_empty() {
                    for c in &mut point {
                        *c += std * unit.sample(&mut rng);
                    }
                } else {
                    let basis = &self.bases[cluster];
                    for row in 0..self.intrinsic_dim {
                        let magnitude = std * unit.sample(&mut rng);
                        for (c, b) in point.iter_mut().zip(&basis[row * dim..(row + 1) * dim]) {
                            *c += magnitude * b;
                        }
                    }
                    if self.ambient_noise > 0.0 {
                        for c in &mut point {
                            *c += self.ambient_noise * unit.sample(&mut rng);
                        }
                    }
                }
                Vector::new(point).expect("finite gaussian draw")
            })
            .collect();
        Dataset::new(vectors, DistanceMetric::Euclidean).expect("uniform dimensions")
    }
}

fn random_centers(dim: usize, n_clusters: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f32, 1.0).expect("valid normal");
    (0..n_clusters)
        .map(|_| (0..dim).map(|_| normal.sample(&mut rng)).collect())
        .collect()
}

/// Gram-Schmidt over gaussian rows.
fn random_orthonormal_rows(dim: usize, rows: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let normal = Normal::new(0.0f64, 1.0).expect("valid normal");
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(rows);
    while basis.len() < rows {
        let mut v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        for prev in &basis {
            let dot: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum();
            for (x, p) in v.iter_mut().zip(prev) {
                *x -= dot * p;
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            for x in &mut v {
                *x /= norm;
            }
            basis.push(v);
        }
    }
    basis
        .into_iter()
        .flat_map(|row| row.into_iter().map(|x| x as f32))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_is_deterministic() {
        let mix = GaussianMixture::random(8, 4, 0.2, 9);
        assert_eq!(mix.sample(100, 1).vectors(), mix.sample(100, 1).vectors());
        assert_ne!(mix.sample(100, 1).vectors(), mix.sample(100, 2).vectors());

        let low = GaussianMixture::random_low_rank(16, 4, 0.5, 4, 9).unwrap();
        assert_eq!(low.sample(100, 1).vectors(), low.sample(100, 1).vectors());
    }

    #[test]
    fn points_cluster_around_centers() {
        let mix = GaussianMixture::random(16, 2, 0.05, 10);
        let data = mix.sample(500, 11);
        for v in data.vectors() {
            // Every point is near one of the two centers.
            let best = mix
                .centers
                .iter()
                .map(|c| {
                    c.iter()
                        .zip(v.components())
                        .map(|(a, b)| ((a - b) as f64).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            // 0.05 * sqrt(16) = 0.2 expected displacement; allow generous slack.
            assert!(best < 1.0, "point {best} away from nearest center");
        }
    }

    #[test]
    fn low_rank_clusters_stay_near_their_subspace() {
        let mix = GaussianMixture::random_low_rank(32, 1, 1.0, 4, 12).unwrap();
        let data = mix.sample(300, 13);
        let center = &mix.centers[0];
        let basis = &mix.bases[0];
        for v in data.vectors() {
            let offset: Vec<f64> = v
                .components()
                .iter()
                .zip(center)
                .map(|(a, b)| (a - b) as f64)
                .collect();
            // Component inside the subspace.
            let mut inside = 0.0f64;
            for r in 0..4 {
                let dot: f64 = basis[r * 32..(r + 1) * 32]
                    .iter()
                    .zip(&offset)
                    .map(|(b, o)| *b as f64 * o)
                    .sum();
                inside += dot * dot;
            }
            let total: f64 = offset.iter().map(|o| o * o).sum();
            let residual = (total - inside).max(0.0).sqrt();
            // Ambient noise is std/20 = 0.05 across 32 dims: ~0.28 expected.
            assert!(residual < 1.0, "residual {residual} too large");
        }
    }

    #[test]
    fn rejects_mismatched_configs() {
        assert!(GaussianMixture::new(vec![], vec![]).is_err());
        assert!(GaussianMixture::new(vec![vec![0.0]], vec![0.1, 0.2]).is_err());
        assert!(GaussianMixture::new(vec![vec![0.0], vec![1.0, 2.0]], vec![0.1, 0.2]).is_err());
        assert!(GaussianMixture::random_low_rank(8, 2, 0.1, 9, 1).is_err());
    }
}
