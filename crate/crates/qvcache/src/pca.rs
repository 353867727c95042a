//! Offline projector training.
//!
//! Computes the top principal components of a small random sample via
//! orthogonal iteration (block power method) on the dense covariance matrix,
//! then derives per-dimension bucket bounds from the projected sample. The
//! input dimensionality is small enough (<= ~1,024) that dense iteration is
//! adequate and avoids an external solver.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backend::Dataset;
use crate::error::{Error, Result};
use crate::model::Vector;
use crate::threshold::Projector;

const CONVERGENCE_TOL: f64 = 1e-6;
const MAX_ITERATIONS: usize = 1_000;
/// Bucket ranges are widened by this fraction of the observed extent so
/// borderline projections of unseen queries still land inside.
const RANGE_WIDENING: f64 = 0.01;

/// Train a projector on `sample`: mean-centered covariance, top `d_reduced`
/// eigenvectors (deterministic given `seed`), bucket bounds from the
/// projected sample extent.
pub fn train(sample: &[Vector], d_reduced: usize, n_buckets: u32, seed: u64) -> Result<Projector> {
    let needed = (d_reduced + 1).max(100);
    if sample.len() < needed {
        return Err(Error::SampleTooSmall {
            needed,
            got: sample.len(),
        });
    }
    let dim = sample[0].dim();
    if d_reduced > dim {
        return Err(Error::InvalidConfig(format!(
            "d_reduced ({d_reduced}) exceeds input dimensionality ({dim})"
        )));
    }
    for v in sample {
        if v.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: v.dim(),
            });
        }
    }

    let covariance = covariance_matrix(sample, dim);
    let total_variance: f64 = (0..dim).map(|i| covariance[i * dim + i]).sum();
    if total_variance <= 0.0 {
        return Err(Error::DegenerateSample);
    }

    let components = top_eigenvectors(&covariance, dim, d_reduced, seed);

    // Row-major f32 matrix with a deterministic sign convention: the entry of
    // largest magnitude in each component is positive.
    let mut matrix = vec![0.0f32; d_reduced * dim];
    for (r, comp) in components.iter().enumerate() {
        let lead = comp
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
            .map(|(_, v)| *v)
            .unwrap_or(1.0);
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        for (c, value) in comp.iter().enumerate() {
            matrix[r * dim + c] = (value * sign) as f32;
        }
    }

    // Bucket bounds from the projected sample, widened; a dimension with no
    // spread gets a unit width so the bucketing stays well defined.
    let mut lo = vec![f64::INFINITY; d_reduced];
    let mut hi = vec![f64::NEG_INFINITY; d_reduced];
    for v in sample {
        for r in 0..d_reduced {
            let y: f64 = matrix[r * dim..(r + 1) * dim]
                .iter()
                .zip(v.components())
                .map(|(m, x)| *m as f64 * *x as f64)
                .sum();
            lo[r] = lo[r].min(y);
            hi[r] = hi[r].max(y);
        }
    }
    let mut bucket_min = Vec::with_capacity(d_reduced);
    let mut bucket_width = Vec::with_capacity(d_reduced);
    for r in 0..d_reduced {
        let extent = hi[r] - lo[r];
        if extent > 0.0 {
            let min = lo[r] - extent * RANGE_WIDENING / 2.0;
            let max = hi[r] + extent * RANGE_WIDENING / 2.0;
            bucket_min.push(min as f32);
            bucket_width.push(((max - min) / n_buckets as f64) as f32);
        } else {
            bucket_min.push(lo[r] as f32);
            bucket_width.push(1.0);
        }
    }

    Projector::new(matrix, dim, d_reduced, n_buckets, bucket_min, bucket_width)
}

/// Uniform sample without replacement of `ratio * |dataset|` vectors
/// (floored), deterministic given `seed`.
pub fn sample_dataset(dataset: &Dataset, ratio: f64, seed: u64) -> Result<Vec<Vector>> {
    if dataset.len() == 0 {
        return Err(Error::EmptyDataset);
    }
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidConfig("ratio must be in (0, 1]".into()));
    }
    let count = (ratio * dataset.len() as f64).floor() as usize;
    if count == 0 {
        return Err(Error::InvalidConfig(
            "ratio * dataset size must be at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    let (chosen, _) = indices.partial_shuffle(&mut rng, count);
    Ok(chosen
        .iter()
        .map(|&i| dataset.vector(i as u64).expect("index in range").clone())
        .collect())
}

fn covariance_matrix(sample: &[Vector], dim: usize) -> Vec<f64> {
    let n = sample.len();
    let mut mean = vec![0.0f64; dim];
    for v in sample {
        for (m, x) in mean.iter_mut().zip(v.components()) {
            *m += *x as f64;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    let mut cov = vec![0.0f64; dim * dim];
    let mut centered = vec![0.0f64; dim];
    for v in sample {
        for (c, (x, m)) in centered.iter_mut().zip(v.components().iter().zip(&mean)) {
            *c = *x as f64 - m;
        }
        for i in 0..dim {
            let ci = centered[i];
            // Upper triangle only; mirrored below.
            for j in i..dim {
                cov[i * dim + j] += ci * centered[j];
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..dim {
        for j in i..dim {
            let value = cov[i * dim + j] / denom;
            cov[i * dim + j] = value;
            cov[j * dim + i] = value;
        }
    }
    cov
}

/// Orthogonal iteration: repeatedly multiply an orthonormal block by the
/// covariance and re-orthonormalize until the subspace stops moving. Returns
/// the components sorted by descending eigenvalue.
fn top_eigenvectors(cov: &[f64], dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis: Vec<Vec<f64>> = (0..count)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    orthonormalize(&mut basis);

    for _ in 0..MAX_ITERATIONS {
        let mut next: Vec<Vec<f64>> = basis.iter().map(|v| mat_vec(cov, dim, v)).collect();
        orthonormalize(&mut next);
        let drift = basis
            .iter()
            .zip(&next)
            .map(|(old, new)| {
                let dot: f64 = old.iter().zip(new).map(|(a, b)| a * b).sum();
                (1.0 - dot.abs()).abs()
            })
            .fold(0.0f64, f64::max);
        basis = next;
        if drift < CONVERGENCE_TOL {
            break;
        }
    }

    // Sort by Rayleigh quotient, largest first.
    let mut scored: Vec<(f64, Vec<f64>)> = basis
        .into_iter()
        .map(|v| {
            let cv = mat_vec(cov, dim, &v);
            let lambda: f64 = v.iter().zip(&cv).map(|(a, b)| a * b).sum();
            (lambda, v)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    scored.into_iter().map(|(_, v)| v).collect()
}

fn mat_vec(matrix: &[f64], dim: usize, v: &[f64]) -> Vec<f64> {
    (0..dim)
        .map(|i| {
            matrix[i * dim..(i + 1) * dim]
                .iter()
                .zip(v)
                .map(|(m, x)| m * x)
                .sum()
        })
        .collect()
}

/// Gram-Schmidt with re-normalization; degenerate columns are replaced by a
/// deterministic axis vector orthogonal to the ones kept so far.
fn orthonormalize(basis: &mut [Vec<f64>]) {
    let dim = basis[0].len();
    for i in 0..basis.len() {
        for j in 0..i {
            let dot: f64 = basis[i].iter().zip(&basis[j]).map(|(a, b)| a * b).sum();
            let (head, tail) = basis.split_at_mut(i);
            for (x, y) in tail[0].iter_mut().zip(&head[j]) {
                *x -= dot * y;
            }
        }
        let norm: f64 = basis[i].iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            for x in &mut basis[i] {
                *x /= norm;
            }
        } else {
            // Collapsed direction: fall back to the first axis not spanned yet.
            'axes: for axis in 0..dim {
                let mut candidate = vec![0.0; dim];
                candidate[axis] = 1.0;
                for prev in basis[..i].iter() {
                    let dot: f64 = candidate.iter().zip(prev).map(|(a, b)| a * b).sum();
                    for (x, y) in candidate.iter_mut().zip(prev) {
                        *x -= dot * y;
                    }
                }
                let n: f64 = candidate.iter().map(|x| x * x).sum::<f64>().sqrt();
                if n > 1e-6 {
                    for x in &mut candidate {
                        *x /= n;
                    }
                    basis[i] = candidate;
                    break 'axes;
                }
            }
        }
    }
}
