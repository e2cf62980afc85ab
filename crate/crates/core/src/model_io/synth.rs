use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::matrix::DenseMatrix;

/// Gaussian mixture samples together with the generating cluster of each row.
#[derive(Clone, Debug)]
pub struct Mixture {
    pub samples: DenseMatrix,
    pub cluster_ids: Vec<usize>,
}

/// Draws `n_samples` points around `n_clusters` centers in `dim` dimensions.
///
/// Centers are uniform in `[-5, 5]^dim`; each sample is its (uniformly chosen)
/// center plus isotropic unit-variance noise. Counts of zero are treated as 1.
pub fn generate_gaussian_mixture(n_samples: usize, dim: usize, n_clusters: usize, seed: u64) -> DenseMatrix {
    generate_gaussian_mixture_labeled(n_samples, dim, n_clusters, 5.0, seed).samples
}

/// Like [`generate_gaussian_mixture`] with a configurable center spread,
/// returning cluster ids for ground-truth comparisons.
pub fn generate_gaussian_mixture_labeled(
    n_samples: usize,
    dim: usize,
    n_clusters: usize,
    spread: f64,
    seed: u64,
) -> Mixture {
    let (n_samples, dim, n_clusters) = (n_samples.max(1), dim.max(1), n_clusters.max(1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..n_clusters)
        .map(|_| (0..dim).map(|_| rng.random_range(-spread..=spread)).collect())
        .collect();
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut data = Vec::with_capacity(n_samples * dim);
    let mut cluster_ids = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let k = rng.random_range(0..n_clusters);
        cluster_ids.push(k);
        data.extend(centers[k].iter().map(|c| c + noise.sample(&mut rng)));
    }
    Mixture { samples: DenseMatrix::from_vec(n_samples, dim, data).expect("finite"), cluster_ids }
}

/// Standard normal matrix, used for random weights in tests and benches.
pub fn random_normal_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> DenseMatrix {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    DenseMatrix::from_vec(rows, cols, data).expect("finite")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_seed() {
        let a = generate_gaussian_mixture(100, 16, 4, 7);
        let b = generate_gaussian_mixture(100, 16, 4, 7);
        assert_eq!(a.as_slice(), b.as_slice());
        assert_ne!(a, generate_gaussian_mixture(100, 16, 4, 8));
    }

    #[test]
    fn minimal_case() {
        assert_eq!(generate_gaussian_mixture(1, 1, 1, 0).shape(), (1, 1));
    }

    fn variance(rows: &[&[f64]]) -> f64 {
        let dim = rows[0].len();
        let n = rows.len() as f64;
        let mut total = 0.0;
        for d in 0..dim {
            let mean = rows.iter().map(|r| r[d]).sum::<f64>() / n;
            total += rows.iter().map(|r| (r[d] - mean).powi(2)).sum::<f64>() / n;
        }
        total
    }

    #[test]
    fn clusters_are_tighter_than_the_whole() {
        let m = generate_gaussian_mixture_labeled(1000, 32, 8, 5.0, 1);
        let all: Vec<&[f64]> = m.samples.iter_rows().collect();
        let global = variance(&all);
        for k in 0..8 {
            let members: Vec<&[f64]> =
                all.iter().zip(&m.cluster_ids).filter(|(_, &c)| c == k).map(|(r, _)| *r).collect();
            if members.len() > 1 {
                assert!(variance(&members) < global);
            }
        }
    }
}
