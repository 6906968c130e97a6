//! Seeded inputs shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `clusters` Gaussian-ish blobs in `dim` dimensions, `per_cluster` points each.
pub fn blobs(clusters: usize, per_cluster: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..clusters)
        .map(|_| (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect())
        .collect();
    let mut points = Vec::with_capacity(clusters * per_cluster);
    for c in &centers {
        for _ in 0..per_cluster {
            points.push(c.iter().map(|x| x + rng.random_range(-0.5..0.5)).collect());
        }
    }
    points
}

/// Relevance lists for `queries` rankings of `targets` items, each item
/// relevant with probability `p`.
pub fn relevance_lists(queries: usize, targets: usize, p: f64, seed: u64) -> Vec<Vec<bool>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..queries)
        .map(|_| {
            let mut l: Vec<bool> = (0..targets).map(|_| rng.random_bool(p)).collect();
            l[0] = true;
            l
        })
        .collect()
}

pub fn square_weights(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..n).map(|_| rng.random_range(0.0..100.0)).collect()).collect()
}
