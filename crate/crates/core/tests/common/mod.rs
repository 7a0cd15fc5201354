//! Brute-force oracles and generators shared by the integration tests.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use setok::FeatureGrid;

/// Channel-order f64 accumulation, written out independently of the library.
pub fn oracle_sq(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for c in 0..a.len() {
        let diff = a[c] as f64 - b[c] as f64;
        acc += diff * diff;
    }
    acc
}

/// Exhaustive density: full sort of all other locations by (distance, index),
/// first `k` summed in ascending order.
pub fn oracle_density(grid: &FeatureGrid, k: usize) -> Vec<f64> {
    let n = grid.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut all: Vec<(f64, usize)> = Vec::new();
        for j in 0..n {
            if j != i {
                all.push((oracle_sq(grid.feature(i), grid.feature(j)), j));
            }
        }
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let mut sum = 0.0f64;
        for &(d, _) in all.iter().take(k) {
            sum += d;
        }
        out.push((-(sum / k as f64)).exp());
    }
    out
}

/// Exhaustive delta: nearest strictly denser location, else farthest location.
pub fn oracle_delta(grid: &FeatureGrid, rho: &[f64]) -> (Vec<f64>, Vec<bool>) {
    let n = grid.len();
    let mut delta = vec![0.0; n];
    let mut peak = vec![false; n];
    for i in 0..n {
        let mut best = f64::INFINITY;
        let mut far = 0.0f64;
        for j in 0..n {
            let d = oracle_sq(grid.feature(i), grid.feature(j));
            far = far.max(d);
            if rho[j] > rho[i] && d < best {
                best = d;
            }
        }
        if best.is_finite() {
            delta[i] = best;
        } else {
            delta[i] = far;
            peak[i] = true;
        }
    }
    (delta, peak)
}

pub fn random_grid(rng: &mut ChaCha8Rng, h: usize, w: usize, d: usize) -> FeatureGrid {
    let data = (0..h * w * d).map(|_| rng.random_range(-2.0f32..2.0)).collect();
    FeatureGrid::new(h, w, d, data).unwrap()
}

/// Grids with h, w in 1..=16 (at least two locations) and d in 1..=8.
pub fn random_grids(count: usize, seed: u64) -> Vec<FeatureGrid> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| loop {
            let (h, w, d) = (rng.random_range(1..=16), rng.random_range(1..=16), rng.random_range(1..=8));
            if h * w >= 2 {
                break random_grid(&mut rng, h, w, d);
            }
        })
        .collect()
}
