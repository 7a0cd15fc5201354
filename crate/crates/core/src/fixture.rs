//! Seeded synthetic grids with known blob labels.
//!
//! The grid is split into `blobs` random 4-connected regions by randomized
//! multi-source growth. Each region gets a feature centroid, with all centroid
//! pairs at least `sep` apart, and each location adds isotropic Gaussian noise
//! of total RMS radius `noise` (per-channel std `noise / sqrt(d)`).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::grid::FeatureGrid;
use crate::metrics::ReferenceMasks;

pub const DEFAULT_NOISE: f64 = 0.03;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FixtureError {
    #[error("invalid fixture parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureParams {
    pub blobs: usize,
    pub h: usize,
    pub w: usize,
    pub d: usize,
    pub sep: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for FixtureParams {
    fn default() -> Self {
        Self { blobs: 3, h: 16, w: 16, d: 8, sep: 10.0, noise: DEFAULT_NOISE, seed: 0 }
    }
}

impl FixtureParams {
    pub fn validate(&self) -> Result<(), FixtureError> {
        let bad = |m: String| Err(FixtureError::InvalidParams(m));
        if self.blobs == 0 {
            return bad("blob count must be at least 1".into());
        }
        if self.h == 0 || self.w == 0 || self.d == 0 {
            return bad(format!("grid {}x{}x{} has a zero dimension", self.h, self.w, self.d));
        }
        if self.blobs > self.h * self.w {
            return bad(format!("{} blobs do not fit on {} locations", self.blobs, self.h * self.w));
        }
        if !(self.sep.is_finite() && self.sep >= 0.0) {
            return bad(format!("separation must be non-negative, got {}", self.sep));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return bad(format!("noise must be non-negative, got {}", self.noise));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub params: FixtureParams,
    pub grid: FeatureGrid,
    /// Blob index per location, raster order.
    pub labels: Vec<usize>,
    /// Nominal blob centroids in feature space.
    pub centroids: Vec<Vec<f64>>,
}

impl Fixture {
    pub fn reference(&self) -> ReferenceMasks {
        ReferenceMasks::from_labels(&self.labels, self.params.blobs, self.params.h, self.params.w)
            .expect("generator labels are in range")
    }

    /// Smallest squared distance between the empirical per-blob feature means.
    pub fn min_empirical_centroid_sq_distance(&self) -> f64 {
        let d = self.params.d;
        let mut sums = vec![vec![0.0f64; d]; self.params.blobs];
        let mut counts = vec![0usize; self.params.blobs];
        for (loc, &l) in self.labels.iter().enumerate() {
            counts[l] += 1;
            for (s, &v) in sums[l].iter_mut().zip(self.grid.feature(loc)) {
                *s += f64::from(v);
            }
        }
        let means: Vec<Vec<f64>> =
            sums.into_iter().zip(&counts).map(|(s, &c)| s.into_iter().map(|v| v / c as f64).collect()).collect();
        min_pairwise_sq(&means)
    }

    pub fn region_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.params.blobs];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn min_pairwise_sq(points: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            best = best.min(sq(&points[i], &points[j]));
        }
    }
    best
}

fn grow_regions(h: usize, w: usize, blobs: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = h * w;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut labels = vec![usize::MAX; n];
    let mut frontier = Vec::new();
    let neighbors = |loc: usize| {
        let (r, c) = (loc / w, loc % w);
        [(r > 0).then(|| loc - w), (r + 1 < h).then(|| loc + w), (c > 0).then(|| loc - 1), (c + 1 < w).then(|| loc + 1)]
            .into_iter()
            .flatten()
    };
    for (b, &loc) in order[..blobs].iter().enumerate() {
        labels[loc] = b;
    }
    for &loc in &order[..blobs] {
        frontier.extend(neighbors(loc).map(|nb| (nb, labels[loc])));
    }
    while !frontier.is_empty() {
        let pick = rng.random_range(0..frontier.len());
        let (loc, label) = frontier.swap_remove(pick);
        if labels[loc] != usize::MAX {
            continue;
        }
        labels[loc] = label;
        frontier.extend(neighbors(loc).map(|nb| (nb, label)));
    }
    labels
}

fn place_centroids(blobs: usize, d: usize, sep: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    // Rejection sampling in a cube that widens after repeated failures.
    let mut half_side = (sep * blobs as f64).max(1.0);
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(blobs);
    let mut failures = 0;
    while centroids.len() < blobs {
        let candidate: Vec<f64> = (0..d).map(|_| rng.random_range(-half_side..=half_side)).collect();
        if centroids.iter().all(|c| sq(c, &candidate) >= sep * sep) {
            centroids.push(candidate);
            failures = 0;
        } else {
            failures += 1;
            if failures > 1000 {
                half_side *= 1.5;
                failures = 0;
            }
        }
    }
    centroids
}

pub fn generate_fixture(params: &FixtureParams) -> Result<Fixture, FixtureError> {
    params.validate()?;
    let FixtureParams { blobs, h, w, d, sep, noise, seed } = *params;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = grow_regions(h, w, blobs, &mut rng);
    let centroids = place_centroids(blobs, d, sep, &mut rng);
    let std = noise / (d as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    let mut data = Vec::with_capacity(h * w * d);
    for &l in &labels {
        for &c in &centroids[l] {
            data.push((c + normal.sample(&mut rng)) as f32);
        }
    }
    let grid = FeatureGrid::new(h, w, d, data).map_err(|e| FixtureError::InvalidParams(e.to_string()))?;
    Ok(Fixture { params: params.clone(), grid, labels, centroids })
}

/// `count` fixtures with blob counts cycling through `min_blobs..=max_blobs`
/// and seeds `seed, seed + 1, ...`.
pub fn fixture_suite(
    count: usize,
    min_blobs: usize,
    max_blobs: usize,
    base: &FixtureParams,
) -> Result<Vec<Fixture>, FixtureError> {
    if min_blobs == 0 || min_blobs > max_blobs {
        return Err(FixtureError::InvalidParams(format!("blob range {min_blobs}-{max_blobs} is empty")));
    }
    let span = max_blobs - min_blobs + 1;
    (0..count)
        .map(|i| {
            let params = FixtureParams { blobs: min_blobs + i % span, seed: base.seed + i as u64, ..base.clone() };
            generate_fixture(&params)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn is_connected(labels: &[usize], h: usize, w: usize, label: usize) -> bool {
        let members: Vec<usize> = (0..h * w).filter(|&i| labels[i] == label).collect();
        let mut seen = vec![false; h * w];
        let mut stack = vec![members[0]];
        seen[members[0]] = true;
        let mut count = 0;
        while let Some(i) = stack.pop() {
            count += 1;
            let (r, c) = (i / w, i % w);
            let mut nbrs = Vec::new();
            if r > 0 {
                nbrs.push(i - w);
            }
            if r + 1 < h {
                nbrs.push(i + w);
            }
            if c > 0 {
                nbrs.push(i - 1);
            }
            if c + 1 < w {
                nbrs.push(i + 1);
            }
            for j in nbrs {
                if !seen[j] && labels[j] == label {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        count == members.len()
    }

    #[test]
    fn single_blob_reference_is_all_ones() {
        let f = generate_fixture(&FixtureParams { blobs: 1, h: 4, w: 4, d: 2, seed: 1, ..Default::default() }).unwrap();
        let r = f.reference();
        assert_eq!(r.n(), 1);
        assert!(r.mask(0).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn deterministic() {
        let p = FixtureParams { seed: 99, ..Default::default() };
        let a = generate_fixture(&p).unwrap();
        let b = generate_fixture(&p).unwrap();
        assert_eq!(a.grid, b.grid);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn regions_are_contiguous_and_nonempty() {
        for seed in 0..20 {
            let p = FixtureParams { blobs: 2 + seed as usize % 5, seed, ..Default::default() };
            let f = generate_fixture(&p).unwrap();
            assert!(f.region_sizes().iter().all(|&s| s > 0));
            for b in 0..p.blobs {
                assert!(is_connected(&f.labels, p.h, p.w, b), "seed {seed} blob {b}");
            }
        }
    }

    #[test]
    fn separation_holds() {
        let f = generate_fixture(&FixtureParams { blobs: 3, sep: 10.0, seed: 4, ..Default::default() }).unwrap();
        assert!(min_pairwise_sq(&f.centroids) >= 100.0);
        assert!(f.min_empirical_centroid_sq_distance() >= 100.0 * (1.0 - 1e-2));
        let tight =
            generate_fixture(&FixtureParams { blobs: 6, d: 1, sep: 10.0, seed: 2, ..Default::default() }).unwrap();
        assert!(min_pairwise_sq(&tight.centroids) >= 100.0);
    }

    #[test]
    fn invalid_params() {
        assert!(generate_fixture(&FixtureParams { blobs: 0, ..Default::default() }).is_err());
        assert!(generate_fixture(&FixtureParams { blobs: 5, h: 2, w: 2, ..Default::default() }).is_err());
        assert!(generate_fixture(&FixtureParams { sep: -1.0, ..Default::default() }).is_err());
        assert!(fixture_suite(3, 4, 2, &FixtureParams::default()).is_err());
    }

    #[test]
    fn suite_cycles_blob_counts() {
        let suite = fixture_suite(7, 2, 6, &FixtureParams { h: 8, w: 8, ..Default::default() }).unwrap();
        let blobs: Vec<usize> = suite.iter().map(|f| f.params.blobs).collect();
        assert_eq!(blobs, vec![2, 3, 4, 5, 6, 2, 3]);
    }
}
