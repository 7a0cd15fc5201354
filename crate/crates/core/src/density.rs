//! Density-peak seed scores.
//!
//! Local density is `exp(-mean of the K smallest squared feature distances)`,
//! the query itself excluded. `delta` is the squared distance to the nearest
//! strictly denser location, or the largest squared distance from the location
//! when nothing is denser. The seed score is `rho * delta`.
//!
//! Everything is brute force over all location pairs. Distances are summed in
//! `f64` in channel order, and each KNN sum runs over the K distances in
//! ascending order, so results are reproducible bit for bit.

use crate::grid::{sq_distance, FeatureGrid, Location};

pub const DEFAULT_KNN_K: usize = 9;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DensityError {
    #[error("K = {k} exceeds the {max} other locations on the grid")]
    KTooLarge { k: usize, max: usize },
    #[error("K must be positive")]
    ZeroK,
    #[error("query {query} is outside the {h}x{w} grid")]
    OutOfBounds { query: Location, h: usize, w: usize },
    #[error("density map has {got} entries, grid has {expected} locations")]
    ShapeMismatch { expected: usize, got: usize },
}

fn check_k(grid: &FeatureGrid, k: usize) -> Result<(), DensityError> {
    if k == 0 {
        return Err(DensityError::ZeroK);
    }
    let max = grid.len() - 1;
    if k > max {
        return Err(DensityError::KTooLarge { k, max });
    }
    Ok(())
}

/// Symmetric matrix of squared feature distances between all locations.
#[derive(Debug, Clone)]
pub struct PairwiseDistances {
    n: usize,
    values: Vec<f64>,
}

impl PairwiseDistances {
    pub fn new(grid: &FeatureGrid) -> Self {
        let n = grid.len();
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            let xi = grid.feature(i);
            for j in i + 1..n {
                let dist = sq_distance(xi, grid.feature(j));
                values[i * n + j] = dist;
                values[j * n + i] = dist;
            }
        }
        Self { n, values }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// The `k` smallest distances from `i` to the other locations, ascending;
    /// ties keep the lower raster index first.
    fn knn_row(&self, i: usize, k: usize) -> Vec<f64> {
        let mut others: Vec<(f64, usize)> =
            self.row(i).iter().enumerate().filter(|&(j, _)| j != i).map(|(j, &d)| (d, j)).collect();
        let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < others.len() {
            others.select_nth_unstable_by(k, by_dist);
            others.truncate(k);
        }
        others.sort_unstable_by(by_dist);
        others.into_iter().map(|(d, _)| d).collect()
    }

    fn density(&self, k: usize) -> Vec<f64> {
        (0..self.n).map(|i| density_from_knn(&self.knn_row(i, k), k)).collect()
    }
}

fn density_from_knn(sq: &[f64], k: usize) -> f64 {
    let total: f64 = sq.iter().sum();
    (-(total / k as f64)).exp()
}

/// Squared distances from `query` to its `k` nearest other locations, ascending.
pub fn knn_sq_distances(grid: &FeatureGrid, query: Location, k: usize) -> Result<Vec<f64>, DensityError> {
    check_k(grid, k)?;
    if query.row >= grid.h() || query.col >= grid.w() {
        return Err(DensityError::OutOfBounds { query, h: grid.h(), w: grid.w() });
    }
    let q = query.raster(grid.w());
    let xq = grid.feature(q);
    let mut others: Vec<(f64, usize)> =
        (0..grid.len()).filter(|&j| j != q).map(|j| (sq_distance(xq, grid.feature(j)), j)).collect();
    others.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(others.into_iter().take(k).map(|(d, _)| d).collect())
}

/// Per-location local density, raster order.
pub fn local_density(grid: &FeatureGrid, k: usize) -> Result<Vec<f64>, DensityError> {
    check_k(grid, k)?;
    Ok(PairwiseDistances::new(grid).density(k))
}

/// Which case of the delta definition a location took.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeltaBranch {
    /// Some location is strictly denser; delta is the distance to the closest one.
    NearestDenser,
    /// No location is strictly denser; delta is the largest distance from here.
    Peak,
}

fn delta_from_distances(dist: &PairwiseDistances, rho: &[f64]) -> (Vec<f64>, Vec<DeltaBranch>) {
    let n = dist.n();
    let mut delta = Vec::with_capacity(n);
    let mut branch = Vec::with_capacity(n);
    for i in 0..n {
        let row = dist.row(i);
        let nearest_denser = (0..n).filter(|&j| rho[j] > rho[i]).map(|j| row[j]).min_by(|a, b| a.total_cmp(b));
        match nearest_denser {
            Some(d) => {
                delta.push(d);
                branch.push(DeltaBranch::NearestDenser);
            }
            None => {
                delta.push(row.iter().copied().fold(0.0, f64::max));
                branch.push(DeltaBranch::Peak);
            }
        }
    }
    (delta, branch)
}

fn check_rho(grid: &FeatureGrid, rho: &[f64]) -> Result<(), DensityError> {
    if rho.len() != grid.len() {
        return Err(DensityError::ShapeMismatch { expected: grid.len(), got: rho.len() });
    }
    Ok(())
}

/// Distance to the nearest strictly denser location (density ties do not count).
pub fn min_distance_to_denser(grid: &FeatureGrid, rho: &[f64]) -> Result<Vec<f64>, DensityError> {
    Ok(min_distance_with_branches(grid, rho)?.0)
}

/// Like [`min_distance_to_denser`], also reporting the branch taken per location.
pub fn min_distance_with_branches(
    grid: &FeatureGrid,
    rho: &[f64],
) -> Result<(Vec<f64>, Vec<DeltaBranch>), DensityError> {
    check_rho(grid, rho)?;
    Ok(delta_from_distances(&PairwiseDistances::new(grid), rho))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedScores {
    pub h: usize,
    pub w: usize,
    pub rho: Vec<f64>,
    pub delta: Vec<f64>,
    pub branch: Vec<DeltaBranch>,
    pub score: Vec<f64>,
    pub knn_k: usize,
}

impl SeedScores {
    /// Location of the highest score, lowest raster index on ties.
    pub fn argmax(&self) -> Location {
        let mut best = 0;
        for (i, &s) in self.score.iter().enumerate() {
            if s > self.score[best] {
                best = i;
            }
        }
        Location::from_raster(best, self.w)
    }
}

pub fn seed_scores(grid: &FeatureGrid, k: usize) -> Result<SeedScores, DensityError> {
    check_k(grid, k)?;
    let dist = PairwiseDistances::new(grid);
    Ok(seed_scores_from_distances(grid, &dist, k))
}

pub(crate) fn seed_scores_from_distances(grid: &FeatureGrid, dist: &PairwiseDistances, k: usize) -> SeedScores {
    let rho = dist.density(k);
    let (delta, branch) = delta_from_distances(dist, &rho);
    let score = rho.iter().zip(&delta).map(|(r, d)| r * d).collect();
    SeedScores { h: grid.h(), w: grid.w(), rho, delta, branch, score, knn_k: k }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(values: &[f32]) -> FeatureGrid {
        FeatureGrid::new(1, values.len(), 1, values.to_vec()).unwrap()
    }

    #[test]
    fn knn_on_line() {
        let g = line(&[0.0, 1.0, 5.0]);
        assert_eq!(knn_sq_distances(&g, Location::new(0, 1), 2).unwrap(), vec![1.0, 16.0]);
        assert_eq!(knn_sq_distances(&g, Location::new(0, 1), 3), Err(DensityError::KTooLarge { k: 3, max: 2 }));
        assert_eq!(knn_sq_distances(&g, Location::new(0, 1), 0), Err(DensityError::ZeroK));
    }

    #[test]
    fn knn_uniform_is_zero() {
        let g = FeatureGrid::from_fn(3, 3, 2, |_, _, _| 0.25).unwrap();
        assert_eq!(knn_sq_distances(&g, Location::new(2, 1), 5).unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn density_hand_values() {
        let g = FeatureGrid::from_fn(2, 2, 1, |_, _, _| 7.0).unwrap();
        assert_eq!(local_density(&g, 3).unwrap(), vec![1.0; 4]);

        let rho = local_density(&line(&[0.0, 2.0]), 1).unwrap();
        assert_eq!(rho, vec![(-4.0f64).exp(); 2]);
        assert!((rho[0] - 0.018316).abs() < 1e-6);

        let rho = local_density(&line(&[0.0, 1.0, 5.0]), 2).unwrap();
        assert_eq!(rho, vec![(-13.0f64).exp(), (-8.5f64).exp(), (-20.5f64).exp()]);
    }

    #[test]
    fn delta_hand_values() {
        let g = line(&[0.0, 1.0, 5.0]);
        let rho = local_density(&g, 2).unwrap();
        let (delta, branch) = min_distance_with_branches(&g, &rho).unwrap();
        assert_eq!(delta, vec![1.0, 16.0, 16.0]);
        assert_eq!(branch, vec![DeltaBranch::NearestDenser, DeltaBranch::Peak, DeltaBranch::NearestDenser]);
    }

    #[test]
    fn delta_uniform_is_zero_and_all_peaks() {
        let g = FeatureGrid::from_fn(2, 3, 1, |_, _, _| 1.0).unwrap();
        let rho = local_density(&g, 2).unwrap();
        let (delta, branch) = min_distance_with_branches(&g, &rho).unwrap();
        assert!(delta.iter().all(|&d| d == 0.0));
        assert!(branch.iter().all(|&b| b == DeltaBranch::Peak));
        assert!(matches!(min_distance_to_denser(&g, &rho[..3]), Err(DensityError::ShapeMismatch { .. })));
    }

    #[test]
    fn scores_on_line() {
        let s = seed_scores(&line(&[0.0, 1.0, 5.0]), 2).unwrap();
        assert_eq!(s.score, vec![(-13.0f64).exp(), (-8.5f64).exp() * 16.0, (-20.5f64).exp() * 16.0]);
        assert_eq!(s.argmax(), Location::new(0, 1));
        let u = seed_scores(&FeatureGrid::from_fn(3, 3, 2, |_, _, _| 4.0).unwrap(), 4).unwrap();
        assert!(u.score.iter().all(|&v| v == 0.0));
        assert_eq!(u.argmax(), Location::new(0, 0));
    }

    #[test]
    fn unequal_blobs_split_top_score_levels() {
        // 12 locations at 0.0 and 4 at 10.0. Members of a blob share one score,
        // so the two highest distinct score levels are compared.
        let g = FeatureGrid::from_fn(4, 4, 1, |_, c, _| if c < 3 { 0.0 } else { 10.0 }).unwrap();
        let s = seed_scores(&g, 5).unwrap();
        let mut levels: Vec<f64> = s.score.clone();
        levels.sort_by(|a, b| b.total_cmp(a));
        levels.dedup();
        assert!(levels.len() >= 2);
        let blob_of =
            |level: f64| -> Vec<bool> { (0..16).filter(|&i| s.score[i] == level).map(|i| i % 4 < 3).collect() };
        let first = blob_of(levels[0]);
        let second = blob_of(levels[1]);
        assert!(first.iter().all(|&l| l) && second.iter().all(|&l| !l));
    }
}
