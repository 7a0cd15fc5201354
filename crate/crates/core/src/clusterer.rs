//! Scope-based iterative clustering seeded by density peaks.
//!
//! The scope `c` starts at one everywhere and tracks how much of each location
//! is still unexplained. Each iteration picks the location maximising
//! `score * c`, builds an alpha map with the distance kernel, appends
//! `alpha * c` as a mask and shrinks the scope to `c * (1 - alpha)`. Because
//! the masks telescope, the masks plus the final scope sum to one everywhere.

use serde::{Deserialize, Serialize};

use crate::density::{self, PairwiseDistances, SeedScores};
use crate::grid::{sq_distance, FeatureGrid, Location};

/// Remainder masks whose peak is below this are not appended.
pub const REMAINDER_EPS: f64 = 1e-6;
/// Tolerance on per-location mask sums.
pub const NORMALIZATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Assignment {
    #[default]
    Hard,
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MergeMode {
    #[default]
    Attention,
    Mean,
}

/// Feature space used for densities and the kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMetric {
    /// Raw features, squared Euclidean distance.
    #[default]
    SqEuclidean,
    /// Features scaled to unit norm first, so distances are `2 - 2 cos`.
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizerConfig {
    pub knn_k: usize,
    pub kernel_bandwidth: f64,
    pub stop_tau: f64,
    pub max_clusters: usize,
    pub assignment: Assignment,
    pub merge_mode: MergeMode,
    pub metric: FeatureMetric,
    /// Score-shrinking variant: masks are `s * alpha` and the seed scores,
    /// not a scope, shrink after each pick. Kept for comparison only: its
    /// masks are not normalized.
    pub algo1_literal: bool,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            knn_k: density::DEFAULT_KNN_K,
            kernel_bandwidth: 4.0,
            stop_tau: 0.05,
            max_clusters: 64,
            assignment: Assignment::Hard,
            merge_mode: MergeMode::Attention,
            metric: FeatureMetric::SqEuclidean,
            algo1_literal: false,
        }
    }
}

impl TokenizerConfig {
    pub fn validate(&self) -> Result<(), ClusterError> {
        let bad = |msg: String| Err(ClusterError::InvalidConfig(msg));
        if self.knn_k == 0 {
            return bad("knn_k must be positive".into());
        }
        if !(self.kernel_bandwidth.is_finite() && self.kernel_bandwidth > 0.0) {
            return bad(format!("kernel_bandwidth must be positive, got {}", self.kernel_bandwidth));
        }
        if !(self.stop_tau > 0.0 && self.stop_tau < 1.0) {
            return bad(format!("stop_tau must lie in (0, 1), got {}", self.stop_tau));
        }
        if self.max_clusters == 0 {
            return bad("max_clusters must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ClusterError {
    #[error("grid has no locations")]
    EmptyGrid,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("vectors have different dimensions ({left} vs {right})")]
    DimMismatch { left: usize, right: usize },
    #[error("masks sum to {sum} at location {location}, expected 1")]
    NotNormalized { location: Location, sum: f64 },
    #[error("no mask stacks given")]
    EmptyInput,
    #[error("malformed mask stack: {0}")]
    Malformed(String),
    #[error(transparent)]
    Density(#[from] density::DensityError),
}

/// Provenance of one mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Seed {
    /// Grown from the feature at this location.
    Location(Location),
    /// The final scope, covering whatever no seed explained.
    Remainder,
    /// Produced by a fixed query (resampler baseline), not a location.
    Query(usize),
}

/// `k` masks over an `h × w` grid, stored mask-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskStack {
    masks: Vec<f64>,
    seeds: Vec<Seed>,
    h: usize,
    w: usize,
    mode: Assignment,
    config: TokenizerConfig,
}

impl MaskStack {
    /// Assembles a stack, checking the structural invariants.
    pub fn from_parts(
        masks: Vec<f64>,
        seeds: Vec<Seed>,
        h: usize,
        w: usize,
        mode: Assignment,
        config: TokenizerConfig,
    ) -> Result<Self, ClusterError> {
        let n = h * w;
        if n == 0 {
            return Err(ClusterError::EmptyGrid);
        }
        if masks.len() != seeds.len() * n {
            return Err(ClusterError::Malformed(format!(
                "{} mask values for {} seeds over {h}x{w}",
                masks.len(),
                seeds.len()
            )));
        }
        if let Some(pos) = seeds.iter().position(|s| *s == Seed::Remainder) {
            if pos + 1 != seeds.len() {
                return Err(ClusterError::Malformed("remainder mask must be last and unique".into()));
            }
        }
        if let Some(v) = masks.iter().find(|v| !(0.0..=1.0 + NORMALIZATION_TOL).contains(*v)) {
            return Err(ClusterError::Malformed(format!("mask value {v} outside [0, 1]")));
        }
        let stack = Self { masks, seeds, h, w, mode, config };
        if mode == Assignment::Hard {
            for loc in 0..n {
                let mut ones = 0;
                for m in 0..stack.k() {
                    match stack.value(m, loc) {
                        1.0 => ones += 1,
                        0.0 => {}
                        v => return Err(ClusterError::Malformed(format!("hard mask value {v}"))),
                    }
                }
                if ones != 1 {
                    return Err(ClusterError::Malformed(format!(
                        "{ones} active hard masks at {}",
                        Location::from_raster(loc, w)
                    )));
                }
            }
        }
        Ok(stack)
    }

    pub fn k(&self) -> usize {
        self.seeds.len()
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn masks(&self) -> &[f64] {
        &self.masks
    }

    pub fn mask(&self, m: usize) -> &[f64] {
        let n = self.h * self.w;
        &self.masks[m * n..(m + 1) * n]
    }

    pub fn value(&self, m: usize, loc: usize) -> f64 {
        self.masks[m * self.h * self.w + loc]
    }

    pub fn seeds(&self) -> &[Seed] {
        &self.seeds
    }

    pub fn mode(&self) -> Assignment {
        self.mode
    }

    pub fn config_used(&self) -> &TokenizerConfig {
        &self.config
    }

    pub fn has_remainder(&self) -> bool {
        self.seeds.last() == Some(&Seed::Remainder)
    }

    /// Mask count excluding the remainder.
    pub fn non_remainder_count(&self) -> usize {
        self.k() - usize::from(self.has_remainder())
    }

    /// Total remainder mass (0 when there is no remainder mask).
    pub fn remainder_mass(&self) -> f64 {
        if self.has_remainder() {
            self.mask(self.k() - 1).iter().sum()
        } else {
            0.0
        }
    }

    /// Sum over masks at each location.
    pub fn location_sums(&self) -> Vec<f64> {
        let n = self.h * self.w;
        (0..n).map(|loc| (0..self.k()).map(|m| self.value(m, loc)).sum()).collect()
    }

    /// Index of the largest mask at `loc`, lowest index on ties.
    pub fn argmax_at(&self, loc: usize) -> usize {
        let mut best = 0;
        for m in 1..self.k() {
            if self.value(m, loc) > self.value(best, loc) {
                best = m;
            }
        }
        best
    }

    /// Per-location winning mask index.
    pub fn labels(&self) -> Vec<usize> {
        (0..self.h * self.w).map(|loc| self.argmax_at(loc)).collect()
    }
}

/// Similarity kernel `exp(-|u - v|^2 · bandwidth · ln 2)`: one for identical
/// vectors, halving every `1 / bandwidth` of squared distance.
pub fn distance_kernel(u: &[f32], v: &[f32], bandwidth: f64) -> Result<f64, ClusterError> {
    if u.len() != v.len() {
        return Err(ClusterError::DimMismatch { left: u.len(), right: v.len() });
    }
    Ok(kernel_from_sq(sq_distance(u, v), bandwidth))
}

pub(crate) fn kernel_from_sq(sq: f64, bandwidth: f64) -> f64 {
    (-sq * bandwidth * std::f64::consts::LN_2).exp()
}

/// Why the loop ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    ScopeExhausted,
    MaxClusters,
}

/// Intermediate state recorded while clustering.
#[derive(Debug, Clone)]
pub struct ClusterTrace {
    pub scores: SeedScores,
    /// Scope before the first iteration and after each one.
    pub scopes: Vec<Vec<f64>>,
    /// Scope value at each seed when it was picked.
    pub seed_scope: Vec<f64>,
    pub stop: StopReason,
    /// Soft stack before any hardening.
    pub soft: MaskStack,
}

fn prepared_grid(grid: &FeatureGrid, metric: FeatureMetric) -> std::borrow::Cow<'_, FeatureGrid> {
    match metric {
        FeatureMetric::SqEuclidean => std::borrow::Cow::Borrowed(grid),
        FeatureMetric::Cosine => std::borrow::Cow::Owned(grid.l2_normalized()),
    }
}

/// Seed scores with K clamped to the number of other locations. A single
/// location gets density one and delta zero.
pub(crate) fn clamped_scores(grid: &FeatureGrid, dist: &PairwiseDistances, knn_k: usize) -> SeedScores {
    let k = knn_k.min(grid.len() - 1);
    if k == 0 {
        return SeedScores {
            h: grid.h(),
            w: grid.w(),
            rho: vec![1.0],
            delta: vec![0.0],
            branch: vec![density::DeltaBranch::Peak],
            score: vec![0.0],
            knn_k: 0,
        };
    }
    density::seed_scores_from_distances(grid, dist, k)
}

/// Index maximising `score * scope` over locations whose scope is at least
/// `min_scope`; lowest raster index on ties.
fn pick_seed(score: &[f64], scope: &[f64], min_scope: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, (&s, &c)) in score.iter().zip(scope).enumerate() {
        if c < min_scope {
            continue;
        }
        let key = s * c;
        if best.is_none_or(|(_, b)| key > b) {
            best = Some((i, key));
        }
    }
    best.map(|(i, _)| i)
}

fn alpha_map(grid: &FeatureGrid, dist: &PairwiseDistances, seed: usize, bandwidth: f64) -> Vec<f64> {
    (0..grid.len()).map(|j| kernel_from_sq(dist.get(seed, j), bandwidth)).collect()
}

fn max_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Runs the clustering loop and returns the final stack with its trace.
pub fn cluster_with_trace(
    grid: &FeatureGrid,
    config: &TokenizerConfig,
) -> Result<(MaskStack, ClusterTrace), ClusterError> {
    config.validate()?;
    if grid.is_empty() {
        return Err(ClusterError::EmptyGrid);
    }
    if config.algo1_literal {
        return cluster_literal(grid, config);
    }
    let grid = prepared_grid(grid, config.metric);
    let n = grid.len();
    let dist = PairwiseDistances::new(&grid);
    let scores = clamped_scores(&grid, &dist, config.knn_k);

    let mut scope = vec![1.0f64; n];
    let mut masks = Vec::new();
    let mut seeds = Vec::new();
    let mut scopes = vec![scope.clone()];
    let mut seed_scope = Vec::new();

    let stop = loop {
        if max_of(&scope) < config.stop_tau {
            break StopReason::ScopeExhausted;
        }
        if seeds.len() >= config.max_clusters {
            break StopReason::MaxClusters;
        }
        let seed = pick_seed(&scores.score, &scope, config.stop_tau).expect("some scope is above stop_tau");
        let alpha = alpha_map(&grid, &dist, seed, config.kernel_bandwidth);
        seed_scope.push(scope[seed]);
        for (c, a) in scope.iter().zip(&alpha) {
            masks.push(a * c);
        }
        for (c, a) in scope.iter_mut().zip(&alpha) {
            *c *= 1.0 - a;
        }
        seeds.push(Seed::Location(grid.location(seed)));
        scopes.push(scope.clone());
    };

    if max_of(&scope) >= REMAINDER_EPS {
        masks.extend_from_slice(&scope);
        seeds.push(Seed::Remainder);
    }

    let soft = MaskStack::from_parts(masks, seeds, grid.h(), grid.w(), Assignment::Soft, config.clone())?;
    let out = match config.assignment {
        Assignment::Soft => soft.clone(),
        Assignment::Hard => harden_masks(&soft)?,
    };
    Ok((out, ClusterTrace { scores, scopes, seed_scope, stop, soft }))
}

pub fn cluster(grid: &FeatureGrid, config: &TokenizerConfig) -> Result<MaskStack, ClusterError> {
    cluster_with_trace(grid, config).map(|(stack, _)| stack)
}

/// Score-shrinking variant: the seed scores play the role of the scope.
/// Stops once the largest remaining score falls below `stop_tau` times the
/// initial maximum. The output is not normalized.
fn cluster_literal(grid: &FeatureGrid, config: &TokenizerConfig) -> Result<(MaskStack, ClusterTrace), ClusterError> {
    let grid = prepared_grid(grid, config.metric);
    let dist = PairwiseDistances::new(&grid);
    let scores = clamped_scores(&grid, &dist, config.knn_k);
    let mut s = scores.score.clone();
    let initial_max = max_of(&s);
    let mut masks = Vec::new();
    let mut seeds = Vec::new();
    let mut history = vec![s.clone()];
    let mut seed_scope = Vec::new();

    let stop = loop {
        let current_max = max_of(&s);
        if current_max <= 0.0 || current_max < config.stop_tau * initial_max {
            break StopReason::ScopeExhausted;
        }
        if seeds.len() >= config.max_clusters {
            break StopReason::MaxClusters;
        }
        let seed = pick_seed(&s, &vec![1.0; s.len()], 0.0).expect("grid is non-empty");
        let alpha = alpha_map(&grid, &dist, seed, config.kernel_bandwidth);
        seed_scope.push(s[seed]);
        for (v, a) in s.iter().zip(&alpha) {
            masks.push(v * a);
        }
        for (v, a) in s.iter_mut().zip(&alpha) {
            *v *= 1.0 - a;
        }
        seeds.push(Seed::Location(grid.location(seed)));
        history.push(s.clone());
    };
    masks.extend_from_slice(&s);
    seeds.push(Seed::Remainder);

    // Raw scores can exceed one; scale into [0, 1] so the stack stays well-formed.
    let peak = max_of(&masks).max(1.0);
    masks.iter_mut().for_each(|v| *v /= peak);
    let soft = MaskStack::from_parts(masks, seeds, grid.h(), grid.w(), Assignment::Soft, config.clone())?;
    let out = match config.assignment {
        Assignment::Soft => soft.clone(),
        Assignment::Hard => harden_unchecked(&soft),
    };
    Ok((out, ClusterTrace { scores, scopes: history, seed_scope, stop, soft }))
}

/// One-hot argmax per location (lower mask index wins ties). Masks that win
/// nowhere are dropped, including an empty remainder.
pub fn harden_masks(stack: &MaskStack) -> Result<MaskStack, ClusterError> {
    for (loc, sum) in stack.location_sums().into_iter().enumerate() {
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(ClusterError::NotNormalized { location: Location::from_raster(loc, stack.w), sum });
        }
    }
    Ok(harden_unchecked(stack))
}

pub(crate) fn harden_unchecked(stack: &MaskStack) -> MaskStack {
    let n = stack.h * stack.w;
    let labels = stack.labels();
    let mut used = vec![false; stack.k()];
    for &l in &labels {
        used[l] = true;
    }
    let kept: Vec<usize> = (0..stack.k()).filter(|&m| used[m]).collect();
    let mut masks = vec![0.0; kept.len() * n];
    for (loc, &l) in labels.iter().enumerate() {
        let slot = kept.iter().position(|&m| m == l).expect("winner is kept");
        masks[slot * n + loc] = 1.0;
    }
    let seeds = kept.iter().map(|&m| stack.seeds[m]).collect();
    MaskStack { masks, seeds, h: stack.h, w: stack.w, mode: Assignment::Hard, config: stack.config.clone() }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CountStats {
    pub mean: f64,
    pub min: usize,
    pub max: usize,
}

/// Mean, min and max of the non-remainder mask counts.
pub fn cluster_count_stats(stacks: &[MaskStack]) -> Result<CountStats, ClusterError> {
    count_stats(stacks.iter().map(MaskStack::non_remainder_count))
}

pub(crate) fn count_stats(counts: impl IntoIterator<Item = usize>) -> Result<CountStats, ClusterError> {
    let counts: Vec<usize> = counts.into_iter().collect();
    if counts.is_empty() {
        return Err(ClusterError::EmptyInput);
    }
    let mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
    let min = *counts.iter().min().unwrap();
    let max = *counts.iter().max().unwrap();
    Ok(CountStats { mean, min, max })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn soft_stack(masks: Vec<f64>, k: usize, h: usize, w: usize) -> MaskStack {
        let seeds = (0..k).map(|i| Seed::Location(Location::from_raster(i, w))).collect();
        MaskStack::from_parts(masks, seeds, h, w, Assignment::Soft, TokenizerConfig::default()).unwrap()
    }

    #[test]
    fn kernel_values() {
        assert_eq!(distance_kernel(&[1.0, -2.0], &[1.0, -2.0], 4.0).unwrap(), 1.0);
        let half = distance_kernel(&[0.0], &[0.5], 4.0).unwrap();
        assert!((half - 0.5).abs() < 1e-15);
        let v = distance_kernel(&[0.0], &[2.0], 1.0).unwrap();
        assert!((v - 0.0625).abs() < 1e-15);
        assert_eq!(distance_kernel(&[0.0], &[0.0, 1.0], 1.0), Err(ClusterError::DimMismatch { left: 1, right: 2 }));
    }

    #[test]
    fn kernel_strictly_decreasing() {
        let mut prev = 1.0;
        for i in 1..50 {
            let v = distance_kernel(&[0.0], &[i as f32 * 0.1], 4.0).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn uniform_grid_gives_one_mask() {
        let g = FeatureGrid::from_fn(4, 4, 1, |_, _, _| 3.0).unwrap();
        for assignment in [Assignment::Hard, Assignment::Soft] {
            let cfg = TokenizerConfig { assignment, ..Default::default() };
            let s = cluster(&g, &cfg).unwrap();
            assert_eq!(s.k(), 1);
            assert!(!s.has_remainder());
            assert!(s.mask(0).iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn two_halves() {
        let g = FeatureGrid::from_fn(8, 8, 2, |_, c, _| if c < 4 { 0.0 } else { 10.0 }).unwrap();
        let cfg = TokenizerConfig {
            kernel_bandwidth: 1.0,
            stop_tau: 0.05,
            assignment: Assignment::Soft,
            ..Default::default()
        };
        let s = cluster(&g, &cfg).unwrap();
        assert_eq!(s.non_remainder_count(), 2);
        assert!(!s.has_remainder());
        let first_left = matches!(s.seeds()[0], Seed::Location(l) if l.col < 4);
        for loc in 0..64 {
            let left = loc % 8 < 4;
            let own = if left == first_left { 0 } else { 1 };
            assert!(s.value(own, loc) >= 0.99);
        }
    }

    #[test]
    fn single_location_grid() {
        let g = FeatureGrid::new(1, 1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let s = cluster(&g, &TokenizerConfig::default()).unwrap();
        assert_eq!(s.k(), 1);
        assert_eq!(s.mask(0), &[1.0]);
    }

    #[test]
    fn max_clusters_caps_and_keeps_remainder() {
        let g = FeatureGrid::from_fn(1, 6, 1, |_, c, _| c as f32 * 5.0).unwrap();
        let cfg = TokenizerConfig { max_clusters: 2, assignment: Assignment::Soft, knn_k: 2, ..Default::default() };
        let (s, trace) = cluster_with_trace(&g, &cfg).unwrap();
        assert_eq!(trace.stop, StopReason::MaxClusters);
        assert_eq!(s.non_remainder_count(), 2);
        assert!(s.has_remainder());
        for sum in s.location_sums() {
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        let g = FeatureGrid::from_fn(2, 2, 1, |_, _, _| 0.0).unwrap();
        for cfg in [
            TokenizerConfig { stop_tau: 1.0, ..Default::default() },
            TokenizerConfig { stop_tau: 0.0, ..Default::default() },
            TokenizerConfig { max_clusters: 0, ..Default::default() },
            TokenizerConfig { kernel_bandwidth: -1.0, ..Default::default() },
            TokenizerConfig { knn_k: 0, ..Default::default() },
        ] {
            assert!(matches!(cluster(&g, &cfg), Err(ClusterError::InvalidConfig(_))));
        }
    }

    #[test]
    fn harden_argmax_and_ties() {
        let s = soft_stack(vec![0.6, 0.5, 0.4, 0.5], 2, 1, 2);
        let h = harden_masks(&s).unwrap();
        assert_eq!(h.mode(), Assignment::Hard);
        assert_eq!(h.mask(0), &[1.0, 1.0]);
        // Mask 1 never wins, so it is dropped.
        assert_eq!(h.k(), 1);
    }

    #[test]
    fn harden_drops_dominated_mask() {
        let s = soft_stack(vec![0.9, 0.8, 0.7, 0.1, 0.2, 0.3], 2, 1, 3);
        let h = harden_masks(&s).unwrap();
        assert_eq!(h.k(), 1);
        assert_eq!(h.seeds(), &s.seeds()[..1]);
    }

    #[test]
    fn harden_rejects_unnormalized() {
        let s = soft_stack(vec![0.5, 0.2], 1, 1, 2);
        assert!(matches!(harden_masks(&s), Err(ClusterError::NotNormalized { .. })));
    }

    #[test]
    fn remainder_must_be_last() {
        let seeds = vec![Seed::Remainder, Seed::Location(Location::new(0, 0))];
        let r = MaskStack::from_parts(vec![0.5, 0.5], seeds, 1, 1, Assignment::Soft, TokenizerConfig::default());
        assert!(matches!(r, Err(ClusterError::Malformed(_))));
    }

    #[test]
    fn count_stats() {
        let stack = |k: usize| {
            let mut masks = vec![0.0; k];
            masks[0] = 1.0;
            let seeds = (0..k).map(|i| Seed::Location(Location::new(0, i))).collect();
            MaskStack::from_parts(masks, seeds, 1, 1, Assignment::Soft, TokenizerConfig::default()).unwrap()
        };
        let stats = cluster_count_stats(&[stack(2), stack(4)]).unwrap();
        assert_eq!(stats, CountStats { mean: 3.0, min: 2, max: 4 });
        let stats = cluster_count_stats(&[stack(1)]).unwrap();
        assert_eq!(stats, CountStats { mean: 1.0, min: 1, max: 1 });
        assert_eq!(cluster_count_stats(&[]), Err(ClusterError::EmptyInput));
    }

    #[test]
    fn literal_mode_runs() {
        let g = FeatureGrid::from_fn(4, 4, 1, |_, c, _| if c < 2 { 0.0 } else { 5.0 }).unwrap();
        let cfg = TokenizerConfig { algo1_literal: true, assignment: Assignment::Soft, ..Default::default() };
        let s = cluster(&g, &cfg).unwrap();
        assert!(s.k() >= 1);
        assert!(s.has_remainder());
    }
}
