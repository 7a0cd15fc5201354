//! Alternative grouping mechanisms behind one entry point, for side-by-side
//! comparison with the dynamic clusterer.
//!
//! - `dynamic_hard` / `dynamic_soft`: the scope-based clusterer.
//! - `threshold`: same loop, but seeding continues only while the scope-masked
//!   seed score at the chosen seed exceeds `score_tau`.
//! - `fixed`: the `k` highest seed scores become seeds, each with a plain
//!   kernel map; maps are normalized per location and hardened.
//! - `resampler`: `n_queries` seeded query vectors; each location splits its
//!   weight across queries by a softmax of scaled dot products, and tokens are
//!   the weighted feature means.
//! - `topk_merge`: starting from one token per location, each pass merges the
//!   `r` most cosine-similar disjoint token pairs.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::clusterer::{
    self, clamped_scores, kernel_from_sq, Assignment, ClusterError, MaskStack, Seed, TokenizerConfig, REMAINDER_EPS,
};
use crate::density::PairwiseDistances;
use crate::grid::{FeatureGrid, Location};
use crate::merger::{merge_clusters, MergerError, MergerOptions, MergerWeights, TokenSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MechanismSpec {
    DynamicHard,
    DynamicSoft,
    Threshold {
        score_tau: f64,
    },
    Fixed {
        k: usize,
    },
    Resampler {
        n_queries: usize,
        #[serde(default)]
        seed: u64,
    },
    TopkMerge {
        r: usize,
        passes: usize,
    },
}

impl MechanismSpec {
    /// Short label used in reports, parameters included.
    pub fn label(&self) -> String {
        match self {
            Self::DynamicHard => "dynamic_hard".into(),
            Self::DynamicSoft => "dynamic_soft".into(),
            Self::Threshold { score_tau } => format!("threshold(tau={score_tau})"),
            Self::Fixed { k } => format!("fixed(k={k})"),
            Self::Resampler { n_queries, seed } => format!("resampler(q={n_queries},seed={seed})"),
            Self::TopkMerge { r, passes } => format!("topk_merge(r={r},passes={passes})"),
        }
    }

    /// Whether the token count depends on the input.
    pub fn is_dynamic(&self) -> bool {
        matches!(self, Self::DynamicHard | Self::DynamicSoft | Self::Threshold { .. })
    }

    pub fn validate(&self) -> Result<(), BaselineError> {
        let bad = |m: &str| Err(BaselineError::InvalidParams(format!("{}: {m}", self.label())));
        match *self {
            Self::Threshold { score_tau } if !score_tau.is_finite() || score_tau < 0.0 => bad("score_tau must be >= 0"),
            Self::Fixed { k: 0 } => bad("k must be positive"),
            Self::Resampler { n_queries: 0, .. } => bad("n_queries must be positive"),
            _ => Ok(()),
        }
    }

    /// How the mechanism is operationalized, for report headers.
    pub fn description(&self) -> &'static str {
        match self {
            Self::DynamicHard => "scope-based clustering, argmax-hardened masks",
            Self::DynamicSoft => "scope-based clustering, soft masks",
            Self::Threshold { .. } => "seeds taken while scope-masked seed score > tau; no scope stop",
            Self::Fixed { .. } => "top-k seed scores as seeds; kernel maps normalized per location, then hardened",
            Self::Resampler { .. } => "seeded random queries; per-location softmax over queries; weighted means",
            Self::TopkMerge { .. } => "per-location tokens; r most cosine-similar disjoint pairs merged per pass",
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum BaselineError {
    #[error("invalid mechanism parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Merger(#[from] MergerError),
}

#[derive(Debug, Clone)]
pub struct MechanismOutput {
    pub tokens: TokenSet,
    pub masks: Option<MaskStack>,
    /// Cluster count as reported in comparisons: non-remainder masks for
    /// mask-based mechanisms, token count otherwise.
    pub k: usize,
    pub wall_time: Duration,
}

pub fn run_mechanism(
    grid: &FeatureGrid,
    spec: &MechanismSpec,
    config: &TokenizerConfig,
    weights: &MergerWeights,
) -> Result<MechanismOutput, BaselineError> {
    spec.validate()?;
    config.validate()?;
    let start = Instant::now();
    let merge = |stack: &MaskStack| merge_clusters(grid, stack, weights, config.merge_mode, MergerOptions::default());
    let (tokens, masks, k) = match *spec {
        MechanismSpec::DynamicHard | MechanismSpec::DynamicSoft => {
            let assignment = if *spec == MechanismSpec::DynamicHard { Assignment::Hard } else { Assignment::Soft };
            let stack = clusterer::cluster(grid, &TokenizerConfig { assignment, ..config.clone() })?;
            let k = stack.non_remainder_count();
            (merge(&stack)?, Some(stack), k)
        }
        MechanismSpec::Threshold { score_tau } => {
            let stack = threshold_cluster(grid, config, score_tau)?;
            let k = stack.non_remainder_count();
            (merge(&stack)?, Some(stack), k)
        }
        MechanismSpec::Fixed { k } => {
            let stack = fixed_cluster(grid, config, k)?;
            (merge(&stack)?, Some(stack), k)
        }
        MechanismSpec::Resampler { n_queries, seed } => {
            let (tokens, stack) = resample(grid, config, n_queries, seed)?;
            (tokens, Some(stack), n_queries)
        }
        MechanismSpec::TopkMerge { r, passes } => {
            let tokens = topk_merge(grid, r, passes);
            let k = tokens.len();
            (tokens, None, k)
        }
    };
    Ok(MechanismOutput { tokens, masks, k, wall_time: start.elapsed() })
}

/// Scope loop with a score threshold as the only stopping rule (besides
/// `max_clusters`).
pub fn threshold_cluster(
    grid: &FeatureGrid,
    config: &TokenizerConfig,
    score_tau: f64,
) -> Result<MaskStack, ClusterError> {
    config.validate()?;
    let n = grid.len();
    let dist = PairwiseDistances::new(grid);
    let scores = clamped_scores(grid, &dist, config.knn_k);
    let mut scope = vec![1.0f64; n];
    let mut masks = Vec::new();
    let mut seeds = Vec::new();
    while seeds.len() < config.max_clusters {
        let (seed, key) = scores
            .score
            .iter()
            .zip(&scope)
            .map(|(s, c)| s * c)
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best });
        if key <= score_tau {
            break;
        }
        for (j, c) in scope.iter_mut().enumerate() {
            let a = kernel_from_sq(dist.get(seed, j), config.kernel_bandwidth);
            masks.push(a * *c);
            *c *= 1.0 - a;
        }
        seeds.push(Seed::Location(grid.location(seed)));
    }
    if scope.iter().copied().fold(0.0, f64::max) >= REMAINDER_EPS {
        masks.extend_from_slice(&scope);
        seeds.push(Seed::Remainder);
    }
    let soft = MaskStack::from_parts(masks, seeds, grid.h(), grid.w(), Assignment::Soft, config.clone())?;
    match config.assignment {
        Assignment::Soft => Ok(soft),
        Assignment::Hard => clusterer::harden_masks(&soft),
    }
}

/// Exactly `k` hard masks seeded at the `k` highest seed scores. Each seed
/// keeps its own location, so no mask is ever empty.
pub fn fixed_cluster(grid: &FeatureGrid, config: &TokenizerConfig, k: usize) -> Result<MaskStack, BaselineError> {
    let n = grid.len();
    if k == 0 || k > n {
        return Err(BaselineError::InvalidParams(format!("fixed k = {k} must lie in 1..={n}")));
    }
    let dist = PairwiseDistances::new(grid);
    let scores = clamped_scores(grid, &dist, config.knn_k);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores.score[b].total_cmp(&scores.score[a]).then(a.cmp(&b)));
    let seeds: Vec<usize> = order[..k].to_vec();

    let mut labels = vec![0usize; n];
    for (j, label) in labels.iter_mut().enumerate() {
        // Normalizing by the per-location sum does not change the argmax, so
        // compare raw kernel values; fall back to the nearest seed when every
        // kernel value underflows.
        let mut best = 0;
        let mut best_alpha = kernel_from_sq(dist.get(seeds[0], j), config.kernel_bandwidth);
        for (m, &s) in seeds.iter().enumerate().skip(1) {
            let a = kernel_from_sq(dist.get(s, j), config.kernel_bandwidth);
            if a > best_alpha {
                best = m;
                best_alpha = a;
            }
        }
        if best_alpha == 0.0 {
            best = (0..k).min_by(|&a, &b| dist.get(seeds[a], j).total_cmp(&dist.get(seeds[b], j))).unwrap_or(0);
        }
        *label = best;
    }
    for (m, &s) in seeds.iter().enumerate() {
        labels[s] = m;
    }
    let mut masks = vec![0.0; k * n];
    for (j, &l) in labels.iter().enumerate() {
        masks[l * n + j] = 1.0;
    }
    let seed_list = seeds.iter().map(|&s| Seed::Location(grid.location(s))).collect();
    Ok(MaskStack::from_parts(masks, seed_list, grid.h(), grid.w(), Assignment::Hard, config.clone())?)
}

/// Fixed-query grouping. Returns weighted-mean tokens and the soft
/// per-location query weights as a mask stack.
pub fn resample(
    grid: &FeatureGrid,
    config: &TokenizerConfig,
    n_queries: usize,
    seed: u64,
) -> Result<(TokenSet, MaskStack), BaselineError> {
    if n_queries == 0 {
        return Err(BaselineError::InvalidParams("n_queries must be positive".into()));
    }
    let (n, d) = (grid.len(), grid.d());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let queries: Vec<Vec<f64>> =
        (0..n_queries).map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
    let scale = 1.0 / (d as f64).sqrt();
    let mut weights = vec![0.0; n_queries * n];
    let mut logits = vec![0.0; n_queries];
    for j in 0..n {
        let x = grid.feature(j);
        for (l, q) in logits.iter_mut().zip(&queries) {
            *l = q.iter().zip(x).map(|(a, &b)| a * f64::from(b)).sum::<f64>() * scale;
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        for (q, l) in logits.iter().enumerate() {
            weights[q * n + j] = (l - max).exp() / total;
        }
    }
    let mut tokens = Vec::with_capacity(n_queries);
    let mut sources = Vec::with_capacity(n_queries);
    for q in 0..n_queries {
        let w = &weights[q * n..(q + 1) * n];
        let mass: f64 = w.iter().sum();
        let mut token = vec![0.0; d];
        for (j, &wj) in w.iter().enumerate() {
            for (t, &x) in token.iter_mut().zip(grid.feature(j)) {
                *t += wj * f64::from(x);
            }
        }
        token.iter_mut().for_each(|t| *t /= mass);
        tokens.push(token);
        sources.push((0..n).filter(|&j| w[j] > crate::merger::SOFT_MEMBERSHIP_MIN).map(|j| grid.location(j)).collect());
    }
    let seeds = (0..n_queries).map(Seed::Query).collect();
    let stack = MaskStack::from_parts(weights, seeds, grid.h(), grid.w(), Assignment::Soft, config.clone())?;
    Ok((TokenSet { tokens, sources, grid_dims: [grid.h(), grid.w(), d], skipped: Vec::new() }, stack))
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Greedy similarity merging. Merged tokens are size-weighted means; tokens
/// are kept ordered by their first source location.
pub fn topk_merge(grid: &FeatureGrid, r: usize, passes: usize) -> TokenSet {
    let mut tokens: Vec<Vec<f64>> = grid.features().map(|f| f.iter().map(|&v| f64::from(v)).collect()).collect();
    let mut sources: Vec<Vec<Location>> = (0..grid.len()).map(|j| vec![grid.location(j)]).collect();
    for _ in 0..passes {
        if r == 0 || tokens.len() < 2 {
            break;
        }
        let m = tokens.len();
        let mut pairs = Vec::with_capacity(m * (m - 1) / 2);
        for i in 0..m {
            for j in i + 1..m {
                pairs.push((cosine(&tokens[i], &tokens[j]), i, j));
            }
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut taken = vec![false; m];
        let mut absorbed = vec![false; m];
        let mut merged = 0;
        for &(_, i, j) in &pairs {
            if merged == r {
                break;
            }
            if taken[i] || taken[j] {
                continue;
            }
            taken[i] = true;
            taken[j] = true;
            absorbed[j] = true;
            let (si, sj) = (sources[i].len() as f64, sources[j].len() as f64);
            let combined: Vec<f64> =
                tokens[i].iter().zip(&tokens[j]).map(|(a, b)| (a * si + b * sj) / (si + sj)).collect();
            tokens[i] = combined;
            let moved = std::mem::take(&mut sources[j]);
            sources[i].extend(moved);
            sources[i].sort();
            merged += 1;
        }
        let mut kept: Vec<(Vec<f64>, Vec<Location>)> =
            tokens.into_iter().zip(sources).zip(absorbed).filter(|(_, gone)| !gone).map(|(pair, _)| pair).collect();
        kept.sort_by(|a, b| a.1[0].cmp(&b.1[0]));
        (tokens, sources) = kept.into_iter().unzip();
    }
    TokenSet { tokens, sources, grid_dims: [grid.h(), grid.w(), grid.d()], skipped: Vec::new() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_blobs() -> FeatureGrid {
        FeatureGrid::from_fn(4, 4, 4, |_, c, k| if c < 2 { k as f32 * 0.01 } else { 10.0 + k as f32 * 0.01 }).unwrap()
    }

    #[test]
    fn spec_json_round_trip() {
        let specs = vec![
            MechanismSpec::DynamicHard,
            MechanismSpec::Threshold { score_tau: 0.5 },
            MechanismSpec::Fixed { k: 4 },
            MechanismSpec::Resampler { n_queries: 8, seed: 3 },
            MechanismSpec::TopkMerge { r: 2, passes: 3 },
        ];
        let json = serde_json::to_string(&specs).unwrap();
        assert_eq!(serde_json::from_str::<Vec<MechanismSpec>>(&json).unwrap(), specs);
        let parsed: MechanismSpec = serde_json::from_str(r#"{"kind":"resampler","n_queries":2}"#).unwrap();
        assert_eq!(parsed, MechanismSpec::Resampler { n_queries: 2, seed: 0 });
        assert!(serde_json::from_str::<MechanismSpec>(r#"{"kind":"fixed"}"#).is_err());
        assert!(serde_json::from_str::<MechanismSpec>(r#"{"kind":"fixed","k":2,"extra":1}"#).is_err());
    }

    #[test]
    fn invalid_params() {
        let g = two_blobs();
        let w = MergerWeights::seeded(4, 0).unwrap();
        let cfg = TokenizerConfig::default();
        for spec in [
            MechanismSpec::Fixed { k: 0 },
            MechanismSpec::Fixed { k: 17 },
            MechanismSpec::Resampler { n_queries: 0, seed: 0 },
        ] {
            assert!(matches!(run_mechanism(&g, &spec, &cfg, &w), Err(BaselineError::InvalidParams(_))));
        }
    }

    #[test]
    fn topk_zero_is_identity() {
        let g = two_blobs();
        let t = topk_merge(&g, 0, 5);
        assert_eq!(t.len(), 16);
        for (j, token) in t.tokens.iter().enumerate() {
            let expected: Vec<f64> = g.feature(j).iter().map(|&v| f64::from(v)).collect();
            assert_eq!(token, &expected);
            assert_eq!(t.sources[j], vec![g.location(j)]);
        }
    }

    #[test]
    fn topk_reduces_by_r_per_pass() {
        let g = two_blobs();
        let t = topk_merge(&g, 3, 2);
        assert_eq!(t.len(), 10);
        let covered: usize = t.sources.iter().map(Vec::len).sum();
        assert_eq!(covered, 16);
    }

    #[test]
    fn resampler_single_query_is_plain_mean() {
        let g = two_blobs();
        let (t, stack) = resample(&g, &TokenizerConfig::default(), 1, 7).unwrap();
        let mut mean = vec![0.0; 4];
        for f in g.features() {
            for (m, &v) in mean.iter_mut().zip(f) {
                *m += f64::from(v) / 16.0;
            }
        }
        for (a, b) in t.tokens[0].iter().zip(&mean) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(stack.location_sums().iter().all(|s| (s - 1.0).abs() < 1e-12));
    }

    #[test]
    fn resampler_tied_logits_give_plain_mean() {
        // Zero features make every logit zero.
        let g = FeatureGrid::from_fn(2, 2, 4, |_, _, _| 0.0).unwrap();
        let (t, stack) = resample(&g, &TokenizerConfig::default(), 3, 1).unwrap();
        assert!(stack.masks().iter().all(|&w| (w - 1.0 / 3.0).abs() < 1e-12));
        assert!(t.tokens.iter().all(|tok| tok.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn fixed_count_is_exact() {
        let g = two_blobs();
        let w = MergerWeights::seeded(4, 0).unwrap();
        for k in [1, 2, 5, 16] {
            let out = run_mechanism(&g, &MechanismSpec::Fixed { k }, &TokenizerConfig::default(), &w).unwrap();
            assert_eq!(out.k, k);
            assert_eq!(out.tokens.len(), k);
            assert_eq!(out.masks.unwrap().k(), k);
        }
    }

    #[test]
    fn threshold_stops_on_score() {
        let g = two_blobs();
        let cfg = TokenizerConfig { knn_k: 3, ..Default::default() };
        let low = threshold_cluster(&g, &cfg, 1e-3).unwrap();
        assert_eq!(low.non_remainder_count(), 2);
        let high = threshold_cluster(&g, &cfg, 1e9).unwrap();
        assert_eq!(high.non_remainder_count(), 0);
        assert!(high.has_remainder());
    }

    #[test]
    fn dynamic_delegates() {
        let g = two_blobs();
        let w = MergerWeights::seeded(4, 0).unwrap();
        let cfg = TokenizerConfig { knn_k: 3, ..Default::default() };
        let hard = run_mechanism(&g, &MechanismSpec::DynamicHard, &cfg, &w).unwrap();
        let soft = run_mechanism(&g, &MechanismSpec::DynamicSoft, &cfg, &w).unwrap();
        assert_eq!(hard.k, 2);
        assert_eq!(soft.masks.unwrap().mode(), Assignment::Soft);
        assert!(hard.tokens.tokens.iter().all(|t| t.len() == 4));
    }
}
