//! Density-peak seeded clustering of dense feature grids into a variable
//! number of visual tokens.
//!
//! A [`FeatureGrid`] (h × w × d) is scored per location by local density and
//! distance to denser locations. The clusterer then repeatedly picks the best
//! seed inside the unclaimed scope, carves out a kernel-weighted mask and
//! shrinks the scope, until too little scope remains. The merger pools each
//! mask into one token.
//!
//! ```
//! use setok::{fixture, tokenize, MergerWeights, TokenizerConfig};
//!
//! let f = fixture::generate_fixture(&fixture::FixtureParams::default()).unwrap();
//! let weights = MergerWeights::seeded(f.grid.d(), 0).unwrap();
//! let out = tokenize(&f.grid, &TokenizerConfig::default(), &weights).unwrap();
//! assert_eq!(out.masks.non_remainder_count(), 3);
//! ```

pub mod assignment;
pub mod baselines;
pub mod bench;
pub mod cli;
pub mod clusterer;
pub mod density;
pub mod fixture;
pub mod grid;
pub mod merger;
pub mod metrics;
pub mod tensor_io;

pub use baselines::{run_mechanism, MechanismSpec};
pub use clusterer::{cluster, Assignment, MaskStack, MergeMode, Seed, TokenizerConfig};
pub use density::{seed_scores, SeedScores};
pub use grid::{FeatureGrid, Location};
pub use merger::{merge_clusters, MergerOptions, MergerWeights, TokenSet};
pub use metrics::{evaluate, MetricsReport, ReferenceMasks};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Grid(#[from] grid::GridError),
    #[error(transparent)]
    Io(#[from] tensor_io::IoError),
    #[error(transparent)]
    Density(#[from] density::DensityError),
    #[error(transparent)]
    Cluster(#[from] clusterer::ClusterError),
    #[error(transparent)]
    Merger(#[from] merger::MergerError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Baseline(#[from] baselines::BaselineError),
    #[error(transparent)]
    Bench(#[from] bench::BenchError),
    #[error(transparent)]
    Fixture(#[from] fixture::FixtureError),
}

/// Everything one tokenizer pass produces.
#[derive(Debug, Clone)]
pub struct Tokenized {
    pub scores: SeedScores,
    pub masks: MaskStack,
    pub tokens: TokenSet,
}

/// Scores, clusters and merges `grid` with `config.merge_mode`.
pub fn tokenize(grid: &FeatureGrid, config: &TokenizerConfig, weights: &MergerWeights) -> Result<Tokenized, Error> {
    let (masks, trace) = clusterer::cluster_with_trace(grid, config)?;
    let tokens = merge_clusters(grid, &masks, weights, config.merge_mode, MergerOptions::default())?;
    Ok(Tokenized { scores: trace.scores, masks, tokens })
}
