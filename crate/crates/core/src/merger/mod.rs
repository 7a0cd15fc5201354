//! Cluster merger: one token per mask.
//!
//! Member features get the 2D position embedding added, are scaled by the mask
//! and gathered in raster order. In attention mode the sequence then passes
//! through the stacked blocks. The token is the mean over the resulting rows.

mod attention;
mod position;

pub use attention::{attention_block_forward, BlockWeights, Matrix, MergerWeights, DEFAULT_BLOCKS, DEFAULT_HEADS};
pub use position::{position_embedding_2d, position_vector};

use serde::Serialize;

use crate::clusterer::{Assignment, MaskStack, MergeMode};
use crate::grid::{FeatureGrid, Location};
use crate::tensor_io::IoError;

/// Soft masks contribute a location only above this value.
pub const SOFT_MEMBERSHIP_MIN: f64 = 1e-3;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MergerError {
    #[error("channel count {d} is not a positive multiple of 4")]
    BadDim { d: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("mask {mask} has no member locations")]
    EmptyCluster { mask: usize },
    #[error("bad weight manifest: {0}")]
    BadManifest(String),
    #[error("{0}")]
    Io(String),
}

impl From<IoError> for MergerError {
    fn from(e: IoError) -> Self {
        MergerError::Io(e.to_string())
    }
}

/// `k` token vectors with the locations each one was pooled from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TokenSet {
    pub tokens: Vec<Vec<f64>>,
    pub sources: Vec<Vec<Location>>,
    pub grid_dims: [usize; 3],
    /// Mask indices that had no members and produced no token.
    pub skipped: Vec<usize>,
}

impl TokenSet {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn d(&self) -> usize {
        self.grid_dims[2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MergerOptions {
    /// Add position embeddings at gather time. Turning this off only makes
    /// sense for tests and baselines.
    pub position_embedding: bool,
}

impl Default for MergerOptions {
    fn default() -> Self {
        Self { position_embedding: true }
    }
}

/// Gathered rows for one mask, in raster order, plus their locations.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSequence {
    pub rows: Vec<Vec<f64>>,
    pub locations: Vec<Location>,
}

/// Rows `(PE + X)[loc] · mask[loc]` for member locations. Hard membership is
/// a mask value of 1; soft membership is any value above
/// [`SOFT_MEMBERSHIP_MIN`].
pub fn gather_cluster_sequence(
    grid: &FeatureGrid,
    mask: &[f64],
    mode: Assignment,
    options: MergerOptions,
) -> Result<ClusterSequence, MergerError> {
    if mask.len() != grid.len() {
        return Err(MergerError::ShapeMismatch(format!("mask has {} values for {} locations", mask.len(), grid.len())));
    }
    if let Some(v) = mask.iter().find(|v| !(0.0..=1.0 + 1e-6).contains(*v)) {
        return Err(MergerError::ShapeMismatch(format!("mask value {v} outside [0, 1]")));
    }
    let d = grid.d();
    let mut rows = Vec::new();
    let mut locations = Vec::new();
    for (idx, &m) in mask.iter().enumerate() {
        let member = match mode {
            Assignment::Hard => m >= 1.0,
            Assignment::Soft => m > SOFT_MEMBERSHIP_MIN,
        };
        if !member {
            continue;
        }
        let loc = grid.location(idx);
        let feature = grid.feature(idx);
        let row: Vec<f64> = if options.position_embedding {
            let pe = position_vector(loc.row, loc.col, d)?;
            feature.iter().zip(&pe).map(|(&x, p)| (p + f64::from(x)) * m).collect()
        } else {
            feature.iter().map(|&x| f64::from(x) * m).collect()
        };
        rows.push(row);
        locations.push(loc);
    }
    if rows.is_empty() {
        return Err(MergerError::EmptyCluster { mask: 0 });
    }
    Ok(ClusterSequence { rows, locations })
}

fn mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let d = rows[0].len();
    let mut out = vec![0.0; d];
    for r in rows {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    let n = rows.len() as f64;
    out.iter_mut().for_each(|v| *v /= n);
    out
}

/// One token per mask. Masks without members are skipped and recorded in
/// [`TokenSet::skipped`].
pub fn merge_clusters(
    grid: &FeatureGrid,
    stack: &MaskStack,
    weights: &MergerWeights,
    mode: MergeMode,
    options: MergerOptions,
) -> Result<TokenSet, MergerError> {
    if stack.h() != grid.h() || stack.w() != grid.w() {
        return Err(MergerError::ShapeMismatch(format!(
            "masks are {}x{}, grid is {}x{}",
            stack.h(),
            stack.w(),
            grid.h(),
            grid.w()
        )));
    }
    if mode == MergeMode::Attention {
        if weights.d != grid.d() {
            return Err(MergerError::ShapeMismatch(format!("weights expect d = {}, grid has {}", weights.d, grid.d())));
        }
        weights.validate()?;
    }
    let mut tokens = Vec::with_capacity(stack.k());
    let mut sources = Vec::with_capacity(stack.k());
    let mut skipped = Vec::new();
    for m in 0..stack.k() {
        let seq = match gather_cluster_sequence(grid, stack.mask(m), stack.mode(), options) {
            Ok(seq) => seq,
            Err(MergerError::EmptyCluster { .. }) => {
                skipped.push(m);
                continue;
            }
            Err(e) => return Err(e),
        };
        let rows = match mode {
            MergeMode::Attention => weights.forward(&seq.rows)?,
            MergeMode::Mean => seq.rows,
        };
        tokens.push(mean_rows(&rows));
        sources.push(seq.locations);
    }
    Ok(TokenSet { tokens, sources, grid_dims: [grid.h(), grid.w(), grid.d()], skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clusterer::{Seed, TokenizerConfig};

    fn grid() -> FeatureGrid {
        FeatureGrid::from_fn(2, 3, 4, |r, c, k| (r * 12 + c * 4 + k) as f32 * 0.5).unwrap()
    }

    fn hard_stack(labels: &[usize], k: usize, h: usize, w: usize) -> MaskStack {
        let n = h * w;
        let mut masks = vec![0.0; k * n];
        for (loc, &l) in labels.iter().enumerate() {
            masks[l * n + loc] = 1.0;
        }
        let seeds = (0..k).map(|i| Seed::Location(Location::from_raster(i, w))).collect();
        MaskStack::from_parts(masks, seeds, h, w, Assignment::Hard, TokenizerConfig::default()).unwrap()
    }

    #[test]
    fn single_location_row() {
        let g = grid();
        let mut mask = vec![0.0; 6];
        mask[5] = 1.0;
        let seq = gather_cluster_sequence(&g, &mask, Assignment::Hard, MergerOptions::default()).unwrap();
        let pe = position_vector(1, 2, 4).unwrap();
        let expected: Vec<f64> = g.feature(5).iter().zip(&pe).map(|(&x, p)| f64::from(x) + p).collect();
        assert_eq!(seq.rows, vec![expected]);
        assert_eq!(seq.locations, vec![Location::new(1, 2)]);
    }

    #[test]
    fn raster_order() {
        let g = grid();
        let mask = [1.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        let seq = gather_cluster_sequence(&g, &mask, Assignment::Hard, MergerOptions::default()).unwrap();
        assert_eq!(seq.locations, vec![Location::new(0, 0), Location::new(0, 1)]);
    }

    #[test]
    fn soft_rows_are_scaled() {
        let g = grid();
        let mask = [0.0, 0.0, 0.0, 0.5, 0.0005, 0.0];
        let seq = gather_cluster_sequence(&g, &mask, Assignment::Soft, MergerOptions::default()).unwrap();
        let pe = position_vector(1, 0, 4).unwrap();
        let expected: Vec<f64> = g.feature(3).iter().zip(&pe).map(|(&x, p)| 0.5 * (f64::from(x) + p)).collect();
        assert_eq!(seq.rows, vec![expected]);
    }

    #[test]
    fn empty_mask_is_error() {
        let g = grid();
        assert_eq!(
            gather_cluster_sequence(&g, &[0.0; 6], Assignment::Hard, MergerOptions::default()),
            Err(MergerError::EmptyCluster { mask: 0 })
        );
    }

    #[test]
    fn single_location_token_is_feature() {
        let g = grid();
        let stack = hard_stack(&[0, 0, 0, 0, 0, 1], 2, 2, 3);
        let w = MergerWeights::identity(4, 0).unwrap();
        let t =
            merge_clusters(&g, &stack, &w, MergeMode::Attention, MergerOptions { position_embedding: false }).unwrap();
        let expected: Vec<f64> = g.feature(5).iter().map(|&v| f64::from(v)).collect();
        assert_eq!(t.tokens[1], expected);
    }

    #[test]
    fn uniform_mean_token() {
        let g = FeatureGrid::from_fn(3, 3, 4, |_, _, k| k as f32 - 1.5).unwrap();
        let stack = hard_stack(&[0; 9], 1, 3, 3);
        let w = MergerWeights::seeded(4, 0).unwrap();
        let t = merge_clusters(&g, &stack, &w, MergeMode::Mean, MergerOptions { position_embedding: false }).unwrap();
        assert_eq!(t.tokens, vec![vec![-1.5, -0.5, 0.5, 1.5]]);
        assert_eq!(t.sources[0].len(), 9);
    }

    #[test]
    fn skipped_masks_are_recorded() {
        let g = grid();
        let mut masks = vec![0.0; 12];
        masks[..6].fill(1.0);
        let seeds = vec![Seed::Location(Location::new(0, 0)), Seed::Remainder];
        let stack = MaskStack::from_parts(masks, seeds, 2, 3, Assignment::Soft, TokenizerConfig::default()).unwrap();
        let w = MergerWeights::seeded(4, 0).unwrap();
        let t = merge_clusters(&g, &stack, &w, MergeMode::Mean, MergerOptions::default()).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.skipped, vec![1]);
    }

    #[test]
    fn attention_mode_checks_weight_dim() {
        let g = grid();
        let stack = hard_stack(&[0; 6], 1, 2, 3);
        let w = MergerWeights::seeded(8, 0).unwrap();
        assert!(matches!(
            merge_clusters(&g, &stack, &w, MergeMode::Attention, MergerOptions::default()),
            Err(MergerError::ShapeMismatch(_))
        ));
        // Mean mode does not touch the weights.
        assert!(merge_clusters(&g, &stack, &w, MergeMode::Mean, MergerOptions::default()).is_ok());
    }
}
