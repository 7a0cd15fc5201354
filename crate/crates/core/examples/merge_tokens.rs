//! Pool each cluster into one token, with the attention merger and with a
//! plain mean, and save the merger weights for reuse.
//!
//! cargo run --example merge_tokens

use setok::fixture::{generate_fixture, FixtureParams};
use setok::{cluster, merge_clusters, MergeMode, MergerOptions, MergerWeights, TokenizerConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let f = generate_fixture(&FixtureParams { blobs: 3, d: 8, seed: 2, ..Default::default() })?;
    let masks = cluster(&f.grid, &TokenizerConfig::default())?;
    let weights = MergerWeights::seeded(8, 7)?;

    let attention = merge_clusters(&f.grid, &masks, &weights, MergeMode::Attention, MergerOptions::default())?;
    let plain = MergerOptions { position_embedding: false };
    let mean = merge_clusters(&f.grid, &masks, &weights, MergeMode::Mean, plain)?;

    for (i, (a, m)) in attention.tokens.iter().zip(&mean.tokens).enumerate() {
        let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:7.3}")).collect::<Vec<_>>().join(" ");
        println!("token {i} ({} locations)", attention.sources[i].len());
        println!("  attention {}", fmt(a));
        println!("  mean      {}", fmt(m));
    }

    let dir = std::env::temp_dir().join("setok_weights");
    weights.save(&dir)?;
    assert_eq!(MergerWeights::load(&dir)?, weights);
    println!("weights saved to {}", dir.display());
    Ok(())
}
