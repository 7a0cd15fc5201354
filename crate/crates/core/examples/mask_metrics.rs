//! Score predicted masks against generator labels.
//!
//! cargo run --example mask_metrics

use setok::fixture::{generate_fixture, FixtureParams};
use setok::{cluster, evaluate, Assignment, TokenizerConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let f = generate_fixture(&FixtureParams { blobs: 5, seed: 9, ..Default::default() })?;
    let reference = f.reference();
    for (name, config) in [
        ("hard", TokenizerConfig::default()),
        ("soft", TokenizerConfig { assignment: Assignment::Soft, ..Default::default() }),
        ("coarse kernel", TokenizerConfig { kernel_bandwidth: 0.001, ..Default::default() }),
    ] {
        let masks = cluster(&f.grid, &config)?;
        let r = evaluate(&masks, &reference)?;
        println!(
            "{name:>13}: k {}/{}  miou {:.3}  ciou {:.3}  dice {:.3}  bce {:.3}  kl {:.3}",
            r.k_pred, r.k_ref, r.miou, r.ciou, r.dice, r.bce, r.kl
        );
    }
    Ok(())
}
