//! Soft masks share each location between clusters; hardening keeps the
//! largest share.
//!
//! cargo run --example soft_vs_hard

use setok::fixture::{generate_fixture, FixtureParams};
use setok::{cluster, Assignment, Seed, TokenizerConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let f = generate_fixture(&FixtureParams { blobs: 3, noise: 0.4, seed: 5, ..Default::default() })?;
    let soft = cluster(&f.grid, &TokenizerConfig { assignment: Assignment::Soft, ..Default::default() })?;
    let hard = cluster(&f.grid, &TokenizerConfig::default())?;

    println!("soft: {} masks, remainder mass {:.3}", soft.k(), soft.remainder_mass());
    println!("hard: {} masks", hard.k());
    let worst = soft.location_sums().iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
    println!("soft masks sum to one within {worst:.1e}");

    for loc in [0, f.grid.len() / 2, f.grid.len() - 1] {
        let shares: Vec<String> = (0..soft.k())
            .filter(|&m| soft.value(m, loc) >= 0.05)
            .map(|m| format!("{m}: {:.3}", soft.value(m, loc)))
            .collect();
        let winner = hard.argmax_at(loc);
        let seed = match hard.seeds()[winner] {
            Seed::Location(l) => l.to_string(),
            other => format!("{other:?}"),
        };
        println!("location {loc}: soft shares >= 0.05 [{}] -> hard mask {winner} (seed {seed})", shares.join(", "));
    }
    Ok(())
}
