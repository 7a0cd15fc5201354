//! Cluster a synthetic grid with a known number of blobs and watch the scope
//! shrink as seeds are picked.
//!
//! cargo run --example cluster_fixture -- [blobs] [seed]

use setok::clusterer::cluster_with_trace;
use setok::fixture::{generate_fixture, FixtureParams};
use setok::TokenizerConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let blobs = args.next().map(|a| a.parse()).transpose()?.unwrap_or(4);
    let seed = args.next().map(|a| a.parse()).transpose()?.unwrap_or(0);
    let f = generate_fixture(&FixtureParams { blobs, seed, ..Default::default() })?;

    let (masks, trace) = cluster_with_trace(&f.grid, &TokenizerConfig::default())?;
    for (i, scope) in trace.scopes.iter().enumerate() {
        let total: f64 = scope.iter().sum();
        let max = scope.iter().copied().fold(0.0, f64::max);
        println!("after {i} seeds: scope total {total:8.3}, max {max:.4}");
    }
    println!("stopped: {:?}", trace.stop);
    let seeds: Vec<String> = masks
        .seeds()
        .iter()
        .map(|s| match s {
            setok::Seed::Location(l) => l.to_string(),
            other => format!("{other:?}"),
        })
        .collect();
    println!("{blobs} blobs -> {} clusters, seeds {}", masks.non_remainder_count(), seeds.join(" "));

    let labels = masks.labels();
    for r in 0..f.grid.h() {
        let row: String = (0..f.grid.w()).map(|c| char::from(b'a' + labels[r * f.grid.w() + c] as u8)).collect();
        println!("{row}");
    }
    Ok(())
}
