//! Compare the dynamic tokenizer with fixed-count and query-based grouping on
//! fixtures whose blob count varies.
//!
//! cargo run --release --example compare_mechanisms

use setok::bench::{bench_mechanisms, BenchOptions};
use setok::fixture::{fixture_suite, FixtureParams};
use setok::MechanismSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = fixture_suite(20, 2, 6, &FixtureParams::default())?;
    let grids: Vec<_> = fixtures.iter().map(|f| f.grid.clone()).collect();
    let refs: Vec<_> = fixtures.iter().map(|f| f.reference()).collect();
    let specs = [
        MechanismSpec::DynamicHard,
        MechanismSpec::Threshold { score_tau: 1.0 },
        MechanismSpec::Fixed { k: 4 },
        MechanismSpec::Resampler { n_queries: 4, seed: 0 },
        MechanismSpec::TopkMerge { r: 100, passes: 2 },
    ];
    let report = bench_mechanisms(&grids, &specs, Some(&refs), &BenchOptions::default())?;
    print!("{}", report.to_table());
    let per_grid: Vec<usize> = report.rows[0].per_grid.iter().map(|g| g.k).collect();
    let blobs: Vec<usize> = fixtures.iter().map(|f| f.params.blobs).collect();
    println!("\nblobs        {blobs:?}\ndynamic k    {per_grid:?}");
    Ok(())
}
