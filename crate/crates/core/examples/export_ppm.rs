//! Write a color preview of the hard masks, one color per cluster and gray
//! for the remainder.
//!
//! cargo run --example export_ppm -- [out.ppm]

use setok::fixture::{generate_fixture, FixtureParams};
use setok::tensor_io::export_mask_image;
use setok::{cluster, TokenizerConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| std::env::temp_dir().join("masks.ppm").display().to_string());
    let f = generate_fixture(&FixtureParams { blobs: 6, h: 48, w: 64, seed: 1, ..Default::default() })?;
    let masks = cluster(&f.grid, &TokenizerConfig::default())?;
    export_mask_image(&masks, &out)?;
    println!("{} clusters written to {out}", masks.non_remainder_count());
    Ok(())
}
