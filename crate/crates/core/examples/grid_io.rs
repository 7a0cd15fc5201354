//! Write a feature grid to a SETK file and read it back.
//!
//! cargo run --example grid_io

use setok::tensor_io::{encode, grid_to_tensor, load_grid, write_grid};
use setok::FeatureGrid;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid = FeatureGrid::from_fn(2, 3, 4, |r, c, ch| (r * 100 + c * 10 + ch) as f32)?;
    let dir = std::env::temp_dir().join("setok_grid_io");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("grid.setk");
    write_grid(&grid, &path)?;

    let bytes = encode(&grid_to_tensor(&grid))?;
    println!("{} bytes, header {:02x?}", bytes.len(), &bytes[..20]);

    let back = load_grid(&path)?;
    assert_eq!(back, grid);
    println!("feature at (1, 2): {:?}", back.feature_at(setok::Location::new(1, 2)));
    Ok(())
}
