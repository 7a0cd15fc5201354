//! Local density, distance to denser points and the combined seed score on a
//! three-point line.
//!
//! cargo run --example density_scores

use setok::density::{knn_sq_distances, seed_scores};
use setok::{FeatureGrid, Location};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid = FeatureGrid::new(1, 3, 1, vec![0.0, 1.0, 5.0])?;
    println!("knn of (0, 1), K = 2: {:?}", knn_sq_distances(&grid, Location::new(0, 1), 2)?);

    let scores = seed_scores(&grid, 2)?;
    for i in 0..grid.len() {
        println!(
            "x = {:>3}: rho = {:.3e}  delta = {:>5}  ({:?})  score = {:.3e}",
            grid.feature(i)[0],
            scores.rho[i],
            scores.delta[i],
            scores.branch[i],
            scores.score[i]
        );
    }
    println!("first seed: {}", scores.argmax());
    Ok(())
}
