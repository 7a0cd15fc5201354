//! Fixed 2D sinusoidal position embeddings.
//!
//! The first `d/2` channels encode the row and the last `d/2` the column. Within
//! each half, channel pair `(2p, 2p+1)` holds `sin(pos·ω_p)` and `cos(pos·ω_p)`
//! with `ω_p = 10000^(-2p / (d/2))`.

use super::MergerError;

const BASE: f64 = 10_000.0;

fn encode_axis(pos: usize, half: usize, out: &mut [f64]) {
    for p in 0..half / 2 {
        let freq = BASE.powf(-(2.0 * p as f64) / half as f64);
        let angle = pos as f64 * freq;
        out[2 * p] = angle.sin();
        out[2 * p + 1] = angle.cos();
    }
}

/// Embedding vector for a single location. Independent of the grid extent.
pub fn position_vector(row: usize, col: usize, d: usize) -> Result<Vec<f64>, MergerError> {
    if d == 0 || !d.is_multiple_of(4) {
        return Err(MergerError::BadDim { d });
    }
    let half = d / 2;
    let mut v = vec![0.0; d];
    encode_axis(row, half, &mut v[..half]);
    encode_axis(col, half, &mut v[half..]);
    Ok(v)
}

/// `h × w × d` embedding table, raster order, flattened.
pub fn position_embedding_2d(h: usize, w: usize, d: usize) -> Result<Vec<f64>, MergerError> {
    let mut out = Vec::with_capacity(h * w * d);
    for r in 0..h {
        for c in 0..w {
            out.extend(position_vector(r, c, d)?);
        }
    }
    if out.is_empty() {
        // Still reject a bad channel count on an empty extent.
        position_vector(0, 0, d)?;
    }
    Ok(out)
}
