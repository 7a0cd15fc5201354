//! The dense `h × w × d` feature field consumed by the tokenizer.

use std::fmt;

/// A spatial location `(row, col)` on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub struct Location {
    pub row: usize,
    pub col: usize,
}

impl Location {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    /// Row-major index on a grid of width `w`.
    pub fn raster(&self, w: usize) -> usize {
        self.row * w + self.col
    }

    pub fn from_raster(index: usize, w: usize) -> Self {
        Self { row: index / w, col: index % w }
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GridError {
    #[error("grid dimensions must be positive, got {h}x{w}x{d}")]
    ZeroDim { h: usize, w: usize, d: usize },
    #[error("data length {got} does not match {h}x{w}x{d} = {expected}")]
    LengthMismatch { h: usize, w: usize, d: usize, expected: usize, got: usize },
    #[error("non-finite value at element {index}")]
    NonFinite { index: usize },
}

/// Row-major `h × w × d` grid of finite `f32` features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    h: usize,
    w: usize,
    d: usize,
    data: Vec<f32>,
}

impl FeatureGrid {
    pub fn new(h: usize, w: usize, d: usize, data: Vec<f32>) -> Result<Self, GridError> {
        if h == 0 || w == 0 || d == 0 {
            return Err(GridError::ZeroDim { h, w, d });
        }
        let expected = h * w * d;
        if data.len() != expected {
            return Err(GridError::LengthMismatch { h, w, d, expected, got: data.len() });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite { index });
        }
        Ok(Self { h, w, d, data })
    }

    /// Builds a grid by evaluating `f(row, col, channel)` everywhere.
    pub fn from_fn(
        h: usize,
        w: usize,
        d: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self, GridError> {
        let mut data = Vec::with_capacity(h * w * d);
        for r in 0..h {
            for c in 0..w {
                for k in 0..d {
                    data.push(f(r, c, k));
                }
            }
        }
        Self::new(h, w, d, data)
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of spatial locations, `h · w`.
    pub fn len(&self) -> usize {
        self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Feature vector at raster index `index`.
    pub fn feature(&self, index: usize) -> &[f32] {
        &self.data[index * self.d..(index + 1) * self.d]
    }

    pub fn feature_at(&self, loc: Location) -> &[f32] {
        self.feature(loc.raster(self.w))
    }

    pub fn location(&self, index: usize) -> Location {
        Location::from_raster(index, self.w)
    }

    /// Iterates feature vectors in raster order.
    pub fn features(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.d)
    }

    /// Copy of the grid with every feature scaled to unit L2 norm; zero vectors stay zero.
    pub fn l2_normalized(&self) -> Self {
        let mut data = self.data.clone();
        for chunk in data.chunks_exact_mut(self.d) {
            let norm = chunk.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
            if norm > 0.0 {
                for v in chunk.iter_mut() {
                    *v = (f64::from(*v) / norm) as f32;
                }
            }
        }
        Self { data, ..*self }
    }
}

/// Squared Euclidean distance, accumulated in `f64` in channel order.
pub fn sq_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let diff = f64::from(x) - f64::from(y);
            diff * diff
        })
        .sum()
}
