//! Pre-norm transformer blocks used inside the cluster merger.
//!
//! ```text
//! y = x + Wo·MHSA(LN1(x))
//! z = y + W2·gelu(W1·LN2(y))
//! ```
//!
//! Row vectors, so a projection is `x · W + b` with `W` stored `in × out`.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MergerError;
use crate::tensor_io::{self, SetkTensor};

pub const DEFAULT_BLOCKS: usize = 2;
pub const DEFAULT_HEADS: usize = 2;
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub ln1_gamma: Vec<f64>,
    pub ln1_beta: Vec<f64>,
    pub wq: Matrix,
    pub bq: Vec<f64>,
    pub wk: Matrix,
    pub bk: Vec<f64>,
    pub wv: Matrix,
    pub bv: Vec<f64>,
    pub wo: Matrix,
    pub bo: Vec<f64>,
    pub ln2_gamma: Vec<f64>,
    pub ln2_beta: Vec<f64>,
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub heads: usize,
}

/// Tensor names in bundle order.
const TENSOR_NAMES: [&str; 16] = [
    "ln1_gamma",
    "ln1_beta",
    "wq",
    "bq",
    "wk",
    "bk",
    "wv",
    "bv",
    "wo",
    "bo",
    "ln2_gamma",
    "ln2_beta",
    "w1",
    "b1",
    "w2",
    "b2",
];

impl BlockWeights {
    pub fn d(&self) -> usize {
        self.wq.rows
    }

    pub fn ffn_hidden(&self) -> usize {
        self.w1.cols
    }

    /// Seeded uniform weights; norm scales near one, everything else in
    /// `±1/sqrt(fan_in)`. Values are drawn as `f32` so bundles round-trip exactly.
    pub fn seeded(d: usize, ffn_hidden: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        let vec = |n: usize, center: f32, scale: f32, rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..n).map(|_| f64::from(center + rng.random_range(-scale..=scale))).collect()
        };
        let mat = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| -> Matrix {
            let scale = 1.0 / (rows as f32).sqrt();
            Matrix { rows, cols, data: (0..rows * cols).map(|_| f64::from(rng.random_range(-scale..=scale))).collect() }
        };
        let bias = 0.1;
        Self {
            ln1_gamma: vec(d, 1.0, 0.1, rng),
            ln1_beta: vec(d, 0.0, bias, rng),
            wq: mat(d, d, rng),
            bq: vec(d, 0.0, bias, rng),
            wk: mat(d, d, rng),
            bk: vec(d, 0.0, bias, rng),
            wv: mat(d, d, rng),
            bv: vec(d, 0.0, bias, rng),
            wo: mat(d, d, rng),
            bo: vec(d, 0.0, bias, rng),
            ln2_gamma: vec(d, 1.0, 0.1, rng),
            ln2_beta: vec(d, 0.0, bias, rng),
            w1: mat(d, ffn_hidden, rng),
            b1: vec(ffn_hidden, 0.0, bias, rng),
            w2: mat(ffn_hidden, d, rng),
            b2: vec(d, 0.0, bias, rng),
            heads,
        }
    }

    /// Zeroes the attention output projection and the second FFN layer, which
    /// turns the block into the identity.
    pub fn zero_outputs(&mut self) {
        self.wo.data.fill(0.0);
        self.bo.fill(0.0);
        self.w2.data.fill(0.0);
        self.b2.fill(0.0);
    }

    fn tensors(&self) -> Vec<(&'static str, Matrix)> {
        let row = |v: &Vec<f64>| Matrix { rows: 1, cols: v.len(), data: v.clone() };
        let mats = [
            row(&self.ln1_gamma),
            row(&self.ln1_beta),
            self.wq.clone(),
            row(&self.bq),
            self.wk.clone(),
            row(&self.bk),
            self.wv.clone(),
            row(&self.bv),
            self.wo.clone(),
            row(&self.bo),
            row(&self.ln2_gamma),
            row(&self.ln2_beta),
            self.w1.clone(),
            row(&self.b1),
            self.w2.clone(),
            row(&self.b2),
        ];
        TENSOR_NAMES.into_iter().zip(mats).collect()
    }

    fn validate(&self) -> Result<(), MergerError> {
        let d = self.d();
        let hidden = self.ffn_hidden();
        let shape = |name: &str, m: &Matrix, r: usize, c: usize| {
            if m.rows != r || m.cols != c {
                Err(MergerError::ShapeMismatch(format!("{name} is {}x{}, expected {r}x{c}", m.rows, m.cols)))
            } else {
                Ok(())
            }
        };
        for (name, m) in self.tensors() {
            if !m.is_finite() {
                return Err(MergerError::ShapeMismatch(format!("{name} has non-finite entries")));
            }
            let (r, c) = match name {
                "wq" | "wk" | "wv" | "wo" => (d, d),
                "w1" => (d, hidden),
                "w2" => (hidden, d),
                "b1" => (1, hidden),
                _ => (1, d),
            };
            shape(name, &m, r, c)?;
        }
        if self.heads == 0 || !d.is_multiple_of(self.heads) {
            return Err(MergerError::ShapeMismatch(format!("{} heads do not divide d = {d}", self.heads)));
        }
        Ok(())
    }
}

/// `L` stacked blocks plus the shapes they expect.
#[derive(Debug, Clone, PartialEq)]
pub struct MergerWeights {
    pub d: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub blocks: Vec<BlockWeights>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    blocks: usize,
    heads: usize,
    d: usize,
    ffn_hidden: usize,
    tensors: Vec<String>,
}

impl MergerWeights {
    /// Two blocks, two heads, FFN width `4d`, drawn from `seed`.
    pub fn seeded(d: usize, seed: u64) -> Result<Self, MergerError> {
        Self::seeded_with(d, DEFAULT_BLOCKS, DEFAULT_HEADS, 4 * d, seed)
    }

    pub fn seeded_with(
        d: usize,
        blocks: usize,
        heads: usize,
        ffn_hidden: usize,
        seed: u64,
    ) -> Result<Self, MergerError> {
        if d == 0 || heads == 0 || !d.is_multiple_of(heads) {
            return Err(MergerError::ShapeMismatch(format!("{heads} heads do not divide d = {d}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = (0..blocks).map(|_| BlockWeights::seeded(d, ffn_hidden, heads, &mut rng)).collect();
        Ok(Self { d, heads, ffn_hidden, blocks })
    }

    /// Seeded weights with every block reduced to the identity.
    pub fn identity(d: usize, seed: u64) -> Result<Self, MergerError> {
        let mut w = Self::seeded(d, seed)?;
        w.blocks.iter_mut().for_each(BlockWeights::zero_outputs);
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), MergerError> {
        for b in &self.blocks {
            if b.d() != self.d || b.heads != self.heads || b.ffn_hidden() != self.ffn_hidden {
                return Err(MergerError::ShapeMismatch("block shapes disagree with manifest".into()));
            }
            b.validate()?;
        }
        Ok(())
    }

    /// Runs every block in order.
    pub fn forward(&self, seq: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, MergerError> {
        let mut x = seq.to_vec();
        for block in &self.blocks {
            x = attention_block_forward(&x, block)?;
        }
        Ok(x)
    }

    /// Writes `manifest.json` and one SETK file per tensor into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), MergerError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|source| tensor_io::IoError::IoFailure { path: dir.to_path_buf(), source })?;
        let mut names = Vec::new();
        for (i, block) in self.blocks.iter().enumerate() {
            for (name, m) in block.tensors() {
                let file = format!("block{i}.{name}.setk");
                let data = m.data.iter().map(|&v| v as f32).collect();
                tensor_io::write_tensor(&SetkTensor::new(vec![m.rows, m.cols], data), dir.join(&file))?;
                names.push(file);
            }
        }
        let manifest = Manifest {
            blocks: self.blocks.len(),
            heads: self.heads,
            d: self.d,
            ffn_hidden: self.ffn_hidden,
            tensors: names,
        };
        let path = dir.join("manifest.json");
        let bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, bytes).map_err(|source| tensor_io::IoError::IoFailure { path, source })?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, MergerError> {
        let dir = dir.as_ref();
        let path = dir.join("manifest.json");
        let text =
            fs::read_to_string(&path).map_err(|source| tensor_io::IoError::IoFailure { path: path.clone(), source })?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| MergerError::BadManifest(e.to_string()))?;
        let read = |i: usize, name: &str| -> Result<Matrix, MergerError> {
            let t = tensor_io::read_tensor(dir.join(format!("block{i}.{name}.setk")))?;
            if t.dims.len() != 2 {
                return Err(MergerError::ShapeMismatch(format!("block{i}.{name} must be rank 2")));
            }
            Ok(Matrix { rows: t.dims[0], cols: t.dims[1], data: t.data.into_iter().map(f64::from).collect() })
        };
        let mut blocks = Vec::with_capacity(manifest.blocks);
        for i in 0..manifest.blocks {
            let v = |name: &str| read(i, name).map(|m| m.data);
            blocks.push(BlockWeights {
                ln1_gamma: v("ln1_gamma")?,
                ln1_beta: v("ln1_beta")?,
                wq: read(i, "wq")?,
                bq: v("bq")?,
                wk: read(i, "wk")?,
                bk: v("bk")?,
                wv: read(i, "wv")?,
                bv: v("bv")?,
                wo: read(i, "wo")?,
                bo: v("bo")?,
                ln2_gamma: v("ln2_gamma")?,
                ln2_beta: v("ln2_beta")?,
                w1: read(i, "w1")?,
                b1: v("b1")?,
                w2: read(i, "w2")?,
                b2: v("b2")?,
                heads: manifest.heads,
            });
        }
        let weights = Self { d: manifest.d, heads: manifest.heads, ffn_hidden: manifest.ffn_hidden, blocks };
        weights.validate()?;
        Ok(weights)
    }
}

fn layer_norm(x: &[f64], gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    x.iter().zip(gamma).zip(beta).map(|((v, g), b)| (v - mean) * inv * g + b).collect()
}

fn project(x: &[f64], w: &Matrix, b: &[f64]) -> Vec<f64> {
    let mut out = b.to_vec();
    for (i, &xi) in x.iter().enumerate() {
        let row = &w.data[i * w.cols..(i + 1) * w.cols];
        for (o, &wij) in out.iter_mut().zip(row) {
            *o += xi * wij;
        }
    }
    out
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

fn self_attention(x: &[Vec<f64>], wt: &BlockWeights) -> Vec<Vec<f64>> {
    let n = x.len();
    let d = wt.d();
    let dh = d / wt.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let q: Vec<_> = x.iter().map(|r| project(r, &wt.wq, &wt.bq)).collect();
    let k: Vec<_> = x.iter().map(|r| project(r, &wt.wk, &wt.bk)).collect();
    let v: Vec<_> = x.iter().map(|r| project(r, &wt.wv, &wt.bv)).collect();
    let mut ctx = vec![vec![0.0; d]; n];
    let mut logits = vec![0.0; n];
    for h in 0..wt.heads {
        let span = h * dh..(h + 1) * dh;
        for i in 0..n {
            for j in 0..n {
                logits[j] = q[i][span.clone()].iter().zip(&k[j][span.clone()]).map(|(a, b)| a * b).sum::<f64>() * scale;
            }
            softmax_in_place(&mut logits);
            for (j, &p) in logits.iter().enumerate() {
                for c in span.clone() {
                    ctx[i][c] += p * v[j][c];
                }
            }
        }
    }
    ctx.iter().map(|r| project(r, &wt.wo, &wt.bo)).collect()
}

/// One pre-norm block over an `N × d` sequence.
pub fn attention_block_forward(seq: &[Vec<f64>], weights: &BlockWeights) -> Result<Vec<Vec<f64>>, MergerError> {
    let d = weights.d();
    if seq.is_empty() {
        return Err(MergerError::ShapeMismatch("sequence is empty".into()));
    }
    if let Some(row) = seq.iter().find(|r| r.len() != d) {
        return Err(MergerError::ShapeMismatch(format!("row has {} channels, block expects {d}", row.len())));
    }
    let normed: Vec<_> = seq.iter().map(|r| layer_norm(r, &weights.ln1_gamma, &weights.ln1_beta)).collect();
    let attn = self_attention(&normed, weights);
    let y: Vec<Vec<f64>> = seq.iter().zip(&attn).map(|(x, a)| x.iter().zip(a).map(|(p, q)| p + q).collect()).collect();
    let z = y
        .iter()
        .map(|row| {
            let n2 = layer_norm(row, &weights.ln2_gamma, &weights.ln2_beta);
            let hidden: Vec<f64> = project(&n2, &weights.w1, &weights.b1).into_iter().map(gelu).collect();
            let ff = project(&hidden, &weights.w2, &weights.b2);
            row.iter().zip(&ff).map(|(a, b)| a + b).collect()
        })
        .collect();
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n).map(|i| (0..d).map(|c| ((i * 7 + c * 3) % 11) as f64 * 0.3 - 1.0).collect()).collect()
    }

    #[test]
    fn zeroed_outputs_are_identity() {
        let w = MergerWeights::identity(8, 3).unwrap();
        let x = seq(5, 8);
        assert_eq!(w.forward(&x).unwrap(), x);
        let one = vec![vec![0.5; 8]];
        assert_eq!(attention_block_forward(&one, &w.blocks[0]).unwrap(), one);
    }

    #[test]
    fn row_permutation_equivariance() {
        let w = MergerWeights::seeded(8, 11).unwrap();
        let x = seq(4, 8);
        let perm = [2, 0, 3, 1];
        let px: Vec<_> = perm.iter().map(|&i| x[i].clone()).collect();
        let out = attention_block_forward(&x, &w.blocks[0]).unwrap();
        let pout = attention_block_forward(&px, &w.blocks[0]).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            for c in 0..8 {
                assert!((pout[k][c] - out[i][c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_errors() {
        let w = MergerWeights::seeded(8, 1).unwrap();
        assert!(matches!(attention_block_forward(&[], &w.blocks[0]), Err(MergerError::ShapeMismatch(_))));
        assert!(matches!(attention_block_forward(&[vec![0.0; 4]], &w.blocks[0]), Err(MergerError::ShapeMismatch(_))));
        assert!(MergerWeights::seeded(7, 1).is_err());
    }

    #[test]
    fn seeded_is_deterministic() {
        assert_eq!(MergerWeights::seeded(8, 5).unwrap(), MergerWeights::seeded(8, 5).unwrap());
        assert_ne!(MergerWeights::seeded(8, 5).unwrap(), MergerWeights::seeded(8, 6).unwrap());
    }

    #[test]
    fn bundle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let w = MergerWeights::seeded(8, 9).unwrap();
        w.save(dir.path()).unwrap();
        assert_eq!(MergerWeights::load(dir.path()).unwrap(), w);
    }
}
