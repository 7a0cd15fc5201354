//! SETK binary tensor files, sidecar metadata, and PPM mask previews.
//!
//! Layout (all little-endian):
//!
//! ```text
//! offset  size       field
//! 0       4          magic "SETK"
//! 4       2          version (u16, = 1)
//! 6       2          rank (u16, 2 or 3)
//! 8       4 * rank   dims (u32 each)
//! ...     4 * prod   payload (f32, row-major)
//! ```
//!
//! A rank-3 header is 20 bytes. Every decode error carries the byte offset at
//! which it was detected.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clusterer::{MaskStack, Seed, TokenizerConfig};
use crate::grid::{FeatureGrid, Location};
use crate::merger::TokenSet;

pub const MAGIC: [u8; 4] = *b"SETK";
pub const VERSION: u16 = 1;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("bad magic at byte offset {offset}")]
    BadMagic { offset: usize },
    #[error("unsupported version {version} at byte offset {offset}")]
    UnsupportedVersion { offset: usize, version: u16 },
    #[error("rank mismatch at byte offset {offset}: {reason}")]
    RankMismatch { offset: usize, reason: String },
    #[error("non-finite value at byte offset {offset}")]
    NonFiniteValue { offset: usize },
    #[error("truncated payload at byte offset {offset}: expected {expected} bytes total, file has {actual}")]
    TruncatedPayload { offset: usize, expected: usize, actual: usize },
    #[error("{extra} trailing bytes after payload at byte offset {offset}")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("malformed metadata in {path}: {reason}")]
    BadMetadata { path: PathBuf, reason: String },
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_failure(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::IoFailure { path: path.to_path_buf(), source }
}

/// An untyped rank-2 or rank-3 `f32` tensor as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct SetkTensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl SetkTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Self {
        Self { dims, data }
    }

    pub fn header_len(rank: usize) -> usize {
        8 + 4 * rank
    }
}

/// Serializes a tensor to SETK bytes.
pub fn encode(tensor: &SetkTensor) -> Result<Vec<u8>, IoError> {
    let rank = tensor.dims.len();
    if !(2..=3).contains(&rank) {
        return Err(IoError::RankMismatch { offset: 6, reason: format!("rank {rank} is not 2 or 3") });
    }
    if let Some(pos) = tensor.dims.iter().position(|&d| d == 0 || d > u32::MAX as usize) {
        return Err(IoError::RankMismatch {
            offset: 8 + 4 * pos,
            reason: format!("dimension {pos} is {} (must be in 1..=u32::MAX)", tensor.dims[pos]),
        });
    }
    let numel: usize = tensor.dims.iter().product();
    if numel != tensor.data.len() {
        return Err(IoError::RankMismatch {
            offset: SetkTensor::header_len(rank),
            reason: format!("dims {:?} need {numel} values, got {}", tensor.dims, tensor.data.len()),
        });
    }
    let mut out = Vec::with_capacity(SetkTensor::header_len(rank) + 4 * numel);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(rank as u16).to_le_bytes());
    for &d in &tensor.dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &tensor.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn truncated(offset: usize, expected: usize, actual: usize) -> IoError {
    IoError::TruncatedPayload { offset, expected, actual }
}

/// Parses SETK bytes, validating header, payload length and finiteness.
pub fn decode(bytes: &[u8]) -> Result<SetkTensor, IoError> {
    if bytes.len() < 4 {
        return Err(truncated(bytes.len(), 8, bytes.len()));
    }
    if bytes[0..4] != MAGIC {
        return Err(IoError::BadMagic { offset: 0 });
    }
    if bytes.len() < 8 {
        return Err(truncated(bytes.len(), 8, bytes.len()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(IoError::UnsupportedVersion { offset: 4, version });
    }
    let rank = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    if !(2..=3).contains(&rank) {
        return Err(IoError::RankMismatch { offset: 6, reason: format!("rank {rank} is not 2 or 3") });
    }
    let header_len = SetkTensor::header_len(rank);
    if bytes.len() < header_len {
        return Err(truncated(bytes.len(), header_len, bytes.len()));
    }
    let mut dims = Vec::with_capacity(rank);
    for i in 0..rank {
        let off = 8 + 4 * i;
        let d = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
        if d == 0 {
            return Err(IoError::RankMismatch { offset: off, reason: format!("dimension {i} is zero") });
        }
        dims.push(d);
    }
    let numel = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| IoError::RankMismatch { offset: 8, reason: "dims overflow".into() })?
        / 4;
    let expected = header_len + 4 * numel;
    if bytes.len() < expected {
        // Offset of the first incomplete value.
        let offset = header_len + 4 * ((bytes.len() - header_len) / 4);
        return Err(truncated(offset, expected, bytes.len()));
    }
    if bytes.len() > expected {
        return Err(IoError::TrailingBytes { offset: expected, extra: bytes.len() - expected });
    }
    let mut data = Vec::with_capacity(numel);
    for (i, chunk) in bytes[header_len..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(IoError::NonFiniteValue { offset: header_len + 4 * i });
        }
        data.push(v);
    }
    Ok(SetkTensor { dims, data })
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<SetkTensor, IoError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_failure(path))?;
    decode(&bytes)
}

pub fn write_tensor(tensor: &SetkTensor, path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    let bytes = encode(tensor)?;
    fs::write(path, bytes).map_err(io_failure(path))
}

fn require_rank(t: &SetkTensor, rank: usize) -> Result<(), IoError> {
    if t.dims.len() != rank {
        return Err(IoError::RankMismatch {
            offset: 6,
            reason: format!("expected rank {rank}, file has rank {}", t.dims.len()),
        });
    }
    Ok(())
}

pub fn grid_to_tensor(grid: &FeatureGrid) -> SetkTensor {
    SetkTensor::new(vec![grid.h(), grid.w(), grid.d()], grid.data().to_vec())
}

pub fn tensor_to_grid(t: SetkTensor) -> Result<FeatureGrid, IoError> {
    require_rank(&t, 3)?;
    let (h, w, d) = (t.dims[0], t.dims[1], t.dims[2]);
    FeatureGrid::new(h, w, d, t.data).map_err(|e| IoError::RankMismatch { offset: 8, reason: e.to_string() })
}

pub fn load_grid(path: impl AsRef<Path>) -> Result<FeatureGrid, IoError> {
    tensor_to_grid(read_tensor(path)?)
}

pub fn write_grid(grid: &FeatureGrid, path: impl AsRef<Path>) -> Result<(), IoError> {
    write_tensor(&grid_to_tensor(grid), path)
}

/// Writes an `h × w` score or density map as a rank-2 file.
pub fn write_map(values: &[f64], h: usize, w: usize, path: impl AsRef<Path>) -> Result<(), IoError> {
    let data = values.iter().map(|&v| v as f32).collect();
    write_tensor(&SetkTensor::new(vec![h, w], data), path)
}

/// Sidecar path for a SETK file: same stem, `.jsonl` extension.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("jsonl")
}

#[derive(Debug, Serialize, Deserialize)]
struct StackHeaderLine {
    mode: crate::clusterer::Assignment,
    k: usize,
    h: usize,
    w: usize,
    config: TokenizerConfig,
}

#[derive(Debug, Serialize, Deserialize)]
struct SeedLine {
    index: usize,
    seed: Seed,
}

/// Writes masks as a rank-3 `k × h × w` file plus a JSON-lines sidecar
/// (header line, then one line per seed).
pub fn write_mask_stack(stack: &MaskStack, path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    let data = stack.masks().iter().map(|&v| v as f32).collect();
    write_tensor(&SetkTensor::new(vec![stack.k(), stack.h(), stack.w()], data), path)?;

    let sidecar = sidecar_path(path);
    let mut out = Vec::new();
    let header = StackHeaderLine {
        mode: stack.mode(),
        k: stack.k(),
        h: stack.h(),
        w: stack.w(),
        config: stack.config_used().clone(),
    };
    serde_json::to_writer(&mut out, &header).expect("header serializes");
    out.push(b'\n');
    for (index, seed) in stack.seeds().iter().enumerate() {
        serde_json::to_writer(&mut out, &SeedLine { index, seed: *seed }).expect("seed serializes");
        out.push(b'\n');
    }
    fs::write(&sidecar, out).map_err(io_failure(&sidecar))
}

/// Reads a mask stack written by [`write_mask_stack`].
pub fn read_mask_stack(path: impl AsRef<Path>) -> Result<MaskStack, IoError> {
    let path = path.as_ref();
    let t = read_tensor(path)?;
    require_rank(&t, 3)?;
    let sidecar = sidecar_path(path);
    let text = fs::read_to_string(&sidecar).map_err(io_failure(&sidecar))?;
    let bad = |reason: String| IoError::BadMetadata { path: sidecar.clone(), reason };
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: StackHeaderLine = serde_json::from_str(lines.next().ok_or_else(|| bad("empty sidecar".into()))?)
        .map_err(|e| bad(e.to_string()))?;
    if [header.k, header.h, header.w] != [t.dims[0], t.dims[1], t.dims[2]] {
        return Err(bad(format!(
            "header dims {:?} disagree with tensor dims {:?}",
            [header.k, header.h, header.w],
            t.dims
        )));
    }
    let mut seeds = Vec::with_capacity(header.k);
    for line in lines {
        let s: SeedLine = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        if s.index != seeds.len() {
            return Err(bad(format!("seed line {} out of order", s.index)));
        }
        seeds.push(s.seed);
    }
    let masks = t.data.into_iter().map(f64::from).collect();
    MaskStack::from_parts(masks, seeds, header.h, header.w, header.mode, header.config).map_err(|e| bad(e.to_string()))
}

/// Reads a bare rank-3 `n × h × w` mask tensor (no sidecar), e.g. reference masks.
pub fn read_mask_tensor(path: impl AsRef<Path>) -> Result<(usize, usize, usize, Vec<f64>), IoError> {
    let t = read_tensor(path)?;
    require_rank(&t, 3)?;
    Ok((t.dims[0], t.dims[1], t.dims[2], t.data.into_iter().map(f64::from).collect()))
}

#[derive(Debug, Serialize, Deserialize)]
struct TokenSidecar {
    grid_dims: [usize; 3],
    sources: Vec<Vec<Location>>,
    skipped: Vec<usize>,
}

/// Writes tokens as a rank-2 `k × d` file plus a JSON sidecar with member locations.
pub fn write_token_set(tokens: &TokenSet, path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    let [_, _, d] = tokens.grid_dims;
    if tokens.is_empty() {
        return Err(IoError::RankMismatch { offset: 8, reason: "token set is empty".into() });
    }
    let data = tokens.tokens.iter().flatten().map(|&v| v as f32).collect();
    write_tensor(&SetkTensor::new(vec![tokens.len(), d], data), path)?;
    let sidecar = path.with_extension("json");
    let meta =
        TokenSidecar { grid_dims: tokens.grid_dims, sources: tokens.sources.clone(), skipped: tokens.skipped.clone() };
    let bytes = serde_json::to_vec(&meta).expect("token sidecar serializes");
    fs::write(&sidecar, bytes).map_err(io_failure(&sidecar))
}

pub fn read_token_set(path: impl AsRef<Path>) -> Result<TokenSet, IoError> {
    let path = path.as_ref();
    let t = read_tensor(path)?;
    require_rank(&t, 2)?;
    let sidecar = path.with_extension("json");
    let text = fs::read_to_string(&sidecar).map_err(io_failure(&sidecar))?;
    let meta: TokenSidecar = serde_json::from_str(&text)
        .map_err(|e| IoError::BadMetadata { path: sidecar.clone(), reason: e.to_string() })?;
    if meta.sources.len() != t.dims[0] || meta.grid_dims[2] != t.dims[1] {
        return Err(IoError::BadMetadata { path: sidecar, reason: "sidecar disagrees with tensor dims".into() });
    }
    let tokens = t.data.chunks_exact(t.dims[1]).map(|c| c.iter().map(|&v| f64::from(v)).collect()).collect();
    Ok(TokenSet { tokens, sources: meta.sources, grid_dims: meta.grid_dims, skipped: meta.skipped })
}

/// Color used for the remainder mask in previews.
pub const REMAINDER_COLOR: [u8; 3] = [128, 128, 128];

/// Deterministic palette: hue advances by the golden angle from a fixed start.
pub fn palette_color(index: usize) -> [u8; 3] {
    const GOLDEN_ANGLE: f64 = 137.507_764_050_037_85;
    const START_HUE: f64 = 17.0;
    let hue = (START_HUE + GOLDEN_ANGLE * index as f64).rem_euclid(360.0);
    hsv_to_rgb(hue, 0.65, 0.95)
}

fn hsv_to_rgb(hue: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = hue / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let to_u8 = |f: f64| ((f + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    [to_u8(r), to_u8(g), to_u8(b)]
}

/// Renders the per-location argmax mask as a binary PPM (P6, maxval 255).
pub fn render_mask_ppm(stack: &MaskStack) -> Result<Vec<u8>, IoError> {
    if stack.k() == 0 {
        return Err(IoError::RankMismatch { offset: 0, reason: "mask stack is empty".into() });
    }
    let (h, w) = (stack.h(), stack.w());
    let mut out = Vec::with_capacity(20 + 3 * h * w);
    write!(out, "P6\n{w} {h}\n255\n").expect("write to vec");
    for loc in 0..h * w {
        let winner = stack.argmax_at(loc);
        let color = match stack.seeds()[winner] {
            Seed::Remainder => REMAINDER_COLOR,
            _ => palette_color(winner),
        };
        out.extend_from_slice(&color);
    }
    Ok(out)
}

pub fn export_mask_image(stack: &MaskStack, path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    let bytes = render_mask_ppm(stack)?;
    fs::write(path, bytes).map_err(io_failure(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(magic: &[u8; 4], version: u16, dims: &[u32]) -> Vec<u8> {
        let mut b = magic.to_vec();
        b.extend_from_slice(&version.to_le_bytes());
        b.extend_from_slice(&(dims.len() as u16).to_le_bytes());
        for d in dims {
            b.extend_from_slice(&d.to_le_bytes());
        }
        b
    }

    #[test]
    fn loads_all_zero_grid() {
        let mut bytes = header(b"SETK", 1, &[2, 2, 1]);
        bytes.extend_from_slice(&[0u8; 16]);
        let g = tensor_to_grid(decode(&bytes).unwrap()).unwrap();
        assert_eq!((g.h(), g.w(), g.d()), (2, 2, 1));
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bad_magic_at_offset_zero() {
        let mut bytes = header(b"XXXX", 1, &[1, 1, 1]);
        bytes.extend_from_slice(&[0u8; 4]);
        assert!(matches!(decode(&bytes), Err(IoError::BadMagic { offset: 0 })));
    }

    #[test]
    fn unsupported_version() {
        let mut bytes = header(b"SETK", 2, &[1, 1, 1]);
        bytes.extend_from_slice(&[0u8; 4]);
        assert!(matches!(decode(&bytes), Err(IoError::UnsupportedVersion { offset: 4, version: 2 })));
    }

    #[test]
    fn rank_checks() {
        let mut bytes = header(b"SETK", 1, &[1, 1, 1, 1]);
        bytes.extend_from_slice(&[0u8; 4]);
        assert!(matches!(decode(&bytes), Err(IoError::RankMismatch { offset: 6, .. })));

        let mut bytes = header(b"SETK", 1, &[2, 2]);
        bytes.extend_from_slice(&[0u8; 16]);
        let t = decode(&bytes).unwrap();
        assert!(matches!(tensor_to_grid(t), Err(IoError::RankMismatch { .. })));
    }

    #[test]
    fn truncated_and_trailing() {
        let mut bytes = header(b"SETK", 1, &[2, 2, 1]);
        bytes.extend_from_slice(&[0u8; 10]);
        match decode(&bytes) {
            Err(IoError::TruncatedPayload { offset, expected, actual }) => {
                assert_eq!(offset, 28);
                assert_eq!(expected, 36);
                assert_eq!(actual, 30);
            }
            other => panic!("unexpected {other:?}"),
        }
        let mut bytes = header(b"SETK", 1, &[1, 1, 1]);
        bytes.extend_from_slice(&[0u8; 6]);
        assert!(matches!(decode(&bytes), Err(IoError::TrailingBytes { offset: 24, extra: 2 })));
        assert!(matches!(decode(b"SET"), Err(IoError::TruncatedPayload { .. })));
    }

    #[test]
    fn non_finite_names_offset() {
        let mut bytes = header(b"SETK", 1, &[1, 2, 1]);
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        bytes.extend_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(IoError::NonFiniteValue { offset: 24 })));
    }

    #[test]
    fn encodes_three_point_five() {
        let g = FeatureGrid::new(1, 1, 1, vec![3.5]).unwrap();
        let bytes = encode(&grid_to_tensor(&g)).unwrap();
        assert_eq!(bytes.len(), 24);
        assert_eq!(&bytes[0..4], b"SETK");
        assert_eq!(&bytes[20..24], &[0x00, 0x00, 0x60, 0x40]);
    }

    #[test]
    fn header_echoes_dims() {
        let g = FeatureGrid::from_fn(2, 3, 4, |_, _, _| 0.0).unwrap();
        let bytes = encode(&grid_to_tensor(&g)).unwrap();
        let dims: Vec<u32> = bytes[8..20].chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
        assert_eq!(dims, vec![2, 3, 4]);
    }

    #[test]
    fn zero_size_rejected() {
        let t = SetkTensor::new(vec![0, 2, 2], vec![]);
        assert!(matches!(encode(&t), Err(IoError::RankMismatch { offset: 8, .. })));
    }

    #[test]
    fn palette_is_distinct_for_small_indices() {
        let colors: Vec<_> = (0..16).map(palette_color).collect();
        for i in 0..colors.len() {
            for j in i + 1..colors.len() {
                assert_ne!(colors[i], colors[j], "{i} vs {j}");
            }
            assert_ne!(colors[i], REMAINDER_COLOR);
        }
    }
}
