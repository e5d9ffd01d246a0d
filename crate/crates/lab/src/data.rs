//! Dataset synthesis and file formats.

use std::f64::consts::PI;
use std::path::Path;

use pmrf_core::rng::{sample_standard_normal, RngKey};
use pmrf_core::{Tensor, Tensor64};
use rand::Rng;

use crate::config::Dataset;
use crate::error::{LabError, Result};

pub const SPRITE_SIZE: usize = 16;

/// `n` samples of the given synthetic kind, deterministic per key.
///
/// Sprites are `16×16×3` images in `[0, 1]`; two-moons samples are
/// 2-vectors; `gauss1d` samples are scalars drawn from `N(0, 1)`.
pub fn synth_dataset(kind: &Dataset, n: usize, key: RngKey) -> Result<Vec<Tensor64>> {
    match kind {
        Dataset::SyntheticSprites => Ok((0..n).map(|i| sprite(key.derive(i as u64))).collect()),
        Dataset::TwoMoons2d => Ok(two_moons(n, key)),
        Dataset::Gauss1d => {
            let z = sample_standard_normal::<f64>(key, &[n.max(1), 1]);
            Ok(z.data()[..n].iter().map(|&v| Tensor::vector(vec![v])).collect())
        }
        Dataset::Idx(p) => Err(LabError::Config {
            path: p.display().to_string(),
            line: 0,
            message: "IDX datasets are loaded, not synthesized".into(),
        }),
    }
}

/// Load a dataset from its source: synthesized or read from an IDX file
/// (the first `n` images).
pub fn load_dataset(kind: &Dataset, n: usize, key: RngKey) -> Result<Vec<Tensor64>> {
    match kind {
        Dataset::Idx(p) => {
            let mut all = load_idx(p)?;
            if all.len() < n {
                return Err(pmrf_core::Error::TooFewSamples {
                    needed: n,
                    got: all.len(),
                }
                .into());
            }
            all.truncate(n);
            Ok(all)
        }
        other => synth_dataset(other, n, key),
    }
}

#[derive(Clone, Copy)]
enum Shape {
    Disk,
    Square,
    Triangle,
    Ring,
}

/// Background colour plus one to three anti-aliased shapes composited over it.
fn sprite(key: RngKey) -> Tensor64 {
    let mut rng = key.rng();
    let s = SPRITE_SIZE;
    let mut img = vec![0.0f64; s * s * 3];
    let bg: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..0.35));
    for px in img.chunks_mut(3) {
        px.copy_from_slice(&bg);
    }
    let count = rng.random_range(1..=3);
    for _ in 0..count {
        let shape = match rng.random_range(0..4) {
            0 => Shape::Disk,
            1 => Shape::Square,
            2 => Shape::Triangle,
            _ => Shape::Ring,
        };
        let cx = rng.random_range(3.0..13.0);
        let cy = rng.random_range(3.0..13.0);
        let r = rng.random_range(2.5..6.0);
        let color: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.3..1.0));
        for y in 0..s {
            for x in 0..s {
                // Signed distance to the boundary (negative inside), at the pixel centre.
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let sd = match shape {
                    Shape::Disk => (dx * dx + dy * dy).sqrt() - r,
                    Shape::Square => dx.abs().max(dy.abs()) - 0.8 * r,
                    Shape::Triangle => {
                        // Upward equilateral triangle with circumradius r.
                        let k = 3f64.sqrt();
                        let e1 = dy - 0.5 * r;
                        let e2 = (-k * dx - dy) / 2.0 - 0.5 * r;
                        let e3 = (k * dx - dy) / 2.0 - 0.5 * r;
                        e1.max(e2).max(e3)
                    }
                    Shape::Ring => ((dx * dx + dy * dy).sqrt() - 0.7 * r).abs() - 0.3 * r,
                };
                let alpha = (0.5 - sd).clamp(0.0, 1.0);
                if alpha > 0.0 {
                    let px = &mut img[(y * s + x) * 3..(y * s + x) * 3 + 3];
                    for (p, &c) in px.iter_mut().zip(&color) {
                        *p = (1.0 - alpha) * *p + alpha * c;
                    }
                }
            }
        }
    }
    Tensor::new(vec![s, s, 3], img).expect("sprite shape")
}

/// The usual interleaved half-circles with `N(0, 0.05²)` jitter.
fn two_moons(n: usize, key: RngKey) -> Vec<Tensor64> {
    let mut rng = key.derive_str("angles").rng();
    let jitter = sample_standard_normal::<f64>(key.derive_str("jitter"), &[n.max(1), 2]);
    (0..n)
        .map(|i| {
            let theta = rng.random_range(0.0..PI);
            let (x, y) = if i % 2 == 0 {
                (theta.cos(), theta.sin())
            } else {
                (1.0 - theta.cos(), 0.5 - theta.sin())
            };
            let j = jitter.row(i);
            Tensor::vector(vec![x + 0.05 * j[0], y + 0.05 * j[1]])
        })
        .collect()
}

const IDX_MAGIC: u32 = 0x0000_0803;

/// Parse a `u8` image IDX file (`n × rows × cols`) into `[rows, cols, 1]`
/// tensors scaled to `[0, 1]`.
pub fn parse_idx(bytes: &[u8]) -> Result<Vec<Tensor64>> {
    let word = |i: usize| -> Result<u32> {
        bytes
            .get(4 * i..4 * i + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or(LabError::Truncated {
                expected: 4 * i + 4,
                found: bytes.len(),
            })
    };
    let magic = word(0)?;
    if magic != IDX_MAGIC {
        return Err(LabError::BadMagic { found: magic });
    }
    let (n, rows, cols) = (word(1)? as usize, word(2)? as usize, word(3)? as usize);
    let item = rows * cols;
    let expected = 16 + n * item;
    if bytes.len() < expected {
        return Err(LabError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if item == 0 {
        return Err(pmrf_core::Error::BadShape(format!("IDX images of {rows}x{cols}")).into());
    }
    Ok(bytes[16..expected]
        .chunks_exact(item)
        .map(|px| {
            Tensor::new(vec![rows, cols, 1], px.iter().map(|&b| b as f64 / 255.0).collect()).expect("idx item shape")
        })
        .collect())
}

pub fn load_idx(path: &Path) -> Result<Vec<Tensor64>> {
    parse_idx(&std::fs::read(path)?)
}

/// Encode single-channel images as IDX, rounding values to the nearest of
/// the 256 levels.
pub fn encode_idx(images: &[Tensor64]) -> Result<Vec<u8>> {
    let first = images.first().ok_or(pmrf_core::Error::TooFewSamples { needed: 1, got: 0 })?;
    let (rows, cols) = match first.shape() {
        &[r, c, 1] | &[r, c] => (r, c),
        other => return Err(pmrf_core::Error::BadShape(format!("IDX needs single-channel images, got {other:?}")).into()),
    };
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    for w in [IDX_MAGIC, images.len() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&w.to_be_bytes());
    }
    for img in images {
        if img.len() != rows * cols {
            return Err(pmrf_core::Error::ShapeMismatch {
                expected: first.shape().to_vec(),
                actual: img.shape().to_vec(),
            }
            .into());
        }
        out.extend(img.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    Ok(out)
}

pub fn write_idx(path: &Path, images: &[Tensor64]) -> Result<()> {
    std::fs::write(path, encode_idx(images)?)?;
    Ok(())
}

const TENSOR_MAGIC: &[u8; 8] = b"PMRFTNS\0";

/// Little-endian tensor file: magic, `u32` rank, `u32` extents, `f64` data.
pub fn encode_tensor(t: &Tensor64) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * t.ndim() + 8 * t.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor64> {
    let bad = |m: &str| LabError::Core(pmrf_core::Error::Format(m.into()));
    if bytes.len() < 12 || &bytes[..8] != TENSOR_MAGIC {
        return Err(bad("not a tensor file"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
    let rank = u32_at(8);
    let header = 12 + 4 * rank;
    if bytes.len() < header {
        return Err(bad("truncated tensor header"));
    }
    let shape: Vec<usize> = (0..rank).map(|i| u32_at(12 + 4 * i)).collect();
    let len: usize = shape.iter().product();
    if bytes.len() != header + 8 * len {
        return Err(bad("tensor payload length does not match its shape"));
    }
    let data = bytes[header..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(Tensor::new(shape, data)?)
}

pub fn write_tensor(path: &Path, t: &Tensor64) -> Result<()> {
    std::fs::write(path, encode_tensor(t))?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Tensor64> {
    decode_tensor(&std::fs::read(path)?)
}
