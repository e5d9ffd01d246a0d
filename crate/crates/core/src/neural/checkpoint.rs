//! Binary parameter checkpoints.
//!
//! Layout (all integers `u32`, all reals `f64`, little-endian):
//!
//! ```text
//! magic        8 bytes  "PMRFMLP\0"
//! version      u32      1
//! x_width      u32
//! cond_width   u32
//! freq_count   u32
//! layer_count  u32
//! shapes       layer_count × (rows u32, cols u32)
//! freqs        freq_count × f64
//! layers       per layer: rows·cols weights (row-major), then rows biases
//! ```
//!
//! A JSON sidecar (`<file>.json`) carries the training configuration.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use super::mlp::{Dense, MlpParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"PMRFMLP\0";
pub const VERSION: u32 = 1;

pub fn encode<T: Scalar>(params: &MlpParams<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 8 * params.parameter_count());
    let u32le = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    u32le(&mut out, params.x_width);
    u32le(&mut out, params.cond_width);
    u32le(&mut out, params.time_freqs.len());
    u32le(&mut out, params.layers.len());
    for l in &params.layers {
        u32le(&mut out, l.fan_out());
        u32le(&mut out, l.fan_in());
    }
    let mut put = |v: T| out.extend_from_slice(&v.as_f64().to_le_bytes());
    params.time_freqs.iter().for_each(|&v| put(v));
    for l in &params.layers {
        l.weight.data().iter().for_each(|&v| put(v));
        l.bias.data().iter().for_each(|&v| put(v));
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64s<T: Scalar>(&mut self, n: usize) -> Result<Vec<T>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap())))
            .collect())
    }
}

pub fn decode<T: Scalar>(buf: &[u8]) -> Result<MlpParams<T>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let x_width = r.u32()?;
    let cond_width = r.u32()?;
    let freq_count = r.u32()?;
    let layer_count = r.u32()?;
    if layer_count == 0 {
        return Err(Error::Format("no layers".into()));
    }
    let mut shapes = Vec::with_capacity(layer_count.min(1024));
    for _ in 0..layer_count {
        shapes.push((r.u32()?, r.u32()?));
    }
    let time_freqs = r.f64s(freq_count)?;
    let mut expected_in = x_width + 2 * freq_count + cond_width;
    let mut layers = Vec::with_capacity(shapes.len());
    for &(rows, cols) in &shapes {
        if cols != expected_in || rows == 0 {
            return Err(Error::Format(format!(
                "layer shape {rows}x{cols} does not chain from width {expected_in}"
            )));
        }
        let weight = Tensor::new(vec![rows, cols], r.f64s(rows * cols)?)?;
        let bias = Tensor::new(vec![rows], r.f64s(rows)?)?;
        layers.push(Dense { weight, bias });
        expected_in = rows;
    }
    if r.pos != buf.len() {
        return Err(Error::Format(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(MlpParams {
        layers,
        time_freqs,
        x_width,
        cond_width,
    })
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Write the checkpoint and its JSON sidecar.
pub fn save<T: Scalar>(path: &Path, params: &MlpParams<T>, sidecar: &serde_json::Value) -> Result<()> {
    fs::File::create(path)?.write_all(&encode(params))?;
    fs::write(sidecar_path(path), serde_json::to_string_pretty(sidecar)? + "\n")?;
    Ok(())
}

/// Read a checkpoint; the sidecar is returned when present.
pub fn load<T: Scalar>(path: &Path) -> Result<(MlpParams<T>, Option<serde_json::Value>)> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    let params = decode(&buf)?;
    let side = sidecar_path(path);
    let sidecar = if side.exists() {
        Some(serde_json::from_str(&fs::read_to_string(side)?)?)
    } else {
        None
    };
    Ok((params, sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::mlp::{mlp_init, MlpShape};
    use crate::rng::RngKey;
    use proptest::prelude::*;

    fn net(sizes: Vec<usize>, cond: usize, freqs: usize, seed: u64) -> MlpParams<f64> {
        mlp_init(
            &MlpShape {
                layer_sizes: sizes,
                cond_width: cond,
                time_frequencies: freqs,
            },
            RngKey::new(seed, 0),
        )
        .unwrap()
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&net(vec![2, 3, 1], 1, 2, 0));
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[20..24].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[24..28].try_into().unwrap()), 2);
        // 2 + 4 + 1 = 7 inputs to the first layer.
        let n_f64 = 2 + (3 * 7 + 3) + (3 + 1);
        assert_eq!(bytes.len(), 28 + 16 + 8 * n_f64);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let bytes = encode(&net(vec![2, 3, 1], 0, 0, 0));
        assert!(decode::<f64>(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode::<f64>(&bad).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(decode::<f64>(&long).is_err());
    }

    #[test]
    fn save_load_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let p = net(vec![3, 4, 3], 2, 3, 5);
        let side = serde_json::json!({"lr": 5e-4});
        save(&path, &p, &side).unwrap();
        let (q, s) = load::<f64>(&path).unwrap();
        assert_eq!(p, q);
        assert_eq!(s, Some(side));
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(
            sizes in proptest::collection::vec(1usize..6, 2..5),
            cond in 0usize..3,
            freqs in 0usize..4,
            seed in 0u64..1000,
        ) {
            let p = net(sizes, cond, freqs, seed);
            prop_assert_eq!(decode::<f64>(&encode(&p)).unwrap(), p);
        }
    }
}
