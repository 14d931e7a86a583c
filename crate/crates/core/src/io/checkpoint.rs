//! Binary model checkpoints.
//!
//! Layout, all little-endian: the 8-byte magic `OLSDCKPT`, `u32` version,
//! `u32` height, width and rank, `f64` λ1 and λ2, `u64` frames seen, then the
//! basis `L` (p × r), `A` (r × r) and `B` (p × r) as column-major `f64`.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::SubspaceModel;

const MAGIC: &[u8; 8] = b"OLSDCKPT";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 * 4 + 8 * 2 + 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub height: usize,
    pub width: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub model: SubspaceModel,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let (p, r) = ck.model.basis.shape();
    if p != ck.height * ck.width {
        return Err(bad(format!("basis has {p} rows for a {}x{} frame", ck.height, ck.width)));
    }
    if ck.model.acc_a.shape() != (r, r) || ck.model.acc_b.shape() != (p, r) {
        return Err(bad("accumulator shapes do not match the basis"));
    }
    let dim = |v: usize| u32::try_from(v).map_err(|_| bad(format!("dimension {v} exceeds u32")));
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * (2 * p * r + r * r));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [ck.height, ck.width, r] {
        out.extend_from_slice(&dim(v)?.to_le_bytes());
    }
    out.extend_from_slice(&ck.lambda1.to_le_bytes());
    out.extend_from_slice(&ck.lambda2.to_le_bytes());
    out.extend_from_slice(&ck.model.frames_seen.to_le_bytes());
    for m in [&ck.model.basis, &ck.model.acc_a, &ck.model.acc_b] {
        for v in m.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < HEADER_LEN {
        return Err(bad("file is shorter than the header"));
    }
    if &bytes[..8] != MAGIC {
        return Err(bad("bad magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(8);
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let (height, width, r) = (u32_at(12) as usize, u32_at(16) as usize, u32_at(20) as usize);
    let lambda1 = f64_at(24);
    let lambda2 = f64_at(32);
    let frames_seen = u64::from_le_bytes(bytes[40..48].try_into().unwrap());
    let p = height
        .checked_mul(width)
        .ok_or_else(|| bad("frame dimensions overflow"))?;
    let floats = p
        .checked_mul(r)
        .and_then(|pr| pr.checked_mul(2))
        .and_then(|n| n.checked_add(r * r))
        .ok_or_else(|| bad("model dimensions overflow"))?;
    let expected = floats.checked_mul(8).and_then(|n| n.checked_add(HEADER_LEN));
    if expected != Some(bytes.len()) {
        return Err(bad(format!("expected {expected:?} bytes, found {}", bytes.len())));
    }
    let mut values = bytes[HEADER_LEN..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut take = |rows: usize, cols: usize| DMatrix::from_iterator(rows, cols, values.by_ref().take(rows * cols));
    let basis = take(p, r);
    let acc_a = take(r, r);
    let acc_b = take(p, r);
    Ok(Checkpoint { height, width, lambda1, lambda2, model: SubspaceModel { basis, acc_a, acc_b, frames_seen } })
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    std::fs::write(path, encode_checkpoint(ck)?)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_subspace_scaled, InitScale};

    fn sample() -> Checkpoint {
        let mut model = init_subspace_scaled(6, 2, 5, InitScale::InvSqrtPixels).unwrap();
        model.acc_a = DMatrix::from_fn(2, 2, |i, j| (i + 2 * j) as f64 - 0.5);
        model.acc_b = DMatrix::from_fn(6, 2, |i, j| (i * j) as f64 * 1e-3);
        model.frames_seen = 17;
        Checkpoint { height: 2, width: 3, lambda1: 0.1, lambda2: 1.0, model }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let bytes = encode_checkpoint(&ck).unwrap();
        assert_eq!(&bytes[..8], b"OLSDCKPT");
        assert_eq!(bytes.len(), HEADER_LEN + 8 * (12 + 4 + 12));
        assert_eq!(decode_checkpoint(&bytes).unwrap(), ck);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = encode_checkpoint(&sample()).unwrap();
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_checkpoint(&bytes[..10]).is_err());
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(decode_checkpoint(&bad_magic).is_err());
        let mut bad_version = bytes;
        bad_version[8] = 9;
        assert!(decode_checkpoint(&bad_version).is_err());
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let mut ck = sample();
        ck.width = 4;
        assert!(encode_checkpoint(&ck).is_err());
    }
}
