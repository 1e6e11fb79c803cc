//! Minimal binary tensor container.
//!
//! Layout: `"TNSR"`, version `u8 = 1`, dtype `u8` (0 = f32, 1 = f64), rank
//! `u8`, one reserved byte, `rank` little-endian `u32` extents, then the
//! row-major payload in little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DType, Scalar, Tensor};

const MAGIC: &[u8; 4] = b"TNSR";
const VERSION: u8 = 1;

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

pub fn encode<T: Scalar>(t: &Tensor<T>) -> Result<Vec<u8>> {
    let rank = u8::try_from(t.rank()).map_err(|_| format_err("rank does not fit in a byte"))?;
    let mut out = Vec::with_capacity(8 + 4 * t.rank() + t.len() * T::DTYPE.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[VERSION, T::DTYPE.code(), rank, 0]);
    for &d in t.shape() {
        let d =
            u32::try_from(d).map_err(|_| format_err(format!("extent {d} does not fit in u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in t.data() {
        v.to_le_bytes_vec(&mut out);
    }
    Ok(out)
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(format_err("missing TNSR magic"));
    }
    if bytes[4] != VERSION {
        return Err(format_err(format!("unsupported TNSR version {}", bytes[4])));
    }
    let dtype = match bytes[5] {
        0 => DType::F32,
        1 => DType::F64,
        c => return Err(format_err(format!("unknown dtype code {c}"))),
    };
    if dtype != T::DTYPE {
        return Err(format_err(format!(
            "file holds {dtype:?}, requested {:?}",
            T::DTYPE
        )));
    }
    let rank = bytes[6] as usize;
    if rank == 0 {
        return Err(format_err("rank-0 tensors are not stored"));
    }
    let header = 8 + 4 * rank;
    if bytes.len() < header {
        return Err(format_err("truncated header"));
    }
    let shape: Vec<usize> = bytes[8..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let n: usize = shape.iter().product();
    let size = dtype.size();
    let payload = &bytes[header..];
    if payload.len() != n * size {
        return Err(format_err(format!(
            "payload has {} bytes, shape {shape:?} needs {}",
            payload.len(),
            n * size
        )));
    }
    let data = payload.chunks_exact(size).map(T::from_le_slice).collect();
    Tensor::new(shape, data).map_err(|e| format_err(e.to_string()))
}

pub fn write_tnsr<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(t)?).map_err(|e| Error::io(path, e))
}

pub fn read_tnsr<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![2, 1], vec![1.0f32, -2.0]).unwrap();
        let b = encode(&t).unwrap();
        assert_eq!(&b[..8], b"TNSR\x01\x00\x02\x00");
        assert_eq!(&b[8..16], &[2, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&b[16..20], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 24);
        assert_eq!(decode::<f32>(&b).unwrap(), t);
    }

    #[test]
    fn rejects_bad_input() {
        let t = Tensor::new(vec![3], vec![1.0f64, 2.0, 3.0]).unwrap();
        let mut b = encode(&t).unwrap();
        assert!(decode::<f32>(&b).is_err());
        assert!(decode::<f64>(&b[..b.len() - 1]).is_err());
        b[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode::<f64>(&b), Err(Error::Format(_))));
        let rank0 = b"TNSR\x01\x01\x00\x00";
        assert!(decode::<f64>(rank0).is_err());
    }
}
