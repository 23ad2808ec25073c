//! The WSFT binary tensor format.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content                                   |
//! |-------|-------------------------------------------|
//! | 4     | magic `WSFT` (`57 53 46 54`)              |
//! | 4     | version, `u32` = 1                        |
//! | 1     | dtype, `0` = binary32, `1` = binary64     |
//! | 1     | rank, always 4                            |
//! | 16    | extents n, c, h, w as `u32`               |
//! | rest  | row-major payload in the stored dtype     |

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Result, TensorError};
use crate::tensor::{DType, Shape, Tensor};

pub const MAGIC: [u8; 4] = *b"WSFT";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 1 + 1 + 16;

pub fn encode(t: &Tensor) -> Vec<u8> {
    let width = match t.dtype() {
        DType::F32 => 4,
        DType::F64 => 8,
    };
    let mut out = Vec::with_capacity(HEADER_LEN + width * t.data().len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(match t.dtype() {
        DType::F32 => 0,
        DType::F64 => 1,
    });
    out.push(4);
    for d in t.shape().dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    match t.dtype() {
        DType::F32 => t
            .data()
            .iter()
            .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        DType::F64 => t
            .data()
            .iter()
            .for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
    }
    out
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < HEADER_LEN {
        return Err(TensorError::Format(format!(
            "{} bytes is shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if bytes[..4] != MAGIC {
        return Err(TensorError::Format("bad magic".into()));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(TensorError::Format(format!("unsupported version {version}")));
    }
    let (dtype, width) = match bytes[8] {
        0 => (DType::F32, 4),
        1 => (DType::F64, 8),
        other => return Err(TensorError::Format(format!("unknown dtype tag {other}"))),
    };
    if bytes[9] != 4 {
        return Err(TensorError::Format(format!("rank {} is not 4", bytes[9])));
    }
    let dims: Vec<usize> = (0..4).map(|i| u32_at(bytes, 10 + 4 * i) as usize).collect();
    let shape = Shape::new(dims[0], dims[1], dims[2], dims[3])
        .map_err(|e| TensorError::Format(e.to_string()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != shape.numel() * width {
        return Err(TensorError::Format(format!(
            "payload has {} bytes, expected {}",
            payload.len(),
            shape.numel() * width
        )));
    }
    let data: Vec<f64> = match dtype {
        DType::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
        DType::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    };
    Tensor::new(shape, dtype, data)
}

pub fn write<W: Write>(t: &Tensor, mut w: W) -> Result<()> {
    w.write_all(&encode(t))?;
    Ok(())
}

pub fn read<R: Read>(mut r: R) -> Result<Tensor> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode(&bytes)
}

pub fn save(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    fs::write(path, encode(t))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
    decode(&fs::read(path)?)
}
