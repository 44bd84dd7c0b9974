//! `TNSR` binary tensor files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"TNSR" | version: u8 = 1 | dtype: u8 = 0 (f32) | rank: u32 | rank x u64 extents | f32 payload
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::Tensor;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"TNSR";
const VERSION: u8 = 1;
const DTYPE_F32: u8 = 0;

pub fn write_tensor<W: Write>(mut w: W, t: &Tensor) -> Result<()> {
    let mut buf = Vec::with_capacity(10 + 8 * t.rank() + 4 * t.numel());
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.push(DTYPE_F32);
    buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &e in t.shape() {
        buf.extend_from_slice(&(e as u64).to_le_bytes());
    }
    for &v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_tensor<R: Read>(mut r: R) -> Result<Tensor> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode(&bytes)
}

fn decode(bytes: &[u8]) -> Result<Tensor> {
    let fail = |m: &str| Error::Format(format!("TNSR: {m}"));
    if bytes.len() < 10 || &bytes[..4] != MAGIC {
        return Err(fail("bad magic"));
    }
    if bytes[4] != VERSION {
        return Err(fail(&format!("unsupported version {}", bytes[4])));
    }
    if bytes[5] != DTYPE_F32 {
        return Err(fail(&format!("unsupported dtype {}", bytes[5])));
    }
    let rank = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let header = 10 + 8 * rank;
    if bytes.len() < header {
        return Err(fail("truncated header"));
    }
    let shape: Vec<usize> =
        (0..rank).map(|i| u64::from_le_bytes(bytes[10 + 8 * i..18 + 8 * i].try_into().unwrap()) as usize).collect();
    let n = shape.iter().try_fold(1usize, |acc, &e| acc.checked_mul(e)).ok_or_else(|| fail("extent overflow"))?;
    if bytes.len() != header + 4 * n {
        return Err(fail(&format!("payload is {} bytes, expected {}", bytes.len() - header, 4 * n)));
    }
    let data = bytes[header..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Tensor::new(shape, data)
}

pub fn save_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_tensor(std::io::BufWriter::new(file), t)
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
