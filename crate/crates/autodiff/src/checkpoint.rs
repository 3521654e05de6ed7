//! Named-tensor container.
//!
//! Layout (all little-endian): magic `CADCKPT1`, `u32` header length and
//! UTF-8 header, `u32` tensor count, then per tensor `u32` name length,
//! name, `u32` rank, `u64` dims, `f32` values.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::AutodiffError;
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"CADCKPT1";

const MAX_RANK: u32 = 8;

fn bad(msg: impl Into<String>) -> AutodiffError {
    AutodiffError::Checkpoint(msg.into())
}

pub fn encode_checkpoint(header: &str, params: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + header.len() + params.num_scalars() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], AutodiffError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| bad("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, AutodiffError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, AutodiffError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, n: usize) -> Result<String, AutodiffError> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| bad("invalid UTF-8"))
    }
}

/// Returns the header and the tensors in file order.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(String, ParamStore), AutodiffError> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(8).map_err(|_| bad("missing magic"))? != MAGIC {
        return Err(bad("bad magic"));
    }
    let hlen = c.u32()? as usize;
    let header = c.string(hlen)?;
    let count = c.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let nlen = c.u32()? as usize;
        let name = c.string(nlen)?;
        let rank = c.u32()?;
        if rank == 0 || rank > MAX_RANK {
            return Err(bad(format!("`{name}`: rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        let mut n: usize = 1;
        for _ in 0..rank {
            let d = usize::try_from(c.u64()?).map_err(|_| bad("dimension overflow"))?;
            n = n.checked_mul(d).ok_or_else(|| bad("dimension overflow"))?;
            shape.push(d);
        }
        let raw = c.take(n.checked_mul(4).ok_or_else(|| bad("dimension overflow"))?)?;
        let data: Vec<f64> =
            raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64).collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(bad(format!("`{name}`: non-finite value")));
        }
        let t = Tensor::new(shape, data).map_err(|e| bad(format!("`{name}`: {e}")))?;
        store.add(name, t)?;
    }
    if c.pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok((header, store))
}

pub fn save_checkpoint(path: &Path, header: &str, params: &ParamStore) -> Result<(), AutodiffError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_checkpoint(header, params))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(String, ParamStore), AutodiffError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}
