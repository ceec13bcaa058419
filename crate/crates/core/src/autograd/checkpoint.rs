//! `SFCKPT1` parameter checkpoints.
//!
//! ```text
//! magic      8 bytes   "SFCKPT1\n"
//! meta_len   u32 LE    length of the UTF-8 metadata blob
//! meta       bytes     opaque to this crate (the CLI stores its JSON config)
//! count      u32 LE    number of manifest entries
//! entry*     u16 LE name_len, name bytes, u8 rank, rank × u32 LE dims,
//!            u64 LE byte offset into the data section
//! data       f32 LE values, entries back to back in manifest order
//! ```

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::params::ParamSet;
use super::tensor::Tensor;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SFCKPT1\n";

pub fn encode(params: &ParamSet, meta: &str) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&offset.to_le_bytes());
        offset += 4 * t.len() as u64;
    }
    for (_, t) in params.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn text(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }
}

/// Decode a checkpoint into its parameters and metadata blob.
pub fn decode(bytes: &[u8]) -> Result<(ParamSet, String)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("bad magic, expected SFCKPT1".into()));
    }
    let meta_len = r.u32()? as usize;
    let meta = r.text(meta_len)?;
    let count = r.u32()? as usize;
    let mut manifest = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = r.text(name_len)?;
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let offset = r.u64()? as usize;
        manifest.push((name, shape, offset));
    }
    let data = &bytes[r.pos..];
    let mut params = ParamSet::new();
    for (name, shape, offset) in manifest {
        let n: usize = shape.iter().product();
        let end = offset
            .checked_add(4 * n)
            .filter(|&e| e <= data.len())
            .ok_or_else(|| Error::Checkpoint(format!("data for `{name}` out of bounds")))?;
        let values = data[offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.add(&name, Tensor::new(&shape, values)?);
    }
    Ok((params, meta))
}
