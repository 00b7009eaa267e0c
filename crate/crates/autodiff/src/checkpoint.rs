//! Binary container of named tensors.
//!
//! Layout (little endian):
//! `"HISTCKPT"`, `u32` version, `u8` element tag, `u32` entry count, then per
//! entry `u32` name length, UTF-8 name, `u32` rank, `u64` per dimension and
//! the row-major values. Values are stored verbatim, so a save/load cycle is
//! bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use crate::element::Element;
use crate::error::{AutodiffError, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"HISTCKPT";
const VERSION: u32 = 1;

pub fn encode<T: Element>(entries: &[(String, Tensor<T>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::TAG);
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, tensor) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&2u32.to_le_bytes());
        out.extend_from_slice(&(tensor.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(tensor.cols() as u64).to_le_bytes());
        for &v in tensor.data() {
            v.write_le(&mut out);
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(AutodiffError::Checkpoint("truncated file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode<T: Element>(bytes: &[u8]) -> Result<Vec<(String, Tensor<T>)>> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8)? != MAGIC {
        return Err(AutodiffError::Checkpoint("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(AutodiffError::Checkpoint(format!("unsupported version {version}")));
    }
    let tag = cur.take(1)?[0];
    if tag != T::TAG {
        return Err(AutodiffError::Checkpoint(format!(
            "element tag {tag} does not match requested {}",
            T::NAME
        )));
    }
    let count = cur.u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|e| AutodiffError::Checkpoint(format!("parameter name: {e}")))?
            .to_string();
        let rank = cur.u32()?;
        if rank != 2 {
            return Err(AutodiffError::Checkpoint(format!("{name}: rank {rank}")));
        }
        let rows = cur.u64()? as usize;
        let cols = cur.u64()? as usize;
        let raw = cur.take(rows * cols * T::BYTES)?;
        let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
        entries.push((name, Tensor::new(rows, cols, data)?));
    }
    if cur.pos != bytes.len() {
        return Err(AutodiffError::Checkpoint("trailing bytes".into()));
    }
    Ok(entries)
}

pub fn write<T: Element>(mut w: impl Write, entries: &[(String, Tensor<T>)]) -> Result<()> {
    w.write_all(&encode(entries))?;
    Ok(())
}

pub fn read<T: Element>(mut r: impl Read) -> Result<Vec<(String, Tensor<T>)>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode(&bytes)
}

pub fn save<T: Element>(path: impl AsRef<Path>, entries: &[(String, Tensor<T>)]) -> Result<()> {
    std::fs::write(path, encode(entries))?;
    Ok(())
}

pub fn load<T: Element>(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor<T>)>> {
    decode(&std::fs::read(path)?)
}
