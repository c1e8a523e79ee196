//! Binary cache of preprocessed examples.
//!
//! Layout (little-endian): magic `HHHFLDS\0`, `u32` version, `u64` count, then
//! per example `u8` device code, `u8` label, `u32` dim, `dim` x `f64`.

use std::io::{Read, Write};
use std::path::Path;

use super::device::DeviceKind;
use super::preprocess::LabeledExample;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"HHHFLDS\0";
pub const CACHE_VERSION: u32 = 1;

pub fn encode_examples(examples: &[LabeledExample]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    out.extend_from_slice(&(examples.len() as u64).to_le_bytes());
    for ex in examples {
        out.push(ex.device.code());
        out.push(ex.label as u8);
        out.extend_from_slice(&(ex.features.len() as u32).to_le_bytes());
        for v in &ex.features {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Serialization(format!("cache truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_examples(buf: &[u8]) -> Result<Vec<LabeledExample>> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(Error::Serialization("not an example cache (bad magic)".into()));
    }
    let version = c.u32()?;
    if version != CACHE_VERSION {
        return Err(Error::Serialization(format!(
            "cache version {version}, expected {CACHE_VERSION}"
        )));
    }
    let count = c.u64()?;
    let mut out = Vec::new();
    for _ in 0..count {
        let device = DeviceKind::from_code(c.u8()?)
            .ok_or_else(|| Error::Serialization("bad device code in cache".into()))?;
        let label = c.u8()? as usize;
        if label > 1 {
            return Err(Error::Serialization(format!("bad label {label} in cache")));
        }
        let dim = c.u32()? as usize;
        let raw = c.take(dim.checked_mul(8).ok_or_else(|| Error::Serialization("dim overflow".into()))?)?;
        let features = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        out.push(LabeledExample {
            features,
            label,
            device,
        });
    }
    if c.pos != buf.len() {
        return Err(Error::Serialization("trailing bytes after cache payload".into()));
    }
    Ok(out)
}

pub fn write_cache(path: &Path, examples: &[LabeledExample]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_examples(examples))
        .map_err(|e| Error::io(path, e))
}

pub fn read_cache(path: &Path) -> Result<Vec<LabeledExample>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    decode_examples(&buf)
}
