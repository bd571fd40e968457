//! Binary checkpoint serialization for named tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   6 bytes  "FCSNA1"
//! count   u32      number of manifest entries
//! entry*  u32 name_len, name bytes (UTF-8)
//!         u8  dtype tag (0 = f64)
//!         u32 ndim, then ndim * u32 dims
//!         u64 absolute byte offset of the tensor data
//! data    raw little-endian f64 values, tensors packed in manifest order
//! ```
//!
//! The decoder treats input as untrusted: every length is bounds-checked,
//! data regions must be contiguous and exactly cover the rest of the file,
//! and duplicate names, unknown dtypes, or oversized shapes are rejected.

use crate::error::{Error, Result};
use std::path::Path;

pub const MAGIC: &[u8; 6] = b"FCSNA1";

const DTYPE_F64: u8 = 0;
const MAX_NAME_LEN: usize = 4096;
const MAX_NDIM: usize = 8;
const MAX_ENTRIES: usize = 65_536;

/// One named tensor in a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

/// Serializes entries into the checkpoint byte format.
pub fn encode(entries: &[CheckpointEntry]) -> Result<Vec<u8>> {
    if entries.len() > MAX_ENTRIES {
        return Err(bad(format!("too many entries: {}", entries.len())));
    }
    let mut header_len = MAGIC.len() + 4;
    for e in entries {
        if e.name.is_empty() || e.name.len() > MAX_NAME_LEN {
            return Err(bad(format!("invalid name length for '{}'", e.name)));
        }
        if e.shape.len() > MAX_NDIM {
            return Err(bad(format!("'{}': too many dims ({})", e.name, e.shape.len())));
        }
        let count: usize = e.shape.iter().product();
        if count != e.data.len() {
            return Err(bad(format!(
                "'{}': shape {:?} does not match {} values",
                e.name,
                e.shape,
                e.data.len()
            )));
        }
        header_len += 4 + e.name.len() + 1 + 4 + 4 * e.shape.len() + 8;
    }
    let mut out = Vec::with_capacity(header_len);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    let mut offset = header_len as u64;
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(DTYPE_F64);
        out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
        for &d in &e.shape {
            out.extend_from_slice(&u32::try_from(d).map_err(|_| bad("dim too large"))?.to_le_bytes());
        }
        out.extend_from_slice(&offset.to_le_bytes());
        offset += (e.data.len() * 8) as u64;
    }
    debug_assert_eq!(out.len(), header_len);
    for e in entries {
        for &v in &e.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| bad(format!("truncated while reading {what} at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Parses a checkpoint from raw bytes, validating the whole layout before
/// returning any entry.
pub fn decode(bytes: &[u8]) -> Result<Vec<CheckpointEntry>> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if cur.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(bad("bad magic"));
    }
    let count = cur.u32("entry count")? as usize;
    if count > MAX_ENTRIES {
        return Err(bad(format!("entry count {count} exceeds limit")));
    }
    struct RawEntry {
        name: String,
        shape: Vec<usize>,
        offset: u64,
        count: usize,
    }
    let mut raw = Vec::with_capacity(count.min(1024));
    for i in 0..count {
        let name_len = cur.u32("name length")? as usize;
        if name_len == 0 || name_len > MAX_NAME_LEN {
            return Err(bad(format!("entry {i}: invalid name length {name_len}")));
        }
        let name_bytes = cur.take(name_len, "name")?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| bad(format!("entry {i}: name is not UTF-8")))?
            .to_string();
        let dtype = cur.u8("dtype")?;
        if dtype != DTYPE_F64 {
            return Err(bad(format!("entry '{name}': unsupported dtype {dtype}")));
        }
        let ndim = cur.u32("ndim")? as usize;
        if ndim > MAX_NDIM {
            return Err(bad(format!("entry '{name}': ndim {ndim} exceeds limit")));
        }
        let mut shape = Vec::with_capacity(ndim);
        let mut elem_count: usize = 1;
        for _ in 0..ndim {
            let d = cur.u32("dim")? as usize;
            elem_count = elem_count
                .checked_mul(d)
                .filter(|&c| c <= (u32::MAX as usize))
                .ok_or_else(|| bad(format!("entry '{name}': shape overflow")))?;
            shape.push(d);
        }
        let offset = cur.u64("data offset")?;
        if raw.iter().any(|r: &RawEntry| r.name == name) {
            return Err(bad(format!("duplicate entry name '{name}'")));
        }
        raw.push(RawEntry {
            name,
            shape,
            offset,
            count: elem_count,
        });
    }
    // Data regions must be packed contiguously right after the manifest and
    // exactly fill the remainder of the input.
    let mut expected = cur.pos as u64;
    for r in &raw {
        if r.offset != expected {
            return Err(bad(format!(
                "entry '{}': data offset {} but expected {expected}",
                r.name, r.offset
            )));
        }
        expected = expected
            .checked_add((r.count as u64) * 8)
            .ok_or_else(|| bad("data extent overflow"))?;
    }
    if expected != bytes.len() as u64 {
        return Err(bad(format!(
            "file length {} does not match manifest extent {expected}",
            bytes.len()
        )));
    }
    let mut entries = Vec::with_capacity(raw.len());
    for r in raw {
        let start = r.offset as usize;
        let data: Vec<f64> = bytes[start..start + r.count * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push(CheckpointEntry {
            name: r.name,
            shape: r.shape,
            data,
        });
    }
    Ok(entries)
}

pub fn write_file(path: &Path, entries: &[CheckpointEntry]) -> Result<()> {
    let bytes = encode(entries)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_file(path: &Path) -> Result<Vec<CheckpointEntry>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    decode(&bytes)
}
