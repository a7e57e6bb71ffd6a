//! Binary weight files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    4 bytes  "VANW"
//! version  u16      1
//! count    u32      number of entries
//! entry*   name_len u32, name (UTF-8), dtype u8 (0 = f32, 1 = f64),
//!          rank u8, extents u32 * rank, payload (raw little-endian elements)
//! ```
//!
//! Entries appear in model traversal order.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DType, Element};
use crate::van::{skeleton_van, ModelWeights, VanVariant, Visit};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VANW";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn encode_checkpoint<T: Element>(model: &ModelWeights<T>) -> Vec<u8> {
    let entries = model.named_tensors();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(T::DTYPE as u8);
        out.push(e.tensor.rank() as u8);
        for &d in e.tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in e.tensor.data() {
            v.write_le(&mut out);
        }
    }
    out
}

pub fn save_checkpoint<T: Element>(model: &ModelWeights<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Corruption(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

struct RawEntry<'a> {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
    payload: &'a [u8],
}

fn parse(bytes: &[u8]) -> Result<Vec<RawEntry<'_>>> {
    let mut r = Reader { bytes, pos: 0 };
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("missing VANW magic".into()));
    }
    r.pos = 4;
    let version = r.u16("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let count = r.u32("entry count")? as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Format(format!("entry {i} name is not UTF-8")))?
            .to_string();
        let tag = r.u8("dtype")?;
        let dtype = DType::from_tag(tag)
            .ok_or_else(|| Error::Format(format!("entry `{name}` has unknown dtype {tag}")))?;
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("extent")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(dtype.size(), |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Corruption(format!("entry `{name}` size overflows")))?;
        let payload = r.take(n, &format!("payload of `{name}`"))?;
        entries.push(RawEntry {
            name,
            dtype,
            shape,
            payload,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Corruption(format!(
            "{} trailing bytes after the last entry",
            bytes.len() - r.pos
        )));
    }
    Ok(entries)
}

/// Decodes a checkpoint and checks every entry against the tensors `variant`
/// defines, in order. The first disagreement is reported by tensor name.
pub fn decode_checkpoint<T: Element>(
    bytes: &[u8],
    variant: &VanVariant,
) -> Result<ModelWeights<T>> {
    let entries = parse(bytes)?;
    let mut model: ModelWeights<T> = skeleton_van(variant)?;
    let mut k = 0;
    let mut failure: Option<Error> = None;
    model.visit_mut("", &mut |name, _, t| {
        if failure.is_some() {
            return;
        }
        let Some(e) = entries.get(k) else {
            failure = Some(Error::Integrity {
                name: name.to_string(),
                detail: format!("checkpoint ends after {k} entries"),
            });
            return;
        };
        k += 1;
        let problem = if e.name != name {
            Some(format!("checkpoint has `{}` in this position", e.name))
        } else if e.shape != t.shape() {
            Some(format!(
                "shape {:?} in checkpoint, {:?} expected",
                e.shape,
                t.shape()
            ))
        } else if e.dtype != T::DTYPE {
            Some(format!(
                "dtype {:?} in checkpoint, {:?} expected",
                e.dtype,
                T::DTYPE
            ))
        } else {
            None
        };
        if let Some(detail) = problem {
            failure = Some(Error::Integrity {
                name: name.to_string(),
                detail,
            });
            return;
        }
        for (v, chunk) in t
            .data_mut()
            .iter_mut()
            .zip(e.payload.chunks_exact(T::DTYPE.size()))
        {
            *v = T::read_le(chunk);
        }
    });
    if let Some(err) = failure {
        return Err(err);
    }
    if let Some(extra) = entries.get(k) {
        return Err(Error::Integrity {
            name: extra.name.clone(),
            detail: "entry not defined by the variant".into(),
        });
    }
    Ok(model)
}

pub fn load_checkpoint<T: Element>(
    path: impl AsRef<Path>,
    variant: &VanVariant,
) -> Result<ModelWeights<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, variant)
}
