//! Binary checkpoint format (little-endian):
//!
//! ```text
//! magic "CGANCKPT" | version u32 | config_len u64 | config JSON
//! | step u64 | n_arrays u32 | { name_len u32, name, ndim u32, dims u64*, f64* }*
//! | n_bytes u32 | { name_len u32, name, len u64, bytes }*
//! | sha256 of everything above (32 bytes)
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use super::config::TrainingConfig;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CGANCKPT";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedBytes {
    pub name: String,
    pub bytes: Vec<u8>,
}

/// Complete training state at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRecord {
    pub version: u32,
    pub config: TrainingConfig,
    pub step: u64,
    pub arrays: Vec<NamedArray>,
    pub bytes: Vec<NamedBytes>,
}

impl CheckpointRecord {
    pub fn array(&self, name: &str) -> Result<&NamedArray> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks array '{name}'")))
    }

    pub fn byte_array(&self, name: &str) -> Result<&[u8]> {
        self.bytes
            .iter()
            .find(|b| b.name == name)
            .map(|b| b.bytes.as_slice())
            .ok_or_else(|| Error::Format(format!("checkpoint lacks byte array '{name}'")))
    }

    pub fn u64_value(&self, name: &str) -> Result<u64> {
        let b = self.byte_array(name)?;
        let raw: [u8; 8] = b
            .try_into()
            .map_err(|_| Error::Format(format!("'{name}' is not a u64")))?;
        Ok(u64::from_le_bytes(raw))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        let cfg = serde_json::to_vec(&self.config).expect("config serializes");
        out.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
        out.extend_from_slice(&cfg);
        out.extend_from_slice(&self.step.to_le_bytes());

        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for a in &self.arrays {
            put_name(&mut out, &a.name);
            out.extend_from_slice(&(a.shape.len() as u32).to_le_bytes());
            for &d in &a.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &a.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.bytes.len() as u32).to_le_bytes());
        for b in &self.bytes {
            put_name(&mut out, &b.name);
            out.extend_from_slice(&(b.bytes.len() as u64).to_le_bytes());
            out.extend_from_slice(&b.bytes);
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < MAGIC.len() + 4 + DIGEST_LEN {
            return Err(Error::Format("checkpoint is truncated".into()));
        }
        if &buf[..MAGIC.len()] != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(buf[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let (body, digest) = buf.split_at(buf.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Format("checkpoint checksum mismatch (corrupt or truncated)".into()));
        }

        let mut cur = Cursor { buf: body, pos: 12 };
        let cfg_len = cur.u64()? as usize;
        let cfg_bytes = cur.take(cfg_len)?;
        let config: TrainingConfig =
            serde_json::from_slice(cfg_bytes).map_err(|e| Error::Format(format!("config block: {e}")))?;
        let step = cur.u64()?;

        let n_arrays = cur.u32()? as usize;
        let mut arrays = Vec::with_capacity(n_arrays.min(1024));
        for _ in 0..n_arrays {
            let name = cur.name()?;
            let ndim = cur.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim.min(8));
            for _ in 0..ndim {
                shape.push(cur.u64()? as usize);
            }
            let count = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Format("array size overflow".into()))?;
            let raw = cur.take(count.checked_mul(8).ok_or_else(|| Error::Format("array size overflow".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            arrays.push(NamedArray { name, shape, data });
        }
        let n_bytes = cur.u32()? as usize;
        let mut bytes = Vec::with_capacity(n_bytes.min(1024));
        for _ in 0..n_bytes {
            let name = cur.name()?;
            let len = cur.u64()? as usize;
            bytes.push(NamedBytes {
                name,
                bytes: cur.take(len)?.to_vec(),
            });
        }
        if cur.pos != body.len() {
            return Err(Error::Format("trailing bytes after checkpoint body".into()));
        }
        Ok(Self {
            version,
            config,
            step,
            arrays,
            bytes,
        })
    }
}

fn put_name(out: &mut Vec<u8>, name: &str) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
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
            .ok_or_else(|| Error::Format("checkpoint is truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn name(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| Error::Format("name is not UTF-8".into()))
    }
}

pub fn save_checkpoint(record: &CheckpointRecord, path: &Path) -> Result<()> {
    std::fs::write(path, record.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<CheckpointRecord> {
    CheckpointRecord::from_bytes(&std::fs::read(path)?)
}
