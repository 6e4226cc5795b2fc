//! Versioned binary checkpoint format.
//!
//! ```text
//! magic "FODE" | version u32 | config digest [u8; 32] | entry count u32
//! per entry: name length u16 | UTF-8 name | rank u8 | extents u32 * rank | byte offset u64
//! tensor data: f32, entries back to back in canonical order
//! ```
//!
//! All integers and floats are little-endian. Offsets are absolute. There is
//! no checksum in version 1.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::{Model, ModelConfig};
use crate::tensor::{ParameterSet, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"FODE";
pub const CHECKPOINT_VERSION: u32 = 1;

/// SHA-256 over a canonical encoding of the fields that determine parameter
/// shapes. For ode families the iteration count is excluded, so clients that
/// differ only in C share a digest.
pub fn config_digest(config: &ModelConfig) -> [u8; 32] {
    let [s1, s2, s3] = config.stage_channels;
    let canonical = format!(
        "fode-config/1;family={};in={};stem={};stages={s1},{s2},{s3};kernel={};classes={};groups={};blocks={}",
        config.family,
        config.in_channels,
        config.stem_channels,
        config.kernel_size,
        config.num_classes,
        config.norm_groups,
        config.blocks_per_stage(),
    );
    Sha256::digest(canonical.as_bytes()).into()
}

pub fn digest_hex(digest: &[u8; 32]) -> String {
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn header_len(params: &ParameterSet) -> usize {
    let fixed = 4 + 4 + 32 + 4;
    fixed
        + params
            .iter()
            .map(|(name, t)| 2 + name.len() + 1 + 4 * t.shape().len() + 8)
            .sum::<usize>()
}

/// Exact size of [`serialize_params`] output.
pub fn serialized_len(params: &ParameterSet) -> usize {
    header_len(params) + 4 * params.total_elements()
}

pub fn serialize_params(params: &ParameterSet, config: &ModelConfig) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(serialized_len(params));
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&config_digest(config));
    out.extend_from_slice(&u32::try_from(params.len()).map_err(|_| too_many("entries"))?.to_le_bytes());
    let mut offset = header_len(params) as u64;
    for (name, t) in params.iter() {
        let name_len = u16::try_from(name.len()).map_err(|_| too_many("name bytes"))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(u8::try_from(t.shape().len()).map_err(|_| too_many("dimensions"))?);
        for &d in t.shape() {
            out.extend_from_slice(&u32::try_from(d).map_err(|_| too_many("extent"))?.to_le_bytes());
        }
        out.extend_from_slice(&offset.to_le_bytes());
        offset += 4 * t.numel() as u64;
    }
    for (_, t) in params.iter() {
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn too_many(what: &str) -> Error {
    Error::MalformedCheckpoint(format!("{what} exceed the format's field width"))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(Error::Truncated {
            needed: self.pos.saturating_add(n),
            available: self.bytes.len(),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
}

/// Parses a checkpoint, returning the parameters and the stored config digest.
pub fn deserialize_params(bytes: &[u8]) -> Result<(ParameterSet, [u8; 32])> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.array()?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let digest: [u8; 32] = r.array()?;
    let count = r.u32()? as usize;
    let mut records = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::MalformedCheckpoint("entry name is not UTF-8".into()))?
            .to_owned();
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let offset = r.u64()?;
        records.push((name, shape, offset));
    }
    let mut expected = r.pos as u64;
    let mut params = ParameterSet::new();
    for (name, shape, offset) in records {
        if offset != expected {
            return Err(Error::MalformedCheckpoint(format!(
                "entry `{name}` starts at byte {offset}, expected {expected}"
            )));
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::MalformedCheckpoint(format!("entry `{name}` is too large")))?;
        let raw = r.take(numel.checked_mul(4).ok_or_else(|| {
            Error::MalformedCheckpoint(format!("entry `{name}` is too large"))
        })?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
            .collect();
        let tensor = Tensor::new(&shape, data)
            .map_err(|e| Error::MalformedCheckpoint(format!("entry `{name}`: {e}")))?;
        params
            .push(name, tensor)
            .map_err(|e| Error::MalformedCheckpoint(e.to_string()))?;
        expected = r.pos as u64;
    }
    if r.pos != bytes.len() {
        return Err(Error::MalformedCheckpoint(format!(
            "{} trailing bytes after tensor data",
            bytes.len() - r.pos
        )));
    }
    Ok((params, digest))
}

/// Parses a checkpoint and requires it to belong to `config`.
pub fn deserialize_checked(bytes: &[u8], config: &ModelConfig) -> Result<ParameterSet> {
    let (params, digest) = deserialize_params(bytes)?;
    let want = config_digest(config);
    if digest != want {
        return Err(Error::DigestMismatch {
            expected: digest_hex(&want),
            found: digest_hex(&digest),
        });
    }
    Ok(Model::with_params(config, params)?.into_params())
}

pub fn save_checkpoint(path: &Path, params: &ParameterSet, config: &ModelConfig) -> Result<()> {
    let bytes = serialize_params(params, config)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path, config: &ModelConfig) -> Result<ParameterSet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    deserialize_checked(&bytes, config)
}
