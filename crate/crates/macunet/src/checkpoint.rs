//! Binary checkpoints.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "MACU"  u32 version
//! u8 variant  u32 levels  u32 base_width  u32 classes  u32 in_channels  u32 cab_ratio  u8 fused
//! u32 tensor count
//! per tensor, sorted by name:
//!     u16 name length, UTF-8 name, u8 rank, u32 dims[rank], f32 payload
//! u32 CRC32 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use macunet_core::{Network, NetworkConfig, Scalar, Tensor, Variant};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MACU";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint format version {found} is not supported (expected {VERSION})")]
    Version { found: u32 },
    #[error("checkpoint ends early at byte {offset}")]
    Truncated { offset: usize },
    #[error("checkpoint checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Integrity { stored: u32, computed: u32 },
    #[error("checkpoint was saved for {found}, expected {expected}")]
    ConfigMismatch { expected: String, found: String },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

fn describe(cfg: &NetworkConfig, fused: bool) -> String {
    format!(
        "{} (levels {}, base width {}, classes {}, inputs {}, ratio {}{})",
        cfg.variant,
        cfg.levels,
        cfg.base_width,
        cfg.classes,
        cfg.in_channels,
        cfg.cab_ratio,
        if fused { ", fused" } else { "" }
    )
}

/// Serializes every parameter and running statistic as f32.
pub fn encode<T: Scalar>(net: &Network<T>) -> Vec<u8> {
    let cfg = net.config();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(cfg.variant.code());
    for v in [cfg.levels, cfg.base_width, cfg.classes, cfg.in_channels, cfg.cab_ratio] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.push(u8::from(net.is_fused()));

    let mut entries: Vec<_> = net.store().entries().iter().collect();
    entries.sort_by(|a, b| a.name.cmp(&b.name));
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        let name = e.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        let dims = e.tensor.dims();
        out.push(dims.len() as u8);
        for d in dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in e.tensor.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CheckpointError::Truncated { offset: self.bytes.len() })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

struct Parsed {
    cfg: NetworkConfig,
    fused: bool,
    tensors: Vec<(String, Tensor<f32>)>,
}

fn parse(bytes: &[u8]) -> Result<Parsed, CheckpointError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    // Structure is read from the body; the trailing checksum is verified after.
    let body_len = bytes.len().saturating_sub(4);
    let mut r = Reader { bytes: &bytes[..body_len], pos: 4 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version { found: version });
    }
    let code = r.u8()?;
    let variant = Variant::from_code(code).ok_or_else(|| CheckpointError::Malformed(format!("variant code {code}")))?;
    let mut fields = [0usize; 5];
    for f in &mut fields {
        *f = r.u32()? as usize;
    }
    let [levels, base_width, classes, in_channels, cab_ratio] = fields;
    let cfg = NetworkConfig { levels, base_width, classes, in_channels, variant, cab_ratio };
    let fused = match r.u8()? {
        0 => false,
        1 => true,
        b => return Err(CheckpointError::Malformed(format!("fused flag {b}"))),
    };
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u8()? as usize;
        if rank > 4 {
            return Err(CheckpointError::Malformed(format!("`{name}` has rank {rank}")));
        }
        let mut dims = [1usize; 4];
        for d in &mut dims[4 - rank..] {
            *d = r.u32()? as usize;
        }
        let numel: usize = dims.iter().product();
        let payload = r.take(numel.checked_mul(4).ok_or(CheckpointError::Truncated { offset: r.pos })?)?;
        let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let tensor = Tensor::from_vec(dims, data).expect("length matches dims");
        tensors.push((name, tensor));
    }
    if r.pos != body_len || bytes.len() < r.pos + 4 {
        return Err(if bytes.len() < r.pos + 4 {
            CheckpointError::Truncated { offset: bytes.len() }
        } else {
            CheckpointError::Malformed(format!("{} unexpected trailing bytes", body_len - r.pos))
        });
    }
    let stored = u32::from_le_bytes(bytes[body_len..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(&bytes[..body_len]);
    if stored != computed {
        return Err(CheckpointError::Integrity { stored, computed });
    }
    Ok(Parsed { cfg, fused, tensors })
}

/// Rebuilds a network from checkpoint bytes. With `expected` set, the stored
/// configuration must match it.
pub fn decode<T: Scalar>(bytes: &[u8], expected: Option<&NetworkConfig>) -> Result<Network<T>> {
    let parsed = parse(bytes)?;
    if let Some(exp) = expected {
        if exp != &parsed.cfg {
            return Err(CheckpointError::ConfigMismatch {
                expected: describe(exp, false),
                found: describe(&parsed.cfg, parsed.fused),
            }
            .into());
        }
    }
    let mut net = Network::<T>::build(parsed.cfg, 0)?;
    if parsed.fused {
        net = net.fuse()?;
    }
    if parsed.tensors.len() != net.store().len() {
        return Err(CheckpointError::Malformed(format!(
            "{} tensors stored, the network has {}",
            parsed.tensors.len(),
            net.store().len()
        ))
        .into());
    }
    for (name, tensor) in parsed.tensors {
        net.set_param(&name, tensor.cast()).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    }
    Ok(net)
}

pub fn save<T: Scalar>(net: &Network<T>, path: &Path) -> Result<()> {
    crate::dataset::write_bytes(path, &encode(net))
}

pub fn load<T: Scalar>(path: &Path, expected: Option<&NetworkConfig>) -> Result<Network<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, expected)
}
