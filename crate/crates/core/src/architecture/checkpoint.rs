//! Binary checkpoint format. All integers and floats are little-endian.
//!
//! ```text
//! magic           8 bytes  "MININETC"
//! version         u32
//! in_channels     u32
//! base_width      u32
//! depthwise       u8       0 or 1
//! squeeze_ratio   u32
//! seed            u64
//! epoch           u32
//! stale_epochs    u32
//! best_val_loss   f64
//! alpha           f64
//! tensor_count    u32
//! tensor_count × { name_len u16, name utf-8, kind u8, rank u8,
//!                  dims u32 × rank, offset u64, len u64 }
//! blob_len        u64
//! blob            f32 × (blob_len / 4)
//! ```
//!
//! `offset` and `len` count bytes within the blob. `kind` is 0 for trainable
//! tensors and 1 for batch-norm running statistics.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::architecture::model::{MiniNet, ModelConfig};
use crate::architecture::params::ParamKind;
use crate::error::{CheckpointError, Error, Result};

pub const MAGIC: &[u8; 8] = b"MININETC";
pub const FORMAT_VERSION: u32 = 1;

/// Training progress stored alongside the weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainingCursor {
    /// Epochs completed.
    pub epoch: u32,
    /// Consecutive epochs without validation improvement.
    pub stale_epochs: u32,
    pub best_val_loss: f64,
    /// Alpha used in the last completed epoch.
    pub alpha: f64,
}

impl Default for TrainingCursor {
    fn default() -> Self {
        TrainingCursor {
            epoch: 0,
            stale_epochs: 0,
            best_val_loss: f64::INFINITY,
            alpha: 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: MiniNet,
    pub cursor: TrainingCursor,
}

pub fn encode(model: &MiniNet, cursor: &TrainingCursor) -> Vec<u8> {
    let cfg = model.config();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(cfg.in_channels as u32).to_le_bytes());
    out.extend_from_slice(&(cfg.base_width as u32).to_le_bytes());
    out.push(cfg.depthwise_multiscale as u8);
    out.extend_from_slice(&(cfg.squeeze_ratio as u32).to_le_bytes());
    out.extend_from_slice(&cfg.seed.to_le_bytes());
    out.extend_from_slice(&cursor.epoch.to_le_bytes());
    out.extend_from_slice(&cursor.stale_epochs.to_le_bytes());
    out.extend_from_slice(&cursor.best_val_loss.to_le_bytes());
    out.extend_from_slice(&cursor.alpha.to_le_bytes());

    let store = model.store();
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for (_, p) in store.iter() {
        out.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.kind.code());
        out.push(p.tensor.shape().len() as u8);
        for d in p.tensor.shape() {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        let len = 4 * p.tensor.numel() as u64;
        out.extend_from_slice(&offset.to_le_bytes());
        out.extend_from_slice(&len.to_le_bytes());
        offset += len;
    }
    out.extend_from_slice(&offset.to_le_bytes());
    for (_, p) in store.iter() {
        for v in p.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Truncated(format!(
                "{what} needs {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N], CheckpointError> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn u8(&mut self, what: &str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.array(what)?))
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }

    fn f64(&mut self, what: &str) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.array(what)?))
    }
}

fn config_mismatch(field: &str, expected: usize, found: usize) -> CheckpointError {
    CheckpointError::ShapeMismatch {
        name: format!("config.{field}"),
        expected: vec![expected],
        found: vec![found],
    }
}

/// Parses a checkpoint. With `expected`, the embedded architecture must
/// match it (the seed is not compared).
pub fn decode(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<Checkpoint, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r
        .array::<8>("magic")
        .map_err(|_| CheckpointError::Version("file too short for magic bytes".into()))?;
    if &magic != MAGIC {
        return Err(CheckpointError::Version(format!(
            "bad magic bytes {magic:?}"
        )));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version(format!(
            "format version {version}, this build reads {FORMAT_VERSION}"
        )));
    }
    let in_channels = r.u32("in_channels")? as usize;
    let base_width = r.u32("base_width")? as usize;
    let depthwise = match r.u8("depthwise")? {
        0 => false,
        1 => true,
        b => return Err(CheckpointError::Malformed(format!("depthwise flag {b}"))),
    };
    let squeeze_ratio = r.u32("squeeze_ratio")? as usize;
    let seed = r.u64("seed")?;
    let config = ModelConfig {
        in_channels,
        base_width,
        depthwise_multiscale: depthwise,
        squeeze_ratio,
        seed,
    };
    if let Some(want) = expected {
        if want.in_channels != config.in_channels {
            return Err(config_mismatch(
                "in_channels",
                want.in_channels,
                config.in_channels,
            ));
        }
        if want.base_width != config.base_width {
            return Err(config_mismatch(
                "base_width",
                want.base_width,
                config.base_width,
            ));
        }
        if want.depthwise_multiscale != config.depthwise_multiscale {
            return Err(config_mismatch(
                "depthwise_multiscale",
                want.depthwise_multiscale as usize,
                config.depthwise_multiscale as usize,
            ));
        }
        if want.squeeze_ratio != config.squeeze_ratio {
            return Err(config_mismatch(
                "squeeze_ratio",
                want.squeeze_ratio,
                config.squeeze_ratio,
            ));
        }
    }
    let cursor = TrainingCursor {
        epoch: r.u32("epoch")?,
        stale_epochs: r.u32("stale_epochs")?,
        best_val_loss: r.f64("best_val_loss")?,
        alpha: r.f64("alpha")?,
    };

    let mut model = MiniNet::new(config)
        .map_err(|e| CheckpointError::Malformed(format!("embedded config: {e}")))?;
    let count = r.u32("tensor_count")? as usize;
    if count != model.store().len() {
        return Err(CheckpointError::Malformed(format!(
            "{count} tensors, architecture has {}",
            model.store().len()
        )));
    }
    let mut entries = Vec::with_capacity(count);
    for (id, param) in model.store().iter() {
        let name_len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| CheckpointError::Malformed("tensor name is not utf-8".into()))?
            .to_string();
        if name != param.name {
            return Err(CheckpointError::Malformed(format!(
                "tensor '{name}' where '{}' was expected",
                param.name
            )));
        }
        let kind = ParamKind::from_code(r.u8("tensor kind")?)
            .ok_or_else(|| CheckpointError::Malformed(format!("unknown kind for '{name}'")))?;
        if kind != param.kind {
            return Err(CheckpointError::Malformed(format!(
                "'{name}' has the wrong kind"
            )));
        }
        let rank = r.u8("tensor rank")? as usize;
        let dims = (0..rank)
            .map(|_| r.u32("tensor dims").map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        if dims != param.tensor.shape() {
            return Err(CheckpointError::ShapeMismatch {
                name,
                expected: param.tensor.shape().to_vec(),
                found: dims,
            });
        }
        let offset = r.u64("tensor offset")?;
        let len = r.u64("tensor length")?;
        if len != 4 * param.tensor.numel() as u64 {
            return Err(CheckpointError::Malformed(format!(
                "'{name}' blob length {len}"
            )));
        }
        entries.push((id, offset, len));
    }
    let blob_len = r.u64("blob length")?;
    let blob = r.take(blob_len as usize, "tensor blob")?;
    if r.pos != bytes.len() {
        return Err(CheckpointError::Malformed(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    for (id, offset, len) in entries {
        let end = offset
            .checked_add(len)
            .filter(|e| *e <= blob_len)
            .ok_or_else(|| {
                CheckpointError::Truncated(format!(
                    "tensor range {offset}+{len} exceeds blob of {blob_len} bytes"
                ))
            })?;
        let raw = &blob[offset as usize..end as usize];
        let dst = model.store_mut().tensor_mut(id).data_mut();
        for (d, chunk) in dst.iter_mut().zip(raw.chunks_exact(4)) {
            *d = f32::from_le_bytes(chunk.try_into().expect("chunk of 4"));
        }
    }
    Ok(Checkpoint { model, cursor })
}

/// Writes through a temporary sibling file and renames it into place.
pub fn save(path: &Path, model: &MiniNet, cursor: &TrainingCursor) -> Result<()> {
    let bytes = encode(model, cursor);
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    decode(&bytes, None).map_err(Error::from)
}

pub fn load_expecting(path: &Path, config: &ModelConfig) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    decode(&bytes, Some(config)).map_err(Error::from)
}
