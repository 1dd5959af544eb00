//! Binary parameter archive.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "LINOCKPT"
//! version  u32
//! config   u32 length + UTF-8 `key=value` lines
//! count    u32
//! entry*   u16 name length, name, u8 dtype (1 = f64), u8 rank, u64 extents, f64 payload
//! crc32    u32 over every preceding byte
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use crate::model::{LiNoConfig, LiNoModel, LiNoParams, ModelError};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"LINOCKPT";
pub const VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("cannot access checkpoint {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint integrity check failed: {0}")]
    Integrity(String),
    #[error("not a checkpoint file (bad magic)")]
    Magic,
    #[error("unsupported checkpoint version {found}, expected {VERSION}")]
    Version { found: u32 },
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Serialises a model to bytes.
pub fn encode(model: &LiNoModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let config: String = model
        .config
        .to_pairs()
        .into_iter()
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect();
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    let named = model.params.named();
    out.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, t) in named {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F64);
        out.push(t.rank() as u8);
        for &e in t.shape() {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| CheckpointError::Format(format!("unexpected end at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self, n: usize) -> Result<&'a str, CheckpointError> {
        std::str::from_utf8(self.take(n)?).map_err(|e| CheckpointError::Format(e.to_string()))
    }
}

/// Parses bytes written by [`encode`], checking integrity, version and shapes.
pub fn decode(bytes: &[u8]) -> Result<LiNoModel, CheckpointError> {
    if bytes.len() < MAGIC.len() + 4 + 4 {
        return Err(CheckpointError::Integrity(format!("file is only {} bytes", bytes.len())));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(CheckpointError::Integrity(format!(
            "checksum {actual:08x} does not match stored {stored:08x}"
        )));
    }
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(CheckpointError::Magic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version { found: version });
    }
    let len = r.u32()? as usize;
    let text = r.str(len)?;
    let mut pairs = Vec::new();
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CheckpointError::Format(format!("config line `{line}`")))?;
        pairs.push((k, v));
    }
    let config = LiNoConfig::from_pairs(pairs)?;
    let count = r.u32()? as usize;
    let mut named = Vec::with_capacity(count);
    for _ in 0..count {
        let n = r.u16()? as usize;
        let name = r.str(n)?.to_string();
        let dtype = r.u8()?;
        if dtype != DTYPE_F64 {
            return Err(CheckpointError::Format(format!("`{name}` has unknown dtype {dtype}")));
        }
        let rank = r.u8()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|e| e as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let numel: usize = shape.iter().product();
        let raw = r.take(numel.checked_mul(8).ok_or_else(|| CheckpointError::Format("size overflow".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Format(format!("`{name}`: {e}")))?;
        named.push((name, t));
    }
    if r.pos != body.len() {
        return Err(CheckpointError::Format(format!("{} trailing bytes", body.len() - r.pos)));
    }
    let params = LiNoParams::from_named(&config, named)?;
    Ok(LiNoModel { config, params })
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &LiNoModel) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    fs::write(path, encode(model)).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<LiNoModel, CheckpointError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}

/// Loads a checkpoint and checks it against the configuration the caller expects.
pub fn load_for_config(path: impl AsRef<Path>, expected: &LiNoConfig) -> Result<LiNoModel, CheckpointError> {
    let model = load_checkpoint(path)?;
    let named = model.params.named().into_iter().map(|(n, t)| (n, t.clone())).collect();
    LiNoParams::from_named(expected, named)?;
    Ok(LiNoModel {
        config: expected.clone(),
        params: model.params,
    })
}
