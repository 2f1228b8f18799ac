//! Weight checkpoints.
//!
//! Binary layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "LMRTCKPT"
//! version    u32      1
//! count      u32      number of tensors
//! per tensor:
//!   name_len u32, name (UTF-8), rank u32, dims u64 × rank
//! data       f64 × total elements, tensors in table order
//! ```
//!
//! [`save_checkpoint`] also writes `{path}.json` with the shape index and a
//! caller-supplied config value.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"LMRTCKPT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Element offset into the data section.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointIndex {
    pub version: u32,
    pub config: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

pub fn write_checkpoint<W: Write>(mut w: W, tensors: &[(String, Tensor)]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
    }
    for (_, t) in tensors {
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("checkpoint is truncated".into())
    } else {
        Error::Io(e)
    }
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut table = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        if rank > super::MAX_RANK {
            return Err(Error::Format(format!("tensor {name} has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r)? as usize);
        }
        table.push((name, shape));
    }
    let mut out = Vec::with_capacity(table.len());
    for (name, shape) in table {
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes).map_err(truncated)?;
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        out.push((name, Tensor::new(&shape, data)?));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint data".into()));
    }
    Ok(out)
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes the binary checkpoint to `path` and the JSON index to `{path}.json`.
pub fn save_checkpoint(path: &Path, tensors: &[(String, Tensor)], config: serde_json::Value) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, tensors)?;
    fs::write(path, buf)?;
    let mut offset = 0;
    let entries = tensors
        .iter()
        .map(|(name, t)| {
            let e = TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            };
            offset += t.len();
            e
        })
        .collect();
    let index = CheckpointIndex {
        version: VERSION,
        config,
        tensors: entries,
    };
    fs::write(sidecar(path), serde_json::to_string_pretty(&index)? + "\n")?;
    Ok(())
}

/// Reads the binary checkpoint and, if present, its JSON index.
pub fn load_checkpoint(path: &Path) -> Result<(Vec<(String, Tensor)>, Option<CheckpointIndex>)> {
    let tensors = read_checkpoint(fs::File::open(path)?)?;
    let side = sidecar(path);
    let index = if side.exists() {
        let index: CheckpointIndex = serde_json::from_str(&fs::read_to_string(side)?)?;
        let consistent = index.tensors.len() == tensors.len()
            && index.tensors.iter().zip(&tensors).all(|(e, (n, t))| &e.name == n && e.shape == t.shape());
        if !consistent {
            return Err(Error::Format("checkpoint index disagrees with binary table".into()));
        }
        Some(index)
    } else {
        None
    };
    Ok((tensors, index))
}
