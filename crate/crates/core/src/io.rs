//! Tensor container files and JSON checkpoint manifests.
//!
//! Container layout (little-endian): magic `PSTM`, `u32` version (1),
//! `u32` dtype (1 = f64), `u32` ndim, `ndim × u64` extents, row-major payload.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"PSTM";
pub const VERSION: u32 = 1;
pub const DTYPE_F64: u32 = 1;

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * t.ndim() + 8 * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&DTYPE_F64.to_le_bytes());
    out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
    for &d in t.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(CoreError::Format("truncated tensor file".into()));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

fn take_u32(bytes: &mut &[u8]) -> Result<u32> {
    Ok(u32::from_le_bytes(take(bytes, 4)?.try_into().unwrap()))
}

pub fn decode_tensor(mut bytes: &[u8]) -> Result<Tensor> {
    if take(&mut bytes, 4)? != MAGIC {
        return Err(CoreError::Format("bad magic".into()));
    }
    let version = take_u32(&mut bytes)?;
    if version != VERSION {
        return Err(CoreError::Format(format!("unsupported version {version}")));
    }
    let dtype = take_u32(&mut bytes)?;
    if dtype != DTYPE_F64 {
        return Err(CoreError::Format(format!("unsupported dtype {dtype}")));
    }
    let ndim = take_u32(&mut bytes)? as usize;
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let d = u64::from_le_bytes(take(&mut bytes, 8)?.try_into().unwrap());
        dims.push(usize::try_from(d).map_err(|_| CoreError::Format("extent overflow".into()))?);
    }
    let count: usize = dims.iter().product();
    if bytes.len() != count * 8 {
        return Err(CoreError::Format(format!(
            "payload has {} bytes, dims {dims:?} need {}",
            bytes.len(),
            count * 8
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(&dims, data).map_err(|e| CoreError::Format(e.to_string()))
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_tensor(t))?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_tensor(&bytes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub file: String,
}

/// Checkpoint manifest: free-form metadata plus one tensor file per parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub kind: String,
    pub meta: serde_json::Value,
    pub params: Vec<ParamEntry>,
}

pub const CHECKPOINT_MANIFEST: &str = "checkpoint.json";

pub fn save_checkpoint(
    dir: impl AsRef<Path>,
    kind: &str,
    meta: serde_json::Value,
    params: &[(&str, &Tensor)],
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(params.len());
    for (name, t) in params {
        let file = format!("{name}.pstm");
        write_tensor(dir.join(&file), t)?;
        entries.push(ParamEntry {
            name: name.to_string(),
            file,
        });
    }
    let manifest = CheckpointManifest {
        kind: kind.to_string(),
        meta,
        params: entries,
    };
    fs::write(
        dir.join(CHECKPOINT_MANIFEST),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(())
}

pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub tensors: BTreeMap<String, Tensor>,
    pub dir: PathBuf,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| CoreError::Format(format!("checkpoint lacks parameter `{name}`")))
    }

    pub fn take(&mut self, name: &str) -> Result<Tensor> {
        self.tensors
            .remove(name)
            .ok_or_else(|| CoreError::Format(format!("checkpoint lacks parameter `{name}`")))
    }
}

pub fn load_checkpoint(dir: impl AsRef<Path>, kind: &str) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let manifest: CheckpointManifest =
        serde_json::from_str(&fs::read_to_string(dir.join(CHECKPOINT_MANIFEST))?)?;
    if manifest.kind != kind {
        return Err(CoreError::Format(format!(
            "expected a `{kind}` checkpoint, found `{}`",
            manifest.kind
        )));
    }
    let mut tensors = BTreeMap::new();
    for p in &manifest.params {
        tensors.insert(p.name.clone(), read_tensor(dir.join(&p.file))?);
    }
    Ok(Checkpoint {
        manifest,
        tensors,
        dir: dir.to_path_buf(),
    })
}
