use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in elements.
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub dtype: String,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Writes `<stem>.json` (manifest) and `<stem>.bin` (little-endian f64 blob).
pub fn save_checkpoint(stem: &Path, tensors: &[Tensor]) -> Result<()> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut blob = Vec::new();
    let mut offset = 0;
    for t in tensors {
        if t.shape.iter().product::<usize>() != t.data.len() {
            return Err(Error::Shape(format!("tensor {} shape {:?} vs {} values", t.name, t.shape, t.data.len())));
        }
        entries.push(TensorEntry { name: t.name.clone(), shape: t.shape.clone(), offset, len: t.data.len() });
        offset += t.data.len();
        for x in &t.data {
            blob.extend_from_slice(&x.to_le_bytes());
        }
    }
    let manifest = Manifest { version: CHECKPOINT_VERSION, dtype: "f64-le".into(), tensors: entries };
    fs::write(stem.with_extension("json"), serde_json::to_vec_pretty(&manifest)?)?;
    fs::write(stem.with_extension("bin"), blob)?;
    Ok(())
}

pub fn load_checkpoint(stem: &Path) -> Result<Vec<Tensor>> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(stem.with_extension("json"))?)?;
    if manifest.version != CHECKPOINT_VERSION || manifest.dtype != "f64-le" {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {} / dtype {}",
            manifest.version, manifest.dtype
        )));
    }
    let blob = fs::read(stem.with_extension("bin"))?;
    manifest
        .tensors
        .into_iter()
        .map(|e| {
            let (lo, hi) = (e.offset * 8, (e.offset + e.len) * 8);
            let bytes = blob
                .get(lo..hi)
                .ok_or_else(|| Error::Format(format!("tensor {} runs past the blob", e.name)))?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            Ok(Tensor { name: e.name, shape: e.shape, data })
        })
        .collect()
}
