//! On-disk tensor formats.
//!
//! A single tensor is a container: 8-byte magic `AETNSR01`, a 4-byte
//! little-endian header length, a UTF-8 JSON header `{dtype, shape}`,
//! then the row-major payload as little-endian `f32`. An archive
//! (`AEARCH01`) is a JSON manifest of named entries followed by the
//! concatenated containers, used for checkpoints and density models.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const TENSOR_MAGIC: &[u8; 8] = b"AETNSR01";
pub const ARCHIVE_MAGIC: &[u8; 8] = b"AEARCH01";

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    dtype: String,
    shape: Vec<usize>,
}

pub fn write_tensor<W: Write, T: Scalar>(w: &mut W, t: &Tensor<T>) -> Result<()> {
    let header = serde_json::to_vec(&TensorHeader {
        dtype: "f32".to_string(),
        shape: t.shape().to_vec(),
    })?;
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    for &v in t.data() {
        w.write_all(&(v.to_f64() as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor<R: Read, T: Scalar>(r: &mut R) -> Result<Tensor<T>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::Format(format!(
            "bad tensor magic {:?}",
            String::from_utf8_lossy(&magic)
        )));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let hlen = u32::from_le_bytes(len) as usize;
    let mut hbuf = vec![0u8; hlen];
    r.read_exact(&mut hbuf)?;
    let header: TensorHeader = serde_json::from_slice(&hbuf)?;
    if header.dtype != "f32" {
        return Err(Error::Format(format!("unsupported dtype '{}'", header.dtype)));
    }
    let n: usize = header.shape.iter().product();
    let mut payload = vec![0u8; 4 * n];
    r.read_exact(&mut payload)?;
    let data: Vec<T> = payload
        .chunks_exact(4)
        .map(|c| T::from_f64(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    Tensor::new(header.shape, data)
}

pub fn save_tensor<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    write_tensor(&mut f, t)
}

pub fn load_tensor<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let mut f = std::fs::File::open(path)?;
    read_tensor(&mut f)
}

/// Named tensors plus a free-form JSON metadata blob, in one file.
/// Entries are stored sorted by name so equal contents give equal bytes.
pub struct Archive<T> {
    pub entries: BTreeMap<String, Tensor<T>>,
    pub metadata: serde_json::Value,
}

impl<T: Scalar> Default for Archive<T> {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Serialize, Deserialize)]
struct ArchiveManifest {
    names: Vec<String>,
    metadata: serde_json::Value,
}

impl<T: Scalar> Archive<T> {
    pub fn new() -> Self {
        Archive {
            entries: BTreeMap::new(),
            metadata: serde_json::Value::Null,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.entries.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Format(format!("archive entry '{name}' missing")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        let manifest = serde_json::to_vec(&ArchiveManifest {
            names: self.entries.keys().cloned().collect(),
            metadata: self.metadata.clone(),
        })?;
        f.write_all(ARCHIVE_MAGIC)?;
        f.write_all(&(manifest.len() as u32).to_le_bytes())?;
        f.write_all(&manifest)?;
        for t in self.entries.values() {
            write_tensor(&mut f, t)?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut f = std::fs::File::open(path)?;
        let mut magic = [0u8; 8];
        f.read_exact(&mut magic)?;
        if &magic != ARCHIVE_MAGIC {
            return Err(Error::Format(format!(
                "bad archive magic {:?}",
                String::from_utf8_lossy(&magic)
            )));
        }
        let mut len = [0u8; 4];
        f.read_exact(&mut len)?;
        let mlen = u32::from_le_bytes(len) as usize;
        let mut mbuf = vec![0u8; mlen];
        f.read_exact(&mut mbuf)?;
        let manifest: ArchiveManifest = serde_json::from_slice(&mbuf)?;
        let mut entries = BTreeMap::new();
        for name in manifest.names {
            entries.insert(name, read_tensor(&mut f)?);
        }
        Ok(Archive {
            entries,
            metadata: manifest.metadata,
        })
    }
}
