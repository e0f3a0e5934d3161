//! Single-file container for a JSON header plus named `f32` arrays.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes   b"ACYCARC1"
//! header_len u64       length of the JSON header in bytes
//! header     JSON      {"meta": <caller data>, "arrays": [{"name", "shape", "offset", "len"}, ...]}
//! payload    f32 LE    arrays back to back, row-major; offset/len count f32 values
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"ACYCARC1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header<M> {
    meta: M,
    arrays: Vec<ArrayEntry>,
}

/// Named arrays collected for writing.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Arrays {
    pub entries: Vec<ArrayEntry>,
    pub values: Vec<f32>,
}

impl Arrays {
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, values: &[f32]) {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.entries.push(ArrayEntry {
            name: name.into(),
            shape,
            offset: self.values.len(),
            len: values.len(),
        });
        self.values.extend_from_slice(values);
    }

    pub fn get(&self, name: &str) -> Option<(&[usize], &[f32])> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| (e.shape.as_slice(), &self.values[e.offset..e.offset + e.len]))
    }

    pub fn require(&self, name: &str, shape: &[usize]) -> Result<&[f32]> {
        match self.get(name) {
            Some((s, v)) if s == shape => Ok(v),
            Some((s, _)) => Err(Error::Shape(format!("array {name}: stored {s:?}, expected {shape:?}"))),
            None => Err(Error::Config(format!("array {name} missing from archive"))),
        }
    }
}

pub fn encode<M: Serialize>(meta: &M, arrays: &Arrays) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        meta,
        arrays: arrays.entries.clone(),
    })?;
    let mut out = Vec::with_capacity(16 + header.len() + 4 * arrays.values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for v in &arrays.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode<M: DeserializeOwned>(bytes: &[u8], path: &Path) -> Result<(M, Arrays)> {
    let corrupt = |detail: &str| Error::Corrupt {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| corrupt("truncated header"))?;
    let header: Header<M> = serde_json::from_slice(body)?;
    let payload = &bytes[16 + hlen..];
    if payload.len() % 4 != 0 {
        return Err(corrupt("payload not a whole number of f32 values"));
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    for e in &header.arrays {
        if e.offset + e.len > values.len() || e.shape.iter().product::<usize>() != e.len {
            return Err(corrupt(&format!("array {} out of bounds", e.name)));
        }
    }
    Ok((
        header.meta,
        Arrays {
            entries: header.arrays,
            values,
        },
    ))
}

/// Writes through a temporary file and renames, so readers never observe a
/// partially written archive.
pub fn write<M: Serialize>(path: &Path, meta: &M, arrays: &Arrays) -> Result<()> {
    let bytes = encode(meta, arrays)?;
    write_atomic(path, &bytes)
}

pub fn read<M: DeserializeOwned>(path: &Path) -> Result<(M, Arrays)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("partial");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
