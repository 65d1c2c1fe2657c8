//! Checkpoint file layout:
//!
//! ```text
//! RAHP-CHECKPOINT\n
//! manifest_bytes=<n>\n
//! <n bytes of JSON manifest>
//! <tensor blobs: little-endian f32, in manifest order>
//! ```
//!
//! The manifest carries `format_version`, free-form string metadata and one
//! `{name, shape, offset, len}` entry per tensor, where `offset` is the byte
//! offset into the blob section and `len` the number of f32 values.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::Tensor;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "RAHP-CHECKPOINT\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    metadata: BTreeMap<String, String>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore,
    pub metadata: BTreeMap<String, String>,
}

pub fn save_checkpoint(path: &Path, params: &ParamStore, metadata: &BTreeMap<String, String>) -> Result<()> {
    let mut tensors = Vec::with_capacity(params.len());
    let mut blob = Vec::with_capacity(params.num_values() * 4);
    for (name, t) in params.iter() {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset: blob.len(),
            len: t.numel(),
        });
        for &v in t.data() {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        metadata: metadata.clone(),
        tensors,
    };
    let json = serde_json::to_vec_pretty(&manifest)?;

    let tmp = path.with_extension("tmp");
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(MAGIC.as_bytes())?;
        writeln!(f, "manifest_bytes={}", json.len())?;
        f.write_all(&json)?;
        f.write_all(&blob)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| Error::io(path, e))
}

fn split(bytes: &[u8]) -> Result<(Manifest, &[u8])> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    let rest = bytes
        .strip_prefix(MAGIC.as_bytes())
        .ok_or_else(|| bad("missing checkpoint header"))?;
    let nl = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("truncated header"))?;
    let line = std::str::from_utf8(&rest[..nl]).map_err(|_| bad("header is not UTF-8"))?;
    let n: usize = line
        .strip_prefix("manifest_bytes=")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad("malformed manifest length line"))?;
    let rest = &rest[nl + 1..];
    if rest.len() < n {
        return Err(bad("truncated manifest"));
    }
    let manifest: Manifest = serde_json::from_slice(&rest[..n]).map_err(|e| bad(&format!("manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {} (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    Ok((manifest, &rest[n..]))
}

/// Reads only the manifest entries and metadata.
pub fn read_manifest(path: &Path) -> Result<(Vec<TensorEntry>, BTreeMap<String, String>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (m, _) = split(&bytes)?;
    Ok((m.tensors, m.metadata))
}

/// Loads a checkpoint in full; nothing is returned unless every tensor is
/// present and the blob section has exactly the declared length.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (manifest, blob) = split(&bytes)?;
    let expected: usize = manifest.tensors.iter().map(|t| t.len * 4).sum();
    if blob.len() != expected {
        return Err(Error::Checkpoint(format!(
            "blob section has {} bytes, manifest declares {expected}",
            blob.len()
        )));
    }
    let mut params = ParamStore::default();
    let mut offset = 0;
    for e in &manifest.tensors {
        if e.offset != offset || e.shape.iter().product::<usize>() != e.len {
            return Err(Error::Checkpoint(format!("inconsistent manifest entry for {}", e.name)));
        }
        let data = blob[offset..offset + e.len * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        params.insert(e.name.clone(), Tensor::new(e.shape.clone(), data)?);
        offset += e.len * 4;
    }
    Ok(Checkpoint {
        params,
        metadata: manifest.metadata,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamStore {
        let mut p = ParamStore::default();
        p.insert("b.bias", Tensor::row(vec![0.25, -1.5]));
        p.insert(
            "a.weight",
            Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, -0.125, 1e-3f32 as f64, 7.0]).unwrap(),
        );
        p
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut meta = BTreeMap::new();
        meta.insert("k".to_string(), "5".to_string());
        save_checkpoint(&path, &sample(), &meta).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.params, sample());
        assert_eq!(ck.metadata, meta);
        let (entries, _) = read_manifest(&path).unwrap();
        assert_eq!(entries[0].name, "a.weight");
        assert_eq!(entries[1].offset, 24);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &sample(), &BTreeMap::new()).unwrap();
        let bytes = fs::read(&path).unwrap();
        for cut in [5, 30, bytes.len() - 1] {
            fs::write(&path, &bytes[..cut]).unwrap();
            assert!(load_checkpoint(&path).is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn version_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &sample(), &BTreeMap::new()).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let key = b"\"format_version\": 1";
        let at = bytes.windows(key.len()).position(|w| w == key).unwrap();
        bytes[at + key.len() - 1] = b'9';
        fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");
    }
}
