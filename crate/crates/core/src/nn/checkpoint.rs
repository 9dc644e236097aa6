//! Single-file parameter container.
//!
//! Layout: the 8-byte magic `SYNAUGCK`, a little-endian `u32` format version,
//! a little-endian `u64` manifest length, the JSON manifest, then a blob of
//! little-endian `f32` values addressed by the manifest's byte offsets.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::NamedTensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SYNAUGCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into the blob that follows the manifest.
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct Manifest {
    tensors: Vec<ManifestEntry>,
}

/// Tensors loaded from a checkpoint, keyed by name.
#[derive(Clone, Debug, Default)]
pub struct Checkpoint {
    pub entries: Vec<ManifestEntry>,
    values: BTreeMap<String, Vec<f64>>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.values.get(name).map(|v| v.as_slice())
    }

    /// Copies every stored tensor into the matching destination buffer.
    /// Names must match one to one and lengths exactly.
    pub fn restore(&self, dest: Vec<(String, &mut [f64])>, path: &Path) -> Result<()> {
        let err = |message: String| Error::Checkpoint {
            path: path.to_path_buf(),
            message,
        };
        if dest.len() != self.values.len() {
            return Err(err(format!(
                "checkpoint holds {} tensors, model expects {}",
                self.values.len(),
                dest.len()
            )));
        }
        for (name, buf) in dest {
            let src = self.values.get(&name).ok_or_else(|| err(format!("missing tensor {name}")))?;
            if src.len() != buf.len() {
                return Err(err(format!("tensor {name} has {} values, expected {}", src.len(), buf.len())));
            }
            buf.copy_from_slice(src);
        }
        Ok(())
    }
}

/// Serializes tensors to bytes in checkpoint layout.
pub fn encode(tensors: &[NamedTensor<'_>]) -> Result<Vec<u8>> {
    let mut blob = Vec::new();
    let mut manifest = Manifest::default();
    for t in tensors {
        if t.shape.iter().product::<usize>() != t.data.len() {
            return Err(Error::shape(format!("tensor {} does not match its shape", t.name)));
        }
        manifest.tensors.push(ManifestEntry {
            name: t.name.clone(),
            shape: t.shape.clone(),
            dtype: "f32".into(),
            offset: blob.len(),
            len: t.data.len(),
        });
        for &v in t.data {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(20 + json.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    Ok(out)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let err = |message: &str| Error::Checkpoint {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(err("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(err(&format!("unsupported version {version}")));
    }
    let mlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(20..20 + mlen).ok_or_else(|| err("truncated manifest"))?;
    let manifest: Manifest = serde_json::from_slice(body)?;
    let blob = &bytes[20 + mlen..];
    let mut values = BTreeMap::new();
    for e in &manifest.tensors {
        if e.dtype != "f32" {
            return Err(err(&format!("tensor {} has unsupported dtype {}", e.name, e.dtype)));
        }
        let raw = blob
            .get(e.offset..e.offset + 4 * e.len)
            .ok_or_else(|| err(&format!("tensor {} runs past the end of the file", e.name)))?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        if values.insert(e.name.clone(), data).is_some() {
            return Err(err(&format!("duplicate tensor {}", e.name)));
        }
    }
    Ok(Checkpoint {
        entries: manifest.tensors,
        values,
    })
}

pub fn save(path: &Path, tensors: &[NamedTensor<'_>]) -> Result<()> {
    let bytes = encode(tensors)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_through_f32() {
        let a = [0.5, -1.25, 3.0, 0.1];
        let b = [7.0];
        let tensors = [
            NamedTensor::new("a".into(), vec![2, 2], &a),
            NamedTensor::new("b".into(), vec![1], &b),
        ];
        let bytes = encode(&tensors).unwrap();
        let ck = decode(&bytes, Path::new("mem")).unwrap();
        assert_eq!(ck.get("a").unwrap()[..3], [0.5, -1.25, 3.0]);
        assert_eq!(ck.get("a").unwrap()[3], 0.1f32 as f64);
        assert_eq!(ck.entries[1].offset, 16);

        let mut a2 = [0.0; 4];
        let mut b2 = [0.0; 1];
        ck.restore(vec![("a".into(), &mut a2[..]), ("b".into(), &mut b2[..])], Path::new("mem"))
            .unwrap();
        assert_eq!(b2, [7.0]);
    }

    #[test]
    fn rejects_garbage_and_mismatch() {
        assert!(decode(b"not a checkpoint at all", Path::new("x")).is_err());
        let a = [1.0, 2.0];
        let bytes = encode(&[NamedTensor::new("a".into(), vec![2], &a)]).unwrap();
        let ck = decode(&bytes, Path::new("x")).unwrap();
        let mut wrong = [0.0; 3];
        assert!(ck.restore(vec![("a".into(), &mut wrong[..])], Path::new("x")).is_err());
        assert!(decode(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
    }
}
