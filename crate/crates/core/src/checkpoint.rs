//! Portable parameter checkpoints: a JSON manifest next to a contiguous
//! little-endian blob.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamTree, Role};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    #[default]
    F64,
    F32,
}

impl Dtype {
    pub fn width(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::F32 => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRecord {
    pub name: String,
    pub role: Role,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: u64,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub dtype: Dtype,
    pub records: Vec<TensorRecord>,
}

impl Manifest {
    pub fn blob_len(&self) -> u64 {
        self.records.iter().map(|r| r.count).sum::<u64>() * self.dtype.width() as u64
    }

    /// Offsets contiguous in record order, counts matching shapes.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Format { offset: 0, msg: format!("unsupported format version {}", self.format_version) });
        }
        let w = self.dtype.width() as u64;
        let mut expected = 0u64;
        for r in &self.records {
            if r.offset != expected {
                return Err(Error::Format {
                    offset: r.offset,
                    msg: format!("record {} starts at {}, expected {}", r.name, r.offset, expected),
                });
            }
            if r.shape.iter().product::<usize>() as u64 != r.count {
                return Err(Error::Format {
                    offset: r.offset,
                    msg: format!("record {} count {} does not match shape {:?}", r.name, r.count, r.shape),
                });
            }
            expected += r.count * w;
        }
        Ok(())
    }
}

pub fn encode(params: &ParamTree, dtype: Dtype) -> (Manifest, Vec<u8>) {
    let mut blob = Vec::with_capacity(params.num_scalars() * dtype.width());
    let mut records = Vec::with_capacity(params.len());
    for e in params.iter() {
        records.push(TensorRecord {
            name: e.name.clone(),
            role: e.role,
            shape: e.tensor.shape().to_vec(),
            offset: blob.len() as u64,
            count: e.tensor.len() as u64,
        });
        for &v in e.tensor.data() {
            match dtype {
                Dtype::F64 => blob.extend_from_slice(&v.to_le_bytes()),
                Dtype::F32 => blob.extend_from_slice(&(v as f32).to_le_bytes()),
            }
        }
    }
    (Manifest { format_version: FORMAT_VERSION, dtype, records }, blob)
}

pub fn decode(manifest: &Manifest, blob: &[u8]) -> Result<ParamTree> {
    manifest.validate()?;
    if blob.len() as u64 != manifest.blob_len() {
        return Err(Error::Format {
            offset: blob.len() as u64,
            msg: format!("blob has {} bytes, manifest describes {}", blob.len(), manifest.blob_len()),
        });
    }
    let w = manifest.dtype.width();
    let mut p = ParamTree::new();
    for r in &manifest.records {
        let start = r.offset as usize;
        let bytes = &blob[start..start + r.count as usize * w];
        let data: Vec<f64> = match manifest.dtype {
            Dtype::F64 => bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect(),
            Dtype::F32 => {
                bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect()
            }
        };
        p.push(r.name.clone(), r.role, Tensor::new(r.shape.clone(), data)?);
    }
    Ok(p)
}

/// `<stem>.json` and `<stem>.bin`.
pub fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    let s = stem.as_os_str().to_owned();
    let mut j = s.clone();
    j.push(".json");
    let mut b = s;
    b.push(".bin");
    (PathBuf::from(j), PathBuf::from(b))
}

pub fn write(params: &ParamTree, dtype: Dtype, stem: &Path) -> Result<()> {
    let (manifest, blob) = encode(params, dtype);
    let (jp, bp) = paths(stem);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(jp, text)?;
    std::fs::write(bp, blob)?;
    Ok(())
}

pub fn read_manifest(stem: &Path) -> Result<Manifest> {
    let (jp, _) = paths(stem);
    let text = std::fs::read_to_string(&jp)?;
    let m: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Format { offset: 0, msg: format!("{}: {e}", jp.display()) })?;
    m.validate()?;
    Ok(m)
}

pub fn read(stem: &Path) -> Result<ParamTree> {
    let m = read_manifest(stem)?;
    let (_, bp) = paths(stem);
    decode(&m, &std::fs::read(bp)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tree() -> ParamTree {
        let mut p = ParamTree::new();
        p.push("a.weight", Role::DenseWeight, Tensor::new(vec![2, 2], vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300]).unwrap());
        p.push("a.bias", Role::Bias, Tensor::new(vec![2], vec![0.1, -3.5]).unwrap());
        p
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p = tree();
        let (m, blob) = encode(&p, Dtype::F64);
        assert_eq!(blob.len(), 48);
        assert_eq!(m.records[1].offset, 32);
        let q = decode(&m, &blob).unwrap();
        let bits = |t: &ParamTree| t.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&p), bits(&q));
        assert_eq!(encode(&q, Dtype::F64).1, blob);
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("ckpt");
        write(&tree(), Dtype::F32, &stem).unwrap();
        let m = read_manifest(&stem).unwrap();
        assert_eq!(m.dtype, Dtype::F32);
        let q = read(&stem).unwrap();
        assert_eq!(q.get("a.bias").unwrap().data()[0], 0.1f32 as f64);
    }

    #[test]
    fn rejects_bad_layouts() {
        let (mut m, blob) = encode(&tree(), Dtype::F64);
        assert!(decode(&m, &blob[..40]).is_err());
        m.records[1].offset = 24;
        assert!(matches!(decode(&m, &blob), Err(Error::Format { offset: 24, .. })));
    }
}
