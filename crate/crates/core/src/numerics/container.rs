//! Versioned binary container for trained parameter sets.
//!
//! Layout: magic `SVIP`, format version (u16 LE), descriptor length
//! (u32 LE), descriptor JSON (UTF-8), then each tensor's float64 values
//! little-endian in descriptor order.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SvipError};

use super::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"SVIP";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorMeta {
    pub name: String,
    pub shape: Vec<usize>,
}

/// JSON header of a container: what the network is (role + architecture)
/// and which tensors follow, in order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub role: String,
    pub arch: serde_json::Value,
    pub tensors: Vec<TensorMeta>,
}

/// Named collection of tensors for one network plus its architecture
/// descriptor; the unit of persistence for every trained artifact.
#[derive(Debug, Clone)]
pub struct ParameterSet {
    pub descriptor: ArchDescriptor,
    pub tensors: Vec<Tensor>,
}

impl ParameterSet {
    pub fn new(
        role: impl Into<String>,
        arch: serde_json::Value,
        named: Vec<(String, Tensor)>,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        for (name, _) in &named {
            if !seen.insert(name.clone()) {
                return Err(SvipError::Format(format!("duplicate parameter name {name}")));
            }
        }
        let (metas, tensors): (Vec<TensorMeta>, Vec<Tensor>) = named
            .into_iter()
            .map(|(name, t)| {
                (
                    TensorMeta {
                        name,
                        shape: t.shape().to_vec(),
                    },
                    t,
                )
            })
            .unzip();
        Ok(ParameterSet {
            descriptor: ArchDescriptor {
                role: role.into(),
                arch,
                tensors: metas,
            },
            tensors,
        })
    }

    pub fn role(&self) -> &str {
        &self.descriptor.role
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.descriptor
            .tensors
            .iter()
            .position(|m| m.name == name)
            .map(|i| &self.tensors[i])
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let json = serde_json::to_vec(&self.descriptor)
            .map_err(|e| SvipError::Format(e.to_string()))?;
        w.write_all(&MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        for t in &self.tensors {
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != MAGIC {
            return Err(SvipError::Format("bad magic bytes".into()));
        }
        let mut v = [0u8; 2];
        r.read_exact(&mut v)?;
        let version = u16::from_le_bytes(v);
        if version != FORMAT_VERSION {
            return Err(SvipError::Format(format!(
                "unsupported container version {version}"
            )));
        }
        let mut l = [0u8; 4];
        r.read_exact(&mut l)?;
        let json_len = u32::from_le_bytes(l) as usize;
        let mut json = vec![0u8; json_len];
        r.read_exact(&mut json)?;
        let descriptor: ArchDescriptor =
            serde_json::from_slice(&json).map_err(|e| SvipError::Format(e.to_string()))?;
        let mut tensors = Vec::with_capacity(descriptor.tensors.len());
        for meta in &descriptor.tensors {
            let n: usize = meta.shape.iter().product();
            let mut data = vec![0.0f64; n];
            let mut buf = [0u8; 8];
            for d in data.iter_mut() {
                r.read_exact(&mut buf)?;
                *d = f64::from_le_bytes(buf);
            }
            tensors.push(Tensor::from_vec(&meta.shape, data)?);
        }
        Ok(ParameterSet { descriptor, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = File::create(path)?;
        let mut w = BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = File::open(path)?;
        ParameterSet::read_from(BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_everything() {
        let ps = ParameterSet::new(
            "labeler",
            serde_json::json!({"dims": [4, 8, 2]}),
            vec![
                ("w0".into(), Tensor::matrix(2, 2, vec![1.5, -0.25, 3.0, 0.0]).unwrap()),
                ("b0".into(), Tensor::vector(vec![1e-300, -1e300])),
            ],
        )
        .unwrap();
        let mut buf = Vec::new();
        ps.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"SVIP");
        assert_eq!(u16::from_le_bytes([buf[4], buf[5]]), 1);
        let back = ParameterSet::read_from(buf.as_slice()).unwrap();
        assert_eq!(back.role(), "labeler");
        assert_eq!(back.tensor("w0"), ps.tensor("w0"));
        assert_eq!(back.tensor("b0"), ps.tensor("b0"));
        assert_eq!(back.descriptor.arch["dims"][1], 8);
    }

    #[test]
    fn duplicate_names_rejected() {
        let res = ParameterSet::new(
            "x",
            serde_json::Value::Null,
            vec![
                ("a".into(), Tensor::vector(vec![1.0])),
                ("a".into(), Tensor::vector(vec![2.0])),
            ],
        );
        assert!(res.is_err());
    }

    #[test]
    fn bad_magic_rejected() {
        let err = ParameterSet::read_from(&b"NOPE\x01\x00\x00\x00\x00\x00"[..]).unwrap_err();
        assert!(err.to_string().contains("magic"));
    }
}
