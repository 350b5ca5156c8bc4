//! Versioned binary container for named f32 tensors plus string metadata.
//!
//! Layout (all integers big-endian):
//!
//! ```text
//! magic        4 bytes (caller-chosen, e.g. b"HFG1")
//! version      u32
//! meta_count   u32, then per entry: u16 key len, key, u32 value len, value
//! tensor_count u32, then per tensor: u16 name len, name, u8 rank,
//!              u32 dims[rank], f32 data (IEEE-754 bits, big-endian)
//! ```
//!
//! Serialization is bit-exact: `write` followed by `read` reproduces every
//! tensor element bit for bit.

use std::io::{Read, Write};

use crate::error::{NnError, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ArchiveTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Archive {
    pub magic: [u8; 4],
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<ArchiveTensor>,
}

fn read_exact<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)
        .map_err(|e| NnError::Format(format!("truncated while reading {what}: {e}")))?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let b = read_exact(r, 4, what)?;
    Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

fn read_u16<R: Read>(r: &mut R, what: &str) -> Result<u16> {
    let b = read_exact(r, 2, what)?;
    Ok(u16::from_be_bytes([b[0], b[1]]))
}

fn read_string<R: Read>(r: &mut R, n: usize, what: &str) -> Result<String> {
    String::from_utf8(read_exact(r, n, what)?).map_err(|_| NnError::Format(format!("{what} is not UTF-8")))
}

impl Archive {
    pub fn new(magic: [u8; 4]) -> Self {
        Archive { magic, meta: Vec::new(), tensors: Vec::new() }
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl ToString) {
        let key = key.into();
        let value = value.to_string();
        match self.meta.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.meta.push((key, value)),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn meta_parse<V: std::str::FromStr>(&self, key: &str) -> Result<V> {
        let raw = self
            .meta(key)
            .ok_or_else(|| NnError::Format(format!("missing metadata key {key}")))?;
        raw.parse()
            .map_err(|_| NnError::Format(format!("bad value {raw:?} for metadata key {key}")))
    }

    pub fn push_tensor<T: Scalar>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        self.tensors.push(ArchiveTensor {
            name: name.into(),
            shape: t.shape().to_vec(),
            data: t.to_f32_vec(),
        });
    }

    pub fn tensor(&self, name: &str) -> Option<&ArchiveTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Adds every parameter of `store` under `prefix/`.
    pub fn push_store<T: Scalar>(&mut self, prefix: &str, store: &ParamStore<T>) {
        for (name, t) in store.iter() {
            self.push_tensor(format!("{prefix}/{name}"), t);
        }
    }

    /// Overwrites every parameter of `store` from `prefix/` entries; names and
    /// shapes must match exactly.
    pub fn load_store<T: Scalar>(&self, prefix: &str, store: &mut ParamStore<T>) -> Result<()> {
        for id in store.ids().collect::<Vec<_>>() {
            let key = format!("{prefix}/{}", store.name(id));
            let t = self
                .tensor(&key)
                .ok_or_else(|| NnError::Format(format!("missing tensor {key}")))?;
            let dst = store.get_mut(id);
            if t.shape != dst.shape() {
                return Err(NnError::Format(format!(
                    "tensor {key}: stored shape {:?}, model expects {:?}",
                    t.shape,
                    dst.shape()
                )));
            }
            *dst = Tensor::from_f32(t.shape.clone(), &t.data)?;
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&self.magic)?;
        w.write_all(&ARCHIVE_VERSION.to_be_bytes())?;
        w.write_all(&(self.meta.len() as u32).to_be_bytes())?;
        for (k, v) in &self.meta {
            w.write_all(&(k.len() as u16).to_be_bytes())?;
            w.write_all(k.as_bytes())?;
            w.write_all(&(v.len() as u32).to_be_bytes())?;
            w.write_all(v.as_bytes())?;
        }
        w.write_all(&(self.tensors.len() as u32).to_be_bytes())?;
        for t in &self.tensors {
            w.write_all(&(t.name.len() as u16).to_be_bytes())?;
            w.write_all(t.name.as_bytes())?;
            w.write_all(&[t.shape.len() as u8])?;
            for &d in &t.shape {
                w.write_all(&(d as u32).to_be_bytes())?;
            }
            let mut buf = Vec::with_capacity(t.data.len() * 4);
            for v in &t.data {
                buf.extend_from_slice(&v.to_bits().to_be_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    /// Reads an archive, requiring the given magic.
    pub fn read<R: Read>(r: &mut R, magic: [u8; 4]) -> Result<Self> {
        let got = read_exact(r, 4, "magic")?;
        if got != magic {
            return Err(NnError::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&got),
                String::from_utf8_lossy(&magic)
            )));
        }
        let version = read_u32(r, "version")?;
        if version != ARCHIVE_VERSION {
            return Err(NnError::Format(format!("unsupported archive version {version}")));
        }
        let n_meta = read_u32(r, "metadata count")?;
        let mut meta = Vec::new();
        for _ in 0..n_meta {
            let kl = read_u16(r, "metadata key length")? as usize;
            let k = read_string(r, kl, "metadata key")?;
            let vl = read_u32(r, "metadata value length")? as usize;
            let v = read_string(r, vl, "metadata value")?;
            meta.push((k, v));
        }
        let n_tensors = read_u32(r, "tensor count")?;
        let mut tensors = Vec::new();
        for _ in 0..n_tensors {
            let nl = read_u16(r, "tensor name length")? as usize;
            let name = read_string(r, nl, "tensor name")?;
            let rank = read_exact(r, 1, "tensor rank")?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u32(r, "tensor dim")? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = read_exact(r, n * 4, "tensor data")?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_bits(u32::from_be_bytes([c[0], c[1], c[2], c[3]])))
                .collect();
            tensors.push(ArchiveTensor { name, shape, data });
        }
        Ok(Archive { magic, meta, tensors })
    }

    pub fn from_bytes(bytes: &[u8], magic: [u8; 4]) -> Result<Self> {
        let mut cur = bytes;
        let a = Self::read(&mut cur, magic)?;
        if !cur.is_empty() {
            return Err(NnError::Format(format!("{} trailing bytes", cur.len())));
        }
        Ok(a)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path, magic: [u8; 4]) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes, magic)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut a = Archive::new(*b"TST1");
        a.set_meta("k", 5);
        a.set_meta("channels", "1,2,3");
        let t = Tensor::<f32>::new(vec![2, 3], vec![0.1, -0.0, f32::MIN_POSITIVE, 1e30, -7.5, 3.3]).unwrap();
        a.push_tensor("w", &t);
        let bytes = a.to_bytes();
        let b = Archive::from_bytes(&bytes, *b"TST1").unwrap();
        assert_eq!(a, b);
        assert_eq!(b.to_bytes(), bytes);
        assert_eq!(b.meta_parse::<usize>("k").unwrap(), 5);
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        let a = Archive::new(*b"TST1");
        let bytes = a.to_bytes();
        assert!(Archive::from_bytes(&bytes, *b"XXX1").is_err());
        assert!(Archive::from_bytes(&bytes[..bytes.len() - 1], *b"TST1").is_err());
    }
}
