//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "XMCK" | version u32 | config hash [32] | meta_len u32 | meta (UTF-8 JSON)
//! n_blocks u32 | per block: name_len u32 | name | trainable u8 | ndim u32 | dims u64 * ndim | f32 * numel
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{io_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Param, ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"XMCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub config_hash: [u8; 32],
    /// Free-form JSON describing the producing configuration.
    pub meta: String,
    pub params: ParamStore<T>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.config_hash);
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        out.extend_from_slice(self.meta.as_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in self.params.iter() {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.push(u8::from(p.trainable));
            out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
            for &d in p.value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for x in p.value.data() {
                out.extend_from_slice(&x.f32().to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let r = &mut bytes;
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let mut config_hash = [0u8; 32];
        read_exact(r, &mut config_hash)?;
        let meta_len = read_u32(r)? as usize;
        let meta = String::from_utf8(read_vec(r, meta_len)?).map_err(|e| Error::Format(e.to_string()))?;
        let n = read_u32(r)? as usize;
        let mut params = ParamStore::default();
        for _ in 0..n {
            let name_len = read_u32(r)? as usize;
            let name = String::from_utf8(read_vec(r, name_len)?).map_err(|e| Error::Format(e.to_string()))?;
            let mut flag = [0u8; 1];
            read_exact(r, &mut flag)?;
            let ndim = read_u32(r)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let mut b = [0u8; 8];
                read_exact(r, &mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let numel: usize = shape.iter().product();
            let raw = read_vec(r, numel * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
                .collect();
            params.insert(Param { name, value: Tensor::new(data, shape)?, trainable: flag[0] != 0 })?;
        }
        if !r.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes after checkpoint", r.len())));
        }
        Ok(Self { config_hash, meta, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(io_err(path))?;
        f.write_all(&self.to_bytes()).map_err(io_err(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        Self::from_bytes(&bytes)
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|_| Error::Format("truncated checkpoint".into()))
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_vec(r: &mut &[u8], n: usize) -> Result<Vec<u8>> {
    if r.len() < n {
        return Err(Error::Format("truncated checkpoint".into()));
    }
    let mut v = vec![0u8; n];
    read_exact(r, &mut v)?;
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn f32_payload_round_trips_bit_exact(vals in prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 1..40)) {
            let mut params = ParamStore::<f32>::default();
            let n = vals.len();
            params.insert(Param { name: "w".into(), value: Tensor::new(vals.clone(), vec![n]).unwrap(), trainable: true }).unwrap();
            params.insert(Param { name: "buf".into(), value: Tensor::new(vals, vec![1, n]).unwrap(), trainable: false }).unwrap();
            let ck = Checkpoint { config_hash: [7u8; 32], meta: "{\"arm\":\"D0\"}".into(), params };
            let bytes = ck.to_bytes();
            let back = Checkpoint::<f32>::from_bytes(&bytes).unwrap();
            prop_assert_eq!(&back, &ck);
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn truncated_input_rejected() {
        let ck = Checkpoint::<f64> { config_hash: [0; 32], meta: String::new(), params: ParamStore::default() };
        let bytes = ck.to_bytes();
        assert!(Checkpoint::<f64>::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::<f64>::from_bytes(b"NOPE").is_err());
    }
}
