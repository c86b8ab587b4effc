use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use vfi_tensor::{DType, Scalar, Tensor};

use crate::error::{Error, Result};

pub const CONTAINER_MAGIC: &[u8; 8] = b"VFIARRS\0";
pub const CONTAINER_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    kind: String,
    dtype: String,
    meta: Value,
    arrays: Vec<ArrayEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}

/// Named tensors of one dtype plus a free-form JSON header.
///
/// Layout: magic, `u32` version, `u64` header length, UTF-8 JSON header, then
/// each array's elements little-endian in header order.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayFile<S> {
    pub kind: String,
    pub meta: Value,
    pub arrays: Vec<(String, Tensor<S>)>,
}

impl<S: Scalar> ArrayFile<S> {
    pub fn new(kind: impl Into<String>, meta: Value) -> Self {
        Self { kind: kind.into(), meta, arrays: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<S>) {
        self.arrays.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Arrays whose name starts with `prefix`, with the prefix removed.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a Tensor<S>)> + 'a {
        self.arrays.iter().filter_map(move |(n, t)| n.strip_prefix(prefix).map(|rest| (rest, t)))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            kind: self.kind.clone(),
            dtype: S::DTYPE.name().to_string(),
            meta: self.meta.clone(),
            arrays: self.arrays.iter().map(|(n, t)| ArrayEntry { name: n.clone(), shape: t.shape().to_vec() }).collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let total: usize = self.arrays.iter().map(|(_, t)| t.data().len()).sum();
        let mut out = Vec::with_capacity(20 + json.len() + total * S::DTYPE.size());
        out.extend_from_slice(CONTAINER_MAGIC);
        out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.arrays {
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != CONTAINER_MAGIC {
            return Err(bad("not an array container"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CONTAINER_VERSION {
            return Err(Error::Checkpoint(format!("unsupported container version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        let dtype = DType::parse(&header.dtype).ok_or_else(|| Error::Checkpoint(format!("unknown dtype {}", header.dtype)))?;
        if dtype != S::DTYPE {
            return Err(Error::Checkpoint(format!("container holds {}, expected {}", dtype.name(), S::DTYPE.name())));
        }
        let size = dtype.size();
        let mut pos = 20 + hlen;
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for entry in header.arrays {
            let n: usize = entry.shape.iter().product();
            let raw = bytes.get(pos..pos + n * size).ok_or_else(|| Error::Checkpoint(format!("truncated array {}", entry.name)))?;
            let data: Vec<S> = raw.chunks_exact(size).map(S::read_le).collect();
            arrays.push((entry.name, Tensor::from_vec(&entry.shape, data)?));
            pos += n * size;
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes after the last array"));
        }
        Ok(Self { kind: header.kind, meta: header.meta, arrays })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> ArrayFile<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut f = ArrayFile::new("test", serde_json::json!({"step": 3}));
        f.push("a", Tensor::randn(&[2, 3], &mut rng));
        f.push("b/c", Tensor::from_vec(&[3], vec![f64::MIN_POSITIVE, -0.0, 1e300]).unwrap());
        f.push("empty", Tensor::zeros(&[0]));
        f
    }

    #[test]
    fn bytes_round_trip_bit_exactly() {
        let f = sample();
        let bytes = f.to_bytes().unwrap();
        let back = ArrayFile::<f64>::from_bytes(&bytes).unwrap();
        assert_eq!(back.kind, "test");
        assert_eq!(back.meta["step"], 3);
        for ((na, ta), (nb, tb)) in f.arrays.iter().zip(&back.arrays) {
            assert_eq!(na, nb);
            assert_eq!(ta.shape(), tb.shape());
            assert!(ta.data().iter().zip(tb.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.with_prefix("b/").count(), 1);
    }

    #[test]
    fn rejects_corruption_and_wrong_dtype() {
        let bytes = sample().to_bytes().unwrap();
        assert!(ArrayFile::<f32>::from_bytes(&bytes).is_err());
        assert!(ArrayFile::<f64>::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(ArrayFile::<f64>::from_bytes(&extra).is_err());
        let mut magic = bytes;
        magic[0] = b'X';
        assert!(ArrayFile::<f64>::from_bytes(&magic).is_err());
    }
}
