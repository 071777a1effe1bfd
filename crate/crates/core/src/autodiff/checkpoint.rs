//! Binary checkpoint format.
//!
//! ```text
//! offset  size  content
//! 0       8     magic b"DSTACKP1"
//! 8       8     header length H, u64 little-endian
//! 16      H     UTF-8 JSON header
//! 16+H    ...   payload: f64 little-endian values, tensors back to back
//! ```
//!
//! The header is
//! `{"version":1,"dtype":"f64-le","tensors":[{"name","shape","offset","len"}],"meta":{..}}`
//! where `offset` and `len` count f64 elements from the start of the payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DSTACKP1";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    dtype: String,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    meta: serde_json::Value,
}

pub fn encode(params: &ParamStore, meta: &serde_json::Value) -> Result<Vec<u8>> {
    let mut offset = 0;
    let tensors = params
        .iter()
        .map(|(name, t)| {
            let e = TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                offset,
                len: t.numel(),
            };
            offset += t.numel();
            e
        })
        .collect();
    let header = Header {
        version: 1,
        dtype: "f64-le".into(),
        tensors,
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + offset * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in params.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(ParamStore, serde_json::Value)> {
    let bad = |msg: &str| Error::Data(format!("checkpoint: {msg}"));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("bad magic"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = 16usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[16..body])?;
    if header.dtype != "f64-le" {
        return Err(bad(&format!("unsupported dtype {}", header.dtype)));
    }
    let payload = &bytes[body..];
    let mut params = ParamStore::new();
    for e in header.tensors {
        let start = e.offset * 8;
        let end = start + e.len * 8;
        if end > payload.len() {
            return Err(bad(&format!("tensor {} exceeds payload", e.name)));
        }
        let data = payload[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.insert(e.name, Tensor::new(e.shape, data)?);
    }
    Ok((params, header.meta))
}

pub fn save(path: &Path, params: &ParamStore, meta: &serde_json::Value) -> Result<()> {
    let bytes = encode(params, meta)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ParamStore, serde_json::Value)> {
    if !path.exists() {
        return Err(Error::Missing(path.to_path_buf()));
    }
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn roundtrip_is_bitwise(values in proptest::collection::vec(any::<f64>(), 1..40), split in 0usize..40) {
            let split = split.min(values.len());
            let mut p = ParamStore::new();
            p.insert("head", Tensor::vector(values[..split].to_vec()));
            p.insert("tail", Tensor::vector(values[split..].to_vec()));
            let meta = serde_json::json!({"note": "x"});
            let (back, m) = decode(&encode(&p, &meta).unwrap()).unwrap();
            prop_assert_eq!(m, meta);
            for ((n1, a), (n2, b)) in p.iter().zip(back.iter()) {
                prop_assert_eq!(n1, n2);
                prop_assert_eq!(a.shape(), b.shape());
                let bits_a: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
                let bits_b: Vec<u64> = b.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(bits_a, bits_b);
            }
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode(b"not a checkpoint at all").is_err());
        let mut bytes = encode(&ParamStore::new(), &serde_json::Value::Null).unwrap();
        bytes[0] = b'X';
        assert!(decode(&bytes).is_err());
    }
}
