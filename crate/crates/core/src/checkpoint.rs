//! Flat binary container of named f32 tensors.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "RRUCKPT1"
//! header_len   u64
//! header       JSON {"tensors": [{"name", "shape": [rows, cols], "offset"}]}
//! data         f32 values, row-major; `offset` is in bytes from the start of data
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const MAGIC: &[u8; 8] = b"RRUCKPT1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub name: String,
    pub shape: [usize; 2],
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct Header {
    tensors: Vec<Entry>,
}

pub fn encode<T: Real>(store: &ParamStore<T>) -> Result<Vec<u8>> {
    let mut tensors = Vec::with_capacity(store.len());
    let mut offset = 0;
    for p in store.iter() {
        tensors.push(Entry {
            name: p.name.clone(),
            shape: p.value.shape(),
            offset,
        });
        offset += p.value.len() * 4;
    }
    let header = serde_json::to_vec(&Header { tensors })?;
    let mut out = Vec::with_capacity(16 + header.len() + offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for p in store.iter() {
        for v in p.value.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Named tensors in file order.
pub fn decode<T: Real>(bytes: &[u8]) -> Result<Vec<(String, Tensor<T>)>> {
    let bad = |msg: &str| Error::Data(format!("checkpoint: {msg}"));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("bad magic"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let data_start = 16usize
        .checked_add(header_len)
        .filter(|&s| s <= bytes.len())
        .ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[16..data_start])?;
    let data = &bytes[data_start..];
    header
        .tensors
        .into_iter()
        .map(|e| {
            let n = e.shape[0] * e.shape[1];
            let chunk = data
                .get(e.offset..e.offset + n * 4)
                .ok_or_else(|| bad(&format!("tensor {} out of bounds", e.name)))?;
            let values = chunk
                .chunks_exact(4)
                .map(|b| T::lit(f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64))
                .collect();
            Ok((e.name, Tensor::new(e.shape[0], e.shape[1], values)?))
        })
        .collect()
}

pub fn save<T: Real>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    fs::write(path, encode(store)?).map_err(|e| Error::io(path, e))
}

/// Overwrites the values of `store` with same-named tensors from `path`.
pub fn load_into<T: Real>(store: &mut ParamStore<T>, path: &Path) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut loaded = ParamStore::new();
    for (name, t) in decode::<T>(&bytes)? {
        loaded.add(name, t);
    }
    store.load_values(&loaded)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn round_trip_preserves_f32_values() {
        let mut rng = Rng::new(3);
        let mut store = ParamStore::<f32>::new();
        store.add("a", rng.uniform_tensor(-1.0, 1.0, 3, 4).unwrap());
        store.add("b.bias", rng.uniform_tensor(-1.0, 1.0, 1, 7).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&store, &path).unwrap();

        let mut other = store.clone();
        for p in other.iter_mut() {
            p.value.fill(0.0);
        }
        load_into(&mut other, &path).unwrap();
        for (a, b) in store.iter().zip(other.iter()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn header_records_byte_offsets() {
        let mut store = ParamStore::<f64>::new();
        store.add("x", Tensor::zeros(2, 3));
        store.add("y", Tensor::zeros(1, 1));
        let bytes = encode(&store).unwrap();
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header: Header = serde_json::from_slice(&bytes[16..16 + len]).unwrap();
        assert_eq!(header.tensors[1].offset, 24);
        assert_eq!(bytes.len(), 16 + len + 28);
    }

    #[test]
    fn corrupt_input_rejected() {
        assert!(decode::<f32>(b"NOTACKPT00000000").is_err());
        let mut store = ParamStore::<f32>::new();
        store.add("x", Tensor::zeros(4, 4));
        let bytes = encode(&store).unwrap();
        assert!(decode::<f32>(&bytes[..bytes.len() - 1]).is_err());
    }
}
