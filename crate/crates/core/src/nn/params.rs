//! Named parameter tensors, gradient buffers and the checkpoint file format.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes   "AWEKCKPT"
//! version  u32       1
//! hlen     u64       length of the JSON header in bytes
//! header   hlen      {"dtype": "f32"|"f64", "meta": {...}, "params": [{"name", "shape": [r, c]}, ...]}
//! payload            every parameter's r*c values in header order, row-major
//! ```

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{Matrix, Real};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AWEKCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    Glorot,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore<T> {
    names: Vec<String>,
    values: Vec<Matrix<T>>,
    index: HashMap<String, ParamId>,
}

impl<T: Real> Default for ParameterStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParameterStore<T> {
    pub fn new() -> Self {
        ParameterStore {
            names: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Registers a parameter. Values are drawn in f64 and cast, so f32 and f64
    /// stores built from the same seed hold the same initial values.
    pub fn add(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let data = match init {
            Init::Zeros => vec![T::zero(); rows * cols],
            Init::Ones => vec![T::one(); rows * cols],
            Init::Glorot => {
                let a = (6.0 / (rows + cols) as f64).sqrt();
                (0..rows * cols)
                    .map(|_| T::c(rng.gen_range(-a..a)))
                    .collect()
            }
        };
        let id = ParamId(self.values.len());
        self.values
            .push(Matrix::from_vec(rows, cols, data).expect("shape"));
        self.names.push(name.clone());
        self.index.insert(name, id);
        id
    }

    pub fn get(&self, id: ParamId) -> &Matrix<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix<T> {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn n_scalars(&self) -> usize {
        self.values.iter().map(|m| m.as_slice().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(Matrix::is_finite)
    }

    pub fn cast<U: Real>(&self) -> ParameterStore<U> {
        ParameterStore {
            names: self.names.clone(),
            values: self.values.iter().map(Matrix::cast).collect(),
            index: self.index.clone(),
        }
    }

    /// Copies values from `other`, which must have the same names and shapes.
    pub fn assign_from(&mut self, other: &ParameterStore<T>) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Checkpoint("parameter names differ".into()));
        }
        for (dst, src) in self.values.iter_mut().zip(&other.values) {
            if dst.shape() != src.shape() {
                return Err(Error::Checkpoint("parameter shapes differ".into()));
            }
            dst.clone_from(src);
        }
        Ok(())
    }

    pub fn to_bytes(&self, meta: &serde_json::Value) -> Vec<u8> {
        let header = CheckpointHeader {
            dtype: T::DTYPE.to_string(),
            meta: meta.clone(),
            params: self
                .names
                .iter()
                .zip(&self.values)
                .map(|(name, m)| ParamEntry {
                    name: name.clone(),
                    shape: [m.rows(), m.cols()],
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + header.len() + self.n_scalars() * T::BYTES);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for m in &self.values {
            for &v in m.as_slice() {
                v.write_le(&mut out);
            }
        }
        out
    }

    pub fn save(&self, path: &Path, meta: &serde_json::Value) -> Result<()> {
        let bytes = self.to_bytes(meta);
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    /// Parses a checkpoint whose dtype must equal `T`.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, serde_json::Value)> {
        let (header, payload) = split_checkpoint(bytes)?;
        if header.dtype != T::DTYPE {
            return Err(Error::Checkpoint(format!(
                "checkpoint dtype {} but {} requested",
                header.dtype,
                T::DTYPE
            )));
        }
        let expected: usize = header
            .params
            .iter()
            .map(|p| p.shape[0] * p.shape[1] * T::BYTES)
            .sum();
        if payload.len() != expected {
            return Err(Error::Checkpoint(format!(
                "payload has {} bytes, header describes {expected}",
                payload.len()
            )));
        }
        let mut store = ParameterStore::new();
        let mut offset = 0;
        for p in header.params {
            let n = p.shape[0] * p.shape[1];
            let data = payload[offset..offset + n * T::BYTES]
                .chunks_exact(T::BYTES)
                .map(T::read_le)
                .collect();
            offset += n * T::BYTES;
            if store.index.contains_key(&p.name) {
                return Err(Error::Checkpoint(format!("duplicate parameter {}", p.name)));
            }
            let id = ParamId(store.values.len());
            store.values.push(Matrix::from_vec(p.shape[0], p.shape[1], data)?);
            store.index.insert(p.name.clone(), id);
            store.names.push(p.name);
        }
        Ok((store, header.meta))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: [usize; 2],
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    dtype: String,
    meta: serde_json::Value,
    params: Vec<ParamEntry>,
}

fn split_checkpoint(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8])> {
    if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not an awekit checkpoint".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = &bytes[20..];
    if body.len() < hlen {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&body[..hlen])
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    Ok((header, &body[hlen..]))
}

/// Reads only the dtype and metadata of a checkpoint.
pub fn peek_checkpoint(bytes: &[u8]) -> Result<(String, serde_json::Value)> {
    let (header, _) = split_checkpoint(bytes)?;
    Ok((header.dtype, header.meta))
}

/// Gradient buffers laid out like a [`ParameterStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    values: Vec<Matrix<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(params: &ParameterStore<T>) -> Self {
        Gradients {
            values: params
                .values
                .iter()
                .map(|m| Matrix::zeros(m.rows(), m.cols()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Matrix<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix<T> {
        &mut self.values[id.0]
    }

    pub fn accumulate(&mut self, id: ParamId, delta: &Matrix<T>) {
        self.values[id.0].add_assign(delta);
    }

    pub fn accumulate_row(&mut self, id: ParamId, delta: &[T]) {
        for (a, &d) in self.values[id.0].as_mut_slice().iter_mut().zip(delta) {
            *a += d;
        }
    }

    pub fn add(&mut self, other: &Gradients<T>) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: T) {
        for m in &mut self.values {
            m.scale(s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(Matrix::is_finite)
    }

    pub fn first_non_finite(&self, params: &ParameterStore<T>) -> Option<String> {
        self.values
            .iter()
            .position(|m| !m.is_finite())
            .map(|i| params.names[i].clone())
    }

    pub fn global_norm(&self) -> T {
        self.values
            .iter()
            .flat_map(|m| m.as_slice())
            .fold(T::zero(), |acc, &g| acc + g * g)
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    #[test]
    fn checkpoint_roundtrip_preserves_values_and_meta() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParameterStore::<f32>::new();
        store.add("w", 3, 2, Init::Glorot, &mut rng);
        store.add("b", 1, 2, Init::Zeros, &mut rng);
        store.add("tok", 1, 4, Init::Ones, &mut rng);
        let meta = serde_json::json!({"embedder_id": "x"});
        let bytes = store.to_bytes(&meta);
        let (back, meta_back) = ParameterStore::<f32>::from_bytes(&bytes).unwrap();
        assert_eq!(back, store);
        assert_eq!(meta_back, meta);
        assert!(matches!(
            ParameterStore::<f64>::from_bytes(&bytes),
            Err(Error::Checkpoint(_))
        ));
        assert!(ParameterStore::<f32>::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn glorot_bounds_and_seed_reproducibility() {
        let build = || {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut s = ParameterStore::<f64>::new();
            s.add("w", 10, 20, Init::Glorot, &mut rng);
            s
        };
        let a = build();
        let bound = (6.0f64 / 30.0).sqrt();
        assert!(a.get(ParamId(0)).as_slice().iter().all(|v| v.abs() <= bound));
        assert_eq!(a, build());
        let f32_store = {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut s = ParameterStore::<f32>::new();
            s.add("w", 10, 20, Init::Glorot, &mut rng);
            s
        };
        assert_eq!(f32_store, a.cast::<f32>());
    }
}
