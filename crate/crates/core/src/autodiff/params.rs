//! Named parameter storage, binding of parameters onto tapes, and the
//! `CTPK` checkpoint format.
//!
//! A checkpoint is the magic `CTPK`, a little-endian `u32` version, a `u32`
//! manifest length, a JSON manifest (`params`: names and shapes in storage
//! order, plus free-form `extra` metadata), then every parameter as
//! little-endian `f32`, concatenated in manifest order.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{numel, Grads, Real, Shape, Tape, Tensor, Var};
use crate::error::{CtError, Result};
use crate::io::{decode_container, encode_container, write_atomic};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CTPK";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    shapes: Vec<Shape>,
    data: Vec<Vec<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            shapes: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, shape: Shape, data: Vec<T>) -> Result<usize> {
        if self.index.contains_key(name) {
            return Err(CtError::config(format!("duplicate parameter name {name}")));
        }
        if data.len() != numel(&shape) {
            return Err(CtError::dim(format!(
                "parameter {name}: {} values for shape {shape:?}",
                data.len()
            )));
        }
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.shapes.push(shape);
        self.data.push(data);
        Ok(self.names.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn shape(&self, i: usize) -> Shape {
        self.shapes[i]
    }

    pub fn values(&self, i: usize) -> &[T] {
        &self.data[i]
    }

    pub fn values_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i]
    }

    pub fn get(&self, name: &str) -> Option<&[T]> {
        self.index_of(name).map(|i| self.values(i))
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.data.iter().map(Vec::len).sum()
    }

    /// Scalar count of parameters whose names start with `prefix`.
    pub fn count_with_prefix(&self, prefix: &str) -> usize {
        self.names
            .iter()
            .zip(&self.data)
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, d)| d.len())
            .sum()
    }

    /// Zero-filled buffers shaped like every parameter.
    pub fn zeros_like(&self) -> Vec<Vec<T>> {
        self.data.iter().map(|d| vec![T::zero(); d.len()]).collect()
    }

    /// Same parameters in another precision.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            shapes: self.shapes.clone(),
            data: self
                .data
                .iter()
                .map(|d| d.iter().map(|v| U::from_f64(v.as_f64())).collect())
                .collect(),
            index: self.index.clone(),
        }
    }

    pub fn save(&self, path: &Path, extra: &serde_json::Value) -> Result<()> {
        write_atomic(path, &self.encode(extra))
    }

    pub fn encode(&self, extra: &serde_json::Value) -> Vec<u8> {
        let manifest = Manifest {
            params: self
                .names
                .iter()
                .zip(&self.shapes)
                .map(|(n, s)| Entry {
                    name: n.clone(),
                    shape: s.to_vec(),
                })
                .collect(),
            extra: extra.clone(),
        };
        let meta = serde_json::to_string(&manifest).expect("manifest serializes");
        let values: Vec<f32> = self.data.iter().flatten().map(|v| v.as_f64() as f32).collect();
        encode_container(CHECKPOINT_MAGIC, &meta, &values)
    }

    /// Read a checkpoint, returning the parameters and the `extra` metadata.
    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        let bytes = std::fs::read(path).map_err(|e| CtError::io(path, e))?;
        Self::decode(path, &bytes)
    }

    pub fn decode(path: &Path, bytes: &[u8]) -> Result<(Self, serde_json::Value)> {
        let parse = |text: &str| -> Result<Manifest> {
            serde_json::from_str(text).map_err(|e| CtError::format(path, format!("invalid manifest: {e}")))
        };
        let (meta, values) = decode_container(path, bytes, CHECKPOINT_MAGIC, |m| {
            let manifest = parse(m)?;
            Ok(manifest.params.iter().map(|e| e.shape.iter().product::<usize>()).sum())
        })?;
        let manifest = parse(&meta)?;
        let mut store = ParamStore::new();
        let mut offset = 0;
        for e in &manifest.params {
            let shape: Shape = e
                .shape
                .as_slice()
                .try_into()
                .map_err(|_| CtError::format(path, format!("parameter {} has rank {}", e.name, e.shape.len())))?;
            let n = numel(&shape);
            let data = values[offset..offset + n].iter().map(|&v| T::from_f64(v as f64)).collect();
            offset += n;
            store
                .insert(&e.name, shape, data)
                .map_err(|err| CtError::format(path, err.to_string()))?;
        }
        Ok((store, manifest.extra))
    }
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    params: Vec<Entry>,
    #[serde(default)]
    extra: serde_json::Value,
}

/// Records which tape leaves stand for which stored parameters.
#[derive(Clone, Debug, Default)]
pub struct Binding {
    pairs: Vec<(usize, Var)>,
}

impl Binding {
    pub fn new() -> Self {
        Binding { pairs: Vec::new() }
    }

    /// Put parameter `name` on the tape as a gradient-tracking leaf.
    pub fn param<T: Real>(&mut self, tape: &mut Tape<T>, store: &ParamStore<T>, name: &str) -> Result<Var> {
        let i = store
            .index_of(name)
            .ok_or_else(|| CtError::config(format!("unknown parameter {name}")))?;
        let v = tape.leaf(
            Tensor {
                shape: store.shape(i),
                data: store.values(i).to_vec(),
            },
            true,
        );
        self.pairs.push((i, v));
        Ok(v)
    }

    pub fn pairs(&self) -> &[(usize, Var)] {
        &self.pairs
    }

    /// Add this tape's parameter gradients into `full` (indexed like the store).
    pub fn accumulate<T: Real>(&self, grads: &Grads<T>, full: &mut [Vec<T>]) {
        for &(i, v) in &self.pairs {
            if let Some(g) = grads.get(v) {
                full[i].iter_mut().zip(g).for_each(|(d, &s)| *d += s);
            }
        }
    }
}
