//! Named tensors, their on-disk container, and the final-layer weight
//! transfer between keypoint schemas.

mod container;
mod surgery;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use container::{from_bytes, load_tensor_map, save_tensor_map, to_bytes};
pub use surgery::remap_head_weights;

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated payload: tensor {name:?} ends at byte {end}, payload has {available}")]
    TruncatedPayload { name: String, end: u64, available: u64 },
    #[error("overlapping tensors {first:?} and {second:?}")]
    Overlap { first: String, second: String },
    #[error("duplicate tensor name {0:?}")]
    DuplicateName(String),
    #[error("tensor {name:?}: shape {shape:?} needs {expected} bytes, record has {found}")]
    SizeMismatch {
        name: String,
        shape: Vec<usize>,
        expected: usize,
        found: usize,
    },
    #[error("missing tensor {0:?}")]
    MissingTensor(String),
    #[error("tensor {name:?}: {reason}")]
    Shape { name: String, reason: String },
    #[error("tensor {name:?} has dtype {dtype}, expected F32")]
    DType { name: String, dtype: DType },
    #[error("invalid mapping: {0}")]
    Mapping(String),
}

/// Element type tag, spelled as in the header (`"F32"`, ...).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DType {
    F64,
    F32,
    F16,
    BF16,
    I64,
    I32,
    I16,
    I8,
    U8,
    BOOL,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F64 | DType::I64 => 8,
            DType::F32 | DType::I32 => 4,
            DType::F16 | DType::BF16 | DType::I16 => 2,
            DType::I8 | DType::U8 | DType::BOOL => 1,
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for DType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| format!("unknown dtype {s:?}"))
    }
}

/// One tensor: dtype, shape and the raw little-endian row-major bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorRecord {
    dtype: DType,
    shape: Vec<usize>,
    data: Vec<u8>,
}

impl TensorRecord {
    pub fn from_bytes(dtype: DType, shape: Vec<usize>, data: Vec<u8>) -> Result<Self, WeightsError> {
        let expected = shape.iter().product::<usize>() * dtype.size();
        if expected != data.len() {
            return Err(WeightsError::SizeMismatch {
                name: String::new(),
                shape,
                expected,
                found: data.len(),
            });
        }
        Ok(Self { dtype, shape, data })
    }

    pub fn from_f32(shape: Vec<usize>, values: &[f32]) -> Result<Self, WeightsError> {
        let data = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        Self::from_bytes(DType::F32, shape, data)
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn num_elements(&self) -> usize {
        self.shape.iter().product()
    }

    /// Decodes the buffer as `f32`; `None` for other dtypes.
    pub fn to_f32(&self) -> Option<Vec<f32>> {
        (self.dtype == DType::F32).then(|| {
            self.data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect()
        })
    }
}

/// Tensors keyed by unique name, iterated in sorted name order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TensorMap {
    records: BTreeMap<String, TensorRecord>,
    metadata: BTreeMap<String, String>,
}

impl TensorMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a tensor; names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, record: TensorRecord) -> Result<(), WeightsError> {
        let name = name.into();
        if self.records.contains_key(&name) || name == "__metadata__" {
            return Err(WeightsError::DuplicateName(name));
        }
        self.records.insert(name, record);
        Ok(())
    }

    /// Replaces or adds a tensor.
    pub fn set(&mut self, name: impl Into<String>, record: TensorRecord) {
        self.records.insert(name.into(), record);
    }

    pub fn get(&self, name: &str) -> Option<&TensorRecord> {
        self.records.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.records.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &TensorRecord)> {
        self.records.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Free-form string metadata stored under the header's `__metadata__` key.
    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn metadata_mut(&mut self) -> &mut BTreeMap<String, String> {
        &mut self.metadata
    }
}
