use std::collections::btree_map::{self, BTreeMap};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::NetworkSpec;
use crate::tensor::{Tensor, TensorError};

const MAGIC: &[u8; 4] = b"MTW1";

#[derive(Debug, Error)]
pub enum WeightError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic {0:?}, expected \"MTW1\"")]
    BadMagic([u8; 4]),
    #[error("weight file truncated while reading {0}")]
    Truncated(&'static str),
    #[error("{0} trailing bytes after the last tensor")]
    TrailingData(usize),
    #[error("duplicate parameter {0:?}")]
    DuplicateName(String),
    #[error("parameter name is not valid UTF-8")]
    InvalidName,
    #[error("parameter {0:?} has a malformed shape: {1}")]
    BadShape(String, TensorError),
    #[error("parameter {0:?} contains non-finite values")]
    NonFinite(String),
    #[error("missing parameter {0:?}")]
    MissingParameter(String),
    #[error("parameter {name:?} has shape {actual:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("unexpected parameter {0:?}")]
    UnexpectedParameter(String),
}

/// Named parameter tensors, ordered by name. Immutable once loaded; shared
/// freely across threads.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    tensors: BTreeMap<String, Tensor>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces a tensor, returning the previous one.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Option<Tensor> {
        self.tensors.insert(name.into(), tensor)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.tensors.remove(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> btree_map::Iter<'_, String, Tensor> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    /// Adds every tensor of `other`, replacing same-named entries.
    pub fn merge(&mut self, other: WeightStore) {
        self.tensors.extend(other.tensors);
    }

    /// Required tensor with the given name.
    pub fn require(&self, name: &str) -> Result<&Tensor, WeightError> {
        self.get(name).ok_or_else(|| WeightError::MissingParameter(name.to_string()))
    }

    /// Checks that every parameter of `spec` is present with the right shape
    /// and that no other parameter carries the stage prefix. Tensors of other
    /// stages are ignored so one store can hold the whole cascade.
    pub fn validate(&self, spec: &NetworkSpec) -> Result<(), WeightError> {
        let expected = spec.parameters();
        for (name, shape) in &expected {
            let t = self.require(name)?;
            if t.shape() != shape.as_slice() {
                return Err(WeightError::ShapeMismatch {
                    name: name.clone(),
                    expected: shape.clone(),
                    actual: t.shape().to_vec(),
                });
            }
        }
        let prefix = format!("{}.", spec.stage.prefix());
        for name in self.names().filter(|n| n.starts_with(&prefix)) {
            if !expected.iter().any(|(e, _)| e == name) {
                return Err(WeightError::UnexpectedParameter(name.to_string()));
            }
        }
        Ok(())
    }

    /// The subset of tensors belonging to one stage.
    pub fn stage_subset(&self, spec: &NetworkSpec) -> WeightStore {
        let prefix = format!("{}.", spec.stage.prefix());
        WeightStore {
            tensors: self
                .tensors
                .iter()
                .filter(|(n, _)| n.starts_with(&prefix))
                .map(|(n, t)| (n.clone(), t.clone()))
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, WeightError> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            if !t.is_finite() {
                return Err(WeightError::NonFinite(name.clone()));
            }
            let name_bytes = name.as_bytes();
            let len = u16::try_from(name_bytes.len()).map_err(|_| WeightError::InvalidName)?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name_bytes);
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WeightError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
        if &magic != MAGIC {
            return Err(WeightError::BadMagic(magic));
        }
        let count = r.u32("tensor count")?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let name_len = u16::from_le_bytes(r.take(2, "name length")?.try_into().expect("2 bytes"));
            let name = std::str::from_utf8(r.take(name_len as usize, "name")?)
                .map_err(|_| WeightError::InvalidName)?
                .to_string();
            let rank = r.take(1, "rank")?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("extent")? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or(WeightError::Truncated("tensor data"))?, "tensor data")?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let tensor = Tensor::new(shape, data).map_err(|e| WeightError::BadShape(name.clone(), e))?;
            if tensors.insert(name.clone(), tensor).is_some() {
                return Err(WeightError::DuplicateName(name));
            }
        }
        if r.pos != bytes.len() {
            return Err(WeightError::TrailingData(bytes.len() - r.pos));
        }
        Ok(WeightStore { tensors })
    }
}

impl FromIterator<(String, Tensor)> for WeightStore {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        WeightStore {
            tensors: iter.into_iter().collect(),
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], WeightError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(WeightError::Truncated(what))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, WeightError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn save_weights(store: &WeightStore, path: impl AsRef<Path>) -> Result<(), WeightError> {
    fs::write(path, store.to_bytes()?)?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightStore, WeightError> {
    WeightStore::from_bytes(&fs::read(path)?)
}

/// Glorot-uniform weights, zero biases, PReLU slopes 0.25. Deterministic in `seed`.
pub fn init_weights(spec: &NetworkSpec, seed: u64) -> WeightStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    spec.parameters()
        .into_iter()
        .map(|(name, shape)| {
            let tensor = if name.ends_with(".slopes") {
                Tensor::full(&shape, 0.25)
            } else if name.ends_with(".bias") {
                Tensor::zeros(&shape)
            } else {
                let receptive: usize = shape.iter().skip(2).product();
                let fan_in = shape[1] * receptive;
                let fan_out = shape[0] * receptive;
                let limit = (6.0 / (fan_in + fan_out) as f32).sqrt();
                Tensor::from_fn(&shape, |_| rng.gen_range(-limit..limit))
            };
            (name, tensor)
        })
        .collect()
}

/// All-zero weights (slopes included). Every face probability comes out 0.5.
pub fn zero_weights(spec: &NetworkSpec) -> WeightStore {
    spec.parameters()
        .into_iter()
        .map(|(name, shape)| (name, Tensor::zeros(&shape)))
        .collect()
}
