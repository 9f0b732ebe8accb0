//! Named parameter storage, Glorot initialization and binding onto a tape.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{Tape, Tensor, Var};

/// Parameter tensors keyed by their stable checkpoint names.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    /// Redraws every entry: matrices Glorot-uniform, vectors U(-0.5, 0.5).
    /// Used to test with generic parameters, where zero or unit
    /// initial values would hide terms.
    pub fn randomize(&mut self, seed: u64) {
        let mut rng = SplitMix64::new(seed);
        for t in self.params.values_mut() {
            let limit = match *t.shape() {
                [rows, cols] => (6.0 / (rows + cols) as f64).sqrt(),
                _ => 0.5,
            };
            for v in t.data_mut() {
                *v = rng.uniform(-limit, limit);
            }
        }
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Puts every parameter on the tape as a gradient-tracking leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bindings {
        self.bind_with(tape, true)
    }

    pub fn bind_with(&self, tape: &mut Tape, requires_grad: bool) -> Bindings {
        let vars = self
            .params
            .iter()
            .map(|(name, t)| (name.clone(), tape.leaf(t.clone(), requires_grad)))
            .collect();
        Bindings { vars }
    }

    /// Gradients for every bound parameter (zeros where none flowed).
    pub fn gradients(&self, tape: &Tape, bindings: &Bindings) -> BTreeMap<String, Vec<f64>> {
        self.params
            .iter()
            .map(|(name, t)| {
                let g = bindings
                    .vars
                    .get(name)
                    .and_then(|&v| tape.grad(v))
                    .map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec);
                (name.clone(), g)
            })
            .collect()
    }

    pub fn to_serialized(&self) -> BTreeMap<String, SerializedTensor> {
        self.params
            .iter()
            .map(|(k, t)| {
                (
                    k.clone(),
                    SerializedTensor {
                        shape: t.shape().to_vec(),
                        data: t.data().to_vec(),
                    },
                )
            })
            .collect()
    }

    pub fn from_serialized(map: BTreeMap<String, SerializedTensor>) -> Result<Self> {
        let mut store = ParamStore::new();
        for (name, st) in map {
            let t = Tensor::new(st.shape, st.data).map_err(|e| Error::Config(format!("parameter {name}: {e}")))?;
            store.insert(name, t);
        }
        Ok(store)
    }
}

/// Tape handles for a bound [`ParamStore`].
#[derive(Debug, Clone, Default)]
pub struct Bindings {
    vars: BTreeMap<String, Var>,
}

impl Bindings {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn opt(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }
}

/// On-disk form of one parameter: `{shape, flat row-major data}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SerializedTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Seeded initializer used while a model registers its parameters.
pub struct Initializer {
    rng: SplitMix64,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer {
            rng: SplitMix64::new(seed),
        }
    }

    /// Uniform Glorot: U(±sqrt(6 / (fan_in + fan_out))).
    pub fn glorot(&mut self, fan_in: usize, fan_out: usize) -> Tensor {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| self.rng.uniform(-limit, limit)).collect();
        Tensor::new(vec![fan_in, fan_out], data).expect("finite by construction")
    }

    /// Unit-variance uniform rows for lookup tables.
    pub fn embedding(&mut self, rows: usize, dim: usize) -> Tensor {
        let limit = 3f64.sqrt();
        let data = (0..rows * dim).map(|_| self.rng.uniform(-limit, limit)).collect();
        Tensor::new(vec![rows, dim], data).expect("finite by construction")
    }

    pub fn uniform(&mut self, shape: &[usize], limit: f64) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.uniform(-limit, limit)).collect();
        Tensor::new(shape.to_vec(), data).expect("finite by construction")
    }

    pub fn zeros(&self, len: usize) -> Tensor {
        Tensor::zeros(&[len])
    }

    pub fn ones(&self, len: usize) -> Tensor {
        Tensor::new(vec![len], vec![1.0; len]).expect("finite")
    }
}
