use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::ModelError;
use crate::compute::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameters in registration order. Names are hierarchical
/// (`encoder.layers.0.attn.q.weight`) and unique.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub(crate) fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// A store holding `named` in order. Names must be unique.
    pub fn from_named(named: impl IntoIterator<Item = (String, Tensor)>) -> Result<Self, ModelError> {
        let mut store = Self::new();
        for (name, t) in named {
            store.insert(name, t)?;
        }
        Ok(store)
    }

    pub(crate) fn insert(&mut self, name: String, tensor: Tensor) -> Result<ParamId, ModelError> {
        if self.index.contains_key(&name) {
            return Err(ModelError::DuplicateParameter(name));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(ParamId(self.tensors.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn element_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Overwrites one tensor, keeping its shape contract.
    pub fn set(&mut self, name: &str, tensor: Tensor) -> Result<(), ModelError> {
        let id = self
            .id(name)
            .ok_or_else(|| ModelError::UnexpectedParameter(name.to_string()))?;
        let current = &self.tensors[id.0];
        if current.shape() != tensor.shape() {
            return Err(ModelError::ParameterShape {
                name: name.to_string(),
                expected: current.shape().to_vec(),
                found: tensor.shape().to_vec(),
            });
        }
        self.tensors[id.0] = tensor;
        Ok(())
    }
}

/// Registers parameters under a name prefix, initializing them as it goes.
pub(crate) struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> Builder<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn scope<T>(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut Builder) -> Result<T, ModelError>,
    ) -> Result<T, ModelError> {
        let saved = self.prefix.clone();
        self.prefix = self.full(name);
        let out = f(self);
        self.prefix = saved;
        out
    }

    fn full(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    /// Uniform Xavier: `U(−a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
    pub fn xavier(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId, ModelError> {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| self.rng.gen_range(-limit..limit)).collect();
        let t = Tensor::from_parts(vec![rows, cols], data);
        self.store.insert(self.full(name), t)
    }

    pub fn zeros(&mut self, name: &str, len: usize) -> Result<ParamId, ModelError> {
        self.store.insert(self.full(name), Tensor::zeros(&[len]))
    }

    pub fn ones(&mut self, name: &str, len: usize) -> Result<ParamId, ModelError> {
        self.store.insert(self.full(name), Tensor::ones(&[len]))
    }
}
