//! Named weight storage shared by every network component.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

/// Bound of the uniform distribution used for random initialization.
pub const INIT_RANGE: f32 = 0.08;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WeightSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl WeightSpec {
    pub fn new(name: impl Into<String>, shape: &[usize]) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Name → tensor map, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightStore {
    tensors: BTreeMap<String, Tensor>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fills every spec, in the order given, with draws from
    /// `U[-INIT_RANGE, INIT_RANGE)`.
    pub fn random(specs: &[WeightSpec], rng: &mut Rng) -> Self {
        let mut store = Self::new();
        for spec in specs {
            let t = Tensor::from_fn(&spec.shape, |_| rng.uniform(-INIT_RANGE, INIT_RANGE));
            store.insert(&spec.name, t);
        }
        store
    }

    pub fn filled(specs: &[WeightSpec], value: f32) -> Self {
        let mut store = Self::new();
        for spec in specs {
            store.insert(&spec.name, Tensor::full(&spec.shape, value));
        }
        store
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) {
        self.tensors.insert(name.to_owned(), tensor);
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    /// Looks up `name` and checks it has exactly `shape`.
    pub fn get(&self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let t = self
            .tensors
            .get(name)
            .ok_or_else(|| Error::MissingWeight(name.to_owned()))?;
        if t.shape() != shape {
            return Err(Error::ShapeMismatch {
                name: name.to_owned(),
                expected: shape.to_vec(),
                found: t.shape().to_vec(),
            });
        }
        Ok(t.clone())
    }

    pub fn fetch(&self, spec: &WeightSpec) -> Result<Tensor> {
        self.get(&spec.name, &spec.shape)
    }

    /// Fails on the first spec that is absent or mis-shaped.
    pub fn validate(&self, specs: &[WeightSpec]) -> Result<()> {
        specs.iter().try_for_each(|s| self.fetch(s).map(drop))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }
}

/// A group of parameters that can be described by weight specs and
/// rebuilt from a [`WeightStore`].
pub trait Params: Sized {
    type Config;

    fn specs(config: &Self::Config) -> Vec<WeightSpec>;

    fn load(store: &WeightStore, config: &Self::Config) -> Result<Self>;

    fn random(config: &Self::Config, rng: &mut Rng) -> Self {
        let store = WeightStore::random(&Self::specs(config), rng);
        Self::load(&store, config).expect("specs and loader agree")
    }
}
