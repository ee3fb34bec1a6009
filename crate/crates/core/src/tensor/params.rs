use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::rng::{truncated_normal, XRng};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// How a parameter is initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Truncated normal with the given standard deviation.
    Normal(f64),
    Zeros,
    Ones,
}

/// Declared parameter: shape plus initializer. Buffers (`trainable == false`)
/// are checkpointed but never updated by the optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
    pub trainable: bool,
}

impl ParamSpec {
    pub fn weight(name: impl Into<String>, shape: &[usize]) -> Self {
        Self { name: name.into(), shape: shape.to_vec(), init: Init::Normal(0.02), trainable: true }
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self { name: name.into(), shape: shape.to_vec(), init: Init::Zeros, trainable: true }
    }

    pub fn ones(name: impl Into<String>, shape: &[usize]) -> Self {
        Self { name: name.into(), shape: shape.to_vec(), init: Init::Ones, trainable: true }
    }

    pub fn buffer(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        Self { name: name.into(), shape: shape.to_vec(), init, trainable: false }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub trainable: bool,
}

/// Ordered, name-addressable parameter collection.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self { params: Vec::new(), index: HashMap::new() }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn init(specs: &[ParamSpec], rng: &mut XRng) -> Result<Self> {
        let mut store = Self::default();
        for s in specs {
            let n = s.numel();
            let data: Vec<T> = match s.init {
                Init::Normal(std) => (0..n).map(|_| T::of(truncated_normal(rng, std))).collect(),
                Init::Zeros => vec![T::zero(); n],
                Init::Ones => vec![T::one(); n],
            };
            store.insert(Param { name: s.name.clone(), value: Tensor::new(data, s.shape.clone())?, trainable: s.trainable })?;
        }
        Ok(store)
    }

    pub fn insert(&mut self, p: Param<T>) -> Result<()> {
        if self.index.contains_key(&p.name) {
            return Err(Error::Invalid(format!("duplicate parameter {}", p.name)));
        }
        self.index.insert(p.name.clone(), self.params.len());
        self.params.push(p);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.position(name)
            .map(|i| &self.params[i].value)
            .ok_or_else(|| Error::Invalid(format!("unknown parameter {name}")))
    }

    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let i = self.position(name).ok_or_else(|| Error::Invalid(format!("unknown parameter {name}")))?;
        if self.params[i].value.shape() != value.shape() {
            return Err(Error::Shape(format!(
                "{name}: stored {:?} vs new {:?}",
                self.params[i].value.shape(),
                value.shape()
            )));
        }
        self.params[i].value = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn numel(&self, trainable_only: bool) -> usize {
        self.params.iter().filter(|p| p.trainable || !trainable_only).map(|p| p.value.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param { name: p.name.clone(), value: p.value.cast(), trainable: p.trainable })
                .collect(),
            index: self.index.clone(),
        }
    }
}
