use std::collections::HashMap;

use super::scalar::Scalar;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A trainable tensor with a stable checkpoint name.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Ordered registry of uniquely named parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Registers a parameter and returns its position.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::format("parameters", format!("duplicate name {name:?}")));
        }
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Parameter { name, value });
        Ok(self.params.len() - 1)
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

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.position(name).map(|i| &self.params[i].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.position(name).map(move |i| &mut self.params[i].value)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> Vec<&str> {
        self.params.iter().map(|p| p.name.as_str()).collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Places every parameter on the tape as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> BoundParams {
        BoundParams {
            vars: self.params.iter().map(|p| tape.leaf(p.value.clone())).collect(),
            index: self.index.clone(),
        }
    }
}

/// Tape handles of a [`ParamStore`], in registry order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl BoundParams {
    /// Handles for existing vars under the given names.
    pub fn from_parts(names: Vec<String>, vars: Vec<Var>) -> Self {
        let index = names.into_iter().enumerate().map(|(i, n)| (n, i)).collect();
        BoundParams { vars, index }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::format("parameters", format!("missing {name:?}")))
    }

    /// Gradients in registry order; zeros where backward did not reach.
    pub fn grads<T: Scalar>(&self, tape: &Tape<T>) -> Vec<Vec<T>> {
        self.vars
            .iter()
            .map(|&v| {
                tape.grad(v)
                    .map(<[T]>::to_vec)
                    .unwrap_or_else(|| vec![T::zero(); tape.value(v).numel()])
            })
            .collect()
    }
}
