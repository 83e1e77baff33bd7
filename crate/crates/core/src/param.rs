//! Named trainable tensors with gradient slots.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::graph::Gradients;
use crate::tensor::{Scalar, Tensor};

static NEXT_STORE: AtomicU64 = AtomicU64::new(1);

/// Index of a parameter within its store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Process-unique identity of a parameter, used to route gradients from a
/// graph back to the store that owns the parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamKey {
    store: u64,
    index: usize,
}

#[derive(Debug, Clone)]
pub struct Param<T: Scalar> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

#[derive(Debug)]
pub struct ParamStore<T: Scalar = f32> {
    id: u64,
    prefix: String,
    params: Vec<Param<T>>,
}

impl<T: Scalar> Clone for ParamStore<T> {
    /// Clones get a fresh identity, so gradients never leak between copies.
    fn clone(&self) -> Self {
        ParamStore {
            id: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
            prefix: self.prefix.clone(),
            params: self.params.clone(),
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    /// `prefix` is prepended (with a dot) to every parameter name.
    pub fn new(prefix: &str) -> Self {
        ParamStore {
            id: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
            prefix: prefix.to_owned(),
            params: Vec::new(),
        }
    }

    /// `name` with the store prefix applied.
    pub fn qualified(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_owned()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>) -> ParamId {
        let grad = value.zeros_like();
        let name = self.qualified(name);
        self.params.push(Param { name, value, grad });
        ParamId(self.params.len() - 1)
    }

    pub(crate) fn key(&self, id: ParamId) -> ParamKey {
        ParamKey {
            store: self.id,
            index: id.0,
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].grad
    }

    /// Replaces a parameter's value; the shape must not change.
    pub fn set_value(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let slot = &mut self.params[id.0];
        slot.value.expect_same_shape(&value).map_err(|_| {
            Error::ShapeMismatch(format!(
                "parameter {} has shape {:?}, got {:?}",
                slot.name,
                slot.value.shape(),
                value.shape()
            ))
        })?;
        slot.value = value;
        Ok(())
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    /// Adds every gradient in `grads` that belongs to this store.
    pub fn accumulate(&mut self, grads: &Gradients<T>) -> Result<()> {
        for (key, g) in grads.param_grads() {
            if key.store == self.id {
                self.params[key.index].grad.add_assign(g)?;
            }
        }
        Ok(())
    }
}
