use std::collections::BTreeMap;

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// A trainable tensor with its gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    value: Tensor,
    grad: Tensor,
    lr_multiplier: f64,
}

impl Param {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn grad(&self) -> &Tensor {
        &self.grad
    }

    pub fn lr_multiplier(&self) -> f64 {
        self.lr_multiplier
    }

    /// Mutable value buffer alongside the (read-only) gradient. Callers must
    /// call [`Param::round`] after writing if the value is binary32.
    pub fn value_and_grad_mut(&mut self) -> (&mut [f64], &[f64]) {
        (self.value.data_mut(), self.grad.data())
    }

    pub fn round(&mut self) {
        self.value.round();
    }
}

/// Named trainable tensors plus non-trainable state buffers (batchnorm
/// running statistics). Names are hierarchical, dot separated, and iterate in
/// lexicographic order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
    buffers: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, lr_multiplier: f64) -> Result<()> {
        let name = name.into();
        if !(lr_multiplier > 0.0 && lr_multiplier.is_finite()) {
            return Err(TensorError::invalid(
                "ParamStore::insert",
                format!("learning-rate multiplier {lr_multiplier} for `{name}` must be positive"),
            ));
        }
        if self.params.contains_key(&name) || self.buffers.contains_key(&name) {
            return Err(TensorError::DuplicateParam(name));
        }
        let grad = Tensor::zeros(value.shape(), value.dtype());
        self.params.insert(
            name,
            Param {
                value,
                grad,
                lr_multiplier,
            },
        );
        Ok(())
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) || self.buffers.contains_key(&name) {
            return Err(TensorError::DuplicateParam(name));
        }
        self.buffers.insert(name, value);
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.params
            .get(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.params
            .get_mut(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.get(name).map(Param::value)
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor> {
        self.get(name).map(Param::grad)
    }

    /// Replaces a parameter's value, keeping its shape.
    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let p = self.get_mut(name)?;
        crate::tensor::ensure_same_shape("ParamStore::set_value", p.value.shape(), value.shape())?;
        p.value = value.to_dtype(p.value.dtype());
        Ok(())
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor> {
        self.buffers
            .get(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn set_buffer(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .buffers
            .get_mut(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))?;
        crate::tensor::ensure_same_shape("ParamStore::set_buffer", slot.shape(), value.shape())?;
        *slot = value;
        Ok(())
    }

    /// Adds `grad` into the named gradient accumulator.
    pub fn accumulate_grad(&mut self, name: &str, grad: &Tensor) -> Result<()> {
        self.get_mut(name)?.grad.add_assign(grad)
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.buffers.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.shape().numel()).sum()
    }

    /// Trainable scalars in parameters whose name starts with `prefix`.
    pub fn num_scalars_with_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, p)| p.value.shape().numel())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{DType, Shape};

    #[test]
    fn iteration_is_lexicographic() {
        let mut store = ParamStore::new();
        for name in ["sf2.out", "backbone.stem", "fca.attn0"] {
            store
                .insert(name, Tensor::zeros(Shape::scalar(), DType::F64), 1.0)
                .unwrap();
        }
        let names: Vec<_> = store.names().collect();
        assert_eq!(names, ["backbone.stem", "fca.attn0", "sf2.out"]);
    }

    #[test]
    fn duplicates_and_bad_multipliers_are_rejected() {
        let mut store = ParamStore::new();
        let t = Tensor::zeros(Shape::scalar(), DType::F64);
        store.insert("a", t.clone(), 1.0).unwrap();
        assert!(matches!(store.insert("a", t.clone(), 1.0), Err(TensorError::DuplicateParam(_))));
        assert!(store.insert("b", t.clone(), 0.0).is_err());
        assert!(store.insert_buffer("a", t).is_err());
    }

    #[test]
    fn zero_grads_clears_everything() {
        let mut store = ParamStore::new();
        let s = Shape::new(1, 2, 1, 1).unwrap();
        store.insert("w", Tensor::zeros(s, DType::F64), 1.0).unwrap();
        store
            .accumulate_grad("w", &Tensor::full(s, DType::F64, 2.0))
            .unwrap();
        assert_eq!(store.grad("w").unwrap().sum(), 4.0);
        store.zero_grads();
        assert_eq!(store.grad("w").unwrap().sum(), 0.0);
    }
}
