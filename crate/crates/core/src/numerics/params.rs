//! Trainable parameters, their gradient slots, and the finite-difference
//! oracle every backward pass is checked against.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// A value with its gradient slot.
#[derive(Debug, Clone)]
pub struct GradTensor {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub requires_grad: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    params: Vec<GradTensor>,
    index: HashMap<String, ParamId>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, requires_grad: bool) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.shape());
        self.index.insert(name.clone(), id);
        self.params.push(GradTensor {
            name,
            value,
            grad,
            requires_grad,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &GradTensor {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut GradTensor {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<&GradTensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &GradTensor)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut GradTensor> {
        self.params.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// `grad += weight * g` for every trainable parameter present in `grads`.
    pub fn accumulate(&mut self, grads: &Gradients, weight: f64) {
        for (slot, g) in self.params.iter_mut().zip(&grads.slots) {
            if !slot.requires_grad {
                continue;
            }
            if let Some(g) = g {
                for (dst, src) in slot.grad.data_mut().iter_mut().zip(g) {
                    *dst += weight * src;
                }
            }
        }
    }

    pub fn global_grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| p.requires_grad)
            .flat_map(|p| p.grad.data().iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.requires_grad)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn to_stored(&self) -> Vec<StoredParam> {
        self.params
            .iter()
            .map(|p| StoredParam {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                requires_grad: p.requires_grad,
                values: p.value.data().to_vec(),
            })
            .collect()
    }

    pub fn from_stored(stored: Vec<StoredParam>) -> Result<Self> {
        let mut store = ParameterStore::new();
        for p in stored {
            if store.id(&p.name).is_some() {
                return Err(Error::Validation(format!("duplicate parameter {}", p.name)));
            }
            let value = Tensor::new(p.shape, p.values)?;
            store.add(p.name, value, p.requires_grad);
        }
        Ok(store)
    }
}

/// Serialized form of one parameter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoredParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub requires_grad: bool,
    pub values: Vec<f64>,
}

/// Gradient buffers produced by one backward pass, indexed like the store.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub(crate) slots: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn new(len: usize) -> Self {
        Gradients {
            slots: vec![None; len],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.slots.get(id.0).and_then(|s| s.as_deref())
    }

    pub(crate) fn add(&mut self, id: ParamId, g: &[f64]) {
        match &mut self.slots[id.0] {
            Some(buf) => {
                for (d, s) in buf.iter_mut().zip(g) {
                    *d += s;
                }
            }
            slot @ None => *slot = Some(g.to_vec()),
        }
    }
}

/// Central differences `(L(t + h) - L(t - h)) / 2h` for every coordinate of
/// one parameter.
pub fn finite_diff_gradient<F>(mut loss_fn: F, params: &mut ParameterStore, id: ParamId, h: f64) -> Tensor
where
    F: FnMut(&ParameterStore) -> f64,
{
    let len = params.value(id).len();
    let mut out = Tensor::zeros(params.value(id).shape());
    for k in 0..len {
        let orig = params.value(id).data()[k];
        params.get_mut(id).value.data_mut()[k] = orig + h;
        let up = loss_fn(params);
        params.get_mut(id).value.data_mut()[k] = orig - h;
        let down = loss_fn(params);
        params.get_mut(id).value.data_mut()[k] = orig;
        out.data_mut()[k] = (up - down) / (2.0 * h);
    }
    out
}

/// Scalar version, handy for closed-form checks.
pub fn finite_diff_scalar<F: FnMut(f64) -> f64>(mut f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Below this magnitude a gradient entry is compared on an absolute scale.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// `max_k |a_k - n_k| / max(|a_k|, |n_k|, floor)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
