use std::collections::HashMap;

use crate::autodiff::{GradUpdate, Gradients};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    /// Adam first moment.
    pub m: Vec<f64>,
    /// Adam second moment.
    pub v: Vec<f64>,
    /// Number of optimizer updates applied to this parameter.
    pub steps: u64,
    pub trainable: bool,
}

/// Named trainable tensors together with their gradient accumulators and
/// optimizer state.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, ParamId>,
    /// Global training step (number of optimizer steps taken).
    pub step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::InvalidConfig(format!(
                "duplicate parameter {name:?}"
            )));
        }
        let id = ParamId(self.params.len());
        let n = value.len();
        self.params.push(Param {
            name: name.to_string(),
            grad: Tensor::zeros(value.shape()),
            value,
            m: vec![0.0; n],
            v: vec![0.0; n],
            steps: 0,
            trainable: true,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.0].trainable = trainable;
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.params[id.0].trainable
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Adds a backward pass result into the accumulators. Frozen parameters
    /// are skipped, so their accumulators stay zero.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, update) in grads.entries() {
            let p = &mut self.params[id.0];
            if !p.trainable {
                continue;
            }
            let acc = p.grad.data_mut();
            match update {
                GradUpdate::Dense(g) => {
                    for (a, b) in acc.iter_mut().zip(g) {
                        *a += b;
                    }
                }
                GradUpdate::Rows {
                    indices,
                    cols,
                    values,
                    frozen_row,
                } => {
                    for (k, &row) in indices.iter().enumerate() {
                        if Some(row) == *frozen_row {
                            continue;
                        }
                        let dst = &mut acc[row * cols..(row + 1) * cols];
                        for (a, b) in dst.iter_mut().zip(&values[k * cols..(k + 1) * cols]) {
                            *a += b;
                        }
                    }
                }
            }
        }
    }

    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}
