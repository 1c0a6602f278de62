use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use super::tensor::Tensor;
use super::{NumError, NumResult};

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// A named trainable tensor with its gradient accumulator and optimizer
/// state slots (allocated lazily by the optimizer that first needs them).
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub state: Vec<Tensor>,
}

/// Owns every parameter of one model. Creation order is deterministic, and
/// all iteration used for updates and serialization follows either creation
/// order or sorted-name order, so identical construction code yields
/// bit-identical training runs.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a tensor under a unique name.
    pub fn add(&mut self, name: &str, value: Tensor) -> NumResult<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(NumError::DuplicateName(name.to_string()));
        }
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            grad,
            state: Vec::new(),
        });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    /// Register a `rows x cols` matrix initialized uniformly in `[-r, r]`
    /// with `r = sqrt(6 / (fan_in + fan_out))`, fan_in = cols, fan_out = rows.
    pub fn add_matrix(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        rng: &mut ChaCha20Rng,
    ) -> NumResult<ParamId> {
        let r = (6.0 / (rows + cols) as f64).sqrt();
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-r..r)).collect();
        self.add(name, Tensor::from_vec(&[rows, cols], data)?)
    }

    /// Register an all-zero vector (the default for biases and initial
    /// recurrent states).
    pub fn add_zero_vector(&mut self, name: &str, len: usize) -> NumResult<ParamId> {
        self.add(name, Tensor::zeros(&[len]))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
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

    pub fn param(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    /// Parameters in sorted-name order (the serialization order).
    pub fn iter_sorted(&self) -> impl Iterator<Item = &Parameter> {
        self.by_name.values().map(move |id| &self.params[id.0])
    }

    /// Ids in creation order (the update order).
    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Add `g` into the gradient accumulator of `id`.
    pub fn accumulate_grad(&mut self, id: ParamId, g: &Tensor) {
        let dst = self.params[id.0].grad.data_mut();
        debug_assert_eq!(dst.len(), g.len());
        for (d, s) in dst.iter_mut().zip(g.data()) {
            *d += s;
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            for g in p.grad.data_mut() {
                *g = 0.0;
            }
        }
    }

    /// Euclidean norm of the concatenation of every gradient.
    pub fn global_grad_norm(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.grad.data().iter().map(|g| g * g).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// One SGD step over all parameters: rescale gradients so their global
    /// norm is at most `clip` (no-op when `clip` is not finite and positive),
    /// apply L2 weight decay, then descend with learning rate `lr`.
    /// Gradients are cleared afterwards.
    pub fn sgd_step(&mut self, lr: f64, clip: Option<f64>, weight_decay: f64) -> NumResult<()> {
        if !(lr.is_finite() && lr > 0.0) {
            return Err(NumError::InvalidArgument {
                op: "sgd_step",
                detail: format!("learning rate {lr} must be finite and positive"),
            });
        }
        if let Some(c) = clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(NumError::InvalidArgument {
                    op: "sgd_step",
                    detail: format!("clip threshold {c} must be finite and positive"),
                });
            }
        }
        let mut scale = 1.0;
        if let Some(c) = clip {
            let norm = self.global_grad_norm();
            if norm > c {
                scale = c / norm;
            }
        }
        for p in &mut self.params {
            let value = p.value.data_mut();
            let grad = p.grad.data();
            for (v, g) in value.iter_mut().zip(grad) {
                *v -= lr * (scale * g + weight_decay * *v);
            }
        }
        self.zero_grads();
        Ok(())
    }

    /// One AdaDelta step over all parameters.
    ///
    /// Per component: accumulate a decaying mean of squared gradients, take a
    /// step scaled by the ratio of root-mean-square past updates to
    /// root-mean-square gradients, and accumulate the squared update:
    ///
    /// ```text
    /// Eg   <- rho * Eg + (1 - rho) * g^2
    /// dx    = -sqrt(Ed + eps) / sqrt(Eg + eps) * g
    /// Ed   <- rho * Ed + (1 - rho) * dx^2
    /// x    <- x + dx
    /// ```
    ///
    /// State slots start at zero, so the first step moves each component by
    /// `sqrt(eps) / sqrt((1 - rho) * g^2 + eps) * g` in magnitude.
    pub fn adadelta_step(&mut self, rho: f64, eps: f64) -> NumResult<()> {
        if !(0.0..1.0).contains(&rho) {
            return Err(NumError::InvalidArgument {
                op: "adadelta_step",
                detail: format!("rho {rho} must lie in [0, 1)"),
            });
        }
        if !(eps.is_finite() && eps > 0.0) {
            return Err(NumError::InvalidArgument {
                op: "adadelta_step",
                detail: format!("eps {eps} must be finite and positive"),
            });
        }
        for p in &mut self.params {
            if p.state.len() < 2 {
                p.state = vec![Tensor::zeros(p.value.shape()), Tensor::zeros(p.value.shape())];
            }
            let (eg_slot, ed_slot) = p.state.split_at_mut(1);
            let eg = eg_slot[0].data_mut();
            let ed = ed_slot[0].data_mut();
            let value = p.value.data_mut();
            let grad = p.grad.data();
            for i in 0..value.len() {
                let g = grad[i];
                eg[i] = rho * eg[i] + (1.0 - rho) * g * g;
                let dx = -((ed[i] + eps).sqrt() / (eg[i] + eps).sqrt()) * g;
                ed[i] = rho * ed[i] + (1.0 - rho) * dx * dx;
                value[i] += dx;
            }
        }
        self.zero_grads();
        Ok(())
    }
}
