use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named trainable array together with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Parameter {
    name: String,
    value: Tensor,
    grad: Tensor,
    requires_grad: bool,
}

impl Parameter {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn grad(&self) -> &Tensor {
        &self.grad
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }
}

/// Gradients produced by one backward pass, keyed by parameter.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    pub(crate) by_param: BTreeMap<ParamId, Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.by_param.get(&id).map(Vec::as_slice)
    }

    pub fn get_mut(&mut self, id: ParamId) -> Option<&mut Vec<f64>> {
        self.by_param.get_mut(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.by_param.iter().map(|(id, g)| (*id, g.as_slice()))
    }
}

/// Ordered collection of named parameters.
///
/// Insertion order is stable and defines checkpoint layout.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::DuplicateParameter(name));
        }
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter {
            name: name.clone(),
            value,
            grad,
            requires_grad: true,
        });
        self.index.insert(name, id);
        Ok(id)
    }

    /// Registers a parameter drawn uniformly from `[-scale, scale]`.
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        scale: f64,
        rng: &mut R,
    ) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-scale..=scale)).collect();
        self.add(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn add_constant(&mut self, name: impl Into<String>, shape: &[usize], fill: f64) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        self.add(name, Tensor::new(shape.to_vec(), vec![fill; n])?)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Adds `grads` into the stored gradients of trainable parameters.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, g) in grads.iter() {
            let p = &mut self.params[id.0];
            if !p.requires_grad {
                continue;
            }
            for (acc, x) in p.grad.data_mut().iter_mut().zip(g) {
                *acc += x;
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| p.requires_grad)
            .flat_map(|p| p.grad.data().iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales all gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let scale = max_norm / norm;
            for p in &mut self.params {
                p.grad.data_mut().iter_mut().for_each(|g| *g *= scale);
            }
        }
        norm
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= factor);
        }
    }

    /// Plain SGD update `w -= lr * grad` on trainable parameters.
    pub fn sgd_step(&mut self, lr: f64) {
        for p in self.params.iter_mut().filter(|p| p.requires_grad) {
            let Parameter { value, grad, .. } = p;
            for (w, g) in value.data_mut().iter_mut().zip(grad.data()) {
                *w -= lr * g;
            }
        }
    }

    /// Clears `requires_grad` on every parameter, producing a snapshot that
    /// records no gradient work when used in a graph.
    pub fn freeze(&mut self) {
        for p in &mut self.params {
            p.requires_grad = false;
        }
    }

    pub fn frozen(&self) -> ParamStore {
        let mut copy = self.clone();
        copy.freeze();
        copy
    }

    pub fn set_requires_grad(&mut self, id: ParamId, on: bool) {
        self.params[id.0].requires_grad = on;
    }

    /// Copies values from `other` for every parameter present in both stores
    /// with identical shapes. Returns the names copied.
    pub fn copy_matching(&mut self, other: &ParamStore) -> Result<Vec<String>> {
        let mut copied = Vec::new();
        for p in &mut self.params {
            if let Some(&src) = other.index.get(&p.name) {
                let src = &other.params[src.0].value;
                if src.shape() != p.value.shape() {
                    return Err(Error::ShapeMismatch {
                        op: "copy_matching",
                        left: p.value.shape().to_vec(),
                        right: src.shape().to_vec(),
                    });
                }
                p.value = src.clone();
                copied.push(p.name.clone());
            }
        }
        Ok(copied)
    }
}
