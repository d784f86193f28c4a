use std::collections::HashMap;

use rand::Rng;

use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One trainable tensor with its gradient and Adam moment buffers. The
/// moment buffers stay empty until the optimizer first touches them.
#[derive(Debug, Clone)]
pub struct Param<F> {
    pub name: String,
    pub value: Tensor<F>,
    pub grad: Vec<F>,
    pub adam_m: Vec<F>,
    pub adam_v: Vec<F>,
}

/// Named collection of trainable tensors. Names are unique and shapes are
/// fixed once registered.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<F> {
    params: Vec<Param<F>>,
    by_name: HashMap<String, ParamId>,
    /// Number of optimizer updates applied.
    pub step: u64,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: HashMap::new(),
            step: 0,
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.params.len());
        let n = value.len();
        self.params.push(Param {
            name: name.clone(),
            value,
            grad: vec![F::zero(); n],
            adam_m: Vec::new(),
            adam_v: Vec::new(),
        });
        self.by_name.insert(name, id);
        Ok(id)
    }

    /// Uniform Glorot initialization in `+-sqrt(6 / (fan_in + fan_out))`,
    /// multiplied by `gain`.
    pub fn add_glorot(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Result<ParamId> {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() * gain;
        let data = (0..fan_in * fan_out)
            .map(|_| F::of(rng.random_range(-limit..=limit)))
            .collect();
        self.add(name, Tensor::matrix(fan_in, fan_out, data)?)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Param<F> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<F> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<F> {
        &self.params[id.0].value
    }

    /// Overwrites a parameter's values; the shape must not change.
    pub fn set_value(&mut self, id: ParamId, data: &[F]) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.len() != data.len() {
            return Err(Error::ShapeMismatch {
                op: "set_value",
                detail: format!("`{}` has {} values, got {}", p.name, p.value.len(), data.len()),
            });
        }
        p.value.data_mut().copy_from_slice(data);
        Ok(())
    }

    pub fn grad(&self, id: ParamId) -> &[F] {
        &self.params[id.0].grad
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<F>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<F>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = F::zero());
        }
    }

    /// Adds `scale * grads` into the gradient slots.
    pub fn accumulate(&mut self, grads: &Gradients<F>, scale: F) {
        for (id, g) in grads.iter() {
            let slot = &mut self.params[id.0].grad;
            for (s, v) in slot.iter_mut().zip(g) {
                *s += scale * *v;
            }
        }
    }

    /// Converts every tensor to another scalar type (optimizer state is not
    /// carried over).
    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        let mut out = ParamStore::new();
        for p in &self.params {
            let data = p.value.data().iter().map(|v| G::of(v.f64())).collect();
            let t = Tensor::new(p.value.shape().to_vec(), data).unwrap();
            out.add(p.name.clone(), t).unwrap();
        }
        out.step = self.step;
        out
    }
}

/// Gradients produced by one backward pass, keyed by parameter.
#[derive(Debug, Clone, Default)]
pub struct Gradients<F> {
    entries: Vec<(ParamId, Vec<F>)>,
}

impl<F: Real> Gradients<F> {
    pub(crate) fn push(&mut self, id: ParamId, grad: Vec<F>) {
        self.entries.push((id, grad));
    }

    pub(crate) fn sort(&mut self) {
        self.entries.sort_by_key(|(id, _)| *id);
    }

    pub fn get(&self, id: ParamId) -> Option<&[F]> {
        self.entries
            .iter()
            .find(|(i, _)| *i == id)
            .map(|(_, g)| g.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[F])> {
        self.entries.iter().map(|(id, g)| (*id, g.as_slice()))
    }

    pub fn all_finite(&self) -> bool {
        self.entries
            .iter()
            .all(|(_, g)| g.iter().all(|v| v.is_finite()))
    }
}
