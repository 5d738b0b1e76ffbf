use std::collections::HashMap;

use super::{Real, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// A learnable tensor plus its Adam state.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub adam_m: Vec<T>,
    pub adam_v: Vec<T>,
    pub step_count: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    /// Registers a parameter with zeroed moments.
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.params.len());
        let n = tensor.len();
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            tensor,
            adam_m: vec![T::zero(); n],
            adam_v: vec![T::zero(); n],
            step_count: 0,
        });
        id
    }

    /// Registers a parameter with existing optimizer state.
    pub fn insert(&mut self, param: Parameter<T>) -> Result<ParamId> {
        let n = param.tensor.len();
        if param.adam_m.len() != n || param.adam_v.len() != n {
            return Err(Error::Checkpoint(format!(
                "moment buffers of {} do not match its shape",
                param.name
            )));
        }
        if self.by_name.contains_key(&param.name) {
            return Err(Error::Checkpoint(format!("duplicate parameter {}", param.name)));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(param.name.clone(), id);
        self.params.push(param);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn element_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Same parameters converted to another precision, optimizer state
    /// included.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::of(x.as_f64())).collect();
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    tensor: p.tensor.cast(),
                    adam_m: conv(&p.adam_m),
                    adam_v: conv(&p.adam_v),
                    step_count: p.step_count,
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}

/// Per-parameter gradient buffers, allocated on first touch.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    slots: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn new(param_count: usize) -> Self {
        Self {
            slots: vec![None; param_count],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.slots[id.0].as_deref()
    }

    /// Gradient of `id`, or zeros if nothing reached it.
    pub fn dense(&self, id: ParamId, len: usize) -> Vec<T> {
        self.get(id).map_or_else(|| vec![T::zero(); len], <[T]>::to_vec)
    }

    pub fn slot_mut(&mut self, id: ParamId, len: usize) -> &mut [T] {
        self.slots[id.0].get_or_insert_with(|| vec![T::zero(); len])
    }

    pub fn accumulate(&mut self, id: ParamId, grad: &[T]) {
        let slot = self.slot_mut(id, grad.len());
        for (s, &g) in slot.iter_mut().zip(grad) {
            *s += g;
        }
    }

    /// Element-wise sum; `other` must come from the same store.
    pub fn add(&mut self, other: &Gradients<T>) {
        for (i, g) in other.slots.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.slots
            .iter()
            .flatten()
            .flat_map(|g| g.iter())
            .map(|&x| {
                let x = x.as_f64();
                x * x
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        let f = T::of(factor);
        for g in self.slots.iter_mut().flatten() {
            for x in g.iter_mut() {
                *x *= f;
            }
        }
    }

    /// First parameter whose gradient holds a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<ParamId> {
        self.slots.iter().enumerate().find_map(|(i, g)| {
            g.as_ref()
                .filter(|g| g.iter().any(|x| !x.is_finite()))
                .map(|_| ParamId(i))
        })
    }

    pub fn clear(&mut self) {
        for s in &mut self.slots {
            *s = None;
        }
    }
}
