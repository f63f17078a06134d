//! Named parameter storage shared by every network block.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Handle to a tensor held in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Learnable; receives gradients and optimizer updates.
    Trainable,
    /// Persistent state such as running statistics; never differentiated.
    Buffer,
    /// Fixed weights that participate in the graph without gradients.
    Frozen,
}

#[derive(Clone, Debug)]
struct Entry<T> {
    name: String,
    value: Tensor<T>,
    kind: ParamKind,
    grad: Option<Tensor<T>>,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: Vec<Entry<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>, kind: ParamKind) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let id = self.entries.len();
        self.index.insert(name.clone(), id);
        self.entries.push(Entry {
            name,
            value,
            kind,
            grad: None,
        });
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn ids_of_kind(&self, kind: ParamKind) -> impl Iterator<Item = ParamId> + '_ {
        self.entries
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.kind == kind)
            .map(|(i, _)| ParamId(i))
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn kind(&self, id: ParamId) -> ParamKind {
        self.entries[id.0].kind
    }

    pub fn set_kind(&mut self, id: ParamId, kind: ParamKind) {
        self.entries[id.0].kind = kind;
    }

    pub fn requires_grad(&self, id: ParamId) -> bool {
        self.kind(id) == ParamKind::Trainable
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn grad(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.entries[id.0].grad.as_ref()
    }

    pub fn grad_mut(&mut self, id: ParamId) -> Option<&mut Tensor<T>> {
        self.entries[id.0].grad.as_mut()
    }

    pub fn accumulate_grad(&mut self, id: ParamId, g: &Tensor<T>) {
        let e = &mut self.entries[id.0];
        match e.grad.as_mut() {
            Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += *b),
            None => e.grad = Some(g.clone()),
        }
    }

    pub fn zero_grads(&mut self) {
        self.entries.iter_mut().for_each(|e| e.grad = None);
    }

    /// Total scalar count of trainable tensors.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Trainable)
            .map(|e| e.value.numel())
            .sum()
    }

    /// Freeze every trainable tensor (used when a stage is held fixed).
    pub fn freeze_all(&mut self) {
        for e in &mut self.entries {
            if e.kind == ParamKind::Trainable {
                e.kind = ParamKind::Frozen;
            }
        }
    }

    /// Copy values across by name. Every name in `self` must exist in `src`
    /// with the same shape.
    pub fn load_from(&mut self, src: &ParamStore<T>) -> Result<()> {
        for e in &mut self.entries {
            let other = src.value(src.id(&e.name)?);
            if other.shape() != e.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "`{}` has shape {} in source but {} in model",
                    e.name,
                    other.shape(),
                    e.value.shape()
                )));
            }
            e.value = other.clone();
        }
        Ok(())
    }

    /// Precision conversion of the whole store.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| Entry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                    kind: e.kind,
                    grad: None,
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Iterate `(name, value, kind)` in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>, ParamKind)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.value, e.kind))
    }
}

/// Scoped parameter factory: names are joined with `.` and weights are drawn
/// from the shared generator in creation order.
pub struct Init<'a, T> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a, T: Scalar> Init<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut ChaCha8Rng) -> Self {
        Init {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn scope(&mut self, name: &str) -> Init<'_, T> {
        Init {
            prefix: self.full(name),
            store: self.store,
            rng: self.rng,
        }
    }

    fn full(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    pub fn tensor(&mut self, name: &str, value: Tensor<T>, kind: ParamKind) -> Result<ParamId> {
        let full = self.full(name);
        self.store.insert(full, value, kind)
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(&mut self, name: &str, shape: impl Into<Shape>, bound: f64) -> Result<ParamId> {
        let shape = shape.into();
        let data = (0..shape.numel())
            .map(|_| T::of(self.rng.gen_range(-bound..=bound)))
            .collect();
        self.tensor(name, Tensor::from_vec(shape, data)?, ParamKind::Trainable)
    }

    pub fn constant(&mut self, name: &str, shape: impl Into<Shape>, value: f64) -> Result<ParamId> {
        self.tensor(name, Tensor::full(shape, T::of(value)), ParamKind::Trainable)
    }

    pub fn buffer(&mut self, name: &str, shape: impl Into<Shape>, value: f64) -> Result<ParamId> {
        self.tensor(name, Tensor::full(shape, T::of(value)), ParamKind::Buffer)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        self.rng
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        self.store
    }
}
