use std::collections::HashMap;

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Index of an entry in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Learnable,
    /// Persistent state that is not learned (batch-norm running statistics).
    Buffer,
}

#[derive(Clone, Debug)]
struct Entry<T> {
    name: String,
    kind: ParamKind,
    frozen: bool,
    tensor: Tensor<T>,
}

/// Named tensors in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T = f32> {
    entries: Vec<Entry<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    /// Registers a tensor. Learnable tensors get a zeroed gradient buffer.
    ///
    /// Panics on duplicate names; parameter names are fixed by the model layout.
    pub fn insert(&mut self, name: impl Into<String>, mut tensor: Tensor<T>, kind: ParamKind) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter `{name}`");
        tensor.set_requires_grad(kind == ParamKind::Learnable);
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.clone(), id.0);
        self.entries.push(Entry {
            name,
            kind,
            frozen: false,
            tensor,
        });
        id
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

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn kind(&self, id: ParamId) -> ParamKind {
        self.entries[id.0].kind
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].tensor
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| self.get(id))
    }

    /// Replaces the values of an entry, keeping its shape.
    pub fn set_value(&mut self, id: ParamId, value: &Tensor<T>) -> Result<()> {
        let entry = &mut self.entries[id.0];
        if entry.tensor.shape() != value.shape() {
            return Err(Error::TensorShapeMismatch {
                name: entry.name.clone(),
                expected: entry.tensor.shape().to_vec(),
                found: value.shape().to_vec(),
            });
        }
        entry.tensor.set_data(value.data().to_vec());
        Ok(())
    }

    /// Whether an optimizer should update this entry.
    pub fn is_trainable(&self, id: ParamId) -> bool {
        let e = &self.entries[id.0];
        e.kind == ParamKind::Learnable && !e.frozen
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.entries[id.0].frozen
    }

    /// Frozen learnables stop tracking gradients entirely.
    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        let e = &mut self.entries[id.0];
        e.frozen = frozen;
        e.tensor.set_requires_grad(e.kind == ParamKind::Learnable && !frozen);
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.tensor.zero_grad();
        }
    }

    /// Number of learnable scalars (frozen ones included).
    pub fn learnable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Learnable)
            .map(|e| e.tensor.numel())
            .sum()
    }

    pub fn trainable_count(&self) -> usize {
        self.ids()
            .filter(|&id| self.is_trainable(id))
            .map(|id| self.get(id).numel())
            .sum()
    }

    /// Converts every entry to another scalar type, preserving flags.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for e in &self.entries {
            let id = out.insert(e.name.clone(), e.tensor.cast(), e.kind);
            out.set_frozen(id, e.frozen);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn buffers_never_track_gradients() {
        let mut s = ParamStore::<f32>::new();
        let w = s.insert("w", Tensor::zeros([2]), ParamKind::Learnable);
        let m = s.insert("m", Tensor::zeros([2]), ParamKind::Buffer);
        assert!(s.get(w).is_tracked());
        assert!(!s.get(m).is_tracked());
        assert_eq!(s.learnable_count(), 2);
        s.set_frozen(w, true);
        assert!(!s.get(w).is_tracked());
        assert_eq!(s.trainable_count(), 0);
    }

    #[test]
    fn set_value_checks_shape() {
        let mut s = ParamStore::<f32>::new();
        let w = s.insert("w", Tensor::zeros([2]), ParamKind::Learnable);
        assert!(matches!(
            s.set_value(w, &Tensor::zeros([3])),
            Err(Error::TensorShapeMismatch { .. })
        ));
    }
}
