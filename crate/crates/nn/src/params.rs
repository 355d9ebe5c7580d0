//! Named parameter storage.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::BufferUpdate;
use crate::tensor::Tensor;

static NEXT_STORE: AtomicU64 = AtomicU64::new(0);

/// Identifies one tensor inside one [`ParamStore`]. Ids from different stores
/// never collide, so several models may share a [`crate::Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId {
    store: u64,
    index: usize,
}

impl ParamId {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    value: Tensor,
    trainable: bool,
}

/// Owns the tensors of one model: trainable weights plus non-trainable buffers
/// such as batch-norm running statistics. Initialization draws from a private
/// seeded stream, so building the same model twice yields identical weights.
#[derive(Clone, Debug)]
pub struct ParamStore {
    id: u64,
    entries: Vec<Entry>,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            id: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
            entries: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn owns(&self, id: ParamId) -> bool {
        id.store == self.id
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name {name}"
        );
        self.entries.push(Entry {
            name,
            value,
            trainable,
        });
        ParamId {
            store: self.id,
            index: self.entries.len() - 1,
        }
    }

    /// Trainable tensor drawn from `U(-bound, bound)`.
    pub fn uniform(&mut self, name: impl Into<String>, shape: [usize; 4], bound: f64) -> ParamId {
        let rng = &mut self.rng;
        let t = Tensor::from_fn(shape, |_| rng.random_range(-bound..=bound));
        self.add(name, t, true)
    }

    pub fn constant(&mut self, name: impl Into<String>, shape: [usize; 4], value: f64) -> ParamId {
        self.add(name, Tensor::full(shape, value), true)
    }

    pub fn buffer(&mut self, name: impl Into<String>, shape: [usize; 4], value: f64) -> ParamId {
        self.add(name, Tensor::full(shape, value), false)
    }

    fn entry(&self, id: ParamId) -> &Entry {
        assert!(self.owns(id), "parameter belongs to another store");
        &self.entries[id.index]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entry(id).value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        assert!(self.owns(id), "parameter belongs to another store");
        &mut self.entries[id.index].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entry(id).name
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entry(id).trainable
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(|index| ParamId {
            store: self.id,
            index,
        })
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.ids().find(|&id| self.name(id) == name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Copies every tensor from a store with the same layout (e.g. a snapshot
    /// taken with `clone`).
    pub fn copy_values_from(&mut self, other: &ParamStore) {
        assert_eq!(
            self.entries.len(),
            other.entries.len(),
            "store layout mismatch"
        );
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            assert_eq!(a.name, b.name, "store layout mismatch");
            a.value = b.value.clone();
        }
    }

    /// Exponential moving average update of batch-norm running statistics.
    /// The running variance tracks the unbiased batch variance.
    pub fn apply_buffer_updates(&mut self, updates: &[BufferUpdate], momentum: f64) {
        for u in updates {
            let count = u.count;
            if !self.owns(u.running_mean) {
                continue;
            }
            let unbias = if count > 1 {
                count as f64 / (count - 1) as f64
            } else {
                1.0
            };
            let rm = self.get_mut(u.running_mean);
            for (r, m) in rm.data_mut().iter_mut().zip(&u.batch_mean) {
                *r = (1.0 - momentum) * *r + momentum * m;
            }
            let rv = self.get_mut(u.running_var);
            for (r, v) in rv.data_mut().iter_mut().zip(&u.batch_var) {
                *r = (1.0 - momentum) * *r + momentum * v * unbias;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_weights() {
        let mut a = ParamStore::new(3);
        let mut b = ParamStore::new(3);
        let ia = a.uniform("w", [2, 3, 3, 3], 0.5);
        let ib = b.uniform("w", [2, 3, 3, 3], 0.5);
        assert_eq!(a.get(ia), b.get(ib));
        assert!(a.get(ia).data().iter().all(|v| v.abs() <= 0.5));
    }

    #[test]
    fn ids_are_store_scoped() {
        let mut a = ParamStore::new(0);
        let b = ParamStore::new(0);
        let id = a.constant("x", [1, 1, 1, 1], 1.0);
        assert!(a.owns(id));
        assert!(!b.owns(id));
    }
}
