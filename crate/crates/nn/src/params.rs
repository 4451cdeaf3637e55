use std::sync::atomic::{AtomicU64, Ordering};

use crate::{Real, Tensor};

static NEXT_STORE_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Buffers (normalization statistics and the like) are stored alongside
    /// weights but never receive gradients.
    pub trainable: bool,
}

/// Named weights of one network.
///
/// Every store carries a process-unique id so a graph can cache the leaf
/// node of a parameter that is read more than once in a forward pass.
#[derive(Debug)]
pub struct ParamStore<T> {
    id: u64,
    entries: Vec<ParamEntry<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Clone for ParamStore<T> {
    fn clone(&self) -> Self {
        Self { id: fresh_id(), entries: self.entries.clone() }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { id: fresh_id(), entries: Vec::new() }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter name {name}");
        self.entries.push(ParamEntry { name, value, trainable });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.numel()).sum()
    }

    /// Copies every value from `other`, which must have the same layout.
    pub fn copy_values_from(&mut self, other: &ParamStore<T>) {
        assert_eq!(self.entries.len(), other.entries.len(), "parameter layout mismatch");
        for (dst, src) in self.entries.iter_mut().zip(&other.entries) {
            assert_eq!(dst.name, src.name, "parameter layout mismatch");
            assert_eq!(dst.value.shape(), src.value.shape(), "shape mismatch for {}", dst.name);
            dst.value = src.value.clone();
        }
    }

    /// Bit-level equality of all values, ignoring the store id.
    pub fn same_values(&self, other: &ParamStore<T>) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| {
                a.name == b.name
                    && a.value.shape() == b.value.shape()
                    && a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits_eq(y))
            })
    }
}

trait BitsEq {
    fn to_bits_eq(&self, other: &Self) -> bool;
}

impl<T: Real> BitsEq for T {
    fn to_bits_eq(&self, other: &Self) -> bool {
        // NaN payloads are not expected in weights; compare by value otherwise.
        (self.is_nan() && other.is_nan()) || (*self == *other && self.is_sign_negative() == other.is_sign_negative())
    }
}
