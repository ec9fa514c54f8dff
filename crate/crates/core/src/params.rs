//! Named, partitioned parameter tensors and their gradient buffers.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Handle to a tensor inside a [`ParameterStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which loss terms a tensor belongs to.
///
/// Shared tensors feed every head; head tensors only receive gradient from
/// their own loss term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Partition {
    Shared,
    DomainHead,
    IntentHead,
    SlotHead,
}

impl Partition {
    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Shared => "shared",
            Partition::DomainHead => "domain-head",
            Partition::IntentHead => "intent-head",
            Partition::SlotHead => "slot-head",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "shared" => Some(Partition::Shared),
            "domain-head" => Some(Partition::DomainHead),
            "intent-head" => Some(Partition::IntentHead),
            "slot-head" => Some(Partition::SlotHead),
            _ => None,
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Initialization scheme for a new tensor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    /// Uniform in `±sqrt(6 / (rows + cols))`.
    Xavier,
    /// Uniform in `±bound`.
    Uniform(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor {
    name: String,
    partition: Partition,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ParamTensor {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn partition(&self) -> Partition {
        self.partition
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// All trainable tensors of a network, in declaration order.
///
/// Shapes are fixed once a tensor is added; only values can change.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    tensors: Vec<ParamTensor>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        partition: Partition,
        rows: usize,
        cols: usize,
        init: Init,
        rng: &mut R,
    ) -> Result<ParamId> {
        let n = rows * cols;
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Xavier => {
                let bound = (6.0 / (rows + cols) as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
            }
            Init::Uniform(bound) => (0..n).map(|_| rng.gen_range(-bound..=bound)).collect(),
        };
        self.add_with_data(name, partition, rows, cols, data)
    }

    pub fn add_with_data(
        &mut self,
        name: &str,
        partition: Partition,
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    ) -> Result<ParamId> {
        if rows == 0 || cols == 0 {
            return Err(Error::shape(name, "non-empty tensor", format!("{rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::shape(name, rows * cols, data.len()));
        }
        if self.by_name.contains_key(name) {
            return Err(Error::Contract(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.tensors.len());
        self.tensors.push(ParamTensor {
            name: name.to_string(),
            partition,
            rows,
            cols,
            data,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(ParamTensor::len).sum()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor {
        &self.tensors[id.0]
    }

    pub fn data(&self, id: ParamId) -> &[f64] {
        &self.tensors[id.0].data
    }

    /// Mutable view of a tensor's values. The length cannot change.
    pub fn data_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.tensors[id.0].data
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamTensor)> {
        self.tensors.iter().enumerate().map(|(i, t)| (ParamId(i), t))
    }

    /// Copy all values from `other`, which must have the same layout.
    pub fn copy_values_from(&mut self, other: &ParameterStore) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::Contract("parameter stores have different layouts".into()));
        }
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            if dst.name != src.name || dst.data.len() != src.data.len() {
                return Err(Error::shape(&dst.name, dst.data.len(), src.data.len()));
            }
            dst.data.copy_from_slice(&src.data);
        }
        Ok(())
    }
}

/// Dense gradient buffers laid out like a [`ParameterStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParameterStore) -> Self {
        Gradients {
            grads: store.tensors.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn clear(&mut self) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.grads[id.0]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|x| *x *= factor);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn xavier_bounds_and_zero_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParameterStore::new();
        let w = store
            .add("w", Partition::Shared, 4, 2, Init::Xavier, &mut rng)
            .unwrap();
        let b = store
            .add("b", Partition::Shared, 4, 1, Init::Zeros, &mut rng)
            .unwrap();
        let bound = 1.0f64;
        assert!(store.data(w).iter().all(|x| x.abs() <= bound));
        assert!(store.data(b).iter().all(|&x| x == 0.0));
        assert_eq!(store.num_scalars(), 12);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParameterStore::new();
        store
            .add_with_data("w", Partition::Shared, 1, 1, vec![0.0])
            .unwrap();
        assert!(store
            .add_with_data("w", Partition::SlotHead, 1, 1, vec![0.0])
            .is_err());
    }

    #[test]
    fn data_length_must_match_shape() {
        let mut store = ParameterStore::new();
        let err = store
            .add_with_data("w", Partition::Shared, 2, 2, vec![0.0; 3])
            .unwrap_err();
        assert!(err.to_string().contains("`w`"));
    }
}
