use std::collections::BTreeSet;

use sha2::{Digest, Sha256};

use super::tape::Grads;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which side of the freeze schedule a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Group {
    Pretrained,
    Downstream,
}

#[derive(Clone, Debug)]
pub struct Parameter {
    name: String,
    value: Tensor,
    grad: Option<Tensor>,
    group: Group,
    trainable: bool,
}

impl Parameter {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Tensor {
        &mut self.value
    }

    pub fn grad(&self) -> Option<&Tensor> {
        self.grad.as_ref()
    }

    pub fn group(&self) -> Group {
        self.group
    }

    /// Buffers (e.g. a nearest-neighbour codebook) are stored but never optimized.
    pub fn trainable(&self) -> bool {
        self.trainable
    }
}

/// Owns every named tensor of a model together with its gradient buffer.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a trainable parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor, group: Group) -> ParamId {
        self.insert(name.into(), value, group, true)
    }

    /// Registers a non-trainable buffer.
    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor, group: Group) -> ParamId {
        self.insert(name.into(), value, group, false)
    }

    fn insert(&mut self, name: String, value: Tensor, group: Group, trainable: bool) -> ParamId {
        assert!(
            self.find(&name).is_none(),
            "duplicate parameter name {name}"
        );
        self.params.push(Parameter {
            name,
            value,
            grad: None,
            group,
            trainable,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params
            .iter()
            .position(|p| p.name == name)
            .map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.iter()
            .filter(|(_, p)| p.trainable)
            .map(|(id, _)| id)
            .collect()
    }

    /// Total number of scalar entries over trainable parameters.
    pub fn num_trainable(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.numel())
            .sum()
    }

    /// Resets every gradient buffer to zeros.
    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = Some(Tensor::zeros(p.value.shape()));
        }
    }

    /// Drops every gradient buffer.
    pub fn clear_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Adds the parameter gradients of one backward sweep into the stored buffers.
    pub fn accumulate(&mut self, grads: &Grads) {
        for (id, g) in grads.params() {
            let p = &mut self.params[id.0];
            match &mut p.grad {
                Some(existing) => existing.add_assign(g),
                slot @ None => *slot = Some(g.clone()),
            }
        }
    }

    /// Snapshot of all values, for best-checkpoint bookkeeping.
    pub fn values(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn load_values(&mut self, values: &[Tensor]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::contract(format!(
                "expected {} tensors, got {}",
                self.params.len(),
                values.len()
            )));
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            if p.value.shape() != v.shape() {
                return Err(Error::dim("load_values", p.value.shape(), v.shape()));
            }
            p.value = v.clone();
        }
        Ok(())
    }

    /// Copies every same-named tensor of `other` into this store.
    pub fn copy_matching(&mut self, other: &ParamStore) -> Result<usize> {
        let mut copied = 0;
        for p in &mut self.params {
            if let Some(src) = other.find(&p.name).map(|id| other.get(id)) {
                if src.value.shape() != p.value.shape() {
                    return Err(Error::dim("copy_matching", p.value.shape(), src.value.shape()));
                }
                p.value = src.value.clone();
                copied += 1;
            }
        }
        Ok(copied)
    }

    /// SHA-256 over names and values of one group, in registration order.
    pub fn group_hash(&self, group: Group) -> String {
        let mut hasher = Sha256::new();
        for p in self.params.iter().filter(|p| p.group == group) {
            hasher.update(p.name.as_bytes());
            hasher.update(p.value.to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }

    pub fn partition(&self) -> ParameterPartition {
        ParameterPartition::from_store(self)
    }
}

/// A set of parameters an optimizer step is allowed to touch.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParamSelector(BTreeSet<ParamId>);

impl ParamSelector {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn contains(&self, id: ParamId) -> bool {
        self.0.contains(&id)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.0.iter().copied()
    }

    pub fn union(&self, other: &ParamSelector) -> ParamSelector {
        ParamSelector(self.0.union(&other.0).copied().collect())
    }
}

impl FromIterator<ParamId> for ParamSelector {
    fn from_iter<I: IntoIterator<Item = ParamId>>(iter: I) -> Self {
        ParamSelector(iter.into_iter().collect())
    }
}

/// Split of the trainable parameters into the pretrained encoder and the
/// downstream classifier.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParameterPartition {
    pretrained: ParamSelector,
    downstream: ParamSelector,
}

impl ParameterPartition {
    pub fn from_store(store: &ParamStore) -> Self {
        let pick = |g: Group| {
            store
                .iter()
                .filter(|(_, p)| p.trainable && p.group == g)
                .map(|(id, _)| id)
                .collect()
        };
        let partition = ParameterPartition {
            pretrained: pick(Group::Pretrained),
            downstream: pick(Group::Downstream),
        };
        debug_assert!(partition.validate(store).is_ok());
        partition
    }

    pub fn pretrained(&self) -> &ParamSelector {
        &self.pretrained
    }

    pub fn downstream(&self) -> &ParamSelector {
        &self.downstream
    }

    pub fn all(&self) -> ParamSelector {
        self.pretrained.union(&self.downstream)
    }

    /// Checks the two sets are disjoint and together cover every trainable parameter.
    pub fn validate(&self, store: &ParamStore) -> Result<()> {
        if let Some(id) = self.pretrained.iter().find(|id| self.downstream.contains(*id)) {
            return Err(Error::contract(format!(
                "parameter {} is in both partitions",
                store.get(id).name()
            )));
        }
        for id in store.trainable_ids() {
            if !self.pretrained.contains(id) && !self.downstream.contains(id) {
                return Err(Error::contract(format!(
                    "parameter {} is in neither partition",
                    store.get(id).name()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("enc.w", Tensor::ones(&[2, 2]), Group::Pretrained);
        s.add_buffer("enc.codebook", Tensor::ones(&[4, 2]), Group::Pretrained);
        s.add("head.w", Tensor::ones(&[2, 3]), Group::Downstream);
        s
    }

    #[test]
    fn partition_is_disjoint_and_complete() {
        let s = store();
        let p = s.partition();
        p.validate(&s).unwrap();
        assert_eq!(p.pretrained().len(), 1);
        assert_eq!(p.downstream().len(), 1);
        assert_eq!(p.all().len(), 2);
    }

    #[test]
    fn group_hash_tracks_only_its_group() {
        let mut s = store();
        let before = s.group_hash(Group::Pretrained);
        let head = s.find("head.w").unwrap();
        s.get_mut(head).value_mut().data_mut()[0] = 5.0;
        assert_eq!(before, s.group_hash(Group::Pretrained));
        let enc = s.find("enc.w").unwrap();
        s.get_mut(enc).value_mut().data_mut()[0] = 5.0;
        assert_ne!(before, s.group_hash(Group::Pretrained));
    }

    #[test]
    #[should_panic(expected = "duplicate")]
    fn duplicate_names_rejected() {
        let mut s = store();
        s.add("head.w", Tensor::ones(&[1]), Group::Downstream);
    }
}
