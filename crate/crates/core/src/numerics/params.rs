use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::graph::{Gradients, Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
}

/// Named trainable tensors in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::validation(format!("duplicate parameter {name:?}")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            value,
            grad: None,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn get(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn param(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> Option<&Tensor> {
        self.params[id.0].grad.as_ref()
    }

    /// Total scalar count across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Adds the gradients of every parameter leaf on `graph` into the store.
    pub fn accumulate(&mut self, graph: &Graph, grads: &Gradients) {
        for (var, id) in graph.param_leaves() {
            let Some(g) = grads.get(var) else { continue };
            let p = &mut self.params[id.0];
            match &mut p.grad {
                Some(acc) => acc.data_mut().iter_mut().zip(g).for_each(|(a, b)| *a += b),
                None => {
                    p.grad = Some(Tensor::new(p.value.shape().to_vec(), g.to_vec()).expect("shape"))
                }
            }
        }
    }

    /// Runs `backward` from `loss` and accumulates into the store.
    pub fn backward(&mut self, graph: &Graph, loss: Var) -> Result<()> {
        let grads = graph.backward(loss)?;
        self.accumulate(graph, &grads);
        Ok(())
    }

    pub fn to_checkpoint(&self, meta: CheckpointMeta) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            meta,
            params: self
                .params
                .iter()
                .map(|p| NamedTensor {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    data: p.value.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::validation(format!(
                "unsupported checkpoint format {:?}",
                ckpt.format
            )));
        }
        let mut store = ParamStore::new();
        for t in &ckpt.params {
            store.insert(
                t.name.clone(),
                Tensor::new(t.shape.clone(), t.data.clone())?,
            )?;
        }
        Ok(store)
    }
}

pub const CHECKPOINT_FORMAT: &str = "tamarian-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub config_hash: String,
    /// Free-form payload owned by the layer that wrote the checkpoint.
    #[serde(default)]
    pub extra: serde_json::Value,
}

/// Serialized parameter set. JSON numbers are written with shortest
/// round-trip formatting and parsed exactly, so save/load is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub meta: CheckpointMeta,
    pub params: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn checkpoint_round_trip_is_bit_exact(
            data in proptest::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 1..40)
        ) {
            let mut store = ParamStore::new();
            store.insert("w", Tensor::new(vec![data.len()], data.clone()).unwrap()).unwrap();
            let meta = CheckpointMeta { seed: 3, config_hash: "abc".into(), extra: serde_json::Value::Null };
            let json = store.to_checkpoint(meta).to_json().unwrap();
            let back = ParamStore::from_checkpoint(&Checkpoint::from_json(&json).unwrap()).unwrap();
            let got = back.value(back.get("w").unwrap()).data();
            for (a, b) in got.iter().zip(&data) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::new();
        store.insert("a", Tensor::zeros(&[1])).unwrap();
        assert!(store.insert("a", Tensor::zeros(&[1])).is_err());
    }
}
