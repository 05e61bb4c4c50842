//! JSON encoding of a [`ParamStore`]: each tensor is `{shape, data}` with
//! `data` the base64 of its little-endian `f64` bytes.

use std::collections::BTreeMap;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

use super::params::Param;
use super::{NnError, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedTensor {
    pub shape: Vec<usize>,
    pub data: String,
}

impl EncodedTensor {
    pub fn encode(t: &Tensor) -> Self {
        let mut bytes = Vec::with_capacity(t.len() * 8);
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        Self {
            shape: t.shape().to_vec(),
            data: STANDARD.encode(bytes),
        }
    }

    pub fn decode(&self, name: &str) -> Result<Tensor, NnError> {
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| NnError::Checkpoint(format!("{name}: bad base64: {e}")))?;
        if bytes.len() % 8 != 0 {
            return Err(NnError::Checkpoint(format!("{name}: byte length {} not a multiple of 8", bytes.len())));
        }
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Tensor::new(self.shape.clone(), data)
            .ok_or_else(|| NnError::Checkpoint(format!("{name}: data length does not match shape {:?}", self.shape)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub m: BTreeMap<String, EncodedTensor>,
    pub v: BTreeMap<String, EncodedTensor>,
}

/// Serializable form of a parameter store and its Adam state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoreDocument {
    pub params: BTreeMap<String, EncodedTensor>,
    pub optimizer: OptimizerState,
}

impl StoreDocument {
    pub fn from_store(store: &ParamStore) -> Self {
        let mut params = BTreeMap::new();
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for (name, p) in store.iter() {
            params.insert(name.clone(), EncodedTensor::encode(&p.value));
            m.insert(name.clone(), EncodedTensor::encode(&p.m));
            v.insert(name.clone(), EncodedTensor::encode(&p.v));
        }
        Self {
            params,
            optimizer: OptimizerState {
                step: store.step(),
                m,
                v,
            },
        }
    }

    pub fn to_store(&self) -> Result<ParamStore, NnError> {
        let mut store = ParamStore::new();
        for (name, enc) in &self.params {
            let value = enc.decode(name)?;
            let mut p = Param::new(value);
            for (src, dst) in [(&self.optimizer.m, &mut p.m), (&self.optimizer.v, &mut p.v)] {
                if let Some(e) = src.get(name) {
                    let t = e.decode(name)?;
                    if t.shape() != dst.shape() {
                        return Err(NnError::Checkpoint(format!("{name}: optimizer moment shape mismatch")));
                    }
                    *dst = t;
                }
            }
            store.insert_param(name.clone(), p);
        }
        store.set_step(self.optimizer.step);
        Ok(store)
    }
}
