//! Shared word-level BiLSTM.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::lstm::{run_lstm, LstmParams};
use crate::params::{ParameterStore, Partition};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderParams {
    pub forward: LstmParams,
    pub backward: LstmParams,
}

impl EncoderParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(EncoderParams {
            forward: LstmParams::new(store, "encoder.fwd", input_dim, hidden_dim, Partition::Shared, rng)?,
            backward: LstmParams::new(store, "encoder.bwd", input_dim, hidden_dim, Partition::Shared, rng)?,
        })
    }

    pub fn from_store(store: &ParameterStore) -> Result<Self> {
        Ok(EncoderParams {
            forward: LstmParams::from_store(store, "encoder.fwd")?,
            backward: LstmParams::from_store(store, "encoder.bwd")?,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.forward.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.forward.hidden_dim + self.backward.hidden_dim
    }

    /// `h_i = forward_i ⊕ backward_i` for every position.
    pub fn encode(&self, g: &mut Graph<'_>, inputs: &[NodeId]) -> Result<Vec<NodeId>> {
        if inputs.is_empty() {
            return Err(Error::Contract("cannot encode an empty sequence".into()));
        }
        if let Some(bad) = inputs.iter().find(|&&v| g.dim(v) != self.input_dim()) {
            return Err(Error::shape("encoder input", self.input_dim(), g.dim(*bad)));
        }
        let fwd = run_lstm(g, inputs, &self.forward, false)?;
        let bwd = run_lstm(g, inputs, &self.backward, true)?;
        fwd.iter()
            .zip(&bwd)
            .map(|(&f, &b)| g.concat(&[f, b]))
            .collect()
    }
}
