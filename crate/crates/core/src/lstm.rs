//! Standard LSTM cell (input, forget and output gates, tanh candidate) built
//! from graph nodes.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{Init, ParamId, ParameterStore, Partition};

/// Weights of one LSTM direction.
///
/// Gate pre-activations are `W · (x ⊕ h) + b`, stacked as
/// `[input; forget; output; candidate]`, so `W` is `4H x (D + H)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub weights: ParamId,
    pub bias: ParamId,
    /// Learned initial hidden state.
    pub init_h: ParamId,
    /// Learned initial cell state.
    pub init_c: ParamId,
}

impl LstmParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        partition: Partition,
        rng: &mut R,
    ) -> Result<Self> {
        let weights = store.add(
            &format!("{prefix}.weights"),
            partition,
            4 * hidden_dim,
            input_dim + hidden_dim,
            Init::Xavier,
            rng,
        )?;
        let bias = store.add(&format!("{prefix}.bias"), partition, 4 * hidden_dim, 1, Init::Zeros, rng)?;
        let init_h = store.add(&format!("{prefix}.init_h"), partition, hidden_dim, 1, Init::Zeros, rng)?;
        let init_c = store.add(&format!("{prefix}.init_c"), partition, hidden_dim, 1, Init::Zeros, rng)?;
        Ok(LstmParams {
            input_dim,
            hidden_dim,
            weights,
            bias,
            init_h,
            init_c,
        })
    }

    /// Look up an existing LSTM by name prefix.
    pub fn from_store(store: &ParameterStore, prefix: &str) -> Result<Self> {
        let get = |suffix: &str| {
            let name = format!("{prefix}.{suffix}");
            store
                .id(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))
        };
        let weights = get("weights")?;
        let bias = get("bias")?;
        let init_h = get("init_h")?;
        let init_c = get("init_c")?;
        let w = store.get(weights);
        let hidden_dim = w.rows() / 4;
        if w.rows() != 4 * hidden_dim || w.cols() <= hidden_dim {
            return Err(Error::shape(w.name(), "4H x (D + H)", format!("{}x{}", w.rows(), w.cols())));
        }
        Ok(LstmParams {
            input_dim: w.cols() - hidden_dim,
            hidden_dim,
            weights,
            bias,
            init_h,
            init_c,
        })
    }

    fn check(&self, store: &ParameterStore) -> Result<()> {
        let h = self.hidden_dim;
        let expect = |id: ParamId, rows: usize, cols: usize| {
            let t = store.get(id);
            if t.rows() != rows || t.cols() != cols {
                Err(Error::shape(
                    t.name(),
                    format!("{rows}x{cols}"),
                    format!("{}x{}", t.rows(), t.cols()),
                ))
            } else {
                Ok(())
            }
        };
        expect(self.weights, 4 * h, self.input_dim + h)?;
        expect(self.bias, 4 * h, 1)?;
        expect(self.init_h, h, 1)?;
        expect(self.init_c, h, 1)
    }
}

/// One LSTM step. Returns the new `(h, c)`.
pub fn build_lstm_step(
    g: &mut Graph<'_>,
    x: NodeId,
    h_prev: NodeId,
    c_prev: NodeId,
    params: &LstmParams,
) -> Result<(NodeId, NodeId)> {
    params.check(g.store())?;
    let h = params.hidden_dim;
    if g.dim(x) != params.input_dim {
        return Err(Error::shape("lstm input", params.input_dim, g.dim(x)));
    }
    if g.dim(h_prev) != h {
        return Err(Error::shape("lstm previous hidden state", h, g.dim(h_prev)));
    }
    if g.dim(c_prev) != h {
        return Err(Error::shape("lstm previous cell state", h, g.dim(c_prev)));
    }
    let xh = g.concat(&[x, h_prev])?;
    let z = g.affine(params.weights, params.bias, xh)?;
    let zi = g.slice(z, 0, h)?;
    let zf = g.slice(z, h, h)?;
    let zo = g.slice(z, 2 * h, h)?;
    let zg = g.slice(z, 3 * h, h)?;
    let i = g.sigmoid(zi)?;
    let f = g.sigmoid(zf)?;
    let o = g.sigmoid(zo)?;
    let cand = g.tanh(zg)?;
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c)?;
    let h_new = g.mul(o, tc)?;
    Ok((h_new, c))
}

/// Run an LSTM over `inputs`, left to right or right to left.
///
/// The returned hidden states are in input order either way, so
/// `states[i]` has read `inputs[..=i]` forward or `inputs[i..]` in reverse.
pub fn run_lstm(
    g: &mut Graph<'_>,
    inputs: &[NodeId],
    params: &LstmParams,
    reverse: bool,
) -> Result<Vec<NodeId>> {
    let mut h = g.parameter(params.init_h);
    let mut c = g.parameter(params.init_c);
    let mut states = vec![h; inputs.len()];
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..inputs.len()).rev())
    } else {
        Box::new(0..inputs.len())
    };
    for i in order {
        let (h2, c2) = build_lstm_step(g, inputs[i], h, c, params)?;
        h = h2;
        c = c2;
        states[i] = h;
    }
    Ok(states)
}
