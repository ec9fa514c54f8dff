//! Reverse-mode automatic differentiation over vectors and parameter matrices.
//!
//! A [`Graph`] is built symbolically against a borrowed [`ParameterStore`],
//! evaluated with [`Graph::forward`], and differentiated with
//! [`Graph::backward`]. Nodes are appended in topological order, so the node
//! index doubles as the evaluation order.
//!
//! Parameter nodes never copy their tensor: values are read straight from the
//! store. Each parameter gets one node per graph, so every use of a tensor
//! accumulates into the same gradient buffer.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::crf::CrfScoreMode;
use crate::error::{Error, Result};
use crate::params::{Gradients, ParamId, ParameterStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Input,
    Parameter(ParamId),
    /// One row of a parameter matrix (embedding lookup).
    Lookup { table: ParamId, row: usize },
    MatVec,
    Add,
    Concat,
    Slice { start: usize },
    Tanh,
    Sigmoid,
    Mul,
    /// Elementwise sum of equally sized vectors.
    Sum,
    LogSumExp,
    Pick(usize),
    Dropout { keep: f64 },
    ScalarAdd(f64),
    Negate,
    /// One column of the CRF forward recursion; see [`Graph::crf_step`].
    CrfStep { mode: CrfScoreMode, has_prev: bool },
}

impl Op {
    pub fn kind(&self) -> OpKind {
        match self {
            Op::Input => OpKind::Input,
            Op::Parameter(_) => OpKind::Parameter,
            Op::Lookup { .. } => OpKind::Lookup,
            Op::MatVec => OpKind::MatVec,
            Op::Add => OpKind::Add,
            Op::Concat => OpKind::Concat,
            Op::Slice { .. } => OpKind::Slice,
            Op::Tanh => OpKind::Tanh,
            Op::Sigmoid => OpKind::Sigmoid,
            Op::Mul => OpKind::Mul,
            Op::Sum => OpKind::Sum,
            Op::LogSumExp => OpKind::LogSumExp,
            Op::Pick(_) => OpKind::Pick,
            Op::Dropout { .. } => OpKind::Dropout,
            Op::ScalarAdd(_) => OpKind::ScalarAdd,
            Op::Negate => OpKind::Negate,
            Op::CrfStep { .. } => OpKind::CrfStep,
        }
    }
}

/// Operation discriminant, used for node counting and fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Input,
    Parameter,
    Lookup,
    MatVec,
    Add,
    Concat,
    Slice,
    Tanh,
    Sigmoid,
    Mul,
    Sum,
    LogSumExp,
    Pick,
    Dropout,
    ScalarAdd,
    Negate,
    CrfStep,
}

impl OpKind {
    pub fn parse(s: &str) -> Option<Self> {
        let kind = match s {
            "input" => OpKind::Input,
            "parameter" => OpKind::Parameter,
            "lookup" => OpKind::Lookup,
            "matvec" => OpKind::MatVec,
            "add" => OpKind::Add,
            "concat" => OpKind::Concat,
            "slice" => OpKind::Slice,
            "tanh" => OpKind::Tanh,
            "sigmoid" => OpKind::Sigmoid,
            "mul" => OpKind::Mul,
            "sum" => OpKind::Sum,
            "log-sum-exp" => OpKind::LogSumExp,
            "pick" => OpKind::Pick,
            "dropout" => OpKind::Dropout,
            "scalar-add" => OpKind::ScalarAdd,
            "negate" => OpKind::Negate,
            "crf-step" => OpKind::CrfStep,
            _ => return None,
        };
        Some(kind)
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    rows: usize,
    cols: usize,
    name: Option<String>,
    value: Vec<f64>,
    /// Dropout mask, filled during forward.
    aux: Vec<f64>,
}

impl Node {
    fn len(&self) -> usize {
        self.rows * self.cols
    }
}

pub struct Graph<'s> {
    store: &'s ParameterStore,
    nodes: Vec<Node>,
    grads: Vec<Vec<f64>>,
    param_nodes: HashMap<ParamId, NodeId>,
    seed: u64,
    evaluated: bool,
    differentiated: bool,
    fault: Option<(OpKind, f64)>,
}

impl<'s> Graph<'s> {
    /// A graph reading parameters from `store`. `seed` drives dropout masks.
    pub fn new(store: &'s ParameterStore, seed: u64) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
            grads: Vec::new(),
            param_nodes: HashMap::new(),
            seed,
            evaluated: false,
            differentiated: false,
            fault: None,
        }
    }

    pub fn store(&self) -> &'s ParameterStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    pub fn inputs(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].inputs
    }

    /// Number of nodes of the given kind.
    pub fn count(&self, kind: OpKind) -> usize {
        self.nodes.iter().filter(|n| n.op.kind() == kind).count()
    }

    /// Number of nodes of the given kind that read `param`.
    pub fn count_uses(&self, param: ParamId) -> usize {
        let Some(&pnode) = self.param_nodes.get(&param) else {
            return 0;
        };
        self.nodes
            .iter()
            .filter(|n| n.inputs.contains(&pnode))
            .count()
    }

    /// Scale every backward contribution of `kind` by `factor`. Test fixture
    /// for the gradient checker's negative control.
    #[doc(hidden)]
    pub fn inject_backward_fault(&mut self, kind: OpKind, factor: f64) {
        self.fault = Some((kind, factor));
    }

    pub fn dim(&self, id: NodeId) -> usize {
        self.nodes[id.0].len()
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    fn label(&self, id: NodeId) -> String {
        let n = &self.nodes[id.0];
        match (&n.name, &n.op) {
            (Some(name), _) => name.clone(),
            (None, Op::Parameter(p)) => self.store.get(*p).name().to_string(),
            (None, Op::Lookup { table, row }) => {
                format!("{}[{row}]", self.store.get(*table).name())
            }
            (None, op) => format!("node {} ({:?})", id.0, op.kind()),
        }
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, rows: usize, cols: usize) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            inputs,
            rows,
            cols,
            name: None,
            value: Vec::new(),
            aux: Vec::new(),
        });
        self.evaluated = false;
        self.differentiated = false;
        id
    }

    fn expect_vector(&self, id: NodeId) -> Result<usize> {
        let n = &self.nodes[id.0];
        if n.cols != 1 {
            return Err(Error::shape(
                self.label(id),
                "vector",
                format!("{}x{} matrix", n.rows, n.cols),
            ));
        }
        Ok(n.rows)
    }

    fn expect_same(&self, a: NodeId, b: NodeId) -> Result<usize> {
        let la = self.expect_vector(a)?;
        let lb = self.expect_vector(b)?;
        if la != lb {
            return Err(Error::shape(self.label(b), la, lb));
        }
        Ok(la)
    }

    /// A named input vector whose value is assigned with [`Graph::set_input`].
    pub fn input(&mut self, name: &str, len: usize) -> NodeId {
        let id = self.push(Op::Input, Vec::new(), len, 1);
        self.nodes[id.0].name = Some(name.to_string());
        id
    }

    /// An input vector with its value assigned immediately.
    pub fn constant(&mut self, name: &str, value: Vec<f64>) -> NodeId {
        let id = self.input(name, value.len());
        self.nodes[id.0].value = value;
        id
    }

    pub fn set_input(&mut self, id: NodeId, value: Vec<f64>) -> Result<()> {
        let node = &self.nodes[id.0];
        if node.op != Op::Input {
            return Err(Error::Contract(format!("{} is not an input", self.label(id))));
        }
        if value.len() != node.len() {
            return Err(Error::shape(self.label(id), node.len(), value.len()));
        }
        self.nodes[id.0].value = value;
        self.evaluated = false;
        Ok(())
    }

    /// The node for a stored tensor. Repeated calls return the same node.
    pub fn parameter(&mut self, param: ParamId) -> NodeId {
        if let Some(&id) = self.param_nodes.get(&param) {
            return id;
        }
        let t = self.store.get(param);
        let (rows, cols) = (t.rows(), t.cols());
        let id = self.push(Op::Parameter(param), Vec::new(), rows, cols);
        self.param_nodes.insert(param, id);
        id
    }

    pub fn lookup(&mut self, table: ParamId, row: usize) -> Result<NodeId> {
        let t = self.store.get(table);
        if row >= t.rows() {
            return Err(Error::shape(
                t.name(),
                format!("row < {}", t.rows()),
                format!("row {row}"),
            ));
        }
        let cols = t.cols();
        Ok(self.push(Op::Lookup { table, row }, Vec::new(), cols, 1))
    }

    /// `W · x` for a parameter matrix `W`.
    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> Result<NodeId> {
        if !matches!(self.nodes[w.0].op, Op::Parameter(_)) {
            return Err(Error::Contract(format!(
                "matvec weight {} must be a parameter",
                self.label(w)
            )));
        }
        let (rows, cols) = self.shape(w);
        let xl = self.expect_vector(x)?;
        if xl != cols {
            return Err(Error::shape(self.label(w), format!("{rows}x{xl}"), format!("{rows}x{cols}")));
        }
        Ok(self.push(Op::MatVec, vec![w, x], rows, 1))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let n = self.expect_same(a, b)?;
        Ok(self.push(Op::Add, vec![a, b], n, 1))
    }

    /// `W · x + b`.
    pub fn affine(&mut self, w: ParamId, b: ParamId, x: NodeId) -> Result<NodeId> {
        let wn = self.parameter(w);
        let bn = self.parameter(b);
        let wx = self.matvec(wn, x)?;
        self.add(wx, bn)
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of zero vectors".into()));
        }
        let mut total = 0;
        for &p in parts {
            total += self.expect_vector(p)?;
        }
        Ok(self.push(Op::Concat, parts.to_vec(), total, 1))
    }

    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let n = self.expect_vector(x)?;
        if len == 0 || start + len > n {
            return Err(Error::shape(
                self.label(x),
                format!("at least {} entries", start + len),
                n,
            ));
        }
        Ok(self.push(Op::Slice { start }, vec![x], len, 1))
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.expect_vector(x)?;
        Ok(self.push(Op::Tanh, vec![x], n, 1))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.expect_vector(x)?;
        Ok(self.push(Op::Sigmoid, vec![x], n, 1))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let n = self.expect_same(a, b)?;
        Ok(self.push(Op::Mul, vec![a, b], n, 1))
    }

    /// Elementwise sum over a sequence of equally sized vectors.
    pub fn sum(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = parts.first() else {
            return Err(Error::Contract("sum over an empty sequence".into()));
        };
        let n = self.expect_vector(first)?;
        for &p in &parts[1..] {
            self.expect_same(first, p)?;
        }
        Ok(self.push(Op::Sum, parts.to_vec(), n, 1))
    }

    pub fn log_sum_exp(&mut self, x: NodeId) -> Result<NodeId> {
        self.expect_vector(x)?;
        Ok(self.push(Op::LogSumExp, vec![x], 1, 1))
    }

    pub fn pick(&mut self, x: NodeId, index: usize) -> Result<NodeId> {
        let n = self.expect_vector(x)?;
        if index >= n {
            return Err(Error::Contract(format!(
                "pick index {index} out of range for {} of length {n}",
                self.label(x)
            )));
        }
        Ok(self.push(Op::Pick(index), vec![x], 1, 1))
    }

    /// Inverted dropout: entries are kept with probability `keep` and scaled
    /// by `1 / keep`. The mask is drawn during [`Graph::forward`].
    pub fn dropout(&mut self, x: NodeId, keep: f64) -> Result<NodeId> {
        if !(keep > 0.0 && keep <= 1.0) {
            return Err(Error::Contract(format!("dropout keep probability {keep} not in (0, 1]")));
        }
        let n = self.expect_vector(x)?;
        Ok(self.push(Op::Dropout { keep }, vec![x], n, 1))
    }

    pub fn scalar_add(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        let n = self.expect_vector(x)?;
        Ok(self.push(Op::ScalarAdd(c), vec![x], n, 1))
    }

    pub fn negate(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.expect_vector(x)?;
        Ok(self.push(Op::Negate, vec![x], n, 1))
    }

    /// One step of the CRF forward recursion over `L` labels.
    ///
    /// `trans` is a `(L + 1) x L` parameter matrix whose last row holds the
    /// scores out of the START state. Without `prev` the step scores the first
    /// position from START; with `prev` it computes
    /// `out[j] = logsumexp_k(prev[k] + s(k, j))` where `s` combines the
    /// transition and emission according to `mode`.
    pub fn crf_step(
        &mut self,
        prev: Option<NodeId>,
        emission: NodeId,
        trans: NodeId,
        mode: CrfScoreMode,
    ) -> Result<NodeId> {
        if !matches!(self.nodes[trans.0].op, Op::Parameter(_)) {
            return Err(Error::Contract("crf transition matrix must be a parameter".into()));
        }
        let labels = self.expect_vector(emission)?;
        let (rows, cols) = self.shape(trans);
        if rows != labels + 1 || cols != labels {
            return Err(Error::shape(
                self.label(trans),
                format!("{}x{labels}", labels + 1),
                format!("{rows}x{cols}"),
            ));
        }
        let mut inputs = Vec::with_capacity(3);
        if let Some(p) = prev {
            self.expect_same(emission, p)?;
            inputs.push(p);
        }
        inputs.push(emission);
        inputs.push(trans);
        Ok(self.push(
            Op::CrfStep {
                mode,
                has_prev: prev.is_some(),
            },
            inputs,
            labels,
            1,
        ))
    }

    /// Value of a node after [`Graph::forward`].
    pub fn value(&self, id: NodeId) -> &[f64] {
        let node = &self.nodes[id.0];
        match node.op {
            Op::Parameter(p) => self.store.data(p),
            Op::Lookup { table, row } => self.store.get(table).row(row),
            _ => &node.value,
        }
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.value(id)[0]
    }

    /// Gradient of the loss with respect to a node after [`Graph::backward`].
    /// Nodes that do not reach the loss have an all-zero gradient.
    pub fn grad(&self, id: NodeId) -> Vec<f64> {
        let g = &self.grads[id.0];
        if g.is_empty() {
            vec![0.0; self.nodes[id.0].len()]
        } else {
            g.clone()
        }
    }

    /// Evaluate every node in order.
    ///
    /// The dropout stream is reseeded on every call, so repeated evaluation
    /// is bitwise identical.
    pub fn forward(&mut self) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        for i in 0..self.nodes.len() {
            let (value, aux) = self.eval_node(i, &mut rng)?;
            let node = &mut self.nodes[i];
            if let Some(v) = value {
                node.value = v;
            }
            if let Some(a) = aux {
                node.aux = a;
            }
        }
        self.evaluated = true;
        self.differentiated = false;
        Ok(())
    }

    #[allow(clippy::type_complexity)]
    fn eval_node(
        &self,
        i: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Option<Vec<f64>>, Option<Vec<f64>>)> {
        let node = &self.nodes[i];
        let inp = |k: usize| self.value(node.inputs[k]);
        let out = match &node.op {
            Op::Input => {
                if node.value.len() != node.len() {
                    return Err(Error::UnassignedInput(self.label(NodeId(i))));
                }
                return Ok((None, None));
            }
            Op::Parameter(_) | Op::Lookup { .. } => return Ok((None, None)),
            Op::MatVec => {
                let w = inp(0);
                let x = inp(1);
                let cols = x.len();
                w.chunks_exact(cols)
                    .map(|row| dot(row, x))
                    .collect()
            }
            Op::Add => inp(0).iter().zip(inp(1)).map(|(a, b)| a + b).collect(),
            Op::Concat => {
                let mut v = Vec::with_capacity(node.len());
                for &p in &node.inputs {
                    v.extend_from_slice(self.value(p));
                }
                v
            }
            Op::Slice { start } => inp(0)[*start..*start + node.rows].to_vec(),
            Op::Tanh => inp(0).iter().map(|x| x.tanh()).collect(),
            Op::Sigmoid => inp(0).iter().map(|&x| sigmoid(x)).collect(),
            Op::Mul => inp(0).iter().zip(inp(1)).map(|(a, b)| a * b).collect(),
            Op::Sum => {
                let mut v = inp(0).to_vec();
                for &p in &node.inputs[1..] {
                    for (acc, x) in v.iter_mut().zip(self.value(p)) {
                        *acc += x;
                    }
                }
                v
            }
            Op::LogSumExp => vec![log_sum_exp(inp(0))],
            Op::Pick(k) => vec![inp(0)[*k]],
            Op::Dropout { keep } => {
                let scale = 1.0 / keep;
                let mask: Vec<f64> = (0..node.len())
                    .map(|_| if rng.gen::<f64>() < *keep { scale } else { 0.0 })
                    .collect();
                let v = inp(0).iter().zip(&mask).map(|(x, m)| x * m).collect();
                return Ok((Some(v), Some(mask)));
            }
            Op::ScalarAdd(c) => inp(0).iter().map(|x| x + c).collect(),
            Op::Negate => inp(0).iter().map(|x| -x).collect(),
            Op::CrfStep { mode, has_prev } => {
                let (prev, e, t) = if *has_prev {
                    (Some(inp(0)), inp(1), inp(2))
                } else {
                    (None, inp(0), inp(1))
                };
                crf_step_forward(prev, e, t, *mode)
            }
        };
        Ok((Some(out), None))
    }

    /// Reverse-mode accumulation from a scalar `loss`.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if !self.evaluated {
            return Err(Error::Contract("backward called before forward".into()));
        }
        if self.nodes[loss.0].len() != 1 {
            return Err(Error::Contract(format!(
                "loss {} is not a scalar (length {})",
                self.label(loss),
                self.nodes[loss.0].len()
            )));
        }
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); self.nodes.len()];
        grads[loss.0] = vec![1.0];
        for i in (0..=loss.0).rev() {
            if grads[i].is_empty() {
                continue;
            }
            let mut g = std::mem::take(&mut grads[i]);
            let node = &self.nodes[i];
            match self.fault {
                Some((kind, factor)) if kind == node.op.kind() => {
                    let scaled: Vec<f64> = g.iter().map(|x| x * factor).collect();
                    self.backprop_node(i, &scaled, &mut grads);
                }
                _ => self.backprop_node(i, &g, &mut grads),
            }
            // Keep the node's own gradient for inspection.
            if grads[i].is_empty() {
                grads[i] = std::mem::take(&mut g);
            } else {
                for (a, b) in grads[i].iter_mut().zip(&g) {
                    *a += b;
                }
            }
        }
        self.grads = grads;
        self.differentiated = true;
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Vec<f64>]) {
        let node = &self.nodes[i];
        let ins = &node.inputs;
        match &node.op {
            Op::Input | Op::Parameter(_) | Op::Lookup { .. } => {}
            Op::MatVec => {
                let w = self.value(ins[0]);
                let x = self.value(ins[1]);
                let cols = x.len();
                {
                    let dw = grad_buf(grads, ins[0], w.len());
                    for (r, &gr) in g.iter().enumerate() {
                        if gr != 0.0 {
                            axpy(gr, x, &mut dw[r * cols..(r + 1) * cols]);
                        }
                    }
                }
                let dx = grad_buf(grads, ins[1], cols);
                for (r, &gr) in g.iter().enumerate() {
                    if gr != 0.0 {
                        axpy(gr, &w[r * cols..(r + 1) * cols], dx);
                    }
                }
            }
            Op::Add => {
                for &p in ins.iter() {
                    axpy(1.0, g, grad_buf(grads, p, g.len()));
                }
            }
            Op::Sum => {
                for &p in ins.iter() {
                    axpy(1.0, g, grad_buf(grads, p, g.len()));
                }
            }
            Op::Concat => {
                let mut offset = 0;
                for &p in ins.iter() {
                    let n = self.nodes[p.0].len();
                    axpy(1.0, &g[offset..offset + n], grad_buf(grads, p, n));
                    offset += n;
                }
            }
            Op::Slice { start } => {
                let n = self.nodes[ins[0].0].len();
                let dx = grad_buf(grads, ins[0], n);
                axpy(1.0, g, &mut dx[*start..*start + g.len()]);
            }
            Op::Tanh => {
                let y = &node.value;
                let dx = grad_buf(grads, ins[0], y.len());
                for ((d, gi), yi) in dx.iter_mut().zip(g).zip(y) {
                    *d += gi * (1.0 - yi * yi);
                }
            }
            Op::Sigmoid => {
                let y = &node.value;
                let dx = grad_buf(grads, ins[0], y.len());
                for ((d, gi), yi) in dx.iter_mut().zip(g).zip(y) {
                    *d += gi * yi * (1.0 - yi);
                }
            }
            Op::Mul => {
                let a = self.value(ins[0]).to_vec();
                let b = self.value(ins[1]).to_vec();
                {
                    let da = grad_buf(grads, ins[0], a.len());
                    for ((d, gi), bi) in da.iter_mut().zip(g).zip(&b) {
                        *d += gi * bi;
                    }
                }
                let db = grad_buf(grads, ins[1], b.len());
                for ((d, gi), ai) in db.iter_mut().zip(g).zip(&a) {
                    *d += gi * ai;
                }
            }
            Op::LogSumExp => {
                let x = self.value(ins[0]);
                let y = node.value[0];
                let dx = grad_buf(grads, ins[0], x.len());
                for (d, xi) in dx.iter_mut().zip(x) {
                    *d += g[0] * (xi - y).exp();
                }
            }
            Op::Pick(k) => {
                let n = self.nodes[ins[0].0].len();
                grad_buf(grads, ins[0], n)[*k] += g[0];
            }
            Op::Dropout { .. } => {
                let mask = &node.aux;
                let dx = grad_buf(grads, ins[0], mask.len());
                for ((d, gi), m) in dx.iter_mut().zip(g).zip(mask) {
                    *d += gi * m;
                }
            }
            Op::ScalarAdd(_) => axpy(1.0, g, grad_buf(grads, ins[0], g.len())),
            Op::Negate => axpy(-1.0, g, grad_buf(grads, ins[0], g.len())),
            Op::CrfStep { mode, has_prev } => {
                let (prev_id, e_id, t_id) = if *has_prev {
                    (Some(ins[0]), ins[1], ins[2])
                } else {
                    (None, ins[0], ins[1])
                };
                let prev = prev_id.map(|p| self.value(p));
                let e = self.value(e_id);
                let t = self.value(t_id);
                let (dprev, de, dt) = crf_step_backward(prev, e, t, &node.value, g, *mode);
                if let (Some(p), Some(dp)) = (prev_id, dprev) {
                    axpy(1.0, &dp, grad_buf(grads, p, dp.len()));
                }
                axpy(1.0, &de, grad_buf(grads, e_id, de.len()));
                axpy(1.0, &dt, grad_buf(grads, t_id, dt.len()));
            }
        }
    }

    /// Add this graph's parameter gradients into `out`.
    pub fn accumulate_gradients(&self, out: &mut Gradients) -> Result<()> {
        if !self.differentiated {
            return Err(Error::Contract("gradients requested before backward".into()));
        }
        for (node, g) in self.nodes.iter().zip(&self.grads) {
            if g.is_empty() {
                continue;
            }
            match node.op {
                Op::Parameter(p) => axpy(1.0, g, out.get_mut(p)),
                Op::Lookup { table, row } => {
                    let cols = node.len();
                    axpy(1.0, g, &mut out.get_mut(table)[row * cols..(row + 1) * cols]);
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Convenience: fresh gradient buffers holding this graph's gradients.
    pub fn gradients(&self) -> Result<Gradients> {
        let mut out = Gradients::zeros_like(self.store);
        self.accumulate_gradients(&mut out)?;
        Ok(out)
    }
}

fn grad_buf(grads: &mut [Vec<f64>], id: NodeId, len: usize) -> &mut [f64] {
    let g = &mut grads[id.0];
    if g.is_empty() {
        *g = vec![0.0; len];
    }
    g
}

/// Four interleaved partial sums so the loop vectorizes.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let (ac, bc) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ac.remainder().iter().zip(bc.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ac.zip(bc) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Overflow-safe `ln Σ exp(x)`.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m.is_infinite() {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

#[inline]
fn crf_pair(mode: CrfScoreMode, t: f64, e: f64) -> f64 {
    match mode {
        CrfScoreMode::Additive => t + e,
        CrfScoreMode::Multiplicative => t * e,
    }
}

fn crf_step_forward(prev: Option<&[f64]>, e: &[f64], t: &[f64], mode: CrfScoreMode) -> Vec<f64> {
    let labels = e.len();
    let start = &t[labels * labels..];
    match prev {
        None => (0..labels).map(|j| crf_pair(mode, start[j], e[j])).collect(),
        Some(prev) => {
            let mut scratch = vec![0.0; labels];
            (0..labels)
                .map(|j| {
                    for k in 0..labels {
                        scratch[k] = prev[k] + crf_pair(mode, t[k * labels + j], e[j]);
                    }
                    log_sum_exp(&scratch)
                })
                .collect()
        }
    }
}

#[allow(clippy::type_complexity)]
fn crf_step_backward(
    prev: Option<&[f64]>,
    e: &[f64],
    t: &[f64],
    out: &[f64],
    g: &[f64],
    mode: CrfScoreMode,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let labels = e.len();
    let mut de = vec![0.0; labels];
    let mut dt = vec![0.0; t.len()];
    let start = labels * labels;
    match prev {
        None => {
            for j in 0..labels {
                match mode {
                    CrfScoreMode::Additive => {
                        de[j] += g[j];
                        dt[start + j] += g[j];
                    }
                    CrfScoreMode::Multiplicative => {
                        de[j] += g[j] * t[start + j];
                        dt[start + j] += g[j] * e[j];
                    }
                }
            }
            (None, de, dt)
        }
        Some(prev) => {
            let mut dprev = vec![0.0; labels];
            for j in 0..labels {
                if g[j] == 0.0 {
                    continue;
                }
                for k in 0..labels {
                    let tkj = t[k * labels + j];
                    let p = (prev[k] + crf_pair(mode, tkj, e[j]) - out[j]).exp();
                    let w = g[j] * p;
                    dprev[k] += w;
                    match mode {
                        CrfScoreMode::Additive => {
                            dt[k * labels + j] += w;
                            de[j] += w;
                        }
                        CrfScoreMode::Multiplicative => {
                            dt[k * labels + j] += w * e[j];
                            de[j] += w * tkj;
                        }
                    }
                }
            }
            (Some(dprev), de, dt)
        }
    }
}
