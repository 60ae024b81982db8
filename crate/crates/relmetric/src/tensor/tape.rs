//! Reverse-mode autodiff tape.
//!
//! Every primitive records one node holding its output value plus enough
//! context to replay the chain rule. Nodes are appended in execution order,
//! so the vector is already a topological order and one reverse sweep from
//! the loss populates a gradient for every reachable `requires_grad` node.

use rand::Rng;

use super::conv;
use super::{Phase, Tensor};
use crate::error::{Error, Result};

pub type NodeId = usize;

/// What fills one cell of a pair-indexed embedding table: a row of the
/// embedding matrix, or the trainable null vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellSrc {
    Row(usize),
    Null,
}

/// Running statistics for one batch-norm bank. The trainable scale/shift
/// live with the model parameters; this is the non-trainable state.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub initialized: bool,
}

impl BatchNormState {
    pub fn new(channels: usize, momentum: f64) -> Self {
        BatchNormState {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum,
            initialized: false,
        }
    }
}

const BN_EPS: f64 = 1e-5;
const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    /// (m,k) · (k,n)
    MatMul(NodeId, NodeId),
    /// (m,k) · (n,k)ᵀ
    MatMulTransB(NodeId, NodeId),
    /// (r,c) · (c,)
    MatVec(NodeId, NodeId),
    ConcatLast(Vec<NodeId>),
    StackLast(Vec<NodeId>),
    StackRows(Vec<NodeId>),
    Slice {
        input: NodeId,
        offset: usize,
    },
    Gather {
        table: NodeId,
        indices: Vec<usize>,
    },
    PairEmbed {
        table: NodeId,
        null: Option<NodeId>,
        cells: Vec<CellSrc>,
    },
    Conv2d {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        window: usize,
    },
    CharConvMax {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        window: usize,
        argmax: Vec<usize>,
    },
    BatchNorm {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: Vec<f64>,
        invstd: Vec<f64>,
        train: bool,
    },
    Dropout {
        input: NodeId,
        mask: Vec<f64>,
    },
    SoftmaxLast(NodeId),
    CrossEntropyTable {
        q: NodeId,
        targets: Vec<usize>,
        inv_words: f64,
    },
    MeanScalars(Vec<NodeId>),
    SumAll(NodeId),
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

/// Ordered record of primitive operations for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id].shape
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id].requires_grad
    }

    /// Gradient populated by the last `backward` call, if any was recorded
    /// for this node.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id).and_then(|g| g.as_deref())
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, requires_grad: bool, op: Op) -> NodeId {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            requires_grad,
            op,
        });
        self.nodes.len() - 1
    }

    fn any_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    // ---- leaves ------------------------------------------------------

    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        let rg = t.requires_grad();
        let (shape, data) = t.into_parts();
        self.push(shape, data, rg, Op::Leaf)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        let (shape, data) = t.into_parts();
        self.push(shape, data, false, Op::Leaf)
    }

    pub fn param(&mut self, shape: &[usize], data: &[f64], trainable: bool) -> NodeId {
        self.push(shape.to_vec(), data.to_vec(), trainable, Op::Leaf)
    }

    // ---- elementwise -------------------------------------------------

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.nodes[a].shape != self.nodes[b].shape {
            return Err(Error::shape(format!(
                "add: {:?} vs {:?}",
                self.nodes[a].shape, self.nodes[b].shape
            )));
        }
        let value: Vec<f64> = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(x, y)| x + y)
            .collect();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(self.nodes[a].shape.clone(), value, rg, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.nodes[a].shape != self.nodes[b].shape {
            return Err(Error::shape(format!(
                "mul: {:?} vs {:?}",
                self.nodes[a].shape, self.nodes[b].shape
            )));
        }
        let value: Vec<f64> = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(x, y)| x * y)
            .collect();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(self.nodes[a].shape.clone(), value, rg, Op::Mul(a, b)))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let value: Vec<f64> = self.nodes[x].value.iter().map(|&v| sigmoid(v)).collect();
        let rg = self.nodes[x].requires_grad;
        self.push(self.nodes[x].shape.clone(), value, rg, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let value: Vec<f64> = self.nodes[x].value.iter().map(|&v| v.tanh()).collect();
        let rg = self.nodes[x].requires_grad;
        self.push(self.nodes[x].shape.clone(), value, rg, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value: Vec<f64> = self.nodes[x].value.iter().map(|&v| v.max(0.0)).collect();
        let rg = self.nodes[x].requires_grad;
        self.push(self.nodes[x].shape.clone(), value, rg, Op::Relu(x))
    }

    // ---- linear algebra ----------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (&self.nodes[a].shape, &self.nodes[b].shape);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(format!("matmul: {:?} · {:?}", sa, sb)));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut value = vec![0.0; m * n];
        {
            let av = &self.nodes[a].value;
            let bv = &self.nodes[b].value;
            for i in 0..m {
                for p in 0..k {
                    let aip = av[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    let brow = &bv[p * n..(p + 1) * n];
                    let out = &mut value[i * n..(i + 1) * n];
                    for j in 0..n {
                        out[j] += aip * brow[j];
                    }
                }
            }
        }
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(vec![m, n], value, rg, Op::MatMul(a, b)))
    }

    /// a · bᵀ with a: (m,k), b: (n,k).
    pub fn matmul_transb(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (&self.nodes[a].shape, &self.nodes[b].shape);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::shape(format!("matmul_transb: {:?} · {:?}ᵀ", sa, sb)));
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let mut value = vec![0.0; m * n];
        {
            let av = &self.nodes[a].value;
            let bv = &self.nodes[b].value;
            for i in 0..m {
                let arow = &av[i * k..(i + 1) * k];
                for j in 0..n {
                    let brow = &bv[j * k..(j + 1) * k];
                    let mut acc = 0.0;
                    for p in 0..k {
                        acc += arow[p] * brow[p];
                    }
                    value[i * n + j] = acc;
                }
            }
        }
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(vec![m, n], value, rg, Op::MatMulTransB(a, b)))
    }

    pub fn matvec(&mut self, m: NodeId, v: NodeId) -> Result<NodeId> {
        let (sm, sv) = (&self.nodes[m].shape, &self.nodes[v].shape);
        if sm.len() != 2 || sv.len() != 1 || sm[1] != sv[0] {
            return Err(Error::shape(format!("matvec: {:?} · {:?}", sm, sv)));
        }
        let (r, c) = (sm[0], sm[1]);
        let mut value = vec![0.0; r];
        {
            let mv = &self.nodes[m].value;
            let vv = &self.nodes[v].value;
            for i in 0..r {
                let row = &mv[i * c..(i + 1) * c];
                let mut acc = 0.0;
                for j in 0..c {
                    acc += row[j] * vv[j];
                }
                value[i] = acc;
            }
        }
        let rg = self.any_grad(&[m, v]);
        Ok(self.push(vec![r], value, rg, Op::MatVec(m, v)))
    }

    // ---- reshaping ---------------------------------------------------

    /// Concatenates along the last axis; all inputs must agree on the
    /// leading dimensions.
    pub fn concat_last(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        if inputs.is_empty() {
            return Err(Error::contract("concat_last: no inputs"));
        }
        let lead_shape = |s: &[usize]| s[..s.len() - 1].to_vec();
        let first = lead_shape(&self.nodes[inputs[0]].shape);
        let rank = self.nodes[inputs[0]].shape.len();
        let mut total_last = 0;
        for &id in inputs {
            let s = &self.nodes[id].shape;
            if s.len() != rank || lead_shape(s) != first {
                return Err(Error::shape(format!(
                    "concat_last: incompatible {:?} vs {:?}",
                    self.nodes[inputs[0]].shape, s
                )));
            }
            total_last += s[rank - 1];
        }
        let lead: usize = first.iter().product();
        let mut value = vec![0.0; lead * total_last];
        for cell in 0..lead {
            let mut off = cell * total_last;
            for &id in inputs {
                let d = self.nodes[id].shape[rank - 1];
                let src = &self.nodes[id].value[cell * d..(cell + 1) * d];
                value[off..off + d].copy_from_slice(src);
                off += d;
            }
        }
        let mut shape = first;
        shape.push(total_last);
        let rg = self.any_grad(inputs);
        Ok(self.push(shape, value, rg, Op::ConcatLast(inputs.to_vec())))
    }

    /// Stacks same-shaped inputs into a new trailing axis:
    /// out[..., m] = inputs[m][...].
    pub fn stack_last(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        if inputs.is_empty() {
            return Err(Error::contract("stack_last: no inputs"));
        }
        let base = self.nodes[inputs[0]].shape.clone();
        for &id in inputs {
            if self.nodes[id].shape != base {
                return Err(Error::shape(format!(
                    "stack_last: {:?} vs {:?}",
                    base, self.nodes[id].shape
                )));
            }
        }
        let cells: usize = base.iter().product();
        let count = inputs.len();
        let mut value = vec![0.0; cells * count];
        for (m, &id) in inputs.iter().enumerate() {
            let src = &self.nodes[id].value;
            for cell in 0..cells {
                value[cell * count + m] = src[cell];
            }
        }
        let mut shape = base;
        shape.push(count);
        let rg = self.any_grad(inputs);
        Ok(self.push(shape, value, rg, Op::StackLast(inputs.to_vec())))
    }

    /// Stacks vectors of equal length into a matrix, one vector per row.
    pub fn stack_rows(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        if inputs.is_empty() {
            return Err(Error::contract("stack_rows: no inputs"));
        }
        let d = self.nodes[inputs[0]].shape.clone();
        if d.len() != 1 {
            return Err(Error::shape("stack_rows: inputs must be vectors"));
        }
        let width = d[0];
        let mut value = Vec::with_capacity(inputs.len() * width);
        for &id in inputs {
            if self.nodes[id].shape != d {
                return Err(Error::shape(format!(
                    "stack_rows: {:?} vs {:?}",
                    d, self.nodes[id].shape
                )));
            }
            value.extend_from_slice(&self.nodes[id].value);
        }
        let rg = self.any_grad(inputs);
        Ok(self.push(vec![inputs.len(), width], value, rg, Op::StackRows(inputs.to_vec())))
    }

    /// Contiguous view of `shape` elements starting at flat `offset`.
    pub fn slice(&mut self, input: NodeId, offset: usize, shape: &[usize]) -> Result<NodeId> {
        let len: usize = shape.iter().product();
        if offset + len > self.nodes[input].value.len() {
            return Err(Error::shape(format!(
                "slice: offset {} + len {} exceeds {}",
                offset,
                len,
                self.nodes[input].value.len()
            )));
        }
        let value = self.nodes[input].value[offset..offset + len].to_vec();
        let rg = self.nodes[input].requires_grad;
        Ok(self.push(shape.to_vec(), value, rg, Op::Slice { input, offset }))
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&mut self, matrix: NodeId, i: usize) -> Result<NodeId> {
        let s = self.nodes[matrix].shape.clone();
        if s.len() != 2 || i >= s[0] {
            return Err(Error::shape(format!("row {} of {:?}", i, s)));
        }
        self.slice(matrix, i * s[1], &[s[1]])
    }

    /// Gathers rows of a (rows, d) table. Out-of-range indices are a
    /// contract error; gradients scatter back into the gathered rows only.
    pub fn gather(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId> {
        let s = self.nodes[table].shape.clone();
        if s.len() != 2 {
            return Err(Error::shape("gather: table must be 2-D"));
        }
        let (rows, d) = (s[0], s[1]);
        let mut value = Vec::with_capacity(indices.len() * d);
        for &idx in indices {
            if idx >= rows {
                return Err(Error::contract(format!(
                    "gather: index {} out of {} rows",
                    idx, rows
                )));
            }
            value.extend_from_slice(&self.nodes[table].value[idx * d..(idx + 1) * d]);
        }
        let rg = self.nodes[table].requires_grad;
        Ok(self.push(
            vec![indices.len(), d],
            value,
            rg,
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Builds an n×n×d table where each cell is either a row of `table` or
    /// the `null` vector. `cells` is row-major with n² entries.
    pub fn pair_embed(
        &mut self,
        table: NodeId,
        null: Option<NodeId>,
        cells: &[CellSrc],
        n: usize,
    ) -> Result<NodeId> {
        let s = self.nodes[table].shape.clone();
        if s.len() != 2 {
            return Err(Error::shape("pair_embed: table must be 2-D"));
        }
        let (rows, d) = (s[0], s[1]);
        if cells.len() != n * n {
            return Err(Error::contract(format!(
                "pair_embed: {} cells for n={}",
                cells.len(),
                n
            )));
        }
        if let Some(nl) = null {
            if self.nodes[nl].shape != vec![d] {
                return Err(Error::shape(format!(
                    "pair_embed: null vector {:?} vs width {}",
                    self.nodes[nl].shape, d
                )));
            }
        }
        let mut value = Vec::with_capacity(n * n * d);
        for &cell in cells {
            match cell {
                CellSrc::Row(r) => {
                    if r >= rows {
                        return Err(Error::contract(format!(
                            "pair_embed: row {} out of {}",
                            r, rows
                        )));
                    }
                    value.extend_from_slice(&self.nodes[table].value[r * d..(r + 1) * d]);
                }
                CellSrc::Null => match null {
                    Some(nl) => value.extend_from_slice(&self.nodes[nl].value),
                    None => {
                        return Err(Error::contract(
                            "pair_embed: null cell without a null vector",
                        ))
                    }
                },
            }
        }
        let rg = self.nodes[table].requires_grad
            || null.map(|nl| self.nodes[nl].requires_grad).unwrap_or(false);
        Ok(self.push(
            vec![n, n, d],
            value,
            rg,
            Op::PairEmbed {
                table,
                null,
                cells: cells.to_vec(),
            },
        ))
    }

    // ---- network primitives ------------------------------------------

    /// Padded 2D convolution over an n×n×u table with v filters of
    /// `window`×`window`×u. The position dimensions are preserved.
    pub fn conv2d_padded(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        window: usize,
    ) -> Result<NodeId> {
        let s = self.nodes[input].shape.clone();
        if s.len() != 3 || s[0] != s[1] {
            return Err(Error::shape(format!(
                "conv2d_padded: input must be n×n×u, got {:?}",
                s
            )));
        }
        let (n, u) = (s[0], s[2]);
        if n == 0 {
            return Err(Error::contract("conv2d_padded: empty input (n = 0)"));
        }
        if window % 2 == 0 || window == 0 {
            return Err(Error::config(format!(
                "conv2d_padded: window must be odd and positive, got {}",
                window
            )));
        }
        let ws = self.nodes[weight].shape.clone();
        if ws.len() != 4 || ws[1] != window || ws[2] != window || ws[3] != u {
            return Err(Error::shape(format!(
                "conv2d_padded: filters {:?} vs window {} and input channels {}",
                ws, window, u
            )));
        }
        let v = ws[0];
        if self.nodes[bias].shape != vec![v] {
            return Err(Error::shape(format!(
                "conv2d_padded: bias {:?} vs {} filters",
                self.nodes[bias].shape, v
            )));
        }
        let mut value = vec![0.0; n * n * v];
        conv::conv2d_forward(
            n,
            u,
            v,
            window,
            &self.nodes[input].value,
            &self.nodes[weight].value,
            &self.nodes[bias].value,
            &mut value,
        );
        let rg = self.any_grad(&[input, weight, bias]);
        Ok(self.push(
            vec![n, n, v],
            value,
            rg,
            Op::Conv2d {
                input,
                weight,
                bias,
                window,
            },
        ))
    }

    /// Character-window convolution with max pooling over positions.
    /// Input is the L×pi character embedding matrix, output a vector of
    /// one response per feature map.
    pub fn char_conv_max(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        window: usize,
    ) -> Result<NodeId> {
        let s = self.nodes[input].shape.clone();
        if s.len() != 2 {
            return Err(Error::shape("char_conv_max: input must be L×pi"));
        }
        let (rows, pi) = (s[0], s[1]);
        if rows < window {
            return Err(Error::contract(format!(
                "char_conv_max: {} rows < window {}",
                rows, window
            )));
        }
        let ws = self.nodes[weight].shape.clone();
        if ws.len() != 2 || ws[1] != window * pi {
            return Err(Error::shape(format!(
                "char_conv_max: filters {:?} vs window {} × width {}",
                ws, window, pi
            )));
        }
        let maps = ws[0];
        if self.nodes[bias].shape != vec![maps] {
            return Err(Error::shape("char_conv_max: bias width mismatch"));
        }
        let mut value = vec![0.0; maps];
        let mut argmax = vec![0usize; maps];
        conv::charconv_forward(
            rows,
            pi,
            maps,
            window,
            &self.nodes[input].value,
            &self.nodes[weight].value,
            &self.nodes[bias].value,
            &mut value,
            &mut argmax,
        );
        let rg = self.any_grad(&[input, weight, bias]);
        Ok(self.push(
            vec![maps],
            value,
            rg,
            Op::CharConvMax {
                input,
                weight,
                bias,
                window,
                argmax,
            },
        ))
    }

    /// Batch normalization over the channel (last) axis. Train mode uses
    /// batch statistics and folds them into the running estimates; infer
    /// mode reads the running estimates and is an error before any have
    /// been recorded.
    pub fn batch_norm(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        state: &mut BatchNormState,
        phase: Phase,
    ) -> Result<NodeId> {
        let s = self.nodes[input].shape.clone();
        if s.is_empty() {
            return Err(Error::shape("batch_norm: scalar input"));
        }
        let c = s[s.len() - 1];
        let cells = self.nodes[input].value.len() / c;
        if self.nodes[gamma].shape != vec![c] || self.nodes[beta].shape != vec![c] {
            return Err(Error::shape(format!(
                "batch_norm: scale/shift must have {} channels",
                c
            )));
        }
        if state.running_mean.len() != c {
            return Err(Error::shape(format!(
                "batch_norm: state has {} channels, input {}",
                state.running_mean.len(),
                c
            )));
        }
        let (mean, var, train) = match phase {
            Phase::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                let x = &self.nodes[input].value;
                for cell in 0..cells {
                    for k in 0..c {
                        mean[k] += x[cell * c + k];
                    }
                }
                for k in 0..c {
                    mean[k] /= cells as f64;
                }
                for cell in 0..cells {
                    for k in 0..c {
                        let d = x[cell * c + k] - mean[k];
                        var[k] += d * d;
                    }
                }
                for k in 0..c {
                    var[k] /= cells as f64;
                }
                let m = state.momentum;
                if state.initialized {
                    for k in 0..c {
                        state.running_mean[k] = m * state.running_mean[k] + (1.0 - m) * mean[k];
                        state.running_var[k] = m * state.running_var[k] + (1.0 - m) * var[k];
                    }
                } else {
                    state.running_mean.copy_from_slice(&mean);
                    state.running_var.copy_from_slice(&var);
                    state.initialized = true;
                }
                (mean, var, true)
            }
            Phase::Infer => {
                if !state.initialized {
                    return Err(Error::contract(
                        "batch_norm: inference requested before any running statistics were recorded",
                    ));
                }
                (state.running_mean.clone(), state.running_var.clone(), false)
            }
        };
        let invstd: Vec<f64> = var.iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut value = vec![0.0; cells * c];
        {
            let x = &self.nodes[input].value;
            let g = &self.nodes[gamma].value;
            let b = &self.nodes[beta].value;
            for cell in 0..cells {
                for k in 0..c {
                    let xhat = (x[cell * c + k] - mean[k]) * invstd[k];
                    value[cell * c + k] = g[k] * xhat + b[k];
                }
            }
        }
        let rg = self.any_grad(&[input, gamma, beta]);
        Ok(self.push(
            s,
            value,
            rg,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                mean,
                invstd,
                train,
            },
        ))
    }

    /// Inverted dropout: each unit is zeroed with probability `rate` in
    /// train mode and survivors are scaled by 1/(1−rate); inference is the
    /// identity (the input node is returned unchanged).
    pub fn dropout<R: Rng>(
        &mut self,
        input: NodeId,
        rate: f64,
        phase: Phase,
        rng: &mut R,
    ) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::contract(format!(
                "dropout: rate must be in [0, 1), got {}",
                rate
            )));
        }
        if phase == Phase::Infer || rate == 0.0 {
            return Ok(input);
        }
        let keep = 1.0 - rate;
        let scale = 1.0 / keep;
        let mask: Vec<f64> = (0..self.nodes[input].value.len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { scale })
            .collect();
        self.apply_mask(input, mask)
    }

    /// Elementwise multiplication by a fixed mask; the deterministic core
    /// of `dropout`, exposed for gradient checking.
    pub fn apply_mask(&mut self, input: NodeId, mask: Vec<f64>) -> Result<NodeId> {
        if mask.len() != self.nodes[input].value.len() {
            return Err(Error::shape("apply_mask: mask length mismatch"));
        }
        let value: Vec<f64> = self.nodes[input]
            .value
            .iter()
            .zip(&mask)
            .map(|(x, m)| x * m)
            .collect();
        let rg = self.nodes[input].requires_grad;
        Ok(self.push(
            self.nodes[input].shape.clone(),
            value,
            rg,
            Op::Dropout { input, mask },
        ))
    }

    /// Softmax along the last axis; output cells sum to one and are
    /// strictly positive for finite inputs.
    pub fn softmax_last(&mut self, input: NodeId) -> Result<NodeId> {
        let s = self.nodes[input].shape.clone();
        if s.is_empty() {
            return Err(Error::shape("softmax_last: scalar input"));
        }
        let d = s[s.len() - 1];
        let cells = self.nodes[input].value.len() / d;
        let mut value = vec![0.0; cells * d];
        {
            let x = &self.nodes[input].value;
            for cell in 0..cells {
                let xs = &x[cell * d..(cell + 1) * d];
                let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let out = &mut value[cell * d..(cell + 1) * d];
                let mut sum = 0.0;
                for k in 0..d {
                    let e = (xs[k] - max).exp();
                    out[k] = e;
                    sum += e;
                }
                for v in out.iter_mut() {
                    *v /= sum;
                }
            }
        }
        let rg = self.nodes[input].requires_grad;
        Ok(self.push(s, value, rg, Op::SoftmaxLast(input)))
    }

    /// Table cross-entropy: −(1/n_words) Σ_cells log q[cell, target], with
    /// the log argument clamped at 1e-12.
    pub fn cross_entropy_table(
        &mut self,
        q: NodeId,
        targets: &[usize],
        n_words: usize,
    ) -> Result<NodeId> {
        let s = self.nodes[q].shape.clone();
        if s.is_empty() {
            return Err(Error::shape("cross_entropy_table: scalar input"));
        }
        let d = s[s.len() - 1];
        let cells = self.nodes[q].value.len() / d;
        if targets.len() != cells {
            return Err(Error::shape(format!(
                "cross_entropy_table: {} targets for {} cells",
                targets.len(),
                cells
            )));
        }
        if n_words == 0 {
            return Err(Error::contract("cross_entropy_table: zero words"));
        }
        let mut acc = 0.0;
        for (cell, &t) in targets.iter().enumerate() {
            if t >= d {
                return Err(Error::contract(format!(
                    "cross_entropy_table: target {} out of {} tags",
                    t, d
                )));
            }
            acc -= self.nodes[q].value[cell * d + t].max(LOG_CLAMP).ln();
        }
        let inv_words = 1.0 / n_words as f64;
        let value = vec![acc * inv_words];
        let rg = self.nodes[q].requires_grad;
        Ok(self.push(
            vec![1],
            value,
            rg,
            Op::CrossEntropyTable {
                q,
                targets: targets.to_vec(),
                inv_words,
            },
        ))
    }

    pub fn mean_scalars(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        if inputs.is_empty() {
            return Err(Error::contract("mean_scalars: no inputs"));
        }
        let mut acc = 0.0;
        for &id in inputs {
            if self.nodes[id].value.len() != 1 {
                return Err(Error::contract("mean_scalars: non-scalar input"));
            }
            acc += self.nodes[id].value[0];
        }
        let value = vec![acc / inputs.len() as f64];
        let rg = self.any_grad(inputs);
        Ok(self.push(vec![1], value, rg, Op::MeanScalars(inputs.to_vec())))
    }

    pub fn sum_all(&mut self, input: NodeId) -> NodeId {
        let value = vec![self.nodes[input].value.iter().sum()];
        let rg = self.nodes[input].requires_grad;
        self.push(vec![1], value, rg, Op::SumAll(input))
    }

    // ---- backward ----------------------------------------------------

    /// Reverse sweep from a scalar loss node. Populates gradients for every
    /// `requires_grad` node that the loss depends on.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes[loss].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.nodes[loss].shape
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss] = Some(vec![1.0]);
        for id in (0..=loss).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = self.grads[id].take() else {
                continue;
            };
            backprop_op(&self.nodes, &mut self.grads, id, &g);
            self.grads[id] = Some(g);
        }
        Ok(())
    }
}

fn grad_buf(grads: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut [f64] {
    grads[id].get_or_insert_with(|| vec![0.0; len])
}

fn backprop_op(nodes: &[Node], grads: &mut [Option<Vec<f64>>], id: NodeId, g: &[f64]) {
    let wants = |i: NodeId| nodes[i].requires_grad;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            for &t in &[*a, *b] {
                if wants(t) {
                    let buf = grad_buf(grads, t, g.len());
                    for (d, &s) in buf.iter_mut().zip(g) {
                        *d += s;
                    }
                }
            }
        }
        Op::Mul(a, b) => {
            if wants(*a) {
                let bv = nodes[*b].value.clone();
                let buf = grad_buf(grads, *a, g.len());
                for i in 0..g.len() {
                    buf[i] += g[i] * bv[i];
                }
            }
            if wants(*b) {
                let av = nodes[*a].value.clone();
                let buf = grad_buf(grads, *b, g.len());
                for i in 0..g.len() {
                    buf[i] += g[i] * av[i];
                }
            }
        }
        Op::Sigmoid(x) => {
            if wants(*x) {
                let y = &nodes[id].value;
                let buf = grad_buf(grads, *x, g.len());
                for i in 0..g.len() {
                    buf[i] += g[i] * y[i] * (1.0 - y[i]);
                }
            }
        }
        Op::Tanh(x) => {
            if wants(*x) {
                let y = &nodes[id].value;
                let buf = grad_buf(grads, *x, g.len());
                for i in 0..g.len() {
                    buf[i] += g[i] * (1.0 - y[i] * y[i]);
                }
            }
        }
        Op::Relu(x) => {
            if wants(*x) {
                let xv = &nodes[*x].value;
                let buf = grad_buf(grads, *x, g.len());
                for i in 0..g.len() {
                    if xv[i] > 0.0 {
                        buf[i] += g[i];
                    }
                }
            }
        }
        Op::MatMul(a, b) => {
            let (m, k) = (nodes[*a].shape[0], nodes[*a].shape[1]);
            let n = nodes[*b].shape[1];
            if wants(*a) {
                // dA = g · Bᵀ
                let bv = &nodes[*b].value;
                let buf = grad_buf(grads, *a, m * k);
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = 0.0;
                        let grow = &g[i * n..(i + 1) * n];
                        let brow = &bv[p * n..(p + 1) * n];
                        for j in 0..n {
                            acc += grow[j] * brow[j];
                        }
                        buf[i * k + p] += acc;
                    }
                }
            }
            if wants(*b) {
                // dB = Aᵀ · g
                let av = &nodes[*a].value;
                let buf = grad_buf(grads, *b, k * n);
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let aip = av[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        let brow = &mut buf[p * n..(p + 1) * n];
                        for j in 0..n {
                            brow[j] += aip * grow[j];
                        }
                    }
                }
            }
        }
        Op::MatMulTransB(a, b) => {
            let (m, k) = (nodes[*a].shape[0], nodes[*a].shape[1]);
            let n = nodes[*b].shape[0];
            if wants(*a) {
                // dA = g · B
                let bv = &nodes[*b].value;
                let buf = grad_buf(grads, *a, m * k);
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for j in 0..n {
                        let gij = grow[j];
                        if gij == 0.0 {
                            continue;
                        }
                        let brow = &bv[j * k..(j + 1) * k];
                        let arow = &mut buf[i * k..(i + 1) * k];
                        for p in 0..k {
                            arow[p] += gij * brow[p];
                        }
                    }
                }
            }
            if wants(*b) {
                // dB = gᵀ · A
                let av = &nodes[*a].value;
                let buf = grad_buf(grads, *b, n * k);
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    let arow = &av[i * k..(i + 1) * k];
                    for j in 0..n {
                        let gij = grow[j];
                        if gij == 0.0 {
                            continue;
                        }
                        let brow = &mut buf[j * k..(j + 1) * k];
                        for p in 0..k {
                            brow[p] += gij * arow[p];
                        }
                    }
                }
            }
        }
        Op::MatVec(m_id, v_id) => {
            let (r, c) = (nodes[*m_id].shape[0], nodes[*m_id].shape[1]);
            if wants(*m_id) {
                let vv = &nodes[*v_id].value;
                let buf = grad_buf(grads, *m_id, r * c);
                for i in 0..r {
                    let gi = g[i];
                    if gi == 0.0 {
                        continue;
                    }
                    let row = &mut buf[i * c..(i + 1) * c];
                    for j in 0..c {
                        row[j] += gi * vv[j];
                    }
                }
            }
            if wants(*v_id) {
                let mv = &nodes[*m_id].value;
                let buf = grad_buf(grads, *v_id, c);
                for i in 0..r {
                    let gi = g[i];
                    if gi == 0.0 {
                        continue;
                    }
                    let row = &mv[i * c..(i + 1) * c];
                    for j in 0..c {
                        buf[j] += gi * row[j];
                    }
                }
            }
        }
        Op::ConcatLast(inputs) => {
            let rank = nodes[id].shape.len();
            let total_last = nodes[id].shape[rank - 1];
            let lead = nodes[id].value.len() / total_last;
            let widths: Vec<usize> = inputs.iter().map(|&i| nodes[i].shape[rank - 1]).collect();
            let mut off0 = 0;
            for (idx, &inp) in inputs.iter().enumerate() {
                let d = widths[idx];
                if wants(inp) {
                    let len = nodes[inp].value.len();
                    let buf = grad_buf(grads, inp, len);
                    for cell in 0..lead {
                        let src = &g[cell * total_last + off0..cell * total_last + off0 + d];
                        let dst = &mut buf[cell * d..(cell + 1) * d];
                        for (dv, &sv) in dst.iter_mut().zip(src) {
                            *dv += sv;
                        }
                    }
                }
                off0 += d;
            }
        }
        Op::StackLast(inputs) => {
            let count = inputs.len();
            let cells = nodes[id].value.len() / count;
            for (m, &inp) in inputs.iter().enumerate() {
                if wants(inp) {
                    let buf = grad_buf(grads, inp, cells);
                    for cell in 0..cells {
                        buf[cell] += g[cell * count + m];
                    }
                }
            }
        }
        Op::StackRows(inputs) => {
            let width = nodes[id].shape[1];
            for (r, &inp) in inputs.iter().enumerate() {
                if wants(inp) {
                    let buf = grad_buf(grads, inp, width);
                    let src = &g[r * width..(r + 1) * width];
                    for (dv, &sv) in buf.iter_mut().zip(src) {
                        *dv += sv;
                    }
                }
            }
        }
        Op::Slice { input, offset } => {
            if wants(*input) {
                let len = nodes[*input].value.len();
                let buf = grad_buf(grads, *input, len);
                for (i, &sv) in g.iter().enumerate() {
                    buf[offset + i] += sv;
                }
            }
        }
        Op::Gather { table, indices } => {
            if wants(*table) {
                let d = nodes[id].shape[1];
                let len = nodes[*table].value.len();
                let buf = grad_buf(grads, *table, len);
                for (l, &idx) in indices.iter().enumerate() {
                    let src = &g[l * d..(l + 1) * d];
                    let dst = &mut buf[idx * d..(idx + 1) * d];
                    for (dv, &sv) in dst.iter_mut().zip(src) {
                        *dv += sv;
                    }
                }
            }
        }
        Op::PairEmbed { table, null, cells } => {
            let d = nodes[id].shape[2];
            if wants(*table) {
                let len = nodes[*table].value.len();
                let buf = grad_buf(grads, *table, len);
                for (cell, src) in cells.iter().zip(g.chunks(d)) {
                    if let CellSrc::Row(r) = cell {
                        let dst = &mut buf[r * d..(r + 1) * d];
                        for (dv, &sv) in dst.iter_mut().zip(src) {
                            *dv += sv;
                        }
                    }
                }
            }
            if let Some(nl) = null {
                if wants(*nl) {
                    let buf = grad_buf(grads, *nl, d);
                    for (cell, src) in cells.iter().zip(g.chunks(d)) {
                        if matches!(cell, CellSrc::Null) {
                            for (dv, &sv) in buf.iter_mut().zip(src) {
                                *dv += sv;
                            }
                        }
                    }
                }
            }
        }
        Op::Conv2d {
            input,
            weight,
            bias,
            window,
        } => {
            let n = nodes[*input].shape[0];
            let u = nodes[*input].shape[2];
            let v = nodes[*weight].shape[0];
            let x = nodes[*input].value.clone();
            let w = nodes[*weight].value.clone();
            let need_x = wants(*input);
            let need_w = wants(*weight);
            let need_b = wants(*bias);
            // Materialize the buffers first so the kernel sees disjoint slices.
            if need_x {
                grad_buf(grads, *input, x.len());
            }
            if need_w {
                grad_buf(grads, *weight, w.len());
            }
            if need_b {
                grad_buf(grads, *bias, v);
            }
            let mut dx = if need_x { grads[*input].take() } else { None };
            let mut dw = if need_w { grads[*weight].take() } else { None };
            let mut db = if need_b { grads[*bias].take() } else { None };
            conv::conv2d_backward(
                n,
                u,
                v,
                *window,
                &x,
                &w,
                g,
                dx.as_deref_mut(),
                dw.as_deref_mut(),
                db.as_deref_mut(),
            );
            if need_x {
                grads[*input] = dx;
            }
            if need_w {
                grads[*weight] = dw;
            }
            if need_b {
                grads[*bias] = db;
            }
        }
        Op::CharConvMax {
            input,
            weight,
            bias,
            window,
            argmax,
        } => {
            let pi = nodes[*input].shape[1];
            let maps = nodes[*weight].shape[0];
            let x = nodes[*input].value.clone();
            let w = nodes[*weight].value.clone();
            let need_x = wants(*input);
            let need_w = wants(*weight);
            let need_b = wants(*bias);
            if need_x {
                grad_buf(grads, *input, x.len());
            }
            if need_w {
                grad_buf(grads, *weight, w.len());
            }
            if need_b {
                grad_buf(grads, *bias, maps);
            }
            let mut dx = if need_x { grads[*input].take() } else { None };
            let mut dw = if need_w { grads[*weight].take() } else { None };
            let mut db = if need_b { grads[*bias].take() } else { None };
            conv::charconv_backward(
                pi,
                maps,
                *window,
                &x,
                &w,
                g,
                argmax,
                dx.as_deref_mut(),
                dw.as_deref_mut(),
                db.as_deref_mut(),
            );
            if need_x {
                grads[*input] = dx;
            }
            if need_w {
                grads[*weight] = dw;
            }
            if need_b {
                grads[*bias] = db;
            }
        }
        Op::BatchNorm {
            input,
            gamma,
            beta,
            mean,
            invstd,
            train,
        } => {
            let c = mean.len();
            let cells = g.len() / c;
            let xv = &nodes[*input].value;
            let gv = &nodes[*gamma].value;
            // xhat recomputed from the saved statistics.
            let xhat = |cell: usize, k: usize| (xv[cell * c + k] - mean[k]) * invstd[k];
            if wants(*beta) {
                let buf = grad_buf(grads, *beta, c);
                for cell in 0..cells {
                    for k in 0..c {
                        buf[k] += g[cell * c + k];
                    }
                }
            }
            if wants(*gamma) {
                let buf = grad_buf(grads, *gamma, c);
                for cell in 0..cells {
                    for k in 0..c {
                        buf[k] += g[cell * c + k] * xhat(cell, k);
                    }
                }
            }
            if wants(*input) {
                if *train {
                    let inv_n = 1.0 / cells as f64;
                    let mut sum_g = vec![0.0; c];
                    let mut sum_gx = vec![0.0; c];
                    for cell in 0..cells {
                        for k in 0..c {
                            sum_g[k] += g[cell * c + k];
                            sum_gx[k] += g[cell * c + k] * xhat(cell, k);
                        }
                    }
                    let buf = grad_buf(grads, *input, cells * c);
                    for cell in 0..cells {
                        for k in 0..c {
                            let centered = g[cell * c + k]
                                - inv_n * sum_g[k]
                                - xhat(cell, k) * inv_n * sum_gx[k];
                            buf[cell * c + k] += gv[k] * invstd[k] * centered;
                        }
                    }
                } else {
                    let buf = grad_buf(grads, *input, cells * c);
                    for cell in 0..cells {
                        for k in 0..c {
                            buf[cell * c + k] += g[cell * c + k] * gv[k] * invstd[k];
                        }
                    }
                }
            }
        }
        Op::Dropout { input, mask } => {
            if wants(*input) {
                let buf = grad_buf(grads, *input, mask.len());
                for i in 0..mask.len() {
                    buf[i] += g[i] * mask[i];
                }
            }
        }
        Op::SoftmaxLast(x) => {
            if wants(*x) {
                let d = *nodes[id].shape.last().unwrap();
                let cells = g.len() / d;
                let y = &nodes[id].value;
                let buf = grad_buf(grads, *x, g.len());
                for cell in 0..cells {
                    let ys = &y[cell * d..(cell + 1) * d];
                    let gs = &g[cell * d..(cell + 1) * d];
                    let mut dot = 0.0;
                    for k in 0..d {
                        dot += gs[k] * ys[k];
                    }
                    let out = &mut buf[cell * d..(cell + 1) * d];
                    for k in 0..d {
                        out[k] += ys[k] * (gs[k] - dot);
                    }
                }
            }
        }
        Op::CrossEntropyTable {
            q,
            targets,
            inv_words,
        } => {
            if wants(*q) {
                let d = *nodes[*q].shape.last().unwrap();
                let qv = &nodes[*q].value;
                let scale = g[0] * inv_words;
                let buf = grad_buf(grads, *q, qv.len());
                for (cell, &t) in targets.iter().enumerate() {
                    let qi = qv[cell * d + t];
                    // The clamp flattens the log below the floor.
                    if qi > LOG_CLAMP {
                        buf[cell * d + t] -= scale / qi;
                    }
                }
            }
        }
        Op::MeanScalars(inputs) => {
            let w = g[0] / inputs.len() as f64;
            for &inp in inputs {
                if wants(inp) {
                    grad_buf(grads, inp, 1)[0] += w;
                }
            }
        }
        Op::SumAll(x) => {
            if wants(*x) {
                let len = nodes[*x].value.len();
                let buf = grad_buf(grads, *x, len);
                for v in buf.iter_mut() {
                    *v += g[0];
                }
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
