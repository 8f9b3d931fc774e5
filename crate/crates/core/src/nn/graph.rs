//! Define-by-run reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Graph`] is an append-only list of nodes. Every operation appends one
//! node whose inputs precede it, so the node order is already a topological
//! order and the backward pass is a single reverse sweep.

use crate::error::{Error, Result};

use super::kernels;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Tensor {
    id: usize,
}

impl Tensor {
    pub fn node_id(self) -> usize {
        self.id
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    BatchMatMul {
        a: usize,
        b: usize,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        trans_b: bool,
    },
    Add(usize, usize),
    AddBias(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Exp(usize),
    Gelu(usize),
    Gather {
        x: usize,
        index: Vec<usize>,
    },
    MaskedSoftmax {
        x: usize,
        valid: Vec<usize>,
    },
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        // normalized input followed by one reciprocal std per row
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Dropout {
        x: usize,
        mask: Vec<f64>,
    },
    SoftmaxCrossEntropy {
        logits: usize,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    SegmentMean {
        x: usize,
        segments: Vec<Vec<usize>>,
    },
    Sum(usize),
    Reshape(usize),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn last_dim(shape: &[usize]) -> usize {
    shape.last().copied().unwrap_or(1)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, t: Tensor) -> &[usize] {
        &self.nodes[t.id].shape
    }

    pub fn value(&self, t: Tensor) -> &[f64] {
        &self.nodes[t.id].value
    }

    pub fn grad(&self, t: Tensor) -> Option<&[f64]> {
        self.nodes[t.id].grad.as_deref()
    }

    pub fn requires_grad(&self, t: Tensor) -> bool {
        self.nodes[t.id].requires_grad
    }

    /// Scalar value of a one-element tensor.
    pub fn scalar(&self, t: Tensor) -> f64 {
        self.nodes[t.id].value[0]
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, inputs: &[usize]) -> Tensor {
        debug_assert_eq!(numel(&shape), value.len());
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            shape,
            value,
            grad: None,
            requires_grad,
            op,
        });
        Tensor {
            id: self.nodes.len() - 1,
        }
    }

    pub fn leaf(&mut self, values: Vec<f64>, shape: &[usize], requires_grad: bool) -> Result<Tensor> {
        if numel(shape) != values.len() {
            return Err(Error::Dimension {
                op: "leaf",
                lhs: shape.to_vec(),
                rhs: vec![values.len()],
            });
        }
        self.nodes.push(Node {
            shape: shape.to_vec(),
            value: values,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Ok(Tensor {
            id: self.nodes.len() - 1,
        })
    }

    pub fn variable(&mut self, values: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        self.leaf(values, shape, true)
    }

    pub fn constant(&mut self, values: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        self.leaf(values, shape, false)
    }

    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        kernels::mm_nn(self.value(a), self.value(b), m, k, n, &mut out);
        Ok(self.push(vec![m, n], out, Op::MatMul(a.id, b.id), &[a.id, b.id]))
    }

    /// Batched product `[N×m×k]·[N×k×n]`, or `[N×m×k]·[N×n×k]ᵀ` when `trans_b`.
    pub fn batch_matmul(&mut self, a: Tensor, b: Tensor, trans_b: bool) -> Result<Tensor> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let mismatch = || Error::Dimension {
            op: "batch_matmul",
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        };
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(mismatch());
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let n = if trans_b { sb[1] } else { sb[2] };
        let inner = if trans_b { sb[2] } else { sb[1] };
        if inner != k {
            return Err(mismatch());
        }
        let mut out = vec![0.0; batch * m * n];
        let (va, vb) = (self.value(a), self.value(b));
        for i in 0..batch {
            let ab = &va[i * m * k..(i + 1) * m * k];
            let bb = &vb[i * k * n..(i + 1) * k * n];
            let ob = &mut out[i * m * n..(i + 1) * m * n];
            if trans_b {
                kernels::mm_nt(ab, bb, m, k, n, ob);
            } else {
                kernels::mm_nn(ab, bb, m, k, n, ob);
            }
        }
        let op = Op::BatchMatMul {
            a: a.id,
            b: b.id,
            batch,
            m,
            k,
            n,
            trans_b,
        };
        Ok(self.push(vec![batch, m, n], out, op, &[a.id, b.id]))
    }

    fn same_shape(&self, op: &'static str, a: Tensor, b: Tensor) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add(a.id, b.id), &[a.id, b.id]))
    }

    /// Adds a `[d]` vector to every row of a `[..×d]` tensor.
    pub fn add_bias(&mut self, x: Tensor, bias: Tensor) -> Result<Tensor> {
        let d = last_dim(self.shape(x));
        if self.shape(bias) != [d] {
            return Err(Error::Dimension {
                op: "add_bias",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(bias).to_vec(),
            });
        }
        let b = self.value(bias);
        let out = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v + b[i % d])
            .collect();
        Ok(self.push(self.shape(x).to_vec(), out, Op::AddBias(x.id, bias.id), &[x.id, bias.id]))
    }

    /// Affine map `x·w + b` over the last axis of `x` (any leading shape).
    pub fn linear(&mut self, x: Tensor, w: Tensor, b: Tensor) -> Result<Tensor> {
        let shape = self.shape(x).to_vec();
        let d = last_dim(&shape);
        let flat = self.reshape(x, &[numel(&shape) / d.max(1), d])?;
        let y = self.matmul(flat, w)?;
        let y = self.add_bias(y, b)?;
        let mut out_shape = shape;
        *out_shape.last_mut().expect("non-empty shape") = self.shape(w)[1];
        self.reshape(y, &out_shape)
    }

    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul(a.id, b.id), &[a.id, b.id]))
    }

    pub fn scale(&mut self, x: Tensor, c: f64) -> Tensor {
        let out = self.value(x).iter().map(|v| v * c).collect();
        self.push(self.shape(x).to_vec(), out, Op::Scale(x.id, c), &[x.id])
    }

    pub fn exp(&mut self, x: Tensor) -> Tensor {
        let out = self.value(x).iter().map(|v| v.exp()).collect();
        self.push(self.shape(x).to_vec(), out, Op::Exp(x.id), &[x.id])
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, x: Tensor) -> Tensor {
        let out = self.value(x).iter().map(|&v| kernels::gelu(v)).collect();
        self.push(self.shape(x).to_vec(), out, Op::Gelu(x.id), &[x.id])
    }

    /// `out[i] = x[index[i]]` over the flat storage, reshaped to `shape`.
    pub fn gather(&mut self, x: Tensor, index: Vec<usize>, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != index.len() {
            return Err(Error::Dimension {
                op: "gather",
                lhs: shape.to_vec(),
                rhs: vec![index.len()],
            });
        }
        let src = self.value(x);
        let bound = src.len();
        let mut out = Vec::with_capacity(index.len());
        for &i in &index {
            if i >= bound {
                return Err(Error::Index {
                    what: "gather source",
                    index: i,
                    bound,
                });
            }
            out.push(src[i]);
        }
        Ok(self.push(shape.to_vec(), out, Op::Gather { x: x.id, index }, &[x.id]))
    }

    /// Row gather from a `[V×d]` table; backward scatter-adds into the rows.
    pub fn embedding_lookup(&mut self, table: Tensor, ids: &[usize]) -> Result<Tensor> {
        let shape = self.shape(table);
        if shape.len() != 2 {
            return Err(Error::Dimension {
                op: "embedding_lookup",
                lhs: shape.to_vec(),
                rhs: vec![ids.len()],
            });
        }
        let (vocab, d) = (shape[0], shape[1]);
        let mut index = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= vocab {
                return Err(Error::Index {
                    what: "embedding table",
                    index: id,
                    bound: vocab,
                });
            }
            index.extend(id * d..(id + 1) * d);
        }
        self.gather(table, index, &[ids.len(), d])
    }

    /// Selects rows of a `[n×d]` tensor.
    pub fn select_rows(&mut self, x: Tensor, rows: &[usize]) -> Result<Tensor> {
        self.embedding_lookup(x, rows)
    }

    /// Softmax over the last axis where row `r` only spans its first
    /// `valid[r]` entries; the remaining entries are exactly zero.
    pub fn masked_softmax(&mut self, x: Tensor, valid: Vec<usize>) -> Result<Tensor> {
        let n = last_dim(self.shape(x));
        let rows = self.value(x).len() / n.max(1);
        if valid.len() != rows {
            return Err(Error::Dimension {
                op: "masked_softmax",
                lhs: self.shape(x).to_vec(),
                rhs: vec![valid.len()],
            });
        }
        if let Some(&bad) = valid.iter().find(|&&v| v == 0 || v > n) {
            return Err(Error::Index {
                what: "softmax valid length",
                index: bad,
                bound: n,
            });
        }
        let src = self.value(x);
        let mut out = vec![0.0; src.len()];
        for (r, &len) in valid.iter().enumerate() {
            kernels::softmax_into(&src[r * n..r * n + len], &mut out[r * n..r * n + len]);
        }
        Ok(self.push(self.shape(x).to_vec(), out, Op::MaskedSoftmax { x: x.id, valid }, &[x.id]))
    }

    pub fn softmax(&mut self, x: Tensor) -> Result<Tensor> {
        let n = last_dim(self.shape(x));
        let rows = self.value(x).len() / n.max(1);
        self.masked_softmax(x, vec![n; rows])
    }

    pub fn layer_norm(&mut self, x: Tensor, gain: Tensor, bias: Tensor, eps: f64) -> Result<Tensor> {
        let d = last_dim(self.shape(x));
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(Error::Dimension {
                op: "layer_norm",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(gain).to_vec(),
            });
        }
        if eps <= 0.0 {
            return Err(Error::Contract(format!("layer_norm eps must be positive, got {eps}")));
        }
        let src = self.value(x);
        let (g, b) = (self.value(gain), self.value(bias));
        let rows = src.len() / d;
        let mut xhat = vec![0.0; src.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            rstd[r] = inv;
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let op = Op::LayerNorm {
            x: x.id,
            gain: gain.id,
            bias: bias.id,
            xhat,
            rstd,
        };
        Ok(self.push(self.shape(x).to_vec(), out, op, &[x.id, gain.id, bias.id]))
    }

    /// Multiplies by a fixed mask (entries are 0 or the inverted keep scale).
    pub fn dropout(&mut self, x: Tensor, mask: Vec<f64>) -> Result<Tensor> {
        if mask.len() != self.value(x).len() {
            return Err(Error::Dimension {
                op: "dropout",
                lhs: self.shape(x).to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let out = self.value(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        Ok(self.push(self.shape(x).to_vec(), out, Op::Dropout { x: x.id, mask }, &[x.id]))
    }

    /// Mean over rows of `−log softmax(logits)[target]`.
    pub fn softmax_cross_entropy(&mut self, logits: Tensor, targets: &[usize]) -> Result<Tensor> {
        let shape = self.shape(logits);
        if shape.len() != 2 {
            return Err(Error::Dimension {
                op: "softmax_cross_entropy",
                lhs: shape.to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let (n, v) = (shape[0], shape[1]);
        if n == 0 {
            return Err(Error::EmptyBatch("softmax_cross_entropy"));
        }
        if targets.len() != n {
            return Err(Error::Dimension {
                op: "softmax_cross_entropy",
                lhs: shape.to_vec(),
                rhs: vec![targets.len()],
            });
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= v) {
            return Err(Error::Index {
                what: "class",
                index: t,
                bound: v,
            });
        }
        let src = self.value(logits);
        let mut probs = vec![0.0; src.len()];
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = &src[r * v..(r + 1) * v];
            let lse = kernels::log_sum_exp(row);
            total += lse - row[t];
            kernels::softmax_into(row, &mut probs[r * v..(r + 1) * v]);
        }
        let loss = (total / n as f64).max(0.0);
        let op = Op::SoftmaxCrossEntropy {
            logits: logits.id,
            targets: targets.to_vec(),
            probs,
        };
        Ok(self.push(vec![1], vec![loss], op, &[logits.id]))
    }

    /// Averages the rows of `x [M×d]` listed in each segment into `[B×d]`.
    pub fn segment_mean(&mut self, x: Tensor, segments: Vec<Vec<usize>>) -> Result<Tensor> {
        let shape = self.shape(x);
        if shape.len() != 2 {
            return Err(Error::Dimension {
                op: "segment_mean",
                lhs: shape.to_vec(),
                rhs: vec![segments.len()],
            });
        }
        let (m, d) = (shape[0], shape[1]);
        let src = self.value(x);
        let mut out = vec![0.0; segments.len() * d];
        for (b, seg) in segments.iter().enumerate() {
            if seg.is_empty() {
                return Err(Error::Contract(format!("segment {b} has no rows to average")));
            }
            let w = 1.0 / seg.len() as f64;
            for &row in seg {
                if row >= m {
                    return Err(Error::Index {
                        what: "segment row",
                        index: row,
                        bound: m,
                    });
                }
                for j in 0..d {
                    out[b * d + j] += w * src[row * d + j];
                }
            }
        }
        let out_shape = vec![segments.len(), d];
        Ok(self.push(out_shape, out, Op::SegmentMean { x: x.id, segments }, &[x.id]))
    }

    pub fn sum(&mut self, x: Tensor) -> Tensor {
        let s = self.value(x).iter().sum();
        self.push(vec![1], vec![s], Op::Sum(x.id), &[x.id])
    }

    pub fn reshape(&mut self, x: Tensor, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.value(x).len() {
            return Err(Error::Dimension {
                op: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let out = self.value(x).to_vec();
        Ok(self.push(shape.to_vec(), out, Op::Reshape(x.id), &[x.id]))
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Reverse sweep from a scalar loss. Gradients of every node that
    /// requires them are accumulated into the stored `grad` buffers, so
    /// calling twice without [`Graph::zero_grads`] doubles them.
    pub fn backward(&mut self, loss: Tensor) -> Result<()> {
        if self.nodes[loss.id].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.id].shape
            )));
        }
        let mut pass: Vec<Option<Vec<f64>>> = (0..=loss.id).map(|_| None).collect();
        pass[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let Some(upstream) = pass[id].take() else {
                continue;
            };
            if !self.nodes[id].requires_grad {
                continue;
            }
            self.propagate(id, &upstream, &mut pass);
            let node = &mut self.nodes[id];
            match &mut node.grad {
                Some(g) => kernels::axpy(1.0, &upstream, g),
                None => node.grad = Some(upstream),
            }
        }
        Ok(())
    }

    fn propagate(&self, id: usize, dy: &[f64], pass: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        // Allocates a zeroed pass buffer for input `i` if it takes gradients.
        let wants = |i: usize| nodes[i].requires_grad;
        fn slot<'a>(pass: &'a mut [Option<Vec<f64>>], nodes: &[Node], i: usize) -> &'a mut Vec<f64> {
            pass[i].get_or_insert_with(|| vec![0.0; nodes[i].value.len()])
        }

        match &nodes[id].op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = (nodes[a].shape[0], nodes[a].shape[1]);
                let n = nodes[b].shape[1];
                if wants(a) {
                    kernels::mm_nt(dy, &nodes[b].value, m, n, k, slot(pass, nodes, a));
                }
                if wants(b) {
                    kernels::mm_tn(&nodes[a].value, dy, m, k, n, slot(pass, nodes, b));
                }
            }
            &Op::BatchMatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                trans_b,
            } => {
                if wants(a) {
                    let bv = &nodes[b].value;
                    let ga = slot(pass, nodes, a);
                    for i in 0..batch {
                        let dyb = &dy[i * m * n..(i + 1) * m * n];
                        let bb = &bv[i * k * n..(i + 1) * k * n];
                        let gab = &mut ga[i * m * k..(i + 1) * m * k];
                        if trans_b {
                            kernels::mm_nn(dyb, bb, m, n, k, gab);
                        } else {
                            kernels::mm_nt(dyb, bb, m, n, k, gab);
                        }
                    }
                }
                if wants(b) {
                    let av = &nodes[a].value;
                    let gb = slot(pass, nodes, b);
                    for i in 0..batch {
                        let dyb = &dy[i * m * n..(i + 1) * m * n];
                        let ab = &av[i * m * k..(i + 1) * m * k];
                        let gbb = &mut gb[i * k * n..(i + 1) * k * n];
                        if trans_b {
                            kernels::mm_tn(dyb, ab, m, n, k, gbb);
                        } else {
                            kernels::mm_tn(ab, dyb, m, k, n, gbb);
                        }
                    }
                }
            }
            &Op::Add(a, b) => {
                for i in [a, b] {
                    if wants(i) {
                        kernels::axpy(1.0, dy, slot(pass, nodes, i));
                    }
                }
            }
            &Op::AddBias(x, bias) => {
                if wants(x) {
                    kernels::axpy(1.0, dy, slot(pass, nodes, x));
                }
                if wants(bias) {
                    let gb = slot(pass, nodes, bias);
                    let d = gb.len();
                    for (i, v) in dy.iter().enumerate() {
                        gb[i % d] += v;
                    }
                }
            }
            &Op::Mul(a, b) => {
                if wants(a) {
                    let bv = &nodes[b].value;
                    let ga = slot(pass, nodes, a);
                    for i in 0..dy.len() {
                        ga[i] += dy[i] * bv[i];
                    }
                }
                if wants(b) {
                    let av = &nodes[a].value;
                    let gb = slot(pass, nodes, b);
                    for i in 0..dy.len() {
                        gb[i] += dy[i] * av[i];
                    }
                }
            }
            &Op::Scale(x, c) => {
                if wants(x) {
                    kernels::axpy(c, dy, slot(pass, nodes, x));
                }
            }
            &Op::Exp(x) => {
                if wants(x) {
                    let y = &nodes[id].value;
                    let gx = slot(pass, nodes, x);
                    for i in 0..dy.len() {
                        gx[i] += dy[i] * y[i];
                    }
                }
            }
            &Op::Gelu(x) => {
                if wants(x) {
                    let xv = &nodes[x].value;
                    let gx = slot(pass, nodes, x);
                    for i in 0..dy.len() {
                        gx[i] += dy[i] * kernels::gelu_grad(xv[i]);
                    }
                }
            }
            Op::Gather { x, index } => {
                if wants(*x) {
                    let gx = slot(pass, nodes, *x);
                    for (o, &i) in index.iter().enumerate() {
                        gx[i] += dy[o];
                    }
                }
            }
            Op::MaskedSoftmax { x, valid } => {
                if wants(*x) {
                    let y = &nodes[id].value;
                    let n = last_dim(&nodes[id].shape);
                    let gx = slot(pass, nodes, *x);
                    for (r, &len) in valid.iter().enumerate() {
                        let base = r * n;
                        let dot: f64 = (0..len).map(|j| y[base + j] * dy[base + j]).sum();
                        for j in 0..len {
                            gx[base + j] += y[base + j] * (dy[base + j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let d = last_dim(&nodes[id].shape);
                let rows = rstd.len();
                if wants(*gain) {
                    let gg = slot(pass, nodes, *gain);
                    for r in 0..rows {
                        for j in 0..d {
                            gg[j] += dy[r * d + j] * xhat[r * d + j];
                        }
                    }
                }
                if wants(*bias) {
                    let gb = slot(pass, nodes, *bias);
                    for r in 0..rows {
                        for j in 0..d {
                            gb[j] += dy[r * d + j];
                        }
                    }
                }
                if wants(*x) {
                    let g = &nodes[*gain].value;
                    let gx = slot(pass, nodes, *x);
                    let mut dxhat = vec![0.0; d];
                    for r in 0..rows {
                        let base = r * d;
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for j in 0..d {
                            dxhat[j] = dy[base + j] * g[j];
                            mean_d += dxhat[j];
                            mean_dx += dxhat[j] * xhat[base + j];
                        }
                        mean_d /= d as f64;
                        mean_dx /= d as f64;
                        for j in 0..d {
                            gx[base + j] += rstd[r] * (dxhat[j] - mean_d - xhat[base + j] * mean_dx);
                        }
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if wants(*x) {
                    let gx = slot(pass, nodes, *x);
                    for i in 0..dy.len() {
                        gx[i] += dy[i] * mask[i];
                    }
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                probs,
            } => {
                if wants(*logits) {
                    let v = nodes[*logits].shape[1];
                    let scale = dy[0] / targets.len() as f64;
                    let gl = slot(pass, nodes, *logits);
                    for (r, &t) in targets.iter().enumerate() {
                        for j in 0..v {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            gl[r * v + j] += scale * (probs[r * v + j] - onehot);
                        }
                    }
                }
            }
            Op::SegmentMean { x, segments } => {
                if wants(*x) {
                    let d = nodes[*x].shape[1];
                    let gx = slot(pass, nodes, *x);
                    for (b, seg) in segments.iter().enumerate() {
                        let w = 1.0 / seg.len() as f64;
                        for &row in seg {
                            for j in 0..d {
                                gx[row * d + j] += w * dy[b * d + j];
                            }
                        }
                    }
                }
            }
            &Op::Sum(x) => {
                if wants(x) {
                    let gx = slot(pass, nodes, x);
                    for g in gx.iter_mut() {
                        *g += dy[0];
                    }
                }
            }
            &Op::Reshape(x) => {
                if wants(x) {
                    kernels::axpy(1.0, dy, slot(pass, nodes, x));
                }
            }
        }
    }
}
