use std::collections::{BTreeMap, HashMap};

use super::{gemm, ParamStore, Result, Tensor, TensorError};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Affine(NodeId, f64),
    Elu(NodeId, f64),
    Relu(NodeId),
    Abs(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    SoftmaxRows(NodeId),
    RowSum(NodeId),
    BatchVecMat {
        q: NodeId,
        w: NodeId,
        m: usize,
    },
    GatherCols {
        a: NodeId,
        idx: Vec<usize>,
    },
    SelectRows {
        a: NodeId,
        idx: Vec<usize>,
    },
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    Reshape(NodeId),
    WeightedMse {
        pred: NodeId,
        target: Vec<f64>,
        weights: Vec<f64>,
    },
    Sum(NodeId),
    Mean(NodeId),
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Gradients keyed by parameter name.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    grads: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn from_map(grads: BTreeMap<String, Tensor>) -> Self {
        Self { grads }
    }

    /// Keeps only the entries whose name starts with `prefix`.
    pub fn retain_prefix(&mut self, prefix: &str) {
        self.grads.retain(|k, _| k.starts_with(prefix));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.grads.iter()
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.values().map(Tensor::sq_norm).sum::<f64>().sqrt()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// A recorded computation. Nodes are appended in evaluation order, so the
/// node vector is already a topological order.
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<String, NodeId>,
    checked: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// A graph in checked mode: every op output is scanned for NaN/Inf.
    pub fn new() -> Self {
        Self::with_checks(true)
    }

    pub fn with_checks(checked: bool) -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            checked,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// A constant input; never receives a gradient entry.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push_raw(Op::Leaf, value)
    }

    /// The named parameter from `store` as a differentiable leaf. Repeated
    /// calls with the same name return the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.params.get(name) {
            return Ok(id);
        }
        let value = store
            .get(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))?
            .clone();
        let id = self.push_raw(Op::Leaf, value);
        self.params.insert(name.to_string(), id);
        Ok(id)
    }

    fn push_raw(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op, value: Tensor, name: &'static str) -> Result<NodeId> {
        if self.checked && !all_finite(&value.data) {
            let index = value.data.iter().position(|x| !x.is_finite()).unwrap_or(0);
            return Err(TensorError::NonFinite { op: name, index });
        }
        Ok(self.push_raw(op, value))
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].value.shape
    }

    fn mismatch(&self, op: &'static str, a: NodeId, b: NodeId) -> TensorError {
        TensorError::ShapeMismatch {
            op,
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        }
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch(op, a, b));
        }
        Ok(())
    }

    fn matrix_dims(&self, op: &'static str, a: NodeId) -> Result<(usize, usize)> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: s.to_vec(),
                rhs: vec![],
            });
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (r, k) = self.matrix_dims("matmul", a)?;
        let (k2, c) = self.matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let mut out = vec![0.0; r * c];
        gemm(
            &self.value(a).data,
            false,
            &self.value(b).data,
            false,
            r,
            k,
            c,
            &mut out,
            false,
        );
        self.push(Op::MatMul(a, b), Tensor::raw(vec![r, c], out), "matmul")
    }

    fn zip(&mut self, a: NodeId, b: NodeId, op: Op, name: &'static str, f: fn(f64, f64) -> f64) -> Result<NodeId> {
        self.same_shape(name, a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data.iter().zip(&vb.data).map(|(&x, &y)| f(x, y)).collect();
        let shape = va.shape.clone();
        self.push(op, Tensor::raw(shape, data), name)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// `a[r×c] + bias[c]`, broadcasting the bias over rows.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (r, c) = self.matrix_dims("add_bias", a)?;
        if self.value(bias).len() != c {
            return Err(self.mismatch("add_bias", a, bias));
        }
        let va = self.value(a);
        let vb = &self.value(bias).data;
        let mut data = va.data.clone();
        for row in data.chunks_exact_mut(c) {
            row.iter_mut().zip(vb).for_each(|(x, b)| *x += b);
        }
        self.push(Op::AddBias(a, bias), Tensor::raw(vec![r, c], data), "add_bias")
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: NodeId, scale: f64, shift: f64) -> Result<NodeId> {
        let t = self.value(a).map(|x| scale * x + shift);
        self.push(Op::Affine(a, scale), t, "affine")
    }

    pub fn scale(&mut self, a: NodeId, scale: f64) -> Result<NodeId> {
        self.affine(a, scale, 0.0)
    }

    pub fn elu(&mut self, a: NodeId, alpha: f64) -> Result<NodeId> {
        let t = self.value(a).map(|x| elu(x, alpha));
        self.push(Op::Elu(a, alpha), t, "elu")
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), t, "relu")
    }

    pub fn abs(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a).map(f64::abs);
        self.push(Op::Abs(a), t, "abs")
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), t, "sigmoid")
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), t, "tanh")
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a);
        let c = v.cols();
        let mut data = v.data.clone();
        for row in data.chunks_exact_mut(c.max(1)) {
            softmax_in_place(row);
        }
        let shape = v.shape.clone();
        self.push(Op::SoftmaxRows(a), Tensor::raw(shape, data), "softmax_rows")
    }

    /// Sum over the trailing dimension: `[r×c] -> [r]`.
    pub fn row_sum(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, c) = self.matrix_dims("row_sum", a)?;
        let data = self
            .value(a)
            .data
            .chunks_exact(c.max(1))
            .map(|row| row.iter().sum())
            .collect();
        let data = if c == 0 { vec![0.0; r] } else { data };
        self.push(Op::RowSum(a), Tensor::raw(vec![r], data), "row_sum")
    }

    /// Per-row vector–matrix product: `q[B×n]` with `w[B×(n·m)]`, where row
    /// `b` of `w` is an `n×m` matrix stored row-major. Returns `[B×m]`.
    pub fn batch_vecmat(&mut self, q: NodeId, w: NodeId, m: usize) -> Result<NodeId> {
        let (bq, n) = self.matrix_dims("batch_vecmat", q)?;
        let (bw, nm) = self.matrix_dims("batch_vecmat", w)?;
        if bq != bw || nm != n * m {
            return Err(self.mismatch("batch_vecmat", q, w));
        }
        let (vq, vw) = (&self.value(q).data, &self.value(w).data);
        let mut out = vec![0.0; bq * m];
        for b in 0..bq {
            let o = &mut out[b * m..(b + 1) * m];
            for a in 0..n {
                let qa = vq[b * n + a];
                let wr = &vw[b * nm + a * m..b * nm + (a + 1) * m];
                o.iter_mut().zip(wr).for_each(|(x, w)| *x += qa * w);
            }
        }
        self.push(
            Op::BatchVecMat { q, w, m },
            Tensor::raw(vec![bq, m], out),
            "batch_vecmat",
        )
    }

    /// Picks column `idx[r]` from each row: `[r×c] -> [r]`.
    pub fn gather_cols(&mut self, a: NodeId, idx: &[usize]) -> Result<NodeId> {
        let (r, c) = self.matrix_dims("gather_cols", a)?;
        if idx.len() != r {
            return Err(TensorError::ShapeMismatch {
                op: "gather_cols",
                lhs: vec![r, c],
                rhs: vec![idx.len()],
            });
        }
        let v = &self.value(a).data;
        let mut data = Vec::with_capacity(r);
        for (row, &j) in idx.iter().enumerate() {
            if j >= c {
                return Err(TensorError::Index {
                    op: "gather_cols",
                    index: j,
                    bound: c,
                });
            }
            data.push(v[row * c + j]);
        }
        self.push(
            Op::GatherCols { a, idx: idx.to_vec() },
            Tensor::raw(vec![r], data),
            "gather_cols",
        )
    }

    /// Row gather. For 1-D inputs this selects elements.
    pub fn select_rows(&mut self, a: NodeId, idx: &[usize]) -> Result<NodeId> {
        let v = self.value(a);
        let (r, c) = (v.rows(), v.cols());
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= r {
                return Err(TensorError::Index {
                    op: "select_rows",
                    index: i,
                    bound: r,
                });
            }
            data.extend_from_slice(&v.data[i * c..(i + 1) * c]);
        }
        let shape = if v.shape.len() == 1 {
            vec![idx.len()]
        } else {
            vec![idx.len(), c]
        };
        self.push(
            Op::SelectRows { a, idx: idx.to_vec() },
            Tensor::raw(shape, data),
            "select_rows",
        )
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let r = self.value(parts[0]).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let v = self.value(p);
            if v.rows() != r || v.shape.len() > 2 {
                return Err(self.mismatch("concat_cols", parts[0], p));
            }
            widths.push(v.cols());
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; r * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = &self.value(p).data;
            for row in 0..r {
                data[row * total + off..row * total + off + w].copy_from_slice(&src[row * w..(row + 1) * w]);
            }
            off += w;
        }
        self.push(
            Op::ConcatCols(parts.to_vec()),
            Tensor::raw(vec![r, total], data),
            "concat_cols",
        )
    }

    /// Stacks matrices with equal column counts: `[r_i×c] -> [(Σr_i)×c]`.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let c = self.value(parts[0]).cols();
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.cols() != c || v.shape.len() != 2 {
                return Err(self.mismatch("concat_rows", parts[0], p));
            }
            data.extend_from_slice(&v.data);
        }
        let r = data.len() / c.max(1);
        self.push(
            Op::ConcatRows(parts.to_vec()),
            Tensor::raw(vec![r, c], data),
            "concat_rows",
        )
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let t = self.value(a).reshape(shape)?;
        self.push(Op::Reshape(a), t, "reshape")
    }

    /// `Σ_i w_i (pred_i − target_i)² / b` with `b = len(pred)`. Target and
    /// weights are constants: gradient flows to `pred` only.
    pub fn weighted_mse(&mut self, pred: NodeId, target: &[f64], weights: &[f64]) -> Result<NodeId> {
        let p = self.value(pred);
        if p.len() != target.len() || p.len() != weights.len() {
            return Err(TensorError::ShapeMismatch {
                op: "weighted_mse",
                lhs: p.shape.clone(),
                rhs: vec![target.len(), weights.len()],
            });
        }
        if let Some((index, &value)) = weights.iter().enumerate().find(|(_, &w)| !(w >= 0.0)) {
            return Err(TensorError::NegativeWeight { index, value });
        }
        let b = p.len().max(1) as f64;
        let loss = p
            .data
            .iter()
            .zip(target)
            .zip(weights)
            .map(|((&x, &y), &w)| w * (x - y) * (x - y))
            .sum::<f64>()
            / b;
        self.push(
            Op::WeightedMse {
                pred,
                target: target.to_vec(),
                weights: weights.to_vec(),
            },
            Tensor::scalar(loss),
            "weighted_mse",
        )
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.value(a).data.iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s), "sum")
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a);
        let s = v.data.iter().sum::<f64>() / v.len().max(1) as f64;
        self.push(Op::Mean(a), Tensor::scalar(s), "mean")
    }

    /// Reverse-mode accumulation from a scalar `loss`. Every parameter leaf
    /// recorded on the graph gets an entry; unreachable ones are zero.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let grads = self.accumulate_all(loss)?;
        let mut out = BTreeMap::new();
        for (name, &id) in &self.params {
            let shape = self.nodes[id.0].value.shape.clone();
            let data = grads
                .get(id.0)
                .and_then(|g| g.clone())
                .unwrap_or_else(|| vec![0.0; shape.iter().product()]);
            out.insert(name.clone(), Tensor::raw(shape, data));
        }
        Ok(Gradients { grads: out })
    }

    /// Gradient of a scalar `loss` with respect to arbitrary recorded nodes,
    /// inputs included. Nodes the loss does not depend on get zeros.
    pub fn grad_wrt(&self, loss: NodeId, wrt: &[NodeId]) -> Result<Vec<Tensor>> {
        let mut grads = self.accumulate_all(loss)?;
        Ok(wrt
            .iter()
            .map(|&id| {
                let shape = self.nodes[id.0].value.shape.clone();
                let data = grads
                    .get_mut(id.0)
                    .and_then(|g| g.clone())
                    .unwrap_or_else(|| vec![0.0; shape.iter().product()]);
                Tensor::raw(shape, data)
            })
            .collect())
    }

    fn accumulate_all(&self, loss: NodeId) -> Result<Vec<Option<Vec<f64>>>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads);
            // Interior values are kept so `grad_wrt` can read them.
            grads[i] = Some(g);
        }
        Ok(grads)
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |id: NodeId| &self.nodes[id.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (r, k) = (val(*a).shape[0], val(*a).shape[1]);
                let c = val(*b).shape[1];
                let mut da = vec![0.0; r * k];
                gemm(g, false, &val(*b).data, true, r, c, k, &mut da, false);
                let mut db = vec![0.0; k * c];
                gemm(&val(*a).data, true, g, false, k, r, c, &mut db, false);
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.to_vec());
                accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.to_vec());
                accumulate(grads, *b, g.iter().map(|x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&val(*a).data, &val(*b).data);
                accumulate(grads, *a, g.iter().zip(vb).map(|(g, y)| g * y).collect());
                accumulate(grads, *b, g.iter().zip(va).map(|(g, x)| g * x).collect());
            }
            Op::AddBias(a, bias) => {
                let c = val(*bias).len();
                let mut db = vec![0.0; c];
                for row in g.chunks_exact(c.max(1)) {
                    db.iter_mut().zip(row).for_each(|(d, x)| *d += x);
                }
                accumulate(grads, *a, g.to_vec());
                accumulate(grads, *bias, db);
            }
            Op::Affine(a, scale) => {
                accumulate(grads, *a, g.iter().map(|x| x * scale).collect());
            }
            Op::Elu(a, alpha) => {
                let x = &val(*a).data;
                let d = g.iter().zip(x).map(|(g, &x)| g * elu_grad(x, *alpha)).collect();
                accumulate(grads, *a, d);
            }
            Op::Relu(a) => {
                let x = &val(*a).data;
                let d = g.iter().zip(x).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect();
                accumulate(grads, *a, d);
            }
            Op::Abs(a) => {
                let x = &val(*a).data;
                let d = g
                    .iter()
                    .zip(x)
                    .map(|(g, &x)| {
                        if x > 0.0 {
                            *g
                        } else if x < 0.0 {
                            -g
                        } else {
                            0.0
                        }
                    })
                    .collect();
                accumulate(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let y = &node.value.data;
                accumulate(grads, *a, g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect());
            }
            Op::Tanh(a) => {
                let y = &node.value.data;
                accumulate(grads, *a, g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect());
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let c = y.cols().max(1);
                let mut d = vec![0.0; g.len()];
                for ((drow, grow), yrow) in d.chunks_exact_mut(c).zip(g.chunks_exact(c)).zip(y.data.chunks_exact(c)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(g, y)| g * y).sum();
                    for ((d, g), y) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d = y * (g - dot);
                    }
                }
                accumulate(grads, *a, d);
            }
            Op::RowSum(a) => {
                let c = val(*a).cols();
                let d = g.iter().flat_map(|&x| std::iter::repeat_n(x, c)).collect();
                accumulate(grads, *a, d);
            }
            Op::BatchVecMat { q, w, m } => {
                let m = *m;
                let (vq, vw) = (&val(*q).data, &val(*w).data);
                let n = val(*q).cols();
                let rows = val(*q).rows();
                let mut dq = vec![0.0; vq.len()];
                let mut dw = vec![0.0; vw.len()];
                for b in 0..rows {
                    let gb = &g[b * m..(b + 1) * m];
                    for a in 0..n {
                        let off = b * n * m + a * m;
                        let wr = &vw[off..off + m];
                        dq[b * n + a] = gb.iter().zip(wr).map(|(g, w)| g * w).sum();
                        let qa = vq[b * n + a];
                        dw[off..off + m].iter_mut().zip(gb).for_each(|(d, g)| *d = qa * g);
                    }
                }
                accumulate(grads, *q, dq);
                accumulate(grads, *w, dw);
            }
            Op::GatherCols { a, idx } => {
                let c = val(*a).cols();
                let mut d = vec![0.0; val(*a).len()];
                for (row, (&j, &gv)) in idx.iter().zip(g).enumerate() {
                    d[row * c + j] += gv;
                }
                accumulate(grads, *a, d);
            }
            Op::SelectRows { a, idx } => {
                let c = val(*a).cols();
                let mut d = vec![0.0; val(*a).len()];
                for (k, &i) in idx.iter().enumerate() {
                    d[i * c..(i + 1) * c]
                        .iter_mut()
                        .zip(&g[k * c..(k + 1) * c])
                        .for_each(|(d, g)| *d += g);
                }
                accumulate(grads, *a, d);
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let r = node.value.rows();
                let mut off = 0;
                for &p in parts {
                    let w = val(p).cols();
                    let mut d = vec![0.0; r * w];
                    for row in 0..r {
                        d[row * w..(row + 1) * w].copy_from_slice(&g[row * total + off..row * total + off + w]);
                    }
                    accumulate(grads, p, d);
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = val(p).len();
                    accumulate(grads, p, g[off..off + n].to_vec());
                    off += n;
                }
            }
            Op::Reshape(a) => accumulate(grads, *a, g.to_vec()),
            Op::WeightedMse { pred, target, weights } => {
                let p = &val(*pred).data;
                let b = p.len().max(1) as f64;
                let d = p
                    .iter()
                    .zip(target)
                    .zip(weights)
                    .map(|((&x, &y), &w)| g[0] * 2.0 * w * (x - y) / b)
                    .collect();
                accumulate(grads, *pred, d);
            }
            Op::Sum(a) => accumulate(grads, *a, vec![g[0]; val(*a).len()]),
            Op::Mean(a) => {
                let n = val(*a).len();
                accumulate(grads, *a, vec![g[0] / n.max(1) as f64; n]);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: NodeId, d: Vec<f64>) {
    match &mut grads[id.0] {
        Some(existing) => existing.iter_mut().zip(&d).for_each(|(e, x)| *e += x),
        slot @ None => *slot = Some(d),
    }
}

/// `x · 0` is 0 for finite `x` and NaN otherwise; independent lanes let
/// the reduction vectorize.
fn all_finite(data: &[f64]) -> bool {
    let mut acc = [0.0f64; 8];
    let chunks = data.chunks_exact(8);
    let rest = chunks.remainder();
    for c in chunks {
        for (a, x) in acc.iter_mut().zip(c) {
            *a += x * 0.0;
        }
    }
    for (a, x) in acc.iter_mut().zip(rest) {
        *a += x * 0.0;
    }
    acc.iter().sum::<f64>() == 0.0
}

pub(crate) fn elu(x: f64, alpha: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        alpha * x.exp_m1()
    }
}

pub(crate) fn elu_grad(x: f64, alpha: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        alpha * x.exp()
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

/// Max-subtracted softmax of one row.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    row.iter_mut().for_each(|x| *x /= total);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store_with(name: &str, t: Tensor) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert(name, t);
        s
    }

    #[test]
    fn matmul_small_cases() {
        let mut g = Graph::new();
        let a = g.input(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = g.input(Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap());
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[3.0, 4.0]);

        let a = g.input(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[11.0]);
    }

    #[test]
    fn matmul_reports_both_shapes() {
        let mut g = Graph::new();
        let a = g.input(Tensor::zeros(&[2, 3]));
        let b = g.input(Tensor::zeros(&[2, 3]));
        match g.matmul(a, b) {
            Err(TensorError::ShapeMismatch { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("expected shape error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn elu_values() {
        assert_eq!(elu(0.0, 1.0), 0.0);
        assert_eq!(elu(2.0, 1.0), 2.0);
        assert!((elu(-1.0, 1.0) - (-0.632_120_558_828_557_7)).abs() < 1e-15);
    }

    #[test]
    fn softmax_values_and_stability() {
        let mut g = Graph::new();
        let x = g.input(Tensor::matrix(3, 3, vec![0.0, 0.0, 0.0, 1.0, 2.0, 3.0, 5.0, 1005.0, -1e3]).unwrap());
        let y = g.softmax_rows(x).unwrap();
        let v = g.value(y);
        for c in 0..3 {
            assert!((v.at(0, c) - 1.0 / 3.0).abs() < 1e-15);
        }
        // Reference values from an mpmath evaluation at 30 digits.
        let expected = [
            0.090_030_573_170_380_46,
            0.244_728_471_054_797_64,
            0.665_240_955_774_821_9,
        ];
        for (c, e) in expected.iter().enumerate() {
            assert!((v.at(1, c) - e).abs() < 1e-12);
        }
        assert!(v.at(2, 0) < 1e-300 && (v.at(2, 1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn weighted_mse_value_and_negative_weight() {
        let mut g = Graph::new();
        let p = g.input(Tensor::vector(vec![2.0]));
        let l = g.weighted_mse(p, &[0.0], &[0.5]).unwrap();
        assert_eq!(g.value(l).item(), 2.0);
        let p2 = g.input(Tensor::vector(vec![1.0, 2.0]));
        let l2 = g.weighted_mse(p2, &[1.0, 2.0], &[1.0, 1.0]).unwrap();
        assert_eq!(g.value(l2).item(), 0.0);
        assert!(matches!(
            g.weighted_mse(p2, &[0.0, 0.0], &[1.0, -0.1]),
            Err(TensorError::NegativeWeight { index: 1, .. })
        ));
    }

    #[test]
    fn backward_basics() {
        let store = store_with("p", Tensor::vector(vec![1.0, -2.0, 3.0]));
        let mut g = Graph::new();
        let p = g.param(&store, "p").unwrap();
        let s = g.sum(p).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get("p").unwrap().data(), &[1.0, 1.0, 1.0]);

        // Constant loss: the parameter is recorded but unreachable.
        let mut g = Graph::new();
        let _p = g.param(&store, "p").unwrap();
        let c = g.input(Tensor::scalar(4.0));
        let grads = g.backward(c).unwrap();
        assert_eq!(grads.get("p").unwrap().data(), &[0.0, 0.0, 0.0]);

        let mut g = Graph::new();
        let p = g.param(&store, "p").unwrap();
        assert!(matches!(g.backward(p), Err(TensorError::NonScalarLoss(_))));
    }

    #[test]
    fn checked_mode_rejects_overflow() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![1e308]));
        assert!(matches!(g.affine(x, 10.0, 0.0), Err(TensorError::NonFinite { .. })));
        let mut g = Graph::with_checks(false);
        let x = g.input(Tensor::vector(vec![1e308]));
        assert!(g.affine(x, 10.0, 0.0).is_ok());
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Tensor::uniform(&[7, 5], 1.0, &mut rng);
        let b = Tensor::uniform(&[5, 4], 1.0, &mut rng);
        let run = || {
            let mut g = Graph::new();
            let (x, y) = (g.input(a.clone()), g.input(b.clone()));
            let z = g.matmul(x, y).unwrap();
            let z = g.elu(z, 1.0).unwrap();
            g.value(z).clone()
        };
        let (u, v) = (run(), run());
        assert!(u.data().iter().zip(v.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
