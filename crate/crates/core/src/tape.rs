//! Minimal reverse-mode differentiation over dense row-major matrices.
//!
//! A [`Graph`] records every operation as a node. Parameters are leaves
//! that read from a [`ParamStore`]; [`Graph::backward`] accumulates
//! gradients for every parameter the loss depends on.

use crate::params::ParamStore;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor shape mismatch");
        Tensor { rows, cols, data }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::from_vec(1, 1, vec![v])
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Const,
    Param(usize),
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Silu(NodeId),
    Square(NodeId),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    GatherRows(NodeId, Vec<usize>),
    LogSoftmax(NodeId),
    ExpMapRows(NodeId),
    Mat3Rows(NodeId, Vec<[f64; 9]>),
    Mat3VecRows(NodeId, Vec<[f64; 9]>),
    Sum(NodeId),
    DotConst(NodeId, Vec<f64>),
    AcosSq(NodeId),
    LogSigmoid(NodeId),
}

struct Node {
    op: Op,
    value: Option<Tensor>,
    rows: usize,
    cols: usize,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<NodeId>>,
}

/// Gradients of a scalar with respect to every parameter, aligned with the
/// store's parameter order. Untouched parameters get zero tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Gradients {
            tensors: store
                .iter()
                .map(|(_, t)| Tensor::zeros(t.rows, t.cols))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for t in &mut self.tensors {
            for x in &mut t.data {
                *x *= c;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data.iter().copied()).collect()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(sigmoid(x))`, stable for large `|x|`.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn mat3_mul(a: &[f64; 9], b: &[f64]) -> [f64; 9] {
    let mut out = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            out[i * 3 + j] = a[i * 3] * b[j] + a[i * 3 + 1] * b[3 + j] + a[i * 3 + 2] * b[6 + j];
        }
    }
    out
}

fn mat3_tmul(a: &[f64; 9], b: &[f64]) -> [f64; 9] {
    // a^T b
    let mut out = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            out[i * 3 + j] = a[i] * b[j] + a[3 + i] * b[3 + j] + a[6 + i] * b[6 + j];
        }
    }
    out
}

/// `acos(c)^2` and its derivative, finite at both ends of `[-1, 1]`.
fn acos_sq(c: f64) -> (f64, f64) {
    let c = c.clamp(-1.0, 1.0);
    let theta = c.acos();
    let s = (1.0 - c * c).max(0.0).sqrt();
    let deriv = if theta < 1e-6 {
        // -2 theta / sin(theta) -> -2 (1 + theta^2/6)
        -2.0 * (1.0 + theta * theta / 6.0)
    } else if s < 1e-12 {
        // at a half-turn the squared angle has an infinite slope; clamp
        -2.0 * theta / 1e-12
    } else {
        -2.0 * theta / s
    };
    (theta * theta, deriv)
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::with_capacity(256),
            param_nodes: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let (rows, cols) = (value.rows, value.cols);
        self.nodes.push(Node {
            op,
            value: Some(value),
            rows,
            cols,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        match &self.nodes[id.0].op {
            Op::Param(p) => self.params.tensor(*p),
            _ => self.nodes[id.0].value.as_ref().expect("node value"),
        }
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        self.value(id).data[0]
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        (self.nodes[id.0].rows, self.nodes[id.0].cols)
    }

    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Const, t)
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.constant(Tensor::scalar(v))
    }

    /// Leaf for the parameter at `index`; repeated calls share one node.
    pub fn param(&mut self, index: usize) -> NodeId {
        if let Some(id) = self.param_nodes[index] {
            return id;
        }
        let t = self.params.tensor(index);
        self.nodes.push(Node {
            op: Op::Param(index),
            value: None,
            rows: t.rows,
            cols: t.cols,
        });
        let id = NodeId(self.nodes.len() - 1);
        self.param_nodes[index] = Some(id);
        id
    }

    pub fn param_named(&mut self, name: &str) -> NodeId {
        let idx = self
            .params
            .index_of(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.param(idx)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols, bv.rows, "matmul shape mismatch");
        let (n, k, m) = (av.rows, av.cols, bv.cols);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let orow = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let x = av.data[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv.data[p * m..(p + 1) * m];
                for (o, &y) in orow.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        self.push(Op::MatMul(a, b), Tensor::from_vec(n, m, out))
    }

    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(bias));
        assert_eq!(bv.len(), av.cols, "bias width mismatch");
        let mut out = av.data.clone();
        for row in out.chunks_mut(av.cols) {
            for (o, b) in row.iter_mut().zip(&bv.data) {
                *o += b;
            }
        }
        let t = Tensor::from_vec(av.rows, av.cols, out);
        self.push(Op::AddBias(a, bias), t)
    }

    /// `x W + b`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let h = self.matmul(x, w);
        self.add_bias(h, b)
    }

    fn zip_op(&mut self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64, op: Op) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!((av.rows, av.cols), (bv.rows, bv.cols), "elementwise shape mismatch");
        let data = av.data.iter().zip(&bv.data).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::from_vec(av.rows, av.cols, data);
        self.push(op, t)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_op(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_op(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_op(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn map_op(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let av = self.value(a);
        let t = Tensor::from_vec(av.rows, av.cols, av.data.iter().map(|&x| f(x)).collect());
        self.push(op, t)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.map_op(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        self.map_op(a, |x| x + c, Op::AddScalar(a))
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&mut self, a: NodeId) -> NodeId {
        self.map_op(a, |x| x * sigmoid(x), Op::Silu(a))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.map_op(a, |x| x * x, Op::Square(a))
    }

    pub fn acos_sq(&mut self, a: NodeId) -> NodeId {
        self.map_op(a, |x| acos_sq(x).0, Op::AcosSq(a))
    }

    pub fn log_sigmoid(&mut self, a: NodeId) -> NodeId {
        self.map_op(a, log_sigmoid, Op::LogSigmoid(a))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                let v = self.value(p);
                assert_eq!(v.rows, rows, "concat row mismatch");
                out.extend_from_slice(v.row(i));
            }
        }
        self.push(Op::ConcatCols(parts.to_vec()), Tensor::from_vec(rows, cols, out))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        let cols = self.value(parts[0]).cols;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols, cols, "concat column mismatch");
            out.extend_from_slice(&v.data);
            rows += v.rows;
        }
        self.push(Op::ConcatRows(parts.to_vec()), Tensor::from_vec(rows, cols, out))
    }

    pub fn gather_rows(&mut self, table: NodeId, idx: &[usize]) -> NodeId {
        let tv = self.value(table);
        let mut out = Vec::with_capacity(idx.len() * tv.cols);
        for &i in idx {
            out.extend_from_slice(tv.row(i));
        }
        let t = Tensor::from_vec(idx.len(), tv.cols, out);
        self.push(Op::GatherRows(table, idx.to_vec()), t)
    }

    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let mut out = av.data.clone();
        for row in out.chunks_mut(av.cols) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|&x| (x - mx).exp()).sum::<f64>().ln();
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        let t = Tensor::from_vec(av.rows, av.cols, out);
        self.push(Op::LogSoftmax(a), t)
    }

    /// Row-wise Rodrigues map: `n x 3` axis-angle rows to `n x 9`
    /// row-major rotation matrices.
    pub fn exp_map_rows(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        assert_eq!(av.cols, 3);
        let mut out = Vec::with_capacity(av.rows * 9);
        for i in 0..av.rows {
            let r = av.row(i);
            let rot = crate::geom::exp_map(crate::geom::AxisAngle([r[0], r[1], r[2]]));
            out.extend_from_slice(&rot.row_major());
        }
        let t = Tensor::from_vec(av.rows, 9, out);
        self.push(Op::ExpMapRows(a), t)
    }

    /// Row-wise `C_i * A_i` for constant 3x3 `C_i` and `n x 9` input rows.
    pub fn mat3_rows(&mut self, a: NodeId, mats: Vec<[f64; 9]>) -> NodeId {
        let av = self.value(a);
        assert_eq!((av.cols, av.rows), (9, mats.len()));
        let mut out = Vec::with_capacity(av.rows * 9);
        for (i, c) in mats.iter().enumerate() {
            out.extend_from_slice(&mat3_mul(c, av.row(i)));
        }
        let t = Tensor::from_vec(av.rows, 9, out);
        self.push(Op::Mat3Rows(a, mats), t)
    }

    /// Row-wise `C_i * v_i` for constant 3x3 `C_i` and `n x 3` input rows.
    pub fn mat3_vec_rows(&mut self, a: NodeId, mats: Vec<[f64; 9]>) -> NodeId {
        let av = self.value(a);
        assert_eq!((av.cols, av.rows), (3, mats.len()));
        let mut out = Vec::with_capacity(av.rows * 3);
        for (i, c) in mats.iter().enumerate() {
            let v = av.row(i);
            for r in 0..3 {
                out.push(c[r * 3] * v[0] + c[r * 3 + 1] * v[1] + c[r * 3 + 2] * v[2]);
            }
        }
        let t = Tensor::from_vec(av.rows, 3, out);
        self.push(Op::Mat3VecRows(a, mats), t)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data.iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    /// `sum(a * c)` for a constant tensor `c` of the same size.
    pub fn dot_const(&mut self, a: NodeId, c: Vec<f64>) -> NodeId {
        let av = self.value(a);
        assert_eq!(av.len(), c.len());
        let s = av.data.iter().zip(&c).map(|(x, y)| x * y).sum();
        self.push(Op::DotConst(a, c), Tensor::scalar(s))
    }

    /// Reverse sweep from a scalar node; returns parameter gradients.
    pub fn backward(&self, loss: NodeId) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar");
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(vec![1.0]);
        let mut grads = Gradients::zeros_like(self.params);

        fn acc(adj: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut Vec<f64> {
            adj[id.0].get_or_insert_with(|| vec![0.0; len])
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            let out = node.value.as_ref();
            match &node.op {
                Op::Const => {}
                Op::Param(p) => {
                    for (d, s) in grads.tensors[*p].data.iter_mut().zip(&g) {
                        *d += s;
                    }
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (n, k, m) = (av.rows, av.cols, bv.cols);
                    if !self.is_const(*a) {
                        let ga = acc(&mut adj, *a, n * k);
                        for i in 0..n {
                            let grow = &g[i * m..(i + 1) * m];
                            for p in 0..k {
                                let brow = &bv.data[p * m..(p + 1) * m];
                                ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                            }
                        }
                    }
                    if !self.is_const(*b) {
                        let gb = acc(&mut adj, *b, k * m);
                        for i in 0..n {
                            let grow = &g[i * m..(i + 1) * m];
                            for p in 0..k {
                                let x = av.data[i * k + p];
                                if x == 0.0 {
                                    continue;
                                }
                                let gbrow = &mut gb[p * m..(p + 1) * m];
                                for (o, &y) in gbrow.iter_mut().zip(grow) {
                                    *o += x * y;
                                }
                            }
                        }
                    }
                }
                Op::AddBias(a, b) => {
                    let cols = node.cols;
                    if !self.is_const(*a) {
                        let ga = acc(&mut adj, *a, g.len());
                        for (x, y) in ga.iter_mut().zip(&g) {
                            *x += y;
                        }
                    }
                    if !self.is_const(*b) {
                        let gb = acc(&mut adj, *b, cols);
                        for row in g.chunks(cols) {
                            for (x, y) in gb.iter_mut().zip(row) {
                                *x += y;
                            }
                        }
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    if !self.is_const(*a) {
                        let ga = acc(&mut adj, *a, g.len());
                        for (x, y) in ga.iter_mut().zip(&g) {
                            *x += y;
                        }
                    }
                    if !self.is_const(*b) {
                        let gb = acc(&mut adj, *b, g.len());
                        for (x, y) in gb.iter_mut().zip(&g) {
                            *x += sign * y;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if !self.is_const(*a) {
                        let ga = acc(&mut adj, *a, g.len());
                        for i in 0..g.len() {
                            ga[i] += g[i] * bv.data[i];
                        }
                    }
                    if !self.is_const(*b) {
                        let gb = acc(&mut adj, *b, g.len());
                        for i in 0..g.len() {
                            gb[i] += g[i] * av.data[i];
                        }
                    }
                }
                Op::Scale(a, c) => {
                    if !self.is_const(*a) {
                        let ga = acc(&mut adj, *a, g.len());
                        for (x, y) in ga.iter_mut().zip(&g) {
                            *x += c * y;
                        }
                    }
                }
                Op::AddScalar(a) => {
                    if !self.is_const(*a) {
                        let ga = acc(&mut adj, *a, g.len());
                        for (x, y) in ga.iter_mut().zip(&g) {
                            *x += y;
                        }
                    }
                }
                Op::Silu(a) => {
                    let av = self.value(*a);
                    if !self.is_const(*a) {
                        let ga = acc(&mut adj, *a, g.len());
                        for i in 0..g.len() {
                            let x = av.data[i];
                            let s = sigmoid(x);
                            ga[i] += g[i] * (s + x * s * (1.0 - s));
                        }
                    }
                }
                Op::Square(a) => {
                    let av = self.value(*a);
                    if !self.is_const(*a) {
                        let ga = acc(&mut adj, *a, g.len());
                        for i in 0..g.len() {
                            ga[i] += g[i] * 2.0 * av.data[i];
                        }
                    }
                }
                Op::AcosSq(a) => {
                    let av = self.value(*a);
                    if !self.is_const(*a) {
                        let ga = acc(&mut adj, *a, g.len());
                        for i in 0..g.len() {
                            ga[i] += g[i] * acos_sq(av.data[i]).1;
                        }
                    }
                }
                Op::LogSigmoid(a) => {
                    let av = self.value(*a);
                    if !self.is_const(*a) {
                        let ga = acc(&mut adj, *a, g.len());
                        for i in 0..g.len() {
                            ga[i] += g[i] * sigmoid(-av.data[i]);
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let rows = node.rows;
                    let total = node.cols;
                    let mut off = 0;
                    for &p in parts {
                        let pc = self.value(p).cols;
                        if !self.is_const(p) {
                            let gp = acc(&mut adj, p, rows * pc);
                            for i in 0..rows {
                                for j in 0..pc {
                                    gp[i * pc + j] += g[i * total + off + j];
                                }
                            }
                        }
                        off += pc;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        if !self.is_const(p) {
                            let gp = acc(&mut adj, p, n);
                            for (x, y) in gp.iter_mut().zip(&g[off..off + n]) {
                                *x += y;
                            }
                        }
                        off += n;
                    }
                }
                Op::GatherRows(table, idxs) => {
                    if !self.is_const(*table) {
                        let tv = self.value(*table);
                        let cols = tv.cols;
                        let gt = acc(&mut adj, *table, tv.len());
                        for (r, &i) in idxs.iter().enumerate() {
                            for j in 0..cols {
                                gt[i * cols + j] += g[r * cols + j];
                            }
                        }
                    }
                }
                Op::LogSoftmax(a) => {
                    if !self.is_const(*a) {
                        let out = out.expect("value");
                        let cols = node.cols;
                        let ga = acc(&mut adj, *a, g.len());
                        for i in 0..node.rows {
                            let grow = &g[i * cols..(i + 1) * cols];
                            let gsum: f64 = grow.iter().sum();
                            for j in 0..cols {
                                let p = out.data[i * cols + j].exp();
                                ga[i * cols + j] += grow[j] - p * gsum;
                            }
                        }
                    }
                }
                Op::ExpMapRows(a) => {
                    if !self.is_const(*a) {
                        let av = self.value(*a);
                        let ga = acc(&mut adj, *a, av.len());
                        for i in 0..av.rows {
                            let r = av.row(i);
                            let jac = crate::geom::exp_map_jacobian([r[0], r[1], r[2]]);
                            let grow = &g[i * 9..(i + 1) * 9];
                            for (k, jrow) in jac.iter().enumerate() {
                                ga[i * 3 + k] += jrow.iter().zip(grow).map(|(x, y)| x * y).sum::<f64>();
                            }
                        }
                    }
                }
                Op::Mat3Rows(a, mats) => {
                    if !self.is_const(*a) {
                        let ga = acc(&mut adj, *a, g.len());
                        for (i, c) in mats.iter().enumerate() {
                            let back = mat3_tmul(c, &g[i * 9..(i + 1) * 9]);
                            for j in 0..9 {
                                ga[i * 9 + j] += back[j];
                            }
                        }
                    }
                }
                Op::Mat3VecRows(a, mats) => {
                    if !self.is_const(*a) {
                        let ga = acc(&mut adj, *a, g.len());
                        for (i, c) in mats.iter().enumerate() {
                            let gr = &g[i * 3..(i + 1) * 3];
                            for j in 0..3 {
                                ga[i * 3 + j] += c[j] * gr[0] + c[3 + j] * gr[1] + c[6 + j] * gr[2];
                            }
                        }
                    }
                }
                Op::Sum(a) => {
                    if !self.is_const(*a) {
                        let n = self.value(*a).len();
                        let ga = acc(&mut adj, *a, n);
                        for x in ga.iter_mut() {
                            *x += g[0];
                        }
                    }
                }
                Op::DotConst(a, c) => {
                    if !self.is_const(*a) {
                        let ga = acc(&mut adj, *a, c.len());
                        for (x, y) in ga.iter_mut().zip(c) {
                            *x += g[0] * y;
                        }
                    }
                }
            }
        }
        grads
    }

    fn is_const(&self, id: NodeId) -> bool {
        matches!(self.nodes[id.0].op, Op::Const)
    }
}

/// Worst relative error between reverse-mode gradients and 5-point
/// central differences over every parameter scalar.
///
/// Relative error uses `max(|analytic|, |numeric|, floor)` as denominator.
pub fn gradient_check<F>(params: &ParamStore, h: f64, floor: f64, f: F) -> GradCheck
where
    F: Fn(&mut Graph) -> NodeId,
{
    let eval = |p: &ParamStore| {
        let mut g = Graph::new(p);
        let l = f(&mut g);
        g.scalar_value(l)
    };
    let mut g = Graph::new(params);
    let loss = f(&mut g);
    let grads = g.backward(loss);
    let mut worst = GradCheck::default();
    let mut probe = params.clone();
    for pi in 0..params.len() {
        for e in 0..params.tensor(pi).len() {
            let base = params.tensor(pi).data[e];
            let mut at = |d: f64| {
                probe.tensor_mut(pi).data[e] = base + d;
                let v = eval(&probe);
                probe.tensor_mut(pi).data[e] = base;
                v
            };
            let numeric = (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h);
            let analytic = grads.tensors[pi].data[e];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
            worst.checked += 1;
            if rel > worst.max_rel_err {
                worst.max_rel_err = rel;
                worst.worst = Some((params.name(pi).to_string(), e, analytic, numeric));
            }
        }
    }
    worst
}

#[derive(Clone, Debug, Default)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
    /// `(parameter, element, analytic, numeric)` of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}
