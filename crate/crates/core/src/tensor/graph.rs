use std::collections::BTreeMap;
use std::sync::Arc;

use super::params::{Gradients, ParamGrad, ParamStore};
use super::{Precision, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

type Derivative = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

enum Op {
    Leaf,
    Param,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    ConcatCols(Vec<Var>),
    StackRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Transpose(Var),
    SoftmaxRows(Var),
    MaxRows(Var, Vec<usize>),
    EmbedRows { param: String, idx: Vec<usize> },
    Unfold(Var, usize),
    Sum(Var),
    BceWithLogits { logit: Var, target: f64, saturated: bool },
    SoftmaxXent { logits: Var, target: usize },
    Elementwise(Var, Derivative),
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Logit magnitude beyond which binary cross-entropy is evaluated at the
/// clamp and passes no gradient.
pub const LOGIT_CLAMP: f64 = 15.0;

/// A tape of operations recorded in creation order.
///
/// Node indices are a topological order, so [`Graph::backward`] is a single
/// reverse sweep that visits every producing operation once. Calling
/// `backward` repeatedly without [`Graph::zero_grad`] adds the new gradients
/// to the stored ones. A node created with [`Graph::constant`] (or a
/// [`Graph::detach`]ed copy) stops gradient flow silently.
pub struct Graph {
    nodes: Vec<Node>,
    precision: Precision,
    bound: BTreeMap<String, Var>,
    embed_grads: BTreeMap<String, (usize, BTreeMap<usize, Vec<f64>>)>,
}

impl Graph {
    pub fn new(precision: Precision) -> Self {
        Graph {
            nodes: Vec::with_capacity(1024),
            precision,
            bound: BTreeMap::new(),
            embed_grads: BTreeMap::new(),
        }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, mut value: Tensor, op: Op, requires_grad: bool) -> Var {
        if self.precision == Precision::F32 {
            for v in value.data_mut() {
                *v = *v as f32 as f64;
            }
        }
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let n = &self.nodes[v.0];
        n.grad.as_ref().map(|g| Tensor::from_parts(n.value.shape().to_vec(), g.clone()))
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.embed_grads.clear();
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.push(t, Op::Leaf, requires_grad)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.constant(Tensor::zeros(&[rows, cols]))
    }

    /// Copy of `v` with no lineage.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    /// Binds a named parameter as a trainable leaf; repeated calls return the
    /// same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = store
            .get(name)
            .ok_or_else(|| Error::MissingTensors(vec![name.to_string()]))?
            .clone();
        let v = self.push(t, Op::Param, true);
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    /// Looks up rows of a named table parameter without copying the table.
    /// Gradients are kept per touched row.
    pub fn embed_rows(&mut self, store: &ParamStore, name: &str, idx: &[usize]) -> Result<Var> {
        let table = store.get(name).ok_or_else(|| Error::MissingTensors(vec![name.to_string()]))?;
        if idx.is_empty() {
            return Err(Error::EmptySequence);
        }
        let (rows, d) = (table.rows(), table.cols());
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            if i >= rows {
                return Err(Error::shape("embed_rows", format!("row {i} out of {rows} in {name}")));
            }
            out.extend_from_slice(table.row_slice(i));
        }
        let t = Tensor::from_parts(vec![idx.len(), d], out);
        self.embed_grads.entry(name.to_string()).or_insert((d, BTreeMap::new()));
        Ok(self.push(
            t,
            Op::EmbedRows {
                param: name.to_string(),
                idx: idx.to_vec(),
            },
            true,
        ))
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, false)
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, true)
    }

    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = op_dims(av, ta);
        let (k2, n) = op_dims(bv, tb);
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!(
                    "{:?}{} x {:?}{}",
                    av.shape(),
                    if ta { "ᵀ" } else { "" },
                    bv.shape(),
                    if tb { "ᵀ" } else { "" }
                ),
            ));
        }
        let data = gemm(av, ta, bv, tb);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], data), Op::MatMul { a, b, ta, tb }, rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (r, c) = (av.rows(), av.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = av.data()[i * c + j];
            }
        }
        let rg = self.rg(a);
        self.push(Tensor::from_parts(vec![c, r], out), Op::Transpose(a), rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a), self.value(b));
        if sa.rows() != sb.rows() || sa.cols() != sb.cols() {
            return Err(Error::shape(op, format!("{:?} vs {:?}", sa.shape(), sb.shape())));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = vec![av.rows(), av.cols()];
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::from_parts(shape, data), op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// Adds a bias row to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        let c = av.cols();
        if bv.numel() != c {
            return Err(Error::shape("add_bias", format!("{:?} + {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().enumerate().map(|(i, &x)| x + bv.data()[i % c]).collect();
        let shape = vec![av.rows(), c];
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(Tensor::from_parts(shape, data), Op::AddBias(a, bias), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| x * s).collect();
        let shape = vec![av.rows(), av.cols()];
        let rg = self.rg(a);
        self.push(Tensor::from_parts(shape, data), Op::Scale(a, s), rg)
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| f(x)).collect();
        let shape = vec![av.rows(), av.cols()];
        let rg = self.rg(a);
        self.push(Tensor::from_parts(shape, data), op, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), |x| x.max(0.0))
    }

    /// Elementwise `f` with a caller-supplied derivative.
    pub fn elementwise(&mut self, a: Var, f: impl Fn(f64) -> f64, derivative: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Var {
        self.map(a, Op::Elementwise(a, Arc::new(derivative)), f)
    }

    // ---- structure ----

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::shape("concat_cols", "no inputs"))?;
        let rows = self.value(first).rows();
        let mut total = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(Error::shape("concat_cols", format!("row count {} vs {rows}", v.rows())));
            }
            total += v.cols();
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::from_parts(vec![rows, total], out), Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::shape("stack_rows", "no inputs"))?;
        let cols = self.value(first).cols();
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(Error::shape("stack_rows", format!("col count {} vs {cols}", v.cols())));
            }
            rows += v.rows();
            out.extend_from_slice(v.data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::from_parts(vec![rows, cols], out), Op::StackRows(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let av = self.value(a);
        let (r, c) = (av.rows(), av.cols());
        if start >= end || end > c {
            return Err(Error::shape("slice_cols", format!("{start}..{end} of {c}")));
        }
        let mut out = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            out.extend_from_slice(&av.row_slice(i)[start..end]);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(vec![r, end - start], out), Op::SliceCols(a, start), rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let av = self.value(a);
        let (r, c) = (av.rows(), av.cols());
        if start >= end || end > r {
            return Err(Error::shape("slice_rows", format!("{start}..{end} of {r}")));
        }
        let out = av.data()[start * c..end * c].to_vec();
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(vec![end - start, c], out), Op::SliceRows(a, start), rg))
    }

    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        self.slice_rows(a, i, i + 1)
    }

    /// Sliding windows of `width` consecutive rows, each flattened into one
    /// output row: `[n, d] -> [n - width + 1, width * d]`.
    pub fn unfold(&mut self, a: Var, width: usize) -> Result<Var> {
        let av = self.value(a);
        let (n, d) = (av.rows(), av.cols());
        if width == 0 || width > n {
            return Err(Error::shape("unfold", format!("width {width} over {n} rows")));
        }
        let out_rows = n - width + 1;
        let mut out = Vec::with_capacity(out_rows * width * d);
        for i in 0..out_rows {
            out.extend_from_slice(&av.data()[i * d..(i + width) * d]);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(vec![out_rows, width * d], out), Op::Unfold(a, width), rg))
    }

    /// Column-wise maximum over rows, `[n, d] -> [1, d]`. Ties resolve to the
    /// first row.
    pub fn max_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (n, d) = (av.rows(), av.cols());
        let mut out = av.row_slice(0).to_vec();
        let mut arg = vec![0usize; d];
        for i in 1..n {
            for (j, &x) in av.row_slice(i).iter().enumerate() {
                if x > out[j] {
                    out[j] = x;
                    arg[j] = i;
                }
            }
        }
        let rg = self.rg(a);
        self.push(Tensor::from_parts(vec![1, d], out), Op::MaxRows(a, arg), rg)
    }

    /// Row-wise softmax restricted to the columns where `mask` is true.
    /// Masked columns are exactly zero.
    pub fn softmax_rows(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let av = self.value(a);
        let (r, c) = (av.rows(), av.cols());
        if mask.len() != c {
            return Err(Error::shape("softmax_rows", format!("mask {} vs {c} columns", mask.len())));
        }
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            out.extend(softmax_masked(av.row_slice(i), mask)?);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(vec![r, c], out), Op::SoftmaxRows(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let m = self.mul(a, b)?;
        Ok(self.sum(m))
    }

    /// Binary cross-entropy of `sigmoid(logit)` against `target`, with the
    /// logit clamped to `±LOGIT_CLAMP`.
    pub fn bce_with_logits(&mut self, logit: Var, target: f64) -> Result<Var> {
        let v = self.value(logit);
        if !v.is_scalar() {
            return Err(Error::shape("bce_with_logits", format!("{:?}", v.shape())));
        }
        let z = v.item();
        let saturated = z.abs() > LOGIT_CLAMP;
        let zc = z.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
        let loss = softplus(zc) - target * zc;
        let rg = self.rg(logit);
        Ok(self.push(Tensor::scalar(loss), Op::BceWithLogits { logit, target, saturated }, rg))
    }

    /// Cross-entropy of `softmax(logits)` against class `target`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let v = self.value(logits);
        if target >= v.numel() {
            return Err(Error::shape("softmax_cross_entropy", format!("class {target} of {}", v.numel())));
        }
        let lse = log_sum_exp(v.data());
        let loss = lse - v.data()[target];
        let rg = self.rg(logits);
        Ok(self.push(Tensor::scalar(loss), Op::SoftmaxXent { logits, target }, rg))
    }

    // ---- backward ----

    pub fn backward(&mut self, root: Var) -> Result<()> {
        let shape = self.value(root).shape().to_vec();
        if !self.value(root).is_scalar() {
            return Err(Error::NonScalarRoot(shape));
        }
        if !self.rg(root) {
            return Ok(());
        }
        let Graph { nodes, embed_grads, .. } = self;
        let mut tmp: Vec<Option<Vec<f64>>> = (0..=root.0).map(|_| None).collect();
        tmp[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let Some(g) = tmp[i].take() else { continue };
            let node = &nodes[i];
            match &node.op {
                Op::Leaf | Op::Param => {}
                Op::MatMul { a, b, ta, tb } => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    let dc = Tensor::from_parts(node.value.shape().to_vec(), g.clone());
                    if nodes[a.0].requires_grad {
                        let da = if !*ta {
                            gemm(&dc, false, bv, !*tb)
                        } else {
                            gemm(bv, *tb, &dc, true)
                        };
                        accumulate(&mut tmp, *a, &da);
                    }
                    if nodes[b.0].requires_grad {
                        let db = if !*tb {
                            gemm(av, !*ta, &dc, false)
                        } else {
                            gemm(&dc, true, av, *ta)
                        };
                        accumulate(&mut tmp, *b, &db);
                    }
                }
                Op::Add(a, b) => {
                    if nodes[a.0].requires_grad {
                        accumulate(&mut tmp, *a, &g);
                    }
                    if nodes[b.0].requires_grad {
                        accumulate(&mut tmp, *b, &g);
                    }
                }
                Op::Sub(a, b) => {
                    if nodes[a.0].requires_grad {
                        accumulate(&mut tmp, *a, &g);
                    }
                    if nodes[b.0].requires_grad {
                        let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                        accumulate(&mut tmp, *b, &neg);
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    if nodes[a.0].requires_grad {
                        let d: Vec<f64> = g.iter().zip(bv).map(|(g, y)| g * y).collect();
                        accumulate(&mut tmp, *a, &d);
                    }
                    if nodes[b.0].requires_grad {
                        let d: Vec<f64> = g.iter().zip(av).map(|(g, x)| g * x).collect();
                        accumulate(&mut tmp, *b, &d);
                    }
                }
                Op::AddBias(a, bias) => {
                    if nodes[a.0].requires_grad {
                        accumulate(&mut tmp, *a, &g);
                    }
                    if nodes[bias.0].requires_grad {
                        let c = node.value.cols();
                        let mut d = vec![0.0; c];
                        for (i, x) in g.iter().enumerate() {
                            d[i % c] += x;
                        }
                        accumulate(&mut tmp, *bias, &d);
                    }
                }
                Op::Scale(a, s) => {
                    let d: Vec<f64> = g.iter().map(|x| x * s).collect();
                    accumulate(&mut tmp, *a, &d);
                }
                Op::Sigmoid(a) => {
                    let d: Vec<f64> = g.iter().zip(node.value.data()).map(|(g, y)| g * y * (1.0 - y)).collect();
                    accumulate(&mut tmp, *a, &d);
                }
                Op::Tanh(a) => {
                    let d: Vec<f64> = g.iter().zip(node.value.data()).map(|(g, y)| g * (1.0 - y * y)).collect();
                    accumulate(&mut tmp, *a, &d);
                }
                Op::Relu(a) => {
                    let d: Vec<f64> = g
                        .iter()
                        .zip(nodes[a.0].value.data())
                        .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                        .collect();
                    accumulate(&mut tmp, *a, &d);
                }
                Op::Elementwise(a, deriv) => {
                    let d: Vec<f64> = g.iter().zip(nodes[a.0].value.data()).map(|(g, x)| g * deriv(*x)).collect();
                    accumulate(&mut tmp, *a, &d);
                }
                Op::ConcatCols(parts) => {
                    let rows = node.value.rows();
                    let total = node.value.cols();
                    let mut offset = 0;
                    for p in parts {
                        let c = nodes[p.0].value.cols();
                        if nodes[p.0].requires_grad {
                            let mut d = Vec::with_capacity(rows * c);
                            for r in 0..rows {
                                d.extend_from_slice(&g[r * total + offset..r * total + offset + c]);
                            }
                            accumulate(&mut tmp, *p, &d);
                        }
                        offset += c;
                    }
                }
                Op::StackRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let n = nodes[p.0].value.numel();
                        if nodes[p.0].requires_grad {
                            accumulate(&mut tmp, *p, &g[offset..offset + n]);
                        }
                        offset += n;
                    }
                }
                Op::SliceCols(a, start) => {
                    let src = &nodes[a.0].value;
                    let (r, c) = (src.rows(), src.cols());
                    let w = node.value.cols();
                    let mut d = vec![0.0; r * c];
                    for i in 0..r {
                        d[i * c + start..i * c + start + w].copy_from_slice(&g[i * w..(i + 1) * w]);
                    }
                    accumulate(&mut tmp, *a, &d);
                }
                Op::SliceRows(a, start) => {
                    let src = &nodes[a.0].value;
                    let c = src.cols();
                    let mut d = vec![0.0; src.numel()];
                    d[start * c..start * c + g.len()].copy_from_slice(&g);
                    accumulate(&mut tmp, *a, &d);
                }
                Op::Transpose(a) => {
                    let (r, c) = (node.value.rows(), node.value.cols());
                    let mut d = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            d[j * r + i] = g[i * c + j];
                        }
                    }
                    accumulate(&mut tmp, *a, &d);
                }
                Op::SoftmaxRows(a) => {
                    let (r, c) = (node.value.rows(), node.value.cols());
                    let y = node.value.data();
                    let mut d = vec![0.0; r * c];
                    for i in 0..r {
                        let row = i * c..(i + 1) * c;
                        let inner: f64 = y[row.clone()].iter().zip(&g[row.clone()]).map(|(y, g)| y * g).sum();
                        for j in row {
                            d[j] = y[j] * (g[j] - inner);
                        }
                    }
                    accumulate(&mut tmp, *a, &d);
                }
                Op::MaxRows(a, arg) => {
                    let src = &nodes[a.0].value;
                    let c = src.cols();
                    let mut d = vec![0.0; src.numel()];
                    for (j, &r) in arg.iter().enumerate() {
                        d[r * c + j] += g[j];
                    }
                    accumulate(&mut tmp, *a, &d);
                }
                Op::Unfold(a, width) => {
                    let src = &nodes[a.0].value;
                    let d_in = src.cols();
                    let span = width * d_in;
                    let mut d = vec![0.0; src.numel()];
                    for i in 0..node.value.rows() {
                        for k in 0..span {
                            d[i * d_in + k] += g[i * span + k];
                        }
                    }
                    accumulate(&mut tmp, *a, &d);
                }
                Op::Sum(a) => {
                    let n = nodes[a.0].value.numel();
                    accumulate(&mut tmp, *a, &vec![g[0]; n]);
                }
                Op::EmbedRows { param, idx } => {
                    let (d, rows) = embed_grads.get_mut(param).expect("embedding registered at creation");
                    for (k, &r) in idx.iter().enumerate() {
                        let slot = rows.entry(r).or_insert_with(|| vec![0.0; *d]);
                        for (s, x) in slot.iter_mut().zip(&g[k * *d..(k + 1) * *d]) {
                            *s += x;
                        }
                    }
                }
                Op::BceWithLogits { logit, target, saturated } => {
                    if !saturated {
                        let z = nodes[logit.0].value.item();
                        accumulate(&mut tmp, *logit, &[g[0] * (sigmoid(z) - target)]);
                    }
                }
                Op::SoftmaxXent { logits, target } => {
                    let z = nodes[logits.0].value.data();
                    let lse = log_sum_exp(z);
                    let d: Vec<f64> = z
                        .iter()
                        .enumerate()
                        .map(|(k, &zk)| g[0] * ((zk - lse).exp() - if k == *target { 1.0 } else { 0.0 }))
                        .collect();
                    accumulate(&mut tmp, *logits, &d);
                }
            }
            let stored = &mut nodes[i].grad;
            match stored {
                Some(s) => s.iter_mut().zip(&g).for_each(|(s, x)| *s += x),
                None => *stored = Some(g),
            }
        }
        Ok(())
    }

    /// Gradients of every bound parameter (dense) and every looked-up table
    /// (per row), as accumulated by previous `backward` calls.
    pub fn param_grads(&self) -> Gradients {
        let mut out = Gradients::default();
        for (name, &v) in &self.bound {
            if let Some(g) = &self.nodes[v.0].grad {
                out.add(name, ParamGrad::Dense(g.clone()));
            }
        }
        for (name, (_, rows)) in &self.embed_grads {
            if !rows.is_empty() {
                out.add(name, ParamGrad::Rows(rows.clone()));
            }
        }
        out
    }
}

fn accumulate(tmp: &mut [Option<Vec<f64>>], v: Var, d: &[f64]) {
    match &mut tmp[v.0] {
        Some(s) => s.iter_mut().zip(d).for_each(|(s, x)| *s += x),
        slot @ None => *slot = Some(d.to_vec()),
    }
}

fn op_dims(t: &Tensor, transposed: bool) -> (usize, usize) {
    if transposed {
        (t.cols(), t.rows())
    } else {
        (t.rows(), t.cols())
    }
}

/// `op(a) · op(b)` on row-major storage.
fn gemm(a: &Tensor, ta: bool, b: &Tensor, tb: bool) -> Vec<f64> {
    let (m, k) = op_dims(a, ta);
    let (_, n) = op_dims(b, tb);
    let (ad, bd) = (a.data(), b.data());
    let (ac, bc) = (a.cols(), b.cols());
    let mut c = vec![0.0; m * n];
    match (ta, tb) {
        (false, false) => {
            for i in 0..m {
                let crow = &mut c[i * n..(i + 1) * n];
                for p in 0..k {
                    let x = ad[i * ac + p];
                    if x == 0.0 {
                        continue;
                    }
                    for (cv, bv) in crow.iter_mut().zip(&bd[p * bc..p * bc + n]) {
                        *cv += x * bv;
                    }
                }
            }
        }
        (false, true) => {
            for i in 0..m {
                let arow = &ad[i * ac..i * ac + k];
                for j in 0..n {
                    let brow = &bd[j * bc..j * bc + k];
                    c[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
                }
            }
        }
        (true, false) => {
            for p in 0..k {
                let brow = &bd[p * bc..p * bc + n];
                for i in 0..m {
                    let x = ad[p * ac + i];
                    if x == 0.0 {
                        continue;
                    }
                    for (cv, bv) in c[i * n..(i + 1) * n].iter_mut().zip(brow) {
                        *cv += x * bv;
                    }
                }
            }
        }
        (true, true) => {
            for i in 0..m {
                for j in 0..n {
                    c[i * n + j] = (0..k).map(|p| ad[p * ac + i] * bd[j * bc + p]).sum();
                }
            }
        }
    }
    c
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Softmax over the positions where `mask` is true, stabilized by subtracting
/// the maximum unmasked logit. Masked positions are exactly zero.
pub fn softmax_masked(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if logits.len() != mask.len() {
        return Err(Error::shape(
            "softmax_masked",
            format!("{} logits, {} mask", logits.len(), mask.len()),
        ));
    }
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&x, _)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::EmptySupport);
    }
    if !max.is_finite() {
        return Err(Error::NonFinite("softmax logits".into()));
    }
    let mut out: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&x, &m)| if m { (x - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = out.iter().sum();
    for v in &mut out {
        *v /= z;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g64() -> Graph {
        Graph::new(Precision::F64)
    }

    #[test]
    fn softmax_uniform_and_singleton() {
        assert_eq!(softmax_masked(&[0.0, 0.0], &[true, true]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(softmax_masked(&[123.4], &[true]).unwrap(), vec![1.0]);
        let p = softmax_masked(&[5.0, -2.0, 9.0], &[false, true, false]).unwrap();
        assert_eq!(p, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn softmax_all_masked_is_error() {
        let err = softmax_masked(&[1.0, 2.0], &[false, false]).unwrap_err();
        assert_eq!(err.to_string(), "empty attention support");
    }

    #[test]
    fn softmax_large_logits_are_stable() {
        let p = softmax_masked(&[1000.0, 1000.0, -1000.0], &[true; 3]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12 && p[2] == 0.0);
    }

    #[test]
    fn sum_backward_gives_ones() {
        let mut g = g64();
        let w = g.leaf(Tensor::matrix(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, 7.0]).unwrap(), true);
        let s = g.sum(w);
        g.backward(s).unwrap();
        assert_eq!(g.grad(w).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn tanh_grad_at_zero_is_one() {
        let mut g = g64();
        let x = g.leaf(Tensor::scalar(0.0), true);
        let y = g.tanh(x);
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 1.0);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut g = g64();
        let x = g.leaf(Tensor::zeros(&[2, 2]), true);
        assert!(matches!(g.backward(x), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn repeated_backward_accumulates_until_zeroed() {
        let mut g = g64();
        let x = g.leaf(Tensor::scalar(3.0), true);
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 12.0);
        g.zero_grad();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 6.0);
    }

    #[test]
    fn detached_input_stops_gradient() {
        let mut g = g64();
        let x = g.leaf(Tensor::scalar(2.0), true);
        let d = g.detach(x);
        let y = g.mul(x, d).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 2.0);
        assert!(g.grad(d).is_none() || !g.requires_grad(d));
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut g = g64();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        assert!(g.matmul(a, b).is_err());
        let c = g.matmul_nt(a, b).unwrap();
        assert_eq!(g.shape(c), &[2, 2]);
    }

    #[test]
    fn f32_mode_rounds_values() {
        let mut g = Graph::new(Precision::F32);
        let x = g.constant(Tensor::scalar(0.1));
        assert_eq!(g.value(x).item(), 0.1f32 as f64);
    }

    #[test]
    fn embed_rows_collects_row_gradients() {
        let mut store = ParamStore::default();
        store.insert("t", Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let mut g = g64();
        let e = g.embed_rows(&store, "t", &[2, 0, 2]).unwrap();
        assert_eq!(g.value(e).data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let s = g.sum(e);
        g.backward(s).unwrap();
        let grads = g.param_grads();
        let dense = grads.dense("t", 6).unwrap();
        assert_eq!(dense, vec![1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }
}
