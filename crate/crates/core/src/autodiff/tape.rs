use super::array::Array;
use super::kernels::{mm, mm_nt, mm_tn, transpose};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Whether normalization layers use batch statistics or running averages.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Running statistics of one batch-normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormStats {
    pub const DEFAULT_MOMENTUM: f64 = 0.1;
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(features: usize) -> Self {
        Self {
            mean: vec![0.0; features],
            var: vec![1.0; features],
            momentum: Self::DEFAULT_MOMENTUM,
            eps: Self::DEFAULT_EPS,
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, trans_b: bool },
    BatchMatMul { a: Var, b: Var, trans_b: bool },
    Transpose(Var),
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias { x: Var, bias: Var },
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Log(Var),
    Square(Var),
    Concat { inputs: Vec<Var>, widths: Vec<usize> },
    MeanAxis { x: Var, outer: usize, axis: usize, inner: usize },
    GatherRows { x: Var, index: Vec<usize> },
    Softmax(Var),
    Sum(Var),
    Mean(Var),
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, train: bool },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::BatchMatMul { .. } => "batch_matmul",
            Op::Transpose(_) => "transpose",
            Op::Reshape(_) => "reshape",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddBias { .. } => "add_bias",
            Op::Scale(..) => "scale",
            Op::Relu(_) => "relu",
            Op::Tanh(_) => "tanh",
            Op::Log(_) => "log",
            Op::Square(_) => "square",
            Op::Concat { .. } => "concat",
            Op::MeanAxis { .. } => "mean_over_axis",
            Op::GatherRows { .. } => "gather_rows",
            Op::Softmax(_) => "masked_softmax",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::BatchNorm { .. } => "batch_norm",
        }
    }
}

struct Node {
    op: Op,
    value: Array,
    requires_grad: bool,
}

/// Define-by-run reverse-mode tape. Nodes are appended in creation order, so
/// the recorded graph is always topologically sorted.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Array>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Array) -> Var {
        self.leaf(value, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Array) -> Var {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Array, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Array> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Accumulated gradient, or zeros when the leaf was unreachable.
    pub fn grad_or_zeros(&self, v: Var) -> Array {
        self.grad(v)
            .cloned()
            .unwrap_or_else(|| Array::zeros(self.shape(v)))
    }

    pub fn zero_grad(&mut self) {
        self.grads.clear();
    }

    fn push(&mut self, op: Op, value: Array) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op.name().to_string()));
        }
        let requires_grad = self.op_requires_grad(&op);
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn op_requires_grad(&self, op: &Op) -> bool {
        let rg = |v: &Var| self.nodes[v.0].requires_grad;
        match op {
            Op::Leaf => false,
            Op::MatMul { a, b, .. } | Op::BatchMatMul { a, b, .. } => rg(a) || rg(b),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => rg(a) || rg(b),
            Op::AddBias { x, bias } => rg(x) || rg(bias),
            Op::Transpose(x)
            | Op::Reshape(x)
            | Op::Scale(x, _)
            | Op::Relu(x)
            | Op::Tanh(x)
            | Op::Log(x)
            | Op::Square(x)
            | Op::Softmax(x)
            | Op::Sum(x)
            | Op::Mean(x) => rg(x),
            Op::MeanAxis { x, .. } | Op::GatherRows { x, .. } => rg(x),
            Op::Concat { inputs, .. } => inputs.iter().any(rg),
            Op::BatchNorm { x, gamma, beta, .. } => rg(x) || rg(gamma) || rg(beta),
        }
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        match *self.shape(v) {
            [r, c] => Ok((r, c)),
            ref s => Err(Error::Shape {
                op,
                lhs: s.to_vec(),
                rhs: vec![],
            }),
        }
    }

    fn dims3(&self, op: &'static str, v: Var) -> Result<(usize, usize, usize)> {
        match *self.shape(v) {
            [g, r, c] => Ok((g, r, c)),
            ref s => Err(Error::Shape {
                op,
                lhs: s.to_vec(),
                rhs: vec![],
            }),
        }
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Shape {
            op,
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        }
    }

    /// Matrix product `a[p×q] · b[q×r]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (p, q) = self.dims2("matmul", a)?;
        let (q2, r) = self.dims2("matmul", b)?;
        if q != q2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let mut out = vec![0.0; p * r];
        mm(self.value(a).data(), self.value(b).data(), p, q, r, &mut out);
        self.push(Op::MatMul { a, b, trans_b: false }, Array::from_parts(vec![p, r], out))
    }

    /// Matrix product `a[p×q] · b[r×q]ᵀ`, the layout of a linear layer with
    /// weights stored as `[out × in]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (p, q) = self.dims2("matmul_nt", a)?;
        let (r, q2) = self.dims2("matmul_nt", b)?;
        if q != q2 {
            return Err(self.mismatch("matmul_nt", a, b));
        }
        let mut out = vec![0.0; p * r];
        mm_nt(self.value(a).data(), self.value(b).data(), p, q, r, &mut out);
        self.push(Op::MatMul { a, b, trans_b: true }, Array::from_parts(vec![p, r], out))
    }

    /// Batched product over the leading axis: `a[g×p×q] · b[g×q×r]`, or
    /// `a[g×p×q] · b[g×r×q]ᵀ` when `trans_b` is set.
    pub fn batch_matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (g, p, q) = self.dims3("batch_matmul", a)?;
        let (g2, b1, b2) = self.dims3("batch_matmul", b)?;
        let (q2, r) = if trans_b { (b2, b1) } else { (b1, b2) };
        if g != g2 || q != q2 {
            return Err(self.mismatch("batch_matmul", a, b));
        }
        let mut out = vec![0.0; g * p * r];
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        for k in 0..g {
            let asl = &av[k * p * q..(k + 1) * p * q];
            let bsl = &bv[k * q * r..(k + 1) * q * r];
            let osl = &mut out[k * p * r..(k + 1) * p * r];
            if trans_b {
                mm_nt(asl, bsl, p, q, r, osl);
            } else {
                mm(asl, bsl, p, q, r, osl);
            }
        }
        self.push(Op::BatchMatMul { a, b, trans_b }, Array::from_parts(vec![g, p, r], out))
    }

    /// Swaps the last two axes of a rank-2 or rank-3 array.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (g, r, c) = match shape[..] {
            [r, c] => (1, r, c),
            [g, r, c] => (g, r, c),
            _ => return Err(Error::Shape { op: "transpose", lhs: shape, rhs: vec![] }),
        };
        let xv = self.value(x).data();
        let mut out = vec![0.0; xv.len()];
        for k in 0..g {
            transpose(&xv[k * r * c..(k + 1) * r * c], r, c, &mut out[k * r * c..(k + 1) * r * c]);
        }
        let mut new_shape = shape;
        let n = new_shape.len();
        new_shape.swap(n - 2, n - 1);
        self.push(Op::Transpose(x), Array::from_parts(new_shape, out))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        self.push(Op::Reshape(x), value)
    }

    fn zip_same(&mut self, op: Op, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch(op.name(), a, b));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(op, Array::from_parts(shape, data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(Op::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(Op::Sub(a, b), a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(Op::Mul(a, b), a, b, |x, y| x * y)
    }

    /// Adds a length-`c` bias to every row of an `r×c` array.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, c) = self.dims2("add_bias", x)?;
        if self.value(bias).len() != c || self.value(bias).rank() != 1 {
            return Err(self.mismatch("add_bias", x, bias));
        }
        let bv = self.value(bias).data();
        let data = self
            .value(x)
            .data()
            .chunks(c)
            .flat_map(|row| row.iter().zip(bv).map(|(a, b)| a + b))
            .collect();
        let shape = self.shape(x).to_vec();
        self.push(Op::AddBias { x, bias }, Array::from_parts(shape, data))
    }

    fn map(&mut self, op: Op, x: Var, f: impl Fn(f64) -> f64) -> Result<Var> {
        let data = self.value(x).data().iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(op, Array::from_parts(shape, data))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.map(Op::Scale(x, c), x, |v| c * v)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.map(Op::Relu(x), x, |v| v.max(0.0))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.map(Op::Tanh(x), x, f64::tanh)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.map(Op::Square(x), x, |v| v * v)
    }

    /// Natural log; non-positive inputs produce a non-finite error.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.map(Op::Log(x), x, f64::ln)
    }

    /// Concatenates rank-2 arrays with equal row counts along columns.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::contract("concat of zero arrays"))?;
        let (rows, _) = self.dims2("concat", first)?;
        let mut widths = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let (r, c) = self.dims2("concat", v)?;
            if r != rows {
                return Err(self.mismatch("concat", first, v));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (&v, &w) in inputs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(v).data()[i * w..(i + 1) * w]);
            }
        }
        self.push(
            Op::Concat {
                inputs: inputs.to_vec(),
                widths,
            },
            Array::from_parts(vec![rows, total], out),
        )
    }

    /// Arithmetic mean over one axis; that axis is removed from the shape.
    pub fn mean_over_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::OutOfBounds {
                op: "mean_over_axis",
                index: axis,
                extent: shape.len(),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let xv = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let src = &xv[(o * len + a) * inner..(o * len + a + 1) * inner];
                for (dst, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *dst += s;
                }
            }
        }
        let inv = 1.0 / len as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let mut new_shape: Vec<usize> = shape[..axis].to_vec();
        new_shape.extend_from_slice(&shape[axis + 1..]);
        if new_shape.is_empty() {
            new_shape.push(1);
        }
        self.push(
            Op::MeanAxis {
                x,
                outer,
                axis: len,
                inner,
            },
            Array::from_parts(new_shape, out),
        )
    }

    /// Selects rows of a rank-2 array; rows may repeat.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let (rows, cols) = self.dims2("gather_rows", x)?;
        if index.is_empty() {
            return Err(Error::contract("gather_rows with empty index"));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(Error::OutOfBounds {
                op: "gather_rows",
                index: bad,
                extent: rows,
            });
        }
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(index.len() * cols);
        for &i in index {
            out.extend_from_slice(&xv[i * cols..(i + 1) * cols]);
        }
        self.push(
            Op::GatherRows {
                x,
                index: index.to_vec(),
            },
            Array::from_parts(vec![index.len(), cols], out),
        )
    }

    /// Softmax over the last axis. `mask[i] == true` excludes entry `i`,
    /// which then receives probability exactly zero. An empty mask means
    /// nothing is excluded.
    pub fn masked_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let xa = self.value(x);
        let width = *xa.shape().last().expect("arrays have rank >= 1");
        if !mask.is_empty() && mask.len() != xa.len() {
            return Err(Error::Shape {
                op: "masked_softmax",
                lhs: xa.shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let masked = |i: usize| !mask.is_empty() && mask[i];
        let mut out = vec![0.0; xa.len()];
        for (r, row) in xa.data().chunks(width).enumerate() {
            let base = r * width;
            let max = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| !masked(base + j))
                .map(|(_, &v)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::NoFeasibleAction);
            }
            let mut total = 0.0;
            for (j, &v) in row.iter().enumerate() {
                if !masked(base + j) {
                    let e = (v - max).exp();
                    out[base + j] = e;
                    total += e;
                }
            }
            out[base..base + width].iter_mut().for_each(|p| *p /= total);
        }
        let shape = xa.shape().to_vec();
        self.push(Op::Softmax(x), Array::from_parts(shape, out))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push(Op::Sum(x), Array::scalar(s))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xa = self.value(x);
        let s = xa.data().iter().sum::<f64>() / xa.len() as f64;
        self.push(Op::Mean(x), Array::scalar(s))
    }

    /// Per-feature normalization of an `r×c` array with learnable scale and
    /// shift. Train mode normalizes with the batch statistics and folds them
    /// into `stats` as an exponential moving average; infer mode uses `stats`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut BatchNormStats,
        mode: Mode,
    ) -> Result<Var> {
        let (rows, cols) = self.dims2("batch_norm", x)?;
        for p in [gamma, beta] {
            if self.value(p).len() != cols {
                return Err(self.mismatch("batch_norm", x, p));
            }
        }
        if stats.mean.len() != cols || stats.var.len() != cols {
            return Err(Error::Shape {
                op: "batch_norm",
                lhs: vec![rows, cols],
                rhs: vec![stats.mean.len()],
            });
        }
        let xv = self.value(x).data();
        let (mean, var) = match mode {
            Mode::Train => {
                if rows < 2 {
                    return Err(Error::BatchTooSmall(rows));
                }
                let mut mean = vec![0.0; cols];
                for row in xv.chunks(cols) {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= rows as f64);
                let mut var = vec![0.0; cols];
                for row in xv.chunks(cols) {
                    for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s /= rows as f64);
                (mean, var)
            }
            Mode::Infer => (stats.mean.clone(), stats.var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + stats.eps).sqrt()).collect();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; rows * cols];
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                let k = i * cols + j;
                xhat[k] = (xv[k] - mean[j]) * inv_std[j];
                out[k] = gv[j] * xhat[k] + bv[j];
            }
        }
        if mode == Mode::Train {
            let m = stats.momentum;
            let unbias = rows as f64 / (rows - 1) as f64;
            for j in 0..cols {
                stats.mean[j] = (1.0 - m) * stats.mean[j] + m * mean[j];
                stats.var[j] = (1.0 - m) * stats.var[j] + m * var[j] * unbias;
            }
        }
        self.push(
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train: mode == Mode::Train,
            },
            Array::from_parts(vec![rows, cols], out),
        )
    }

    /// Propagates `d loss / d node` back through the tape and adds the result
    /// into the gradient accumulators of every trainable leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Array>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Array::full(self.shape(loss), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        if self.grads.len() < self.nodes.len() {
            self.grads.resize_with(self.nodes.len(), || None);
        }
        for (i, g) in grads.into_iter().enumerate() {
            if let Some(g) = g {
                match &mut self.grads[i] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Array, grads: &mut [Option<Array>]) {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, d: Array| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(a) => a.add_assign(&d),
                slot => *slot = Some(d),
            }
        };
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, trans_b } => {
                let (av, bv) = (val(a), val(b));
                let (p, q) = (av.shape()[0], av.shape()[1]);
                let r = node.value.shape()[1];
                if wants(a) {
                    let mut da = vec![0.0; p * q];
                    if trans_b {
                        mm(gd, bv.data(), p, r, q, &mut da);
                    } else {
                        mm_nt(gd, bv.data(), p, r, q, &mut da);
                    }
                    acc(a, Array::from_parts(av.shape().to_vec(), da));
                }
                if wants(b) {
                    let mut db = vec![0.0; q * r];
                    if trans_b {
                        mm_tn(gd, av.data(), p, r, q, &mut db);
                    } else {
                        mm_tn(av.data(), gd, p, q, r, &mut db);
                    }
                    acc(b, Array::from_parts(bv.shape().to_vec(), db));
                }
            }
            &Op::BatchMatMul { a, b, trans_b } => {
                let (av, bv) = (val(a), val(b));
                let (gs, p, q) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                let r = node.value.shape()[2];
                if wants(a) {
                    let mut da = vec![0.0; gs * p * q];
                    for k in 0..gs {
                        let gk = &gd[k * p * r..(k + 1) * p * r];
                        let bk = &bv.data()[k * q * r..(k + 1) * q * r];
                        let dk = &mut da[k * p * q..(k + 1) * p * q];
                        if trans_b {
                            mm(gk, bk, p, r, q, dk);
                        } else {
                            mm_nt(gk, bk, p, r, q, dk);
                        }
                    }
                    acc(a, Array::from_parts(av.shape().to_vec(), da));
                }
                if wants(b) {
                    let mut db = vec![0.0; gs * q * r];
                    for k in 0..gs {
                        let gk = &gd[k * p * r..(k + 1) * p * r];
                        let ak = &av.data()[k * p * q..(k + 1) * p * q];
                        let dk = &mut db[k * q * r..(k + 1) * q * r];
                        if trans_b {
                            mm_tn(gk, ak, p, r, q, dk);
                        } else {
                            mm_tn(ak, gk, p, q, r, dk);
                        }
                    }
                    acc(b, Array::from_parts(bv.shape().to_vec(), db));
                }
            }
            &Op::Transpose(x) => {
                let shape = node.value.shape();
                let n = shape.len();
                let (r, c) = (shape[n - 2], shape[n - 1]);
                let groups = g.len() / (r * c);
                let mut dx = vec![0.0; g.len()];
                for k in 0..groups {
                    transpose(&gd[k * r * c..(k + 1) * r * c], r, c, &mut dx[k * r * c..(k + 1) * r * c]);
                }
                acc(x, Array::from_parts(val(x).shape().to_vec(), dx));
            }
            &Op::Reshape(x) => {
                acc(x, Array::from_parts(val(x).shape().to_vec(), gd.to_vec()));
            }
            &Op::Add(a, b) => {
                acc(a, g.clone());
                acc(b, g.clone());
            }
            &Op::Sub(a, b) => {
                acc(a, g.clone());
                let neg = gd.iter().map(|v| -v).collect();
                acc(b, Array::from_parts(g.shape().to_vec(), neg));
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (val(a), val(b));
                if wants(a) {
                    let d = gd.iter().zip(bv.data()).map(|(g, y)| g * y).collect();
                    acc(a, Array::from_parts(g.shape().to_vec(), d));
                }
                if wants(b) {
                    let d = gd.iter().zip(av.data()).map(|(g, x)| g * x).collect();
                    acc(b, Array::from_parts(g.shape().to_vec(), d));
                }
            }
            &Op::AddBias { x, bias } => {
                acc(x, g.clone());
                if wants(bias) {
                    let c = val(bias).len();
                    let mut db = vec![0.0; c];
                    for row in gd.chunks(c) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    acc(bias, Array::from_parts(val(bias).shape().to_vec(), db));
                }
            }
            &Op::Scale(x, c) => {
                let d = gd.iter().map(|v| c * v).collect();
                acc(x, Array::from_parts(g.shape().to_vec(), d));
            }
            &Op::Relu(x) => {
                let d = gd
                    .iter()
                    .zip(val(x).data())
                    .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                    .collect();
                acc(x, Array::from_parts(g.shape().to_vec(), d));
            }
            &Op::Tanh(x) => {
                let d = gd
                    .iter()
                    .zip(node.value.data())
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect();
                acc(x, Array::from_parts(g.shape().to_vec(), d));
            }
            &Op::Log(x) => {
                let d = gd.iter().zip(val(x).data()).map(|(g, v)| g / v).collect();
                acc(x, Array::from_parts(g.shape().to_vec(), d));
            }
            &Op::Square(x) => {
                let d = gd
                    .iter()
                    .zip(val(x).data())
                    .map(|(g, v)| 2.0 * v * g)
                    .collect();
                acc(x, Array::from_parts(g.shape().to_vec(), d));
            }
            Op::Concat { inputs, widths } => {
                let total: usize = widths.iter().sum();
                let rows = node.value.shape()[0];
                let mut offset = 0;
                for (&v, &w) in inputs.iter().zip(widths) {
                    if wants(v) {
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&gd[r * total + offset..r * total + offset + w]);
                        }
                        acc(v, Array::from_parts(vec![rows, w], d));
                    }
                    offset += w;
                }
            }
            &Op::MeanAxis {
                x,
                outer,
                axis,
                inner,
            } => {
                let inv = 1.0 / axis as f64;
                let mut d = vec![0.0; outer * axis * inner];
                for o in 0..outer {
                    let src = &gd[o * inner..(o + 1) * inner];
                    for a in 0..axis {
                        let dst = &mut d[(o * axis + a) * inner..(o * axis + a + 1) * inner];
                        for (t, s) in dst.iter_mut().zip(src) {
                            *t = s * inv;
                        }
                    }
                }
                acc(x, Array::from_parts(val(x).shape().to_vec(), d));
            }
            Op::GatherRows { x, index } => {
                let xs = val(*x).shape();
                let cols = xs[1];
                let mut d = vec![0.0; xs[0] * cols];
                for (k, &row) in index.iter().enumerate() {
                    let src = &gd[k * cols..(k + 1) * cols];
                    for (t, s) in d[row * cols..(row + 1) * cols].iter_mut().zip(src) {
                        *t += s;
                    }
                }
                acc(*x, Array::from_parts(xs.to_vec(), d));
            }
            &Op::Softmax(x) => {
                let y = node.value.data();
                let width = *node.value.shape().last().unwrap();
                let mut d = vec![0.0; y.len()];
                for ((yr, gr), dr) in y.chunks(width).zip(gd.chunks(width)).zip(d.chunks_mut(width)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((t, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *t = yv * (gv - dot);
                    }
                }
                acc(x, Array::from_parts(node.value.shape().to_vec(), d));
            }
            &Op::Sum(x) => {
                acc(x, Array::full(val(x).shape(), gd[0]));
            }
            &Op::Mean(x) => {
                let n = val(x).len() as f64;
                acc(x, Array::full(val(x).shape(), gd[0] / n));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let shape = node.value.shape();
                let (rows, cols) = (shape[0], shape[1]);
                let gv = val(*gamma).data();
                let mut dgamma = vec![0.0; cols];
                let mut dbeta = vec![0.0; cols];
                for i in 0..rows {
                    for j in 0..cols {
                        let k = i * cols + j;
                        dgamma[j] += gd[k] * xhat[k];
                        dbeta[j] += gd[k];
                    }
                }
                if wants(*x) {
                    let mut dx = vec![0.0; rows * cols];
                    if *train {
                        // dxhat = g·gamma; dx = inv_std/R · (R·dxhat − Σdxhat − xhat·Σ(dxhat·xhat))
                        let nr = rows as f64;
                        for j in 0..cols {
                            let s1 = dbeta[j] * gv[j];
                            let s2 = dgamma[j] * gv[j];
                            for i in 0..rows {
                                let k = i * cols + j;
                                let dxhat = gd[k] * gv[j];
                                dx[k] = inv_std[j] / nr * (nr * dxhat - s1 - xhat[k] * s2);
                            }
                        }
                    } else {
                        for i in 0..rows {
                            for j in 0..cols {
                                let k = i * cols + j;
                                dx[k] = gd[k] * gv[j] * inv_std[j];
                            }
                        }
                    }
                    acc(*x, Array::from_parts(shape.to_vec(), dx));
                }
                acc(*gamma, Array::from_parts(val(*gamma).shape().to_vec(), dgamma));
                acc(*beta, Array::from_parts(val(*beta).shape().to_vec(), dbeta));
            }
        }
    }
}
