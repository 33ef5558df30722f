use super::kernels::{gemm, sigmoid, softplus, View};
use super::{DiffError, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Min(Var, Var),
    AddRow(Var, Var),
    MulScalar(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Softplus(Var),
    Clamp(Var, f64, f64),
    NormLast(Var),
    SumLast(Var),
    Sum(Var),
    Mean(Var),
    ConcatLast(Vec<Var>),
    StackRows(Vec<Var>),
    Reshape(Var),
    StopGradient,
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of primitive operations.
///
/// Nodes are appended in evaluation order, so every node's parents precede
/// it and a single reverse sweep visits each node once.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward sweep, indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `var`; exact zeros when the loss does not reach it.
    pub fn get(&self, var: Var) -> Tensor {
        match self.grads.get(var.0).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }

    pub fn is_reached(&self, var: Var) -> bool {
        matches!(self.grads.get(var.0), Some(Some(_)))
    }

    pub fn collect(&self, vars: &[Var]) -> Vec<Tensor> {
        vars.iter().map(|&v| self.get(v)).collect()
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), DiffError> {
    if a.shape() != b.shape() {
        return Err(DiffError::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn matrix_dims(op: &'static str, t: &Tensor) -> Result<(usize, usize), DiffError> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(DiffError::Rank {
            op,
            shape: s.to_vec(),
        }),
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf: gradients are reported for it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf: never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Tensor, trainable: bool) -> Var {
        self.push(value, Op::Leaf, trainable)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = matrix_dims("matmul", ta)?;
        let (k2, n) = matrix_dims("matmul", tb)?;
        if k != k2 {
            return Err(DiffError::ShapeMismatch {
                op: "matmul",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            View::plain(ta.data(), k),
            View::plain(tb.data(), n),
            0.0,
            &mut out,
        );
        let value = Tensor::new(vec![m, n], out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        make: fn(Var, Var) -> Op,
    ) -> Result<Var, DiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(op, ta, tb)?;
        let value = ta.zip_map(tb, f);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, make(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary("min", a, b, |x, y| if x <= y { x } else { y }, Op::Min)
    }

    /// Adds a `[n]` bias to every row of an `[m, n]` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, DiffError> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let (_, n) = matrix_dims("add_row", ta)?;
        if tb.shape() != [n] {
            return Err(DiffError::ShapeMismatch {
                op: "add_row",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let mut value = ta.clone();
        for row in value.data_mut().chunks_mut(n) {
            for (x, b) in row.iter_mut().zip(tb.data()) {
                *x += b;
            }
        }
        let rg = self.rg(&[a, bias]);
        Ok(self.push(value, Op::AddRow(a, bias), rg))
    }

    /// Multiplies every element of `a` by the one-element tensor `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var, DiffError> {
        let ts = self.value(s);
        if ts.len() != 1 {
            return Err(DiffError::ShapeMismatch {
                op: "mul_scalar",
                left: self.value(a).shape().to_vec(),
                right: ts.shape().to_vec(),
            });
        }
        let k = ts.item();
        let value = self.value(a).map(|x| x * k);
        let rg = self.rg(&[a, s]);
        Ok(self.push(value, Op::MulScalar(a, s), rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(value, op, rg)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, |x| x * k, Op::Scale(a, k))
    }

    /// `a + k` for a constant `k`.
    pub fn offset(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, |x| x + k, Op::Offset(a))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    /// Clamps into `[lo, hi]`; gradient passes only inside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    /// Identity forward, zero gradient backward.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let value = self.value(a).clone();
        self.push(value, Op::StopGradient, false)
    }

    /// Euclidean norm over the last axis, dropping that axis.
    pub fn norm_last(&mut self, a: Var) -> Result<Var, DiffError> {
        let ta = self.value(a);
        if ta.shape().is_empty() {
            return Err(DiffError::Rank {
                op: "norm_last",
                shape: Vec::new(),
            });
        }
        let n = ta.last_dim();
        let data = ta
            .data()
            .chunks(n)
            .map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        let shape = ta.shape()[..ta.shape().len() - 1].to_vec();
        let value = Tensor::new(shape, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::NormLast(a), rg))
    }

    /// Sum over the last axis, dropping that axis.
    pub fn sum_last(&mut self, a: Var) -> Result<Var, DiffError> {
        let ta = self.value(a);
        if ta.shape().is_empty() {
            return Err(DiffError::Rank {
                op: "sum_last",
                shape: Vec::new(),
            });
        }
        let n = ta.last_dim();
        let data = ta.data().chunks(n).map(|r| r.iter().sum()).collect();
        let shape = ta.shape()[..ta.shape().len() - 1].to_vec();
        let value = Tensor::new(shape, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::SumLast(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = Tensor::scalar(t.sum() / t.len().max(1) as f64);
        let rg = self.rg(&[a]);
        self.push(value, Op::Mean(a), rg)
    }

    /// Concatenates `[m, n_i]` matrices along the last axis.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let first = *parts.first().ok_or(DiffError::EmptyInput { op: "concat_last" })?;
        let (m, _) = matrix_dims("concat_last", self.value(first))?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = matrix_dims("concat_last", self.value(p))?;
            if r != m {
                return Err(DiffError::ShapeMismatch {
                    op: "concat_last",
                    left: self.value(first).shape().to_vec(),
                    right: self.value(p).shape().to_vec(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let value = Tensor::new(vec![m, total], out)?;
        let rg = self.rg(parts);
        Ok(self.push(value, Op::ConcatLast(parts.to_vec()), rg))
    }

    /// Stacks `[m_i, n]` matrices vertically into `[sum m_i, n]`.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let first = *parts.first().ok_or(DiffError::EmptyInput { op: "stack_rows" })?;
        let (_, n) = matrix_dims("stack_rows", self.value(first))?;
        let mut rows = 0;
        for &p in parts {
            let (r, c) = matrix_dims("stack_rows", self.value(p))?;
            if c != n {
                return Err(DiffError::ShapeMismatch {
                    op: "stack_rows",
                    left: self.value(first).shape().to_vec(),
                    right: self.value(p).shape().to_vec(),
                });
            }
            rows += r;
        }
        let mut out = Vec::with_capacity(rows * n);
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::new(vec![rows, n], out)?;
        let rg = self.rg(parts);
        Ok(self.push(value, Op::StackRows(parts.to_vec()), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, DiffError> {
        let value = self.value(a).clone().reshape(shape.to_vec())?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, DiffError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(DiffError::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));
        }
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let live = |v: Var| self.nodes[v.0].requires_grad;
        let acc = |v: Var, t: Tensor, grads: &mut [Option<Tensor>]| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf | Op::StopGradient => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                if live(*a) {
                    let slot = grads[a.0].get_or_insert_with(|| Tensor::zeros(&[m, k]));
                    gemm(
                        m,
                        n,
                        k,
                        View::plain(g.data(), n),
                        View::transposed(tb.data(), n),
                        1.0,
                        slot.data_mut(),
                    );
                }
                if live(*b) {
                    let slot = grads[b.0].get_or_insert_with(|| Tensor::zeros(&[k, n]));
                    gemm(
                        k,
                        m,
                        n,
                        View::transposed(ta.data(), k),
                        View::plain(g.data(), n),
                        1.0,
                        slot.data_mut(),
                    );
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone(), grads);
                acc(*b, g.clone(), grads);
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone(), grads);
                acc(*b, g.map(|x| -x), grads);
            }
            Op::Mul(a, b) => {
                if live(*a) {
                    acc(*a, g.zip_map(val(*b), |x, y| x * y), grads);
                }
                if live(*b) {
                    acc(*b, g.zip_map(val(*a), |x, y| x * y), grads);
                }
            }
            Op::Min(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                if live(*a) {
                    let mut ga = g.clone();
                    for ((x, &va), &vb) in ga.data_mut().iter_mut().zip(ta.data()).zip(tb.data()) {
                        if va > vb {
                            *x = 0.0;
                        }
                    }
                    acc(*a, ga, grads);
                }
                if live(*b) {
                    let mut gb = g.clone();
                    for ((x, &va), &vb) in gb.data_mut().iter_mut().zip(ta.data()).zip(tb.data()) {
                        if va <= vb {
                            *x = 0.0;
                        }
                    }
                    acc(*b, gb, grads);
                }
            }
            Op::AddRow(a, bias) => {
                acc(*a, g.clone(), grads);
                if live(*bias) {
                    let n = g.last_dim();
                    let mut gb = vec![0.0; n];
                    for row in g.data().chunks(n) {
                        for (s, x) in gb.iter_mut().zip(row) {
                            *s += x;
                        }
                    }
                    acc(*bias, Tensor::vector(gb), grads);
                }
            }
            Op::MulScalar(a, s) => {
                let ts = val(*s);
                if live(*a) {
                    let k = ts.item();
                    acc(*a, g.map(|x| x * k), grads);
                }
                if live(*s) {
                    let dot: f64 = g.data().iter().zip(val(*a).data()).map(|(x, y)| x * y).sum();
                    acc(*s, Tensor::full(ts.shape(), dot), grads);
                }
            }
            Op::Scale(a, k) => acc(*a, g.map(|x| x * k), grads),
            Op::Offset(a) | Op::Reshape(a) => {
                let shape = val(*a).shape().to_vec();
                let t = g.clone().reshape(shape).expect("reshape preserves length");
                acc(*a, t, grads);
            }
            Op::Tanh(a) => acc(*a, g.zip_map(&node.value, |x, y| x * (1.0 - y * y)), grads),
            Op::Sigmoid(a) => acc(*a, g.zip_map(&node.value, |x, y| x * y * (1.0 - y)), grads),
            Op::Relu(a) => acc(
                *a,
                g.zip_map(val(*a), |x, v| if v > 0.0 { x } else { 0.0 }),
                grads,
            ),
            Op::Exp(a) => acc(*a, g.zip_map(&node.value, |x, y| x * y), grads),
            Op::Log(a) => acc(*a, g.zip_map(val(*a), |x, v| x / v), grads),
            Op::Square(a) => acc(*a, g.zip_map(val(*a), |x, v| 2.0 * x * v), grads),
            Op::Softplus(a) => acc(*a, g.zip_map(val(*a), |x, v| x * sigmoid(v)), grads),
            Op::Clamp(a, lo, hi) => acc(
                *a,
                g.zip_map(val(*a), |x, v| if v >= *lo && v <= *hi { x } else { 0.0 }),
                grads,
            ),
            Op::NormLast(a) => {
                let ta = val(*a);
                let n = ta.last_dim();
                let mut out = vec![0.0; ta.len()];
                for (i, (row, dst)) in ta.data().chunks(n).zip(out.chunks_mut(n)).enumerate() {
                    let norm = node.value.data()[i];
                    if norm > 0.0 {
                        let k = g.data()[i] / norm;
                        for (d, x) in dst.iter_mut().zip(row) {
                            *d = k * x;
                        }
                    }
                }
                acc(*a, Tensor::new(ta.shape().to_vec(), out).expect("shape"), grads);
            }
            Op::SumLast(a) => {
                let ta = val(*a);
                let n = ta.last_dim();
                let mut out = Vec::with_capacity(ta.len());
                for &x in g.data() {
                    out.extend(std::iter::repeat_n(x, n));
                }
                acc(*a, Tensor::new(ta.shape().to_vec(), out).expect("shape"), grads);
            }
            Op::Sum(a) => acc(*a, Tensor::full(val(*a).shape(), g.item()), grads),
            Op::Mean(a) => {
                let ta = val(*a);
                let k = g.item() / ta.len().max(1) as f64;
                acc(*a, Tensor::full(ta.shape(), k), grads);
            }
            Op::ConcatLast(parts) => {
                let m = g.rows();
                let total = g.last_dim();
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).last_dim();
                    if live(p) {
                        let mut out = Vec::with_capacity(m * w);
                        for i in 0..m {
                            out.extend_from_slice(&g.data()[i * total + offset..i * total + offset + w]);
                        }
                        acc(p, Tensor::new(vec![m, w], out).expect("shape"), grads);
                    }
                    offset += w;
                }
            }
            Op::StackRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = val(p).len();
                    if live(p) {
                        let t = Tensor::new(val(p).shape().to_vec(), g.data()[offset..offset + len].to_vec())
                            .expect("shape");
                        acc(p, t, grads);
                    }
                    offset += len;
                }
            }
        }
    }
}
