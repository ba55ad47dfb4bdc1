//! Operation tape and reverse-mode gradient propagation.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::autodiff::tensor::{matmul, matmul_at, matmul_bt};
use crate::autodiff::{Error, ParameterSet, Result, Tensor};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the right operand of a binary op is broadcast onto the left.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    Scalar,
    Row,
}

#[derive(Clone, Debug)]
enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var, Broadcast),
    Sub(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Div(Var, Var, Broadcast),
    Affine(Var, S),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Elu(Var),
    Square(Var),
    Softmax(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    FloorAt(Var, S),
    StopGradient,
}

struct Node<S> {
    value: Arc<Tensor<S>>,
    op: Op<S>,
    requires_grad: bool,
}

/// Records a forward computation so that gradients can be propagated back.
///
/// Nodes are appended in evaluation order, which is already a topological
/// order; [`Tape::backward`] walks it once in reverse.
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    params: BTreeMap<String, Var>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        self.push_shared(Arc::new(value), op, requires_grad)
    }

    fn push_shared(&mut self, value: Arc<Tensor<S>>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn unary(&mut self, a: Var, value: Tensor<S>, op: Op<S>) -> Var {
        let rg = self.requires_grad(a);
        self.push(value, op, rg)
    }

    /// A value that never receives gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn constant_shared(&mut self, value: Arc<Tensor<S>>) -> Var {
        self.push_shared(value, Op::Leaf, false)
    }

    pub fn scalar(&mut self, value: S) -> Var {
        self.constant(Tensor::scalar(value))
    }

    /// A differentiable input that is not part of any parameter set.
    pub fn input(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Loads parameter `name` from `set` as a trainable leaf. Loading the
    /// same name twice returns the same handle.
    pub fn param(&mut self, set: &ParameterSet<S>, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = set.shared(name)?;
        let v = self.push_shared(value, Op::Leaf, true);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// Loads parameter `name` as a constant: it takes part in the forward
    /// pass but is excluded from gradient propagation.
    pub fn frozen_param(&mut self, set: &ParameterSet<S>, name: &str) -> Result<Var> {
        let value = set.shared(name)?;
        Ok(self.constant_shared(value))
    }

    /// Names of all trainable parameters loaded on this tape.
    pub fn param_vars(&self) -> &BTreeMap<String, Var> {
        &self.params
    }

    fn broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<Broadcast> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            return Ok(Broadcast::Same);
        }
        let vb = self.value(b);
        if vb.numel() == 1 {
            return Ok(Broadcast::Scalar);
        }
        let row_like = sb.len() == 1 || (sb.len() == 2 && sb[0] == 1);
        if row_like && vb.numel() == self.value(a).cols() {
            return Ok(Broadcast::Row);
        }
        Err(Error::ShapeMismatch {
            op,
            left: sa.to_vec(),
            right: sb.to_vec(),
        })
    }

    fn binary_values(
        &self,
        a: Var,
        b: Var,
        mode: Broadcast,
        f: impl Fn(S, S) -> S,
    ) -> Tensor<S> {
        let va = self.value(a);
        let vb = self.value(b).data();
        let cols = va.cols();
        let mut out = va.clone();
        match mode {
            Broadcast::Same => {
                for (o, &y) in out.data_mut().iter_mut().zip(vb) {
                    *o = f(*o, y);
                }
            }
            Broadcast::Scalar => {
                let y = vb[0];
                for o in out.data_mut() {
                    *o = f(*o, y);
                }
            }
            Broadcast::Row => {
                for (i, o) in out.data_mut().iter_mut().enumerate() {
                    *o = f(*o, vb[i % cols]);
                }
            }
        }
        out
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(S, S) -> S,
        op: impl Fn(Var, Var, Broadcast) -> Op<S>,
    ) -> Result<Var> {
        let mode = self.broadcast(name, a, b)?;
        let value = self.binary_values(a, b, mode, f);
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(value, op(a, b, mode), rg))
    }

    /// Elementwise `a + b`; `b` may be a scalar or a row broadcast over `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(b).data().iter().any(|&y| y == S::zero()) {
            return Err(Error::Domain {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        self.binary("div", a, b, |x, y| x / y, Op::Div)
    }

    /// `scale · a + shift`.
    pub fn affine(&mut self, a: Var, scale: S, shift: S) -> Var {
        let value = self.value(a).map(|x| scale * x + shift);
        self.unary(a, value, Op::Affine(a, scale))
    }

    pub fn scale(&mut self, a: Var, scale: S) -> Var {
        self.affine(a, scale, S::zero())
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.affine(a, -S::one(), S::zero())
    }

    pub fn add_scalar(&mut self, a: Var, shift: S) -> Var {
        self.affine(a, S::one(), shift)
    }

    /// Matrix product of `[m,k]` and `[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::new(vec![m, n], data)?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(S::tanh);
        self.unary(a, value, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.unary(a, value, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(S::exp);
        if !value.is_finite() {
            return Err(Error::Domain {
                op: "exp",
                detail: "overflow".into(),
            });
        }
        Ok(self.unary(a, value, Op::Exp(a)))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(&bad) = self.value(a).data().iter().find(|&&x| x <= S::zero()) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive argument {bad}"),
            });
        }
        let value = self.value(a).map(S::ln);
        Ok(self.unary(a, value, Op::Log(a)))
    }

    /// `ln(1 + eˣ)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(softplus);
        self.unary(a, value, Op::Softplus(a))
    }

    /// Exponential linear unit with α = 1.
    pub fn elu(&mut self, a: Var) -> Var {
        let value = self
            .value(a)
            .map(|x| if x > S::zero() { x } else { x.exp_m1() });
        self.unary(a, value, Op::Elu(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * x);
        self.unary(a, value, Op::Square(a))
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        let cols = value.cols();
        for row in value.data_mut().chunks_mut(cols) {
            let max = row.iter().fold(S::neg_infinity(), |m, &x| m.max(x));
            let mut total = S::zero();
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            for x in row.iter_mut() {
                *x /= total;
            }
        }
        self.unary(a, value, Op::Softmax(a))
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::EmptyConcat)?;
        let rows = self.value(first).rows();
        for &p in parts {
            if self.shape(p).len() != 2 || self.value(p).rows() != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    left: self.shape(first).to_vec(),
                    right: self.shape(p).to_vec(),
                });
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::new(vec![rows, total], data)?;
        let rg = parts.iter().any(|&p| self.requires_grad(p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Stacks matrices with equal column counts along rows.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::EmptyConcat)?;
        let cols = self.value(first).cols();
        for &p in parts {
            if self.shape(p).len() != 2 || self.value(p).cols() != cols {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    left: self.shape(first).to_vec(),
                    right: self.shape(p).to_vec(),
                });
            }
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let rows = data.len() / cols;
        let value = Tensor::new(vec![rows, cols], data)?;
        let rg = parts.iter().any(|&p| self.requires_grad(p));
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if sa.len() != 2 || start >= end || end > sa[1] {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                left: sa,
                right: vec![start, end],
            });
        }
        let src = self.value(a);
        let mut data = Vec::with_capacity(sa[0] * (end - start));
        for r in 0..sa[0] {
            data.extend_from_slice(&src.row(r)[start..end]);
        }
        let value = Tensor::new(vec![sa[0], end - start], data)?;
        Ok(self.unary(a, value, Op::SliceCols(a, start, end)))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if sa.len() != 2 || start >= end || end > sa[0] {
            return Err(Error::ShapeMismatch {
                op: "slice_rows",
                left: sa,
                right: vec![start, end],
            });
        }
        let value = self.value(a).slice_rows(start, end);
        Ok(self.unary(a, value, Op::SliceRows(a, start, end)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.unary(a, value, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).mean());
        self.unary(a, value, Op::Mean(a))
    }

    /// Sums each row over the last axis, giving `[rows, 1]`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let rows = src.rows();
        let data: Vec<S> = (0..rows).map(|r| src.row(r).iter().copied().sum()).collect();
        let value = Tensor::new(vec![rows, 1], data).expect("positive rows");
        self.unary(a, value, Op::SumCols(a))
    }

    /// Elementwise `max(a, floor)`; no gradient where the floor is active.
    pub fn floor_at(&mut self, a: Var, floor: S) -> Var {
        let value = self.value(a).map(|x| x.max(floor));
        self.unary(a, value, Op::FloorAt(a, floor))
    }

    /// Forward identity that blocks all gradient flow to `a`'s ancestors.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let value = Arc::clone(&self.nodes[a.0].value);
        self.push_shared(value, Op::StopGradient, false)
    }

    /// Propagates gradients from a one-element `loss` back through the tape.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        let loss_value = self.value(loss);
        if !loss_value.is_scalar() {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(loss_value.shape(), S::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients {
            grads,
            params: self.params.clone(),
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<S>>], v: Var, g: Tensor<S>) {
        if !self.requires_grad(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Reduces a gradient of the broadcast output back to `b`'s shape.
    fn reduce_broadcast(&self, b: Var, mode: Broadcast, g: Tensor<S>) -> Tensor<S> {
        match mode {
            Broadcast::Same => g,
            Broadcast::Scalar => Tensor::filled(self.shape(b), g.sum()),
            Broadcast::Row => {
                let cols = g.cols();
                let mut out = Tensor::zeros(self.shape(b));
                for (i, &x) in g.data().iter().enumerate() {
                    out.data_mut()[i % cols] += x;
                }
                out
            }
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) {
        let out = &self.nodes[idx].value;
        match &self.nodes[idx].op {
            Op::Leaf | Op::StopGradient => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                if self.requires_grad(*a) {
                    let ga = matmul_bt(g.data(), vb.data(), m, k, n);
                    self.accumulate(grads, *a, Tensor::new(vec![m, k], ga).expect("shape"));
                }
                if self.requires_grad(*b) {
                    let gb = matmul_at(va.data(), g.data(), m, k, n);
                    self.accumulate(grads, *b, Tensor::new(vec![k, n], gb).expect("shape"));
                }
            }
            Op::Add(a, b, mode) => {
                self.accumulate(grads, *a, g.clone());
                if self.requires_grad(*b) {
                    let gb = self.reduce_broadcast(*b, *mode, g.clone());
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Sub(a, b, mode) => {
                self.accumulate(grads, *a, g.clone());
                if self.requires_grad(*b) {
                    let gb = self.reduce_broadcast(*b, *mode, g.map(|x| -x));
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Mul(a, b, mode) => {
                if self.requires_grad(*a) {
                    let ga = self.binary_values_with(g, *b, *mode, |gx, y| gx * y);
                    self.accumulate(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    let gb = g.zip_map(self.value(*a), |gx, x| gx * x);
                    let gb = self.reduce_broadcast(*b, *mode, gb);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Div(a, b, mode) => {
                if self.requires_grad(*a) {
                    let ga = self.binary_values_with(g, *b, *mode, |gx, y| gx / y);
                    self.accumulate(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    // d(a/b)/db = -out / b
                    let t = g.zip_map(out, |gx, o| gx * o);
                    let t = self.binary_values_with(&t, *b, *mode, |x, y| -x / y);
                    let gb = self.reduce_broadcast(*b, *mode, t);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Affine(a, scale) => {
                let s = *scale;
                self.accumulate(grads, *a, g.map(|x| x * s));
            }
            Op::Tanh(a) => {
                self.accumulate(grads, *a, g.zip_map(out, |gx, y| gx * (S::one() - y * y)));
            }
            Op::Sigmoid(a) => {
                self.accumulate(grads, *a, g.zip_map(out, |gx, y| gx * y * (S::one() - y)));
            }
            Op::Exp(a) => {
                self.accumulate(grads, *a, g.zip_map(out, |gx, y| gx * y));
            }
            Op::Log(a) => {
                self.accumulate(grads, *a, g.zip_map(self.value(*a), |gx, x| gx / x));
            }
            Op::Softplus(a) => {
                self.accumulate(grads, *a, g.zip_map(self.value(*a), |gx, x| gx * sigmoid(x)));
            }
            Op::Elu(a) => {
                let ga = g.zip_map(self.value(*a), |gx, x| {
                    if x > S::zero() {
                        gx
                    } else {
                        gx * x.exp()
                    }
                });
                self.accumulate(grads, *a, ga);
            }
            Op::Square(a) => {
                let two = S::of(2.0);
                self.accumulate(grads, *a, g.zip_map(self.value(*a), |gx, x| two * gx * x));
            }
            Op::Softmax(a) => {
                let cols = out.cols();
                let mut ga = g.clone();
                for (grow, yrow) in ga.data_mut().chunks_mut(cols).zip(out.data().chunks(cols)) {
                    let dot: S = grow.iter().zip(yrow).map(|(&gx, &y)| gx * y).sum();
                    for (gx, &y) in grow.iter_mut().zip(yrow) {
                        *gx = y * (*gx - dot);
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::ConcatCols(parts) => {
                let rows = out.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.requires_grad(p) {
                        let mut data = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            data.extend_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        self.accumulate(grads, p, Tensor::new(vec![rows, w], data).expect("shape"));
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let n = self.value(p).rows();
                    if self.requires_grad(p) {
                        self.accumulate(grads, p, g.slice_rows(start, start + n));
                    }
                    start += n;
                }
            }
            Op::SliceCols(a, start, end) => {
                let src = self.value(*a);
                let mut ga = Tensor::zeros(src.shape());
                let cols = src.cols();
                for r in 0..src.rows() {
                    ga.data_mut()[r * cols + start..r * cols + end].copy_from_slice(g.row(r));
                }
                self.accumulate(grads, *a, ga);
            }
            Op::SliceRows(a, start, end) => {
                let src = self.value(*a);
                let mut ga = Tensor::zeros(src.shape());
                let cols = src.cols();
                ga.data_mut()[start * cols..end * cols].copy_from_slice(g.data());
                self.accumulate(grads, *a, ga);
            }
            Op::Sum(a) => {
                self.accumulate(grads, *a, Tensor::filled(self.shape(*a), g.item()));
            }
            Op::Mean(a) => {
                let n = S::of(self.value(*a).numel() as f64);
                self.accumulate(grads, *a, Tensor::filled(self.shape(*a), g.item() / n));
            }
            Op::SumCols(a) => {
                let src = self.value(*a);
                let cols = src.cols();
                let mut ga = Tensor::zeros(src.shape());
                for (i, x) in ga.data_mut().iter_mut().enumerate() {
                    *x = g.data()[i / cols];
                }
                self.accumulate(grads, *a, ga);
            }
            Op::FloorAt(a, floor) => {
                let f = *floor;
                let ga = g.zip_map(self.value(*a), |gx, x| if x > f { gx } else { S::zero() });
                self.accumulate(grads, *a, ga);
            }
        }
    }

    fn binary_values_with(
        &self,
        g: &Tensor<S>,
        b: Var,
        mode: Broadcast,
        f: impl Fn(S, S) -> S,
    ) -> Tensor<S> {
        let vb = self.value(b).data();
        let cols = g.cols();
        let mut out = g.clone();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            let y = match mode {
                Broadcast::Same => vb[i],
                Broadcast::Scalar => vb[0],
                Broadcast::Row => vb[i % cols],
            };
            *o = f(*o, y);
        }
        out
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
    params: BTreeMap<String, Var>,
    shapes: Vec<Vec<usize>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient with respect to any recorded value; exact zeros when `v`
    /// does not lie on a path to the loss.
    pub fn wrt(&self, v: Var) -> Tensor<S> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    /// Gradient for every trainable parameter loaded on the tape.
    pub fn params(&self) -> BTreeMap<String, Tensor<S>> {
        self.params
            .iter()
            .map(|(name, &v)| (name.clone(), self.wrt(v)))
            .collect()
    }
}

#[inline]
pub(crate) fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

#[inline]
pub(crate) fn softplus<S: Scalar>(x: S) -> S {
    // max(x, 0) + ln(1 + e^{-|x|})
    x.max(S::zero()) + (-x.abs()).exp().ln_1p()
}
