use alloc::borrow::Cow;
use alloc::vec;
use alloc::vec::Vec;

use super::{DiffError, Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Relu(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    // excluded diagonal entries have p = 0 and need no special backward rule
    RowSoftmax { x: Var },
    PairwiseSqDist(Var),
    GaussianSample { mu: Var, log_var: Var, eps: Var },
}

struct Node<'a, T: Scalar> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Define-by-run computation record. Leaves may borrow their tensors, so
/// model parameters are not copied when a step's graph is built.
pub struct Tape<'a, T: Scalar = f32> {
    nodes: Vec<Node<'a, T>>,
}

impl<T: Scalar> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> DiffError {
    DiffError::ShapeError {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

impl<'a, T: Scalar> Tape<'a, T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn leaf(&mut self, value: Cow<'a, Tensor<T>>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf: gradients are tracked.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.leaf(Cow::Owned(t), true)
    }

    pub fn param_ref(&mut self, t: &'a Tensor<T>) -> Var {
        self.leaf(Cow::Borrowed(t), true)
    }

    /// Detached leaf: no gradient is ever produced for it.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(Cow::Owned(t), false)
    }

    pub fn constant_ref(&mut self, t: &'a Tensor<T>) -> Var {
        self.leaf(Cow::Borrowed(t), false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn zip(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var, DiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta.shape(), tb.shape()));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, op, &[a, b]))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let out = self.value(x).map(f);
        self.push(out, op, &[x])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Matrix plus a row vector broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, DiffError> {
        let (ta, tr) = (self.value(a), self.value(row));
        let cols = ta.cols();
        if ta.shape().len() != 2 || tr.len() != cols {
            return Err(shape_err("add_row", ta.shape(), tr.shape()));
        }
        let r = tr.data();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + r[i % cols])
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, Op::AddRow(a, row), &[a, row]))
    }

    /// Affine layer `x·w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, DiffError> {
        let h = self.matmul(x, w)?;
        self.add_row(h, b)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        self.unary(x, |v| v * s, Op::Scale(x, s))
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    /// ReLU with subgradient 0 at the origin.
    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(x))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, Op::Softplus(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.ln(), Op::Log(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().fold(T::zero(), |acc, &v| acc + v);
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let n = T::from_usize(t.len().max(1)).unwrap_or_else(T::one);
        let s = t.data().iter().fold(T::zero(), |acc, &v| acc + v) / n;
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Row-wise normalized exponential. With `exclude_diagonal`, entry
    /// `(i, i)` is forced to zero and left out of row `i`'s normalizer.
    pub fn row_softmax(&mut self, x: Var, exclude_diagonal: bool) -> Result<Var, DiffError> {
        let t = self.value(x);
        if t.shape().len() != 2 || (exclude_diagonal && t.rows() != t.cols()) {
            return Err(shape_err("row_softmax", t.shape(), &[]));
        }
        let (rows, cols) = (t.rows(), t.cols());
        let mut out = vec![T::zero(); rows * cols];
        for i in 0..rows {
            let row = t.row(i);
            let keep = |j: usize| !(exclude_diagonal && i == j);
            let max = (0..cols)
                .filter(|&j| keep(j))
                .map(|j| row[j])
                .fold(T::neg_infinity(), T::max);
            if max == T::neg_infinity() {
                continue;
            }
            let mut z = T::zero();
            for j in (0..cols).filter(|&j| keep(j)) {
                let e = (row[j] - max).exp();
                out[i * cols + j] = e;
                z = z + e;
            }
            for j in 0..cols {
                out[i * cols + j] = out[i * cols + j] / z;
            }
        }
        let out = Tensor::matrix(rows, cols, out)?;
        Ok(self.push(
            out,
            Op::RowSoftmax { x },
            &[x],
        ))
    }

    /// Squared Euclidean distances between all row pairs of an `n×d` matrix.
    pub fn pairwise_sq_dist(&mut self, z: Var) -> Result<Var, DiffError> {
        let t = self.value(z);
        if t.shape().len() != 2 {
            return Err(shape_err("pairwise_sq_dist", t.shape(), &[]));
        }
        let n = t.rows();
        let mut out = vec![T::zero(); n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = t
                    .row(i)
                    .iter()
                    .zip(t.row(j))
                    .fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
                out[i * n + j] = d;
                out[j * n + i] = d;
            }
        }
        let out = Tensor::matrix(n, n, out)?;
        Ok(self.push(out, Op::PairwiseSqDist(z), &[z]))
    }

    /// Reparameterized draw `mu + exp(log_var / 2) · eps`.
    pub fn gaussian_sample(&mut self, mu: Var, log_var: Var, eps: Var) -> Result<Var, DiffError> {
        let (m, lv, e) = (self.value(mu), self.value(log_var), self.value(eps));
        if m.shape() != lv.shape() || m.shape() != e.shape() {
            return Err(shape_err("gaussian_sample", m.shape(), lv.shape()));
        }
        let half = T::from_f64_lossy(0.5);
        let data = m
            .data()
            .iter()
            .zip(lv.data())
            .zip(e.data())
            .map(|((&m, &lv), &e)| m + (lv * half).exp() * e)
            .collect();
        let out = Tensor::new(m.shape().to_vec(), data)?;
        Ok(self.push(out, Op::GaussianSample { mu, log_var, eps }, &[mu, log_var, eps]))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, DiffError> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(DiffError::NotScalar(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::full(lt.shape(), T::one()));
        }
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a = *a + *b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn elementwise_grad(&self, x: Var, g: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let xv = self.value(x);
        let data = xv.data().iter().zip(g.data()).map(|(&a, &b)| f(a, b)).collect();
        Tensor::new(xv.shape().to_vec(), data).expect("shape preserved")
    }

    fn propagate(&self, id: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let out = &self.nodes[id].value;
        match self.nodes[id].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(a), self.value(b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.requires_grad(a) {
                    let mut da = vec![T::zero(); m * k];
                    T::gemm(m, n, k, g.data(), false, tb.data(), true, &mut da, false);
                    self.accumulate(grads, a, Tensor::matrix(m, k, da).expect("shape"));
                }
                if self.requires_grad(b) {
                    let mut db = vec![T::zero(); k * n];
                    T::gemm(k, m, n, ta.data(), true, g.data(), false, &mut db, false);
                    self.accumulate(grads, b, Tensor::matrix(k, n, db).expect("shape"));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.requires_grad(a) {
                    let d = self.elementwise_grad(b, g, |y, gv| y * gv);
                    self.accumulate(grads, a, d);
                }
                if self.requires_grad(b) {
                    let d = self.elementwise_grad(a, g, |x, gv| x * gv);
                    self.accumulate(grads, b, d);
                }
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, a, g.clone());
                if self.requires_grad(row) {
                    let cols = g.cols();
                    let mut db = vec![T::zero(); cols];
                    for r in 0..g.rows() {
                        for (acc, &v) in db.iter_mut().zip(g.row(r)) {
                            *acc = *acc + v;
                        }
                    }
                    let shape = self.value(row).shape().to_vec();
                    self.accumulate(grads, row, Tensor::new(shape, db).expect("shape"));
                }
            }
            Op::Scale(x, s) => self.accumulate(grads, x, g.map(|v| v * s)),
            Op::AddScalar(x) => self.accumulate(grads, x, g.clone()),
            Op::Relu(x) => {
                let d = self.elementwise_grad(x, g, |v, gv| if v > T::zero() { gv } else { T::zero() });
                self.accumulate(grads, x, d);
            }
            Op::Softplus(x) => {
                let d = self.elementwise_grad(x, g, |v, gv| gv * sigmoid(v));
                self.accumulate(grads, x, d);
            }
            Op::Exp(x) => {
                let data = out.data().iter().zip(g.data()).map(|(&y, &gv)| y * gv).collect();
                self.accumulate(grads, x, Tensor::new(out.shape().to_vec(), data).expect("shape"));
            }
            Op::Log(x) => {
                let d = self.elementwise_grad(x, g, |v, gv| gv / v);
                self.accumulate(grads, x, d);
            }
            Op::Square(x) => {
                let two = T::from_f64_lossy(2.0);
                let d = self.elementwise_grad(x, g, |v, gv| two * v * gv);
                self.accumulate(grads, x, d);
            }
            Op::Sum(x) => {
                let shape = self.value(x).shape().to_vec();
                self.accumulate(grads, x, Tensor::full(&shape, g.item()));
            }
            Op::Mean(x) => {
                let xv = self.value(x);
                let n = T::from_usize(xv.len().max(1)).unwrap_or_else(T::one);
                self.accumulate(grads, x, Tensor::full(xv.shape(), g.item() / n));
            }
            Op::RowSoftmax { x, .. } => {
                let (rows, cols) = (out.rows(), out.cols());
                let mut d = vec![T::zero(); rows * cols];
                for i in 0..rows {
                    let p = out.row(i);
                    let gi = g.row(i);
                    let dot = p.iter().zip(gi).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
                    for j in 0..cols {
                        d[i * cols + j] = p[j] * (gi[j] - dot);
                    }
                }
                self.accumulate(grads, x, Tensor::matrix(rows, cols, d).expect("shape"));
            }
            Op::PairwiseSqDist(z) => {
                let zt = self.value(z);
                let (n, dim) = (zt.rows(), zt.cols());
                let two = T::from_f64_lossy(2.0);
                let mut d = vec![T::zero(); n * dim];
                for i in 0..n {
                    for j in 0..n {
                        if i == j {
                            continue;
                        }
                        let w = two * (g.get(i, j) + g.get(j, i));
                        for c in 0..dim {
                            d[i * dim + c] = d[i * dim + c] + w * (zt.get(i, c) - zt.get(j, c));
                        }
                    }
                }
                self.accumulate(grads, z, Tensor::matrix(n, dim, d).expect("shape"));
            }
            Op::GaussianSample { mu, log_var, eps } => {
                self.accumulate(grads, mu, g.clone());
                let half = T::from_f64_lossy(0.5);
                let lv = self.value(log_var);
                let ev = self.value(eps);
                if self.requires_grad(log_var) {
                    let data = lv
                        .data()
                        .iter()
                        .zip(ev.data())
                        .zip(g.data())
                        .map(|((&l, &e), &gv)| gv * e * half * (l * half).exp())
                        .collect();
                    self.accumulate(grads, log_var, Tensor::new(lv.shape().to_vec(), data).expect("shape"));
                }
                if self.requires_grad(eps) {
                    let data = lv
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&l, &gv)| gv * (l * half).exp())
                        .collect();
                    self.accumulate(grads, eps, Tensor::new(lv.shape().to_vec(), data).expect("shape"));
                }
            }
        }
    }
}

pub(crate) fn softplus<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Gradients produced by [`Tape::backward`], retained for leaves only.
#[derive(Debug, Clone)]
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` for detached leaves and leaves the loss does not depend on.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Move a gradient out of the table.
    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
