use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise primitives. Binary kinds take two same-shape operands,
/// the rest take one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Scale(f64),
    LeakyRelu(f64),
    Softplus,
    Tanh,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    LeakyRelu(Var, f64),
    Softplus(Var),
    Tanh(Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    GatherRows(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by leaf [`Var`].
#[derive(Debug, Default)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    visited: usize,
}

impl Gradients {
    /// Gradient of the loss with respect to a trainable leaf. `None` for
    /// constants and intermediate values.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }

    /// Writes the gradient of `var` into the tensor's grad slot.
    pub fn write_into(&self, var: Var, tensor: &mut Tensor) -> Result<()> {
        let g = self
            .get(var)
            .ok_or_else(|| Error::contract("no gradient recorded for this variable"))?;
        tensor.set_grad(g.to_vec())
    }

    /// Number of nodes whose backward rule ran.
    pub fn nodes_visited(&self) -> usize {
        self.visited
    }
}

/// Linear record of primitive operations, replayed in reverse by
/// [`Tape::backward`]. Nodes are appended in evaluation order, so every
/// node's inputs precede it.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow for large `x`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn leaky_relu(x: f64, alpha: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        alpha * x
    }
}

/// `c += alpha * op(a) * op(b)`, with transposes expressed through strides.
#[allow(clippy::too_many_arguments)]
fn gemm_acc(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
) {
    // a is m×k (or k×m stored when transposed), b is k×n (or n×k stored).
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    // SAFETY: slice lengths match the stated dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
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

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn scalar_value(&self, var: Var) -> Result<f64> {
        self.value(var).item()
    }

    fn needs_grad(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool, name: &'static str) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(format!("output of {name}")));
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a leaf. Gradients are tracked iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, mut tensor: Tensor) -> Result<Var> {
        let needs = tensor.requires_grad();
        tensor.zero_grad();
        self.push(tensor, Op::Leaf, needs, "leaf")
    }

    /// Records a copy of a parameter as a trainable leaf.
    pub fn param(&mut self, tensor: &Tensor) -> Result<Var> {
        let mut t = tensor.clone();
        t.set_requires_grad(true);
        self.leaf(t)
    }

    /// Records a non-trainable leaf.
    pub fn constant(&mut self, tensor: Tensor) -> Result<Var> {
        let mut t = tensor;
        t.set_requires_grad(false);
        self.leaf(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
        );
        let needs = self.needs_grad(a) || self.needs_grad(b);
        self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), needs, "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        let src = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let needs = self.needs_grad(a);
        self.push(Tensor::matrix(n, m, out)?, Op::Transpose(a), needs, "transpose")
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Dimension {
                op,
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        Ok(())
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let needs = self.needs_grad(a) || self.needs_grad(b);
        self.push(out, op, needs, name)
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| f(x)).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let needs = self.needs_grad(a);
        self.push(out, op, needs, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Scalar-times-tensor, the only broadcast form supported.
    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.unary("scale", a, |x| s * x, Op::Scale(a, s))
    }

    pub fn leaky_relu(&mut self, a: Var, alpha: f64) -> Result<Var> {
        self.unary("leaky_relu", a, |x| leaky_relu(x, alpha), Op::LeakyRelu(a, alpha))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary("softplus", a, softplus, Op::Softplus(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, f64::tanh, Op::Tanh(a))
    }

    /// Dispatches one of the [`Elementwise`] primitives.
    pub fn elementwise(&mut self, kind: Elementwise, inputs: &[Var]) -> Result<Var> {
        let arity = match kind {
            Elementwise::Add | Elementwise::Sub | Elementwise::Mul => 2,
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(Error::contract(format!(
                "{kind:?} takes {arity} operand(s), got {}",
                inputs.len()
            )));
        }
        match kind {
            Elementwise::Add => self.add(inputs[0], inputs[1]),
            Elementwise::Sub => self.sub(inputs[0], inputs[1]),
            Elementwise::Mul => self.mul(inputs[0], inputs[1]),
            Elementwise::Scale(s) => self.scale(inputs[0], s),
            Elementwise::LeakyRelu(alpha) => self.leaky_relu(inputs[0], alpha),
            Elementwise::Softplus => self.softplus(inputs[0]),
            Elementwise::Tanh => self.tanh(inputs[0]),
        }
    }

    /// Adds a length-`n` bias to every row of an `m×n` matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        if self.value(bias).len() != n {
            return Err(Error::Dimension {
                op: "add_bias",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(bias).shape().to_vec(),
            });
        }
        let b = self.value(bias).data();
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_exact_mut(n) {
            for (x, &bj) in row.iter_mut().zip(b) {
                *x += bj;
            }
        }
        let needs = self.needs_grad(a) || self.needs_grad(bias);
        self.push(Tensor::matrix(m, n, out)?, Op::AddBias(a, bias), needs, "add_bias")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        let needs = self.needs_grad(a);
        self.push(Tensor::scalar(s), Op::Sum(a), needs, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        let needs = self.needs_grad(a);
        self.push(Tensor::scalar(s), Op::Mean(a), needs, "mean")
    }

    /// Sums each row of an `m×n` matrix into an `m×1` column.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        let out = self
            .value(a)
            .data()
            .chunks_exact(n)
            .map(|r| r.iter().sum())
            .collect();
        let needs = self.needs_grad(a);
        self.push(Tensor::matrix(m, 1, out)?, Op::RowSum(a), needs, "row_sum")
    }

    /// Selects rows of a table, e.g. an embedding lookup.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (rows, cols) = self.value(table).dims2()?;
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i >= rows {
                return Err(Error::Index {
                    what: "table row",
                    index: i,
                    len: rows,
                });
            }
            out.extend_from_slice(&src[i * cols..(i + 1) * cols]);
        }
        if indices.is_empty() {
            return Err(Error::contract("gather_rows with no indices"));
        }
        let needs = self.needs_grad(table);
        let t = Tensor::matrix(indices.len(), cols, out)?;
        self.push(t, Op::GatherRows(table, indices.to_vec()), needs, "gather_rows")
    }

    /// Reverse pass from a scalar `loss`. Returns gradients for every
    /// trainable leaf (zeros when the loss does not depend on it) and clears
    /// the tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        let mut visited = 0;

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            visited += 1;
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.value(*a).dims2()?;
                    let (_, nn) = self.value(*b).dims2()?;
                    if self.needs_grad(*a) {
                        let slot = slot(&mut grads, *a, m * k);
                        gemm_acc(m, nn, k, &g, false, self.value(*b).data(), true, slot);
                    }
                    if self.needs_grad(*b) {
                        let slot = slot(&mut grads, *b, k * nn);
                        gemm_acc(k, m, nn, self.value(*a).data(), true, &g, false, slot);
                    }
                }
                Op::Transpose(a) => {
                    let (m, nn) = self.value(*a).dims2()?;
                    let slot = slot(&mut grads, *a, m * nn);
                    for r in 0..m {
                        for c in 0..nn {
                            slot[r * nn + c] += g[c * m + r];
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if self.needs_grad(v) {
                            axpy(slot(&mut grads, v, g.len()), 1.0, &g);
                        }
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs_grad(*a) {
                        axpy(slot(&mut grads, *a, g.len()), 1.0, &g);
                    }
                    if self.needs_grad(*b) {
                        axpy(slot(&mut grads, *b, g.len()), -1.0, &g);
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.needs_grad(a) {
                        let other = self.nodes[b.0].value.data();
                        let s = slot(&mut grads, a, g.len());
                        for ((s, &gi), &o) in s.iter_mut().zip(&g).zip(other) {
                            *s += gi * o;
                        }
                    }
                    if self.needs_grad(b) {
                        let other = self.nodes[a.0].value.data();
                        let s = slot(&mut grads, b, g.len());
                        for ((s, &gi), &o) in s.iter_mut().zip(&g).zip(other) {
                            *s += gi * o;
                        }
                    }
                }
                Op::Scale(a, s) => {
                    axpy(slot(&mut grads, *a, g.len()), *s, &g);
                }
                Op::AddBias(a, bias) => {
                    if self.needs_grad(*a) {
                        axpy(slot(&mut grads, *a, g.len()), 1.0, &g);
                    }
                    if self.needs_grad(*bias) {
                        let cols = self.value(*bias).len();
                        let s = slot(&mut grads, *bias, cols);
                        for row in g.chunks_exact(cols) {
                            for (sj, &gj) in s.iter_mut().zip(row) {
                                *sj += gj;
                            }
                        }
                    }
                }
                Op::LeakyRelu(a, alpha) => {
                    let x = self.nodes[a.0].value.data();
                    let s = slot(&mut grads, *a, g.len());
                    for ((s, &gi), &xi) in s.iter_mut().zip(&g).zip(x) {
                        *s += if xi > 0.0 { gi } else { alpha * gi };
                    }
                }
                Op::Softplus(a) => {
                    let x = self.nodes[a.0].value.data();
                    let s = slot(&mut grads, *a, g.len());
                    for ((s, &gi), &xi) in s.iter_mut().zip(&g).zip(x) {
                        *s += gi * logistic(xi);
                    }
                }
                Op::Tanh(a) => {
                    let y = node.value.data();
                    let s = slot(&mut grads, *a, g.len());
                    for ((s, &gi), &yi) in s.iter_mut().zip(&g).zip(y) {
                        *s += gi * (1.0 - yi * yi);
                    }
                }
                Op::Sum(a) => {
                    let len = self.value(*a).len();
                    for s in slot(&mut grads, *a, len) {
                        *s += g[0];
                    }
                }
                Op::Mean(a) => {
                    let len = self.value(*a).len();
                    let share = g[0] / len as f64;
                    for s in slot(&mut grads, *a, len) {
                        *s += share;
                    }
                }
                Op::RowSum(a) => {
                    let (m, nn) = self.value(*a).dims2()?;
                    let s = slot(&mut grads, *a, m * nn);
                    for (row, &gi) in s.chunks_exact_mut(nn).zip(&g) {
                        for x in row {
                            *x += gi;
                        }
                    }
                }
                Op::GatherRows(table, idx) => {
                    let (rows, cols) = self.value(*table).dims2()?;
                    let s = slot(&mut grads, *table, rows * cols);
                    for (r, &ti) in idx.iter().enumerate() {
                        for c in 0..cols {
                            s[ti * cols + c] += g[r * cols + c];
                        }
                    }
                }
            }
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.needs_grad && grads[i].is_none() {
                grads[i] = Some(vec![0.0; node.value.len()]);
            }
            if !matches!(node.op, Op::Leaf) {
                grads[i] = None;
            }
        }
        self.nodes.clear();
        Ok(Gradients { grads, visited })
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], var: Var, len: usize) -> &mut [f64] {
    grads[var.0].get_or_insert_with(|| vec![0.0; len])
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}
