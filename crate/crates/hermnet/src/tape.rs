//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] is an append-only arena of nodes; every op reads its input
//! nodes and pushes one result node, so node ids are already a topological
//! order. [`Tape::backward`] walks the tape in reverse and *emits adjoint
//! computations as new tape ops*. Because the backward pass is built from
//! the same differentiable op set, a scalar assembled from first-order
//! gradients (a force loss) can be differentiated again by a second
//! `backward` call on the same tape.
//!
//! Tapes are single-threaded by construction; run one tape per sample and
//! reduce gradients explicitly.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// Handle to a node on a tape. Only meaningful with the tape that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    id: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    Scale(usize, f64),
    AddScalar(usize),
    Sin(usize),
    Cos(usize),
    Sqrt(usize),
    Sigmoid(usize),
    Sum(usize),
    RowSum(usize),
    /// `a [m,n]` with each row scaled by `c [m,1]`.
    ScaleRows(usize, usize),
    /// `a` scaled by a `[1,1]` node.
    MulScalar(usize, usize),
    GatherRows(usize, Rc<Vec<usize>>),
    ScatterAddRows(usize, Rc<Vec<usize>>),
    ConcatCols(Vec<usize>),
    SliceCols(usize, usize, usize),
}

impl Op {
    fn for_each_input(&self, mut f: impl FnMut(usize)) {
        match self {
            Op::Leaf => {}
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::MatMul(a, b)
            | Op::ScaleRows(a, b)
            | Op::MulScalar(a, b) => {
                f(*a);
                f(*b);
            }
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Sin(a)
            | Op::Cos(a)
            | Op::Sqrt(a)
            | Op::Sigmoid(a)
            | Op::Sum(a)
            | Op::RowSum(a)
            | Op::GatherRows(a, _)
            | Op::ScatterAddRows(a, _)
            | Op::SliceCols(a, _, _) => f(*a),
            Op::ConcatCols(parts) => parts.iter().for_each(|&p| f(p)),
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Append-only computation record. Cheap to create, dropped per sample.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Adjoints produced by [`Tape::backward`]: node id -> adjoint node.
pub struct Gradients {
    adjoint: Vec<Option<Var>>,
}

impl Gradients {
    /// Adjoint of `v`, if `v` influences the backward root.
    pub fn wrt(&self, v: Var) -> Option<Var> {
        self.adjoint.get(v.id).copied().flatten()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op, value: Tensor) -> Var {
        let mut needs_grad = false;
        {
            let nodes = self.nodes.borrow();
            op.for_each_input(|i| needs_grad |= nodes[i].needs_grad);
        }
        self.push_with(op, value, needs_grad)
    }

    fn push_with(&self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var {
            id: nodes.len() - 1,
        }
    }

    /// A leaf the tape will not differentiate through.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push_with(Op::Leaf, value, false)
    }

    /// A differentiable leaf (parameter or input coordinates).
    pub fn variable(&self, value: Tensor) -> Var {
        self.push_with(Op::Leaf, value, true)
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.id].needs_grad
    }

    /// Run `f` against the value of `v` without cloning the buffer.
    pub fn with_value<R>(&self, v: Var, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.nodes.borrow()[v.id].value)
    }

    /// Clone out the value of `v`.
    pub fn to_tensor(&self, v: Var) -> Tensor {
        self.nodes.borrow()[v.id].value.clone()
    }

    pub fn item(&self, v: Var) -> f64 {
        self.with_value(v, |t| t.item())
    }

    pub fn shape_of(&self, v: Var) -> Vec<usize> {
        self.with_value(v, |t| t.shape().to_vec())
    }

    // ── recorded ops ─────────────────────────────────────────────────

    fn binary(
        &self,
        a: Var,
        b: Var,
        op: impl Fn(usize, usize) -> Op,
        eval: impl Fn(&Tensor, &Tensor) -> Result<Tensor>,
    ) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            eval(&nodes[a.id].value, &nodes[b.id].value)?
        };
        Ok(self.push(op(a.id, b.id), value))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add, tensor::add)
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub, tensor::sub)
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul, tensor::mul)
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Div, tensor::div)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::MatMul, tensor::matmul)
    }

    pub fn scale_rows(&self, a: Var, c: Var) -> Result<Var> {
        self.binary(a, c, Op::ScaleRows, tensor::scale_rows)
    }

    /// Multiply `a` elementwise by a `[1,1]` scalar node.
    pub fn mul_scalar(&self, a: Var, s: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let sv = &nodes[s.id].value;
            if !sv.is_scalar() {
                return Err(Error::Shape {
                    op: "mul_scalar",
                    detail: format!("scalar operand has shape {:?}", sv.shape()),
                });
            }
            let k = sv.item();
            tensor::map(&nodes[a.id].value, |x| x * k)
        };
        Ok(self.push(Op::MulScalar(a.id, s.id), value))
    }

    fn unary(&self, a: Var, op: Op, eval: impl Fn(&Tensor) -> Tensor) -> Var {
        let value = eval(&self.nodes.borrow()[a.id].value);
        self.push(op, value)
    }

    pub fn transpose(&self, a: Var) -> Var {
        self.unary(a, Op::Transpose(a.id), tensor::transpose)
    }

    pub fn scale(&self, a: Var, k: f64) -> Var {
        self.unary(a, Op::Scale(a.id, k), |t| tensor::map(t, |x| x * k))
    }

    pub fn neg(&self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&self, a: Var, k: f64) -> Var {
        self.unary(a, Op::AddScalar(a.id), |t| tensor::map(t, |x| x + k))
    }

    pub fn sin(&self, a: Var) -> Var {
        self.unary(a, Op::Sin(a.id), |t| tensor::map(t, f64::sin))
    }

    pub fn cos(&self, a: Var) -> Var {
        self.unary(a, Op::Cos(a.id), |t| tensor::map(t, f64::cos))
    }

    /// Square root. Inputs must stay strictly positive wherever gradients
    /// flow; callers guard (distances are > 0, norms carry an epsilon).
    pub fn sqrt(&self, a: Var) -> Result<Var> {
        {
            let nodes = self.nodes.borrow();
            if nodes[a.id].value.iter().any(|&x| x < 0.0) {
                return Err(Error::Shape {
                    op: "sqrt",
                    detail: "negative input".into(),
                });
            }
        }
        Ok(self.unary(a, Op::Sqrt(a.id), |t| tensor::map(t, f64::sqrt)))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a.id), |t| {
            tensor::map(t, |x| 1.0 / (1.0 + (-x).exp()))
        })
    }

    /// The smooth gated-linear activation `x * sigmoid(x)`.
    pub fn silu(&self, a: Var) -> Result<Var> {
        let s = self.sigmoid(a);
        self.mul(a, s)
    }

    pub fn sum(&self, a: Var) -> Var {
        self.unary(a, Op::Sum(a.id), tensor::sum)
    }

    pub fn row_sum(&self, a: Var) -> Var {
        self.unary(a, Op::RowSum(a.id), tensor::row_sum)
    }

    pub fn mean(&self, a: Var) -> Var {
        let n = self.with_value(a, |t| t.numel());
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Per-row Euclidean norm of `[m,n]`, shifted by `eps` inside the root:
    /// `sqrt(sum_j a_ij^2 + eps)`. Use `eps > 0` when rows may vanish.
    pub fn row_norm(&self, a: Var, eps: f64) -> Result<Var> {
        let sq = self.mul(a, a)?;
        let ssq = self.row_sum(sq);
        self.sqrt(self.add_scalar(ssq, eps))
    }

    pub fn gather_rows(&self, a: Var, idx: Rc<Vec<usize>>) -> Result<Var> {
        let value = tensor::gather_rows(&self.nodes.borrow()[a.id].value, &idx)?;
        Ok(self.push(Op::GatherRows(a.id, idx), value))
    }

    pub fn scatter_add_rows(&self, a: Var, idx: Rc<Vec<usize>>, out_rows: usize) -> Result<Var> {
        let value = tensor::scatter_add_rows(&self.nodes.borrow()[a.id].value, &idx, out_rows)?;
        Ok(self.push(Op::ScatterAddRows(a.id, idx), value))
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let tensors: Vec<&Tensor> = parts.iter().map(|v| &nodes[v.id].value).collect();
            tensor::concat_cols(&tensors)?
        };
        Ok(self.push(Op::ConcatCols(parts.iter().map(|v| v.id).collect()), value))
    }

    pub fn slice_cols(&self, a: Var, start: usize, end: usize) -> Result<Var> {
        let value = tensor::slice_cols(&self.nodes.borrow()[a.id].value, start, end)?;
        Ok(self.push(Op::SliceCols(a.id, start, end), value))
    }

    /// Add a `[1,n]` row vector to every row of `a [m,n]`.
    pub fn add_row_broadcast(&self, a: Var, row: Var) -> Result<Var> {
        let m = self.with_value(a, |t| t.rows());
        let ones = self.constant(Tensor::ones(m, 1));
        let tiled = self.matmul(ones, row)?;
        self.add(a, tiled)
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse pass from a scalar `root`, producing adjoints for every
    /// differentiable node that influences it.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        self.backward_wrt(root, None)
    }

    /// Reverse pass restricted to paths that reach one of `targets`;
    /// other adjoints are skipped. Adjoints are emitted as tape nodes, so
    /// the result can feed further computation (and a second backward).
    pub fn backward_wrt(&self, root: Var, targets: Option<&[Var]>) -> Result<Gradients> {
        {
            let nodes = self.nodes.borrow();
            let value = &nodes[root.id].value;
            if !value.is_scalar() {
                return Err(Error::Shape {
                    op: "backward",
                    detail: format!("root must be scalar, got {:?}", value.shape()),
                });
            }
        }

        let n = root.id + 1;

        // Nodes from which root is reachable, pruned to differentiable ones.
        let mut active = vec![false; n];
        active[root.id] = self.nodes.borrow()[root.id].needs_grad;
        for id in (0..n).rev() {
            if active[id] {
                let nodes = self.nodes.borrow();
                nodes[id]
                    .op
                    .for_each_input(|i| active[i] = nodes[i].needs_grad);
            }
        }

        // Optionally restrict to nodes that depend on a target.
        if let Some(targets) = targets {
            let mut dep = vec![false; n];
            for t in targets {
                if t.id < n {
                    dep[t.id] = true;
                }
            }
            let nodes = self.nodes.borrow();
            for id in 0..n {
                if !dep[id] {
                    let mut d = false;
                    nodes[id].op.for_each_input(|i| d |= dep[i]);
                    dep[id] = d;
                }
            }
            drop(nodes);
            for id in 0..n {
                active[id] &= dep[id];
            }
        }

        let mut adjoint: Vec<Option<Var>> = vec![None; n];
        if !active[root.id] {
            return Ok(Gradients { adjoint });
        }
        adjoint[root.id] = Some(self.constant(Tensor::scalar(1.0)));

        for id in (0..n).rev() {
            if !active[id] {
                continue;
            }
            let g = match adjoint[id] {
                Some(g) => g,
                None => continue,
            };
            let op = self.nodes.borrow()[id].op.clone();
            let out = Var { id };
            self.accumulate(&op, out, g, &active, &mut adjoint)?;
        }

        Ok(Gradients { adjoint })
    }

    /// Push `contribution` into `adjoint[target]`, summing with anything
    /// already there.
    fn deposit(&self, adjoint: &mut [Option<Var>], target: usize, contribution: Var) -> Result<()> {
        adjoint[target] = Some(match adjoint[target] {
            None => contribution,
            Some(prev) => self.add(prev, contribution)?,
        });
        Ok(())
    }

    fn accumulate(
        &self,
        op: &Op,
        out: Var,
        g: Var,
        active: &[bool],
        adjoint: &mut Vec<Option<Var>>,
    ) -> Result<()> {
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if active[a] {
                    self.deposit(adjoint, a, g)?;
                }
                if active[b] {
                    self.deposit(adjoint, b, g)?;
                }
            }
            Op::Sub(a, b) => {
                if active[a] {
                    self.deposit(adjoint, a, g)?;
                }
                if active[b] {
                    let c = self.neg(g);
                    self.deposit(adjoint, b, c)?;
                }
            }
            Op::Mul(a, b) => {
                if active[a] {
                    let c = self.mul(g, Var { id: b })?;
                    self.deposit(adjoint, a, c)?;
                }
                if active[b] {
                    let c = self.mul(g, Var { id: a })?;
                    self.deposit(adjoint, b, c)?;
                }
            }
            Op::Div(a, b) => {
                let bv = Var { id: b };
                if active[a] {
                    let c = self.div(g, bv)?;
                    self.deposit(adjoint, a, c)?;
                }
                if active[b] {
                    // d(a/b)/db = -out/b
                    let go = self.mul(g, out)?;
                    let c = self.neg(self.div(go, bv)?);
                    self.deposit(adjoint, b, c)?;
                }
            }
            Op::MatMul(a, b) => {
                if active[a] {
                    let bt = self.transpose(Var { id: b });
                    let c = self.matmul(g, bt)?;
                    self.deposit(adjoint, a, c)?;
                }
                if active[b] {
                    let at = self.transpose(Var { id: a });
                    let c = self.matmul(at, g)?;
                    self.deposit(adjoint, b, c)?;
                }
            }
            Op::Transpose(a) => {
                if active[a] {
                    let c = self.transpose(g);
                    self.deposit(adjoint, a, c)?;
                }
            }
            Op::Scale(a, k) => {
                if active[a] {
                    let c = self.scale(g, k);
                    self.deposit(adjoint, a, c)?;
                }
            }
            Op::AddScalar(a) => {
                if active[a] {
                    self.deposit(adjoint, a, g)?;
                }
            }
            Op::Sin(a) => {
                if active[a] {
                    let c = self.mul(g, self.cos(Var { id: a }))?;
                    self.deposit(adjoint, a, c)?;
                }
            }
            Op::Cos(a) => {
                if active[a] {
                    let c = self.neg(self.mul(g, self.sin(Var { id: a }))?);
                    self.deposit(adjoint, a, c)?;
                }
            }
            Op::Sqrt(a) => {
                if active[a] {
                    // d sqrt(x) = g / (2 sqrt(x)); out > 0 guarded by callers
                    let c = self.div(self.scale(g, 0.5), out)?;
                    self.deposit(adjoint, a, c)?;
                }
            }
            Op::Sigmoid(a) => {
                if active[a] {
                    let one_minus = self.add_scalar(self.neg(out), 1.0);
                    let d = self.mul(out, one_minus)?;
                    let c = self.mul(g, d)?;
                    self.deposit(adjoint, a, c)?;
                }
            }
            Op::Sum(a) => {
                if active[a] {
                    let shape = self.shape_of(Var { id: a });
                    let ones = self.constant(Tensor::ones(shape[0], shape[1]));
                    let c = self.mul_scalar(ones, g)?;
                    self.deposit(adjoint, a, c)?;
                }
            }
            Op::RowSum(a) => {
                if active[a] {
                    let shape = self.shape_of(Var { id: a });
                    let ones = self.constant(Tensor::ones(shape[0], shape[1]));
                    let c = self.scale_rows(ones, g)?;
                    self.deposit(adjoint, a, c)?;
                }
            }
            Op::ScaleRows(a, cvec) => {
                if active[a] {
                    let c = self.scale_rows(g, Var { id: cvec })?;
                    self.deposit(adjoint, a, c)?;
                }
                if active[cvec] {
                    let prod = self.mul(g, Var { id: a })?;
                    let c = self.row_sum(prod);
                    self.deposit(adjoint, cvec, c)?;
                }
            }
            Op::MulScalar(a, s) => {
                if active[a] {
                    let c = self.mul_scalar(g, Var { id: s })?;
                    self.deposit(adjoint, a, c)?;
                }
                if active[s] {
                    let prod = self.mul(g, Var { id: a })?;
                    let c = self.sum(prod);
                    self.deposit(adjoint, s, c)?;
                }
            }
            Op::GatherRows(a, ref idx) => {
                if active[a] {
                    let rows = self.with_value(Var { id: a }, |t| t.rows());
                    let c = self.scatter_add_rows(g, idx.clone(), rows)?;
                    self.deposit(adjoint, a, c)?;
                }
            }
            Op::ScatterAddRows(a, ref idx) => {
                if active[a] {
                    let c = self.gather_rows(g, idx.clone())?;
                    self.deposit(adjoint, a, c)?;
                }
            }
            Op::ConcatCols(ref parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.with_value(Var { id: p }, |t| t.cols());
                    if active[p] {
                        let c = self.slice_cols(g, offset, offset + w)?;
                        self.deposit(adjoint, p, c)?;
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start, end) => {
                if active[a] {
                    let (m, n) = self.with_value(Var { id: a }, |t| (t.rows(), t.cols()));
                    let mut parts = Vec::with_capacity(3);
                    if start > 0 {
                        parts.push(self.constant(Tensor::zeros(m, start)));
                    }
                    parts.push(g);
                    if end < n {
                        parts.push(self.constant(Tensor::zeros(m, n - end)));
                    }
                    let c = if parts.len() == 1 {
                        g
                    } else {
                        self.concat_cols(&parts)?
                    };
                    self.deposit(adjoint, a, c)?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn square_gradient() {
        // d(x*x)/dx at 3 = 6
        let tape = Tape::new();
        let x = tape.variable(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(tape.item(grads.wrt(x).unwrap()), 6.0);
    }

    #[test]
    fn matmul_sum_gradient_is_column_sums() {
        // root = sum(W x): droot/dW[i][j] = x[j] summed over output rows it feeds;
        // for W [2,2], x [2,1]: dW = [[x0, x1], [x0, x1]].
        let tape = Tape::new();
        let w = tape.variable(Tensor::matrix(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let x = tape.constant(Tensor::matrix(2, 1, &[5.0, 7.0]));
        let y = tape.sum(tape.matmul(w, x).unwrap());
        let grads = tape.backward(y).unwrap();
        let gw = tape.to_tensor(grads.wrt(w).unwrap());
        assert_eq!(gw.data(), &[5.0, 7.0, 5.0, 7.0]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let tape = Tape::new();
        let x = tape.variable(Tensor::zeros(2, 2));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn spatial_inner_product_three_four_five() {
        // Per-channel <v, v> with v = (0, 3, 4) gives 25.
        let tape = Tape::new();
        let vx = tape.variable(Tensor::scalar(0.0));
        let vy = tape.variable(Tensor::scalar(3.0));
        let vz = tape.variable(Tensor::scalar(4.0));
        let mut dot = tape.mul(vx, vx).unwrap();
        dot = tape.add(dot, tape.mul(vy, vy).unwrap()).unwrap();
        dot = tape.add(dot, tape.mul(vz, vz).unwrap()).unwrap();
        assert_eq!(tape.item(dot), 25.0);
    }

    /// Builds a fixed composite of >5 distinct ops over three leaf tensors.
    fn composite(tape: &Tape, a: Var, b: Var, c: Var) -> Var {
        let p = tape.matmul(a, b).unwrap(); // [3,2]
        let q = tape.silu(p).unwrap();
        let r = tape.mul(q, tape.sin(p)).unwrap();
        let s = tape.scale_rows(r, c).unwrap();
        let t = tape.add_scalar(tape.cos(s), 0.5);
        let u = tape.row_norm(t, 1e-3).unwrap();
        tape.sum(u)
    }

    fn central_difference(values: &mut [Tensor], which: usize, entry: usize, h: f64) -> f64 {
        let run = |vals: &[Tensor]| {
            let tape = Tape::new();
            let a = tape.variable(vals[0].clone());
            let b = tape.variable(vals[1].clone());
            let c = tape.variable(vals[2].clone());
            tape.item(composite(&tape, a, b, c))
        };
        let orig = values[which].data()[entry];
        values[which].data_mut()[entry] = orig + h;
        let up = run(values);
        values[which].data_mut()[entry] = orig - h;
        let down = run(values);
        values[which].data_mut()[entry] = orig;
        (up - down) / (2.0 * h)
    }

    #[test]
    fn adjoints_match_finite_differences() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..5 {
            let mut values = vec![
                Tensor::new(vec![3, 4], (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect()),
                Tensor::new(vec![4, 2], (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect()),
                Tensor::new(vec![3, 1], (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect()),
            ];

            let tape = Tape::new();
            let a = tape.variable(values[0].clone());
            let b = tape.variable(values[1].clone());
            let c = tape.variable(values[2].clone());
            let root = composite(&tape, a, b, c);
            let grads = tape.backward(root).unwrap();
            let gs = [
                tape.to_tensor(grads.wrt(a).unwrap()),
                tape.to_tensor(grads.wrt(b).unwrap()),
                tape.to_tensor(grads.wrt(c).unwrap()),
            ];

            for which in 0..3 {
                for entry in 0..values[which].numel() {
                    let fd = central_difference(&mut values, which, entry, 1e-5);
                    let ad = gs[which].data()[entry];
                    let denom = fd.abs().max(ad.abs()).max(1e-3);
                    assert!(
                        (fd - ad).abs() / denom < 1e-6,
                        "input {which} entry {entry}: fd={fd} ad={ad}"
                    );
                }
            }
        }
    }

    #[test]
    fn backward_is_linear() {
        // grad(a*f + b*g) = a*grad f + b*grad g
        let mut rng = StdRng::seed_from_u64(11);
        let x0 = Tensor::new(vec![2, 2], (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect());
        let (ca, cb) = (1.7, -0.4);

        let grad_of = |mode: u8| -> Tensor {
            let tape = Tape::new();
            let x = tape.variable(x0.clone());
            let f = tape.sum(tape.silu(x).unwrap());
            let g = tape.sum(tape.mul(x, tape.cos(x)).unwrap());
            let root = match mode {
                0 => f,
                1 => g,
                _ => tape.add(tape.scale(f, ca), tape.scale(g, cb)).unwrap(),
            };
            let grads = tape.backward(root).unwrap();
            tape.to_tensor(grads.wrt(x).unwrap())
        };

        let gf = grad_of(0);
        let gg = grad_of(1);
        let gc = grad_of(2);
        for i in 0..4 {
            let expect = ca * gf.data()[i] + cb * gg.data()[i];
            assert!((gc.data()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_rerun_is_bitwise_deterministic() {
        let mut rng = StdRng::seed_from_u64(3);
        let vals: Vec<Tensor> = (0..3)
            .map(|i| {
                let shape = [vec![3, 4], vec![4, 2], vec![3, 1]][i].clone();
                let n: usize = shape.iter().product();
                Tensor::new(shape, (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect())
            })
            .collect();
        let run = || {
            let tape = Tape::new();
            let a = tape.variable(vals[0].clone());
            let b = tape.variable(vals[1].clone());
            let c = tape.variable(vals[2].clone());
            tape.item(composite(&tape, a, b, c))
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }

    #[test]
    fn second_backward_matches_analytic() {
        // y = x^3: dy/dx = 3x^2, d2y/dx2 = 6x. The second derivative is
        // obtained by calling backward on the first adjoint.
        let tape = Tape::new();
        let x = tape.variable(Tensor::scalar(1.5));
        let y = tape.mul(tape.mul(x, x).unwrap(), x).unwrap();
        let g1 = tape.backward(y).unwrap();
        let dydx = g1.wrt(x).unwrap();
        assert!((tape.item(dydx) - 3.0 * 1.5f64.powi(2)).abs() < 1e-12);
        let g2 = tape.backward(dydx).unwrap();
        let d2 = g2.wrt(x).unwrap();
        assert!((tape.item(d2) - 6.0 * 1.5).abs() < 1e-12);
    }

    #[test]
    fn backward_wrt_skips_unrelated_targets() {
        let tape = Tape::new();
        let x = tape.variable(Tensor::scalar(2.0));
        let y = tape.variable(Tensor::scalar(5.0));
        let root = tape.sum(tape.mul(x, x).unwrap());
        let grads = tape.backward_wrt(root, Some(&[y])).unwrap();
        assert!(grads.wrt(y).is_none());
        assert!(grads.wrt(x).is_none());
        let grads = tape.backward_wrt(root, Some(&[x])).unwrap();
        assert_eq!(tape.item(grads.wrt(x).unwrap()), 4.0);
    }
}
