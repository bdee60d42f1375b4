//! Reverse-mode automatic differentiation over dense 2-D `f64` tensors.
//!
//! A [`Tape`] records primitive operations as they execute (define-by-run);
//! [`backward`] replays the record once in reverse, accumulating adjoints.
//! Tensors that are not attached to a tape behave as constants: operations
//! between constants stay off-tape, so the same network code serves both
//! training (on-tape) and deterministic evaluation (off-tape).
//!
//! Tapes are rebuilt per training step and confined to one execution
//! context; independent tapes may live on different threads.

use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;

use crate::math;
use crate::{Error, Result};

/// Operation record; fields are node ids of the operands.
#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// Broadcast add of a 1×C row (second id) onto an N×C tensor.
    AddRow(usize, usize),
    /// Broadcast multiply of a 1×C row (second id) onto an N×C tensor.
    MulRow(usize, usize),
    MatMul(usize, usize),
    Exp(usize),
    Log(usize),
    Tanh(usize),
    Relu(usize),
    Softplus(usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize, f64),
    SumAll(usize),
    SumRows(usize),
    SumCols(usize),
    MeanAll(usize),
    HCat(usize, usize),
    SliceCols(usize, usize),
    Clamp(usize, f64, f64),
    StopGradient(usize),
}

struct Node {
    rows: usize,
    cols: usize,
    values: Rc<[f64]>,
    needs_grad: bool,
    op: Op,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
}

type TapeRef = Rc<RefCell<TapeInner>>;

/// Recorder for one define-by-run computation.
#[derive(Clone, Default)]
pub struct Tape {
    inner: TapeRef,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a differentiable parameter leaf.
    pub fn leaf(&self, rows: usize, cols: usize, values: &[f64]) -> Result<Tensor> {
        if values.len() != rows * cols {
            return Err(Error::LengthMismatch {
                rows,
                cols,
                len: values.len(),
            });
        }
        let rc: Rc<[f64]> = values.into();
        let id = self.push(Node {
            rows,
            cols,
            values: rc.clone(),
            needs_grad: true,
            op: Op::Leaf,
        });
        Ok(Tensor {
            rows,
            cols,
            values: rc,
            node: Some(NodeHandle {
                tape: self.inner.clone(),
                id,
            }),
        })
    }

    fn push(&self, node: Node) -> usize {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(node);
        inner.nodes.len() - 1
    }

    /// Number of recorded nodes (diagnostics).
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone)]
struct NodeHandle {
    tape: TapeRef,
    id: usize,
}

/// Dense row-major 2-D array of `f64`, optionally attached to a tape.
#[derive(Clone)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    values: Rc<[f64]>,
    node: Option<NodeHandle>,
}

impl core::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Tensor")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .field("on_tape", &self.node.is_some())
            .field("values", &&self.values[..self.values.len().min(8)])
            .finish()
    }
}

impl Tensor {
    /// Off-tape constant from a row-major buffer.
    pub fn constant(rows: usize, cols: usize, values: Vec<f64>) -> Result<Tensor> {
        if values.len() != rows * cols {
            return Err(Error::LengthMismatch {
                rows,
                cols,
                len: values.len(),
            });
        }
        Ok(Tensor {
            rows,
            cols,
            values: values.into(),
            node: None,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Tensor {
        Tensor::full(rows, cols, 0.0)
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Tensor {
        Tensor {
            rows,
            cols,
            values: vec![value; rows * cols].into(),
            node: None,
        }
    }

    /// 1×1 constant.
    pub fn scalar(value: f64) -> Tensor {
        Tensor::full(1, 1, value)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_on_tape(&self) -> bool {
        self.node.is_some()
    }

    /// Value of a 1×1 tensor.
    pub fn item(&self) -> Result<f64> {
        if self.shape() != (1, 1) {
            return Err(Error::NotScalar {
                op: "item",
                shape: self.shape(),
            });
        }
        Ok(self.values[0])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    // ---- primitive operations ----------------------------------------

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.broadcastable_binary("add", other, true)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op: "sub",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let vals = zip_map(&self.values, &other.values, |a, b| a - b);
        self.record_binary(other, "sub", self.shape(), vals, |a, b| Op::Sub(a, b))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.broadcastable_binary("mul", other, false)
    }

    fn broadcastable_binary(
        &self,
        op: &'static str,
        other: &Tensor,
        is_add: bool,
    ) -> Result<Tensor> {
        let apply = |a: f64, b: f64| if is_add { a + b } else { a * b };
        if self.shape() == other.shape() {
            let vals = zip_map(&self.values, &other.values, apply);
            let make = if is_add {
                Op::Add as fn(usize, usize) -> Op
            } else {
                Op::Mul
            };
            return self.record_binary(other, op, self.shape(), vals, make);
        }
        // 1×C row broadcast over N×C, in either argument order.
        let make = if is_add {
            Op::AddRow as fn(usize, usize) -> Op
        } else {
            Op::MulRow
        };
        if other.rows == 1 && self.cols == other.cols {
            let vals = broadcast_row(&self.values, self.rows, self.cols, &other.values, apply);
            return self.record_binary(other, op, self.shape(), vals, make);
        }
        if self.rows == 1 && other.cols == self.cols {
            let vals = broadcast_row(&other.values, other.rows, other.cols, &self.values, apply);
            return other.record_binary(self, op, other.shape(), vals, make);
        }
        Err(Error::ShapeMismatch {
            op,
            left: self.shape(),
            right: other.shape(),
        })
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let vals = matmul_nn(
            &self.values,
            self.rows,
            self.cols,
            &other.values,
            other.cols,
        );
        self.record_binary(other, "matmul", (self.rows, other.cols), vals, |a, b| {
            Op::MatMul(a, b)
        })
    }

    pub fn exp(&self) -> Tensor {
        let vals = self.map(math::exp);
        self.record_unary(self.shape(), vals, Op::Exp(0))
    }

    /// Natural logarithm; non-positive inputs yield NaN/-inf as usual.
    pub fn log(&self) -> Tensor {
        let vals = self.map(math::ln);
        self.record_unary(self.shape(), vals, Op::Log(0))
    }

    pub fn tanh(&self) -> Tensor {
        let vals = self.map(math::tanh);
        self.record_unary(self.shape(), vals, Op::Tanh(0))
    }

    /// Rectified linear unit; the adjoint at exactly 0 is 0.
    pub fn relu(&self) -> Tensor {
        let vals = self.map(|v| if v > 0.0 { v } else { 0.0 });
        self.record_unary(self.shape(), vals, Op::Relu(0))
    }

    pub fn softplus(&self) -> Tensor {
        let vals = self.map(math::softplus);
        self.record_unary(self.shape(), vals, Op::Softplus(0))
    }

    pub fn neg(&self) -> Tensor {
        let vals = self.map(|v| -v);
        self.record_unary(self.shape(), vals, Op::Neg(0))
    }

    pub fn scale(&self, k: f64) -> Tensor {
        let vals = self.map(|v| k * v);
        self.record_unary(self.shape(), vals, Op::Scale(0, k))
    }

    pub fn add_scalar(&self, k: f64) -> Tensor {
        let vals = self.map(|v| v + k);
        self.record_unary(self.shape(), vals, Op::AddScalar(0, k))
    }

    /// Clamp values into [lo, hi]; the adjoint passes on the closed interval.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        let vals = self.map(|v| v.max(lo).min(hi));
        self.record_unary(self.shape(), vals, Op::Clamp(0, lo, hi))
    }

    /// Sum of all entries, as 1×1.
    pub fn sum_all(&self) -> Tensor {
        let s: f64 = self.values.iter().sum();
        self.record_unary((1, 1), vec![s], Op::SumAll(0))
    }

    /// Per-column sums, as 1×C.
    pub fn sum_cols(&self) -> Tensor {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            let row = &self.values[r * self.cols..(r + 1) * self.cols];
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        self.record_unary((1, self.cols), out, Op::SumCols(0))
    }

    /// Per-row sums, as N×1.
    pub fn sum_rows(&self) -> Tensor {
        let mut out = vec![0.0; self.rows];
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.values[r * self.cols..(r + 1) * self.cols].iter().sum();
        }
        self.record_unary((self.rows, 1), out, Op::SumRows(0))
    }

    /// Mean of all entries, as 1×1.
    pub fn mean_all(&self) -> Tensor {
        let n = (self.rows * self.cols).max(1) as f64;
        let s: f64 = self.values.iter().sum();
        self.record_unary((1, 1), vec![s / n], Op::MeanAll(0))
    }

    /// Concatenate column blocks: [self | other]; row counts must agree.
    pub fn hcat(&self, other: &Tensor) -> Result<Tensor> {
        if self.rows != other.rows {
            return Err(Error::ShapeMismatch {
                op: "hcat",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let cols = self.cols + other.cols;
        let mut vals = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            vals.extend_from_slice(&self.values[r * self.cols..(r + 1) * self.cols]);
            vals.extend_from_slice(&other.values[r * other.cols..(r + 1) * other.cols]);
        }
        self.record_binary(other, "hcat", (self.rows, cols), vals, |a, b| Op::HCat(a, b))
    }

    /// Columns [start, end) as a new tensor.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Tensor> {
        if start > end || end > self.cols {
            return Err(Error::SliceOutOfBounds {
                cols: self.cols,
                start,
                end,
            });
        }
        let w = end - start;
        let mut vals = Vec::with_capacity(self.rows * w);
        for r in 0..self.rows {
            vals.extend_from_slice(&self.values[r * self.cols + start..r * self.cols + end]);
        }
        Ok(self.record_unary((self.rows, w), vals, Op::SliceCols(0, start)))
    }

    /// Identity in the forward pass; blocks all adjoint flow in backward.
    pub fn stop_gradient(&self) -> Tensor {
        match &self.node {
            None => self.clone(),
            Some(h) => {
                let tape = Tape {
                    inner: h.tape.clone(),
                };
                let id = tape.push(Node {
                    rows: self.rows,
                    cols: self.cols,
                    values: self.values.clone(),
                    needs_grad: false,
                    op: Op::StopGradient(h.id),
                });
                Tensor {
                    rows: self.rows,
                    cols: self.cols,
                    values: self.values.clone(),
                    node: Some(NodeHandle {
                        tape: h.tape.clone(),
                        id,
                    }),
                }
            }
        }
    }

    // ---- recording helpers --------------------------------------------

    fn map(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.values.iter().map(|&v| f(v)).collect()
    }

    fn record_unary(&self, shape: (usize, usize), vals: Vec<f64>, op: Op) -> Tensor {
        let rc: Rc<[f64]> = vals.into();
        match &self.node {
            None => Tensor {
                rows: shape.0,
                cols: shape.1,
                values: rc,
                node: None,
            },
            Some(h) => {
                let tape = Tape {
                    inner: h.tape.clone(),
                };
                let needs_grad = tape.inner.borrow().nodes[h.id].needs_grad;
                let op = rebind_unary(op, h.id);
                let id = tape.push(Node {
                    rows: shape.0,
                    cols: shape.1,
                    values: rc.clone(),
                    needs_grad,
                    op,
                });
                Tensor {
                    rows: shape.0,
                    cols: shape.1,
                    values: rc,
                    node: Some(NodeHandle {
                        tape: h.tape.clone(),
                        id,
                    }),
                }
            }
        }
    }

    fn record_binary(
        &self,
        other: &Tensor,
        opname: &'static str,
        shape: (usize, usize),
        vals: Vec<f64>,
        make: fn(usize, usize) -> Op,
    ) -> Result<Tensor> {
        let tape = match (&self.node, &other.node) {
            (Some(a), Some(b)) => {
                if !Rc::ptr_eq(&a.tape, &b.tape) {
                    return Err(Error::TapeMismatch { op: opname });
                }
                Some(a.tape.clone())
            }
            (Some(a), None) => Some(a.tape.clone()),
            (None, Some(b)) => Some(b.tape.clone()),
            (None, None) => None,
        };
        let rc: Rc<[f64]> = vals.into();
        let node = match tape {
            None => None,
            Some(tape_ref) => {
                let tape = Tape { inner: tape_ref };
                let a = intern(&tape, self);
                let b = intern(&tape, other);
                let needs_grad = {
                    let inner = tape.inner.borrow();
                    inner.nodes[a].needs_grad || inner.nodes[b].needs_grad
                };
                let id = tape.push(Node {
                    rows: shape.0,
                    cols: shape.1,
                    values: rc.clone(),
                    needs_grad,
                    op: make(a, b),
                });
                Some(NodeHandle {
                    tape: tape.inner,
                    id,
                })
            }
        };
        Ok(Tensor {
            rows: shape.0,
            cols: shape.1,
            values: rc,
            node,
        })
    }
}

/// Give a constant operand a node id on the tape (ops always reference ids).
fn intern(tape: &Tape, t: &Tensor) -> usize {
    match &t.node {
        Some(h) => h.id,
        None => tape.push(Node {
            rows: t.rows,
            cols: t.cols,
            values: t.values.clone(),
            needs_grad: false,
            op: Op::Constant,
        }),
    }
}

fn rebind_unary(op: Op, id: usize) -> Op {
    match op {
        Op::Exp(_) => Op::Exp(id),
        Op::Log(_) => Op::Log(id),
        Op::Tanh(_) => Op::Tanh(id),
        Op::Relu(_) => Op::Relu(id),
        Op::Softplus(_) => Op::Softplus(id),
        Op::Neg(_) => Op::Neg(id),
        Op::Scale(_, k) => Op::Scale(id, k),
        Op::AddScalar(_, k) => Op::AddScalar(id, k),
        Op::SumAll(_) => Op::SumAll(id),
        Op::SumRows(_) => Op::SumRows(id),
        Op::SumCols(_) => Op::SumCols(id),
        Op::MeanAll(_) => Op::MeanAll(id),
        Op::SliceCols(_, s) => Op::SliceCols(id, s),
        Op::Clamp(_, lo, hi) => Op::Clamp(id, lo, hi),
        other => other,
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn broadcast_row(
    a: &[f64],
    rows: usize,
    cols: usize,
    row: &[f64],
    f: impl Fn(f64, f64) -> f64,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let arow = &a[r * cols..(r + 1) * cols];
        out.extend(arow.iter().zip(row).map(|(&x, &y)| f(x, y)));
    }
    out
}

fn matmul_nn(a: &[f64], n: usize, k: usize, b: &[f64], m: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * m];
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * m..(i + 1) * m];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * m..(p + 1) * m];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// dA contribution of C = A·B: dC·Bᵀ, computed as row dot products.
fn matmul_grad_a(dc: &[f64], b: &[f64], n: usize, k: usize, m: usize, da: &mut [f64]) {
    for i in 0..n {
        let dcrow = &dc[i * m..(i + 1) * m];
        let darow = &mut da[i * k..(i + 1) * k];
        for (p, d) in darow.iter_mut().enumerate() {
            let brow = &b[p * m..(p + 1) * m];
            let mut s = 0.0;
            for (x, y) in dcrow.iter().zip(brow) {
                s += x * y;
            }
            *d += s;
        }
    }
}

/// dB contribution of C = A·B: Aᵀ·dC, computed as row axpys.
fn matmul_grad_b(a: &[f64], dc: &[f64], n: usize, k: usize, m: usize, db: &mut [f64]) {
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        let dcrow = &dc[i * m..(i + 1) * m];
        for (p, &av) in arow.iter().enumerate() {
            let dbrow = &mut db[p * m..(p + 1) * m];
            for (d, &g) in dbrow.iter_mut().zip(dcrow) {
                *d += av * g;
            }
        }
    }
}

/// Adjoints of a scalar loss with respect to tape nodes.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient w.r.t. `t`, as a dense row-major buffer.
    ///
    /// Constants and tensors the loss never touched get zeros, matching
    /// the convention that off-tape tensors carry zero gradient.
    pub fn wrt(&self, t: &Tensor) -> Vec<f64> {
        match &t.node {
            Some(h) => match self.grads.get(h.id) {
                Some(Some(g)) => g.clone(),
                _ => vec![0.0; t.rows * t.cols],
            },
            None => vec![0.0; t.rows * t.cols],
        }
    }

    /// Gradient as a constant tensor shaped like `t`.
    pub fn wrt_tensor(&self, t: &Tensor) -> Tensor {
        Tensor {
            rows: t.rows,
            cols: t.cols,
            values: self.wrt(t).into(),
            node: None,
        }
    }
}

/// Reverse sweep from a scalar loss; returns adjoints for every node.
///
/// A leaf consumed by several downstream ops receives the sum of all
/// branch adjoints. Nodes flagged as not requiring gradient (constants,
/// stop-gradient outputs) terminate adjoint flow.
pub fn backward(loss: &Tensor) -> Result<Gradients> {
    let handle = loss.node.as_ref().ok_or(Error::ConstantLoss)?;
    if loss.shape() != (1, 1) {
        return Err(Error::NotScalar {
            op: "backward",
            shape: loss.shape(),
        });
    }
    let inner = handle.tape.borrow();
    let nodes = &inner.nodes;
    let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
    grads[handle.id] = Some(vec![1.0]);

    for id in (0..=handle.id).rev() {
        let g = match grads[id].take() {
            Some(g) => g,
            None => continue,
        };
        let node = &nodes[id];
        let mut push = |target: usize, contribution: &mut dyn FnMut(&mut [f64])| {
            let t = &nodes[target];
            if !t.needs_grad {
                return;
            }
            let buf = grads[target].get_or_insert_with(|| vec![0.0; t.rows * t.cols]);
            contribution(buf);
        };
        match node.op {
            Op::Leaf | Op::Constant => {
                grads[id] = Some(g); // keep for extraction
                continue;
            }
            Op::StopGradient(_) => {}
            Op::Add(a, b) => {
                push(a, &mut |buf| axpy(buf, &g, 1.0));
                push(b, &mut |buf| axpy(buf, &g, 1.0));
            }
            Op::Sub(a, b) => {
                push(a, &mut |buf| axpy(buf, &g, 1.0));
                push(b, &mut |buf| axpy(buf, &g, -1.0));
            }
            Op::Mul(a, b) => {
                let av = nodes[a].values.clone();
                let bv = nodes[b].values.clone();
                push(a, &mut |buf| {
                    for ((o, &gv), &x) in buf.iter_mut().zip(&g).zip(bv.iter()) {
                        *o += gv * x;
                    }
                });
                push(b, &mut |buf| {
                    for ((o, &gv), &x) in buf.iter_mut().zip(&g).zip(av.iter()) {
                        *o += gv * x;
                    }
                });
            }
            Op::AddRow(a, row) => {
                let cols = node.cols.max(1);
                push(a, &mut |buf| axpy(buf, &g, 1.0));
                push(row, &mut |buf| {
                    for (i, &gv) in g.iter().enumerate() {
                        buf[i % cols] += gv;
                    }
                });
            }
            Op::MulRow(a, row) => {
                let cols = node.cols.max(1);
                let av = nodes[a].values.clone();
                let rv = nodes[row].values.clone();
                push(a, &mut |buf| {
                    for (i, (o, &gv)) in buf.iter_mut().zip(&g).enumerate() {
                        *o += gv * rv[i % cols];
                    }
                });
                push(row, &mut |buf| {
                    for (i, &gv) in g.iter().enumerate() {
                        buf[i % cols] += gv * av[i];
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (n, k) = (nodes[a].rows, nodes[a].cols);
                let m = nodes[b].cols;
                let av = nodes[a].values.clone();
                let bv = nodes[b].values.clone();
                push(a, &mut |buf| matmul_grad_a(&g, &bv, n, k, m, buf));
                push(b, &mut |buf| matmul_grad_b(&av, &g, n, k, m, buf));
            }
            Op::Exp(a) => {
                let out = node.values.clone();
                push(a, &mut |buf| {
                    for ((o, &gv), &y) in buf.iter_mut().zip(&g).zip(out.iter()) {
                        *o += gv * y;
                    }
                });
            }
            Op::Log(a) => {
                let xv = nodes[a].values.clone();
                push(a, &mut |buf| {
                    for ((o, &gv), &x) in buf.iter_mut().zip(&g).zip(xv.iter()) {
                        *o += gv / x;
                    }
                });
            }
            Op::Tanh(a) => {
                let out = node.values.clone();
                push(a, &mut |buf| {
                    for ((o, &gv), &t) in buf.iter_mut().zip(&g).zip(out.iter()) {
                        *o += gv * (1.0 - t * t);
                    }
                });
            }
            Op::Relu(a) => {
                let xv = nodes[a].values.clone();
                push(a, &mut |buf| {
                    for ((o, &gv), &x) in buf.iter_mut().zip(&g).zip(xv.iter()) {
                        if x > 0.0 {
                            *o += gv;
                        }
                    }
                });
            }
            Op::Softplus(a) => {
                let xv = nodes[a].values.clone();
                push(a, &mut |buf| {
                    for ((o, &gv), &x) in buf.iter_mut().zip(&g).zip(xv.iter()) {
                        *o += gv * math::sigmoid(x);
                    }
                });
            }
            Op::Neg(a) => push(a, &mut |buf| axpy(buf, &g, -1.0)),
            Op::Scale(a, k) => push(a, &mut |buf| axpy(buf, &g, k)),
            Op::AddScalar(a, _) => push(a, &mut |buf| axpy(buf, &g, 1.0)),
            Op::SumAll(a) => {
                let gv = g[0];
                push(a, &mut |buf| {
                    for o in buf.iter_mut() {
                        *o += gv;
                    }
                });
            }
            Op::SumRows(a) => {
                let cols = nodes[a].cols;
                push(a, &mut |buf| {
                    for (r, &gv) in g.iter().enumerate() {
                        for o in &mut buf[r * cols..(r + 1) * cols] {
                            *o += gv;
                        }
                    }
                });
            }
            Op::SumCols(a) => {
                let cols = nodes[a].cols.max(1);
                push(a, &mut |buf| {
                    for (i, o) in buf.iter_mut().enumerate() {
                        *o += g[i % cols];
                    }
                });
            }
            Op::MeanAll(a) => {
                let len = (nodes[a].rows * nodes[a].cols).max(1) as f64;
                let gv = g[0] / len;
                push(a, &mut |buf| {
                    for o in buf.iter_mut() {
                        *o += gv;
                    }
                });
            }
            Op::HCat(a, b) => {
                let (ca, cb) = (nodes[a].cols, nodes[b].cols);
                let cols = node.cols;
                let rows = node.rows;
                push(a, &mut |buf| {
                    for r in 0..rows {
                        let grow = &g[r * cols..r * cols + ca];
                        axpy(&mut buf[r * ca..(r + 1) * ca], grow, 1.0);
                    }
                });
                push(b, &mut |buf| {
                    for r in 0..rows {
                        let grow = &g[r * cols + ca..(r + 1) * cols];
                        axpy(&mut buf[r * cb..(r + 1) * cb], grow, 1.0);
                    }
                });
            }
            Op::SliceCols(a, start) => {
                let acols = nodes[a].cols;
                let w = node.cols;
                let rows = node.rows;
                push(a, &mut |buf| {
                    for r in 0..rows {
                        let grow = &g[r * w..(r + 1) * w];
                        axpy(&mut buf[r * acols + start..r * acols + start + w], grow, 1.0);
                    }
                });
            }
            Op::Clamp(a, lo, hi) => {
                let xv = nodes[a].values.clone();
                push(a, &mut |buf| {
                    for ((o, &gv), &x) in buf.iter_mut().zip(&g).zip(xv.iter()) {
                        if x >= lo && x <= hi {
                            *o += gv;
                        }
                    }
                });
            }
        }
    }
    Ok(Gradients { grads })
}

fn axpy(out: &mut [f64], x: &[f64], k: f64) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o += k * v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, v: &[f64]) -> Tensor {
        Tensor::constant(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let a = t(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let eye = t(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let c = a.matmul(&eye).unwrap();
        assert_eq!(c.values(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn softplus_at_zero_is_ln_two() {
        let x = t(1, 1, &[0.0]);
        assert!((x.softplus().values()[0] - core::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn sum_all_of_ones() {
        let x = Tensor::full(3, 3, 1.0);
        assert_eq!(x.sum_all().item().unwrap(), 9.0);
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let a = Tensor::zeros(2, 3);
        let b = Tensor::zeros(2, 4);
        match a.add(&b) {
            Err(Error::ShapeMismatch { op, left, right }) => {
                assert_eq!(op, "add");
                assert_eq!(left, (2, 3));
                assert_eq!(right, (2, 4));
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn broadcast_row_add_both_orders() {
        let a = t(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let row = t(1, 3, &[10.0, 20.0, 30.0]);
        let c = a.add(&row).unwrap();
        assert_eq!(c.values(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
        let c2 = row.add(&a).unwrap();
        assert_eq!(c2.values(), c.values());
    }

    #[test]
    fn linear_map_gradient() {
        let tape = Tape::new();
        let w = tape.leaf(1, 2, &[1.0, 1.0]).unwrap();
        let x = t(2, 1, &[3.0, 5.0]);
        let loss = w.matmul(&x).unwrap().sum_all();
        let grads = backward(&loss).unwrap();
        assert_eq!(grads.wrt(&w), vec![3.0, 5.0]);
    }

    #[test]
    fn exp_gradient_at_zero() {
        let tape = Tape::new();
        let x = tape.leaf(1, 1, &[0.0]).unwrap();
        let loss = x.exp().sum_all();
        let grads = backward(&loss).unwrap();
        assert_eq!(grads.wrt(&x), vec![1.0]);
    }

    #[test]
    fn stop_gradient_forward_identity_backward_zero() {
        let tape = Tape::new();
        let x = tape.leaf(2, 2, &[0.3, -1.2, 4.0, 0.0]).unwrap();
        let y = x.stop_gradient();
        assert_eq!(y.values(), x.values());
        let loss = y.sum_all();
        let grads = backward(&loss).unwrap();
        assert_eq!(grads.wrt(&x), vec![0.0; 4]);
    }

    #[test]
    fn stop_gradient_product_rule() {
        // d/dx sum(x * sg(x)) at x=[2] is [2]: only the live factor counts.
        let tape = Tape::new();
        let x = tape.leaf(1, 1, &[2.0]).unwrap();
        let loss = x.mul(&x.stop_gradient()).unwrap().sum_all();
        let grads = backward(&loss).unwrap();
        assert_eq!(grads.wrt(&x), vec![2.0]);
    }

    #[test]
    fn gradient_accumulates_over_reuse() {
        // loss = sum(x) + sum(x*x): dx = 1 + 2x.
        let tape = Tape::new();
        let x = tape.leaf(1, 3, &[1.0, 2.0, 3.0]).unwrap();
        let loss = x.sum_all().add(&x.mul(&x).unwrap().sum_all()).unwrap();
        let grads = backward(&loss).unwrap();
        assert_eq!(grads.wrt(&x), vec![3.0, 5.0, 7.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let tape = Tape::new();
        let x = tape.leaf(1, 2, &[1.0, 2.0]).unwrap();
        assert!(matches!(
            backward(&x),
            Err(Error::NotScalar { op: "backward", .. })
        ));
    }

    #[test]
    fn backward_requires_tape() {
        let c = Tensor::scalar(1.0);
        assert!(matches!(backward(&c), Err(Error::ConstantLoss)));
    }

    #[test]
    fn constants_stay_off_tape() {
        let a = t(1, 2, &[1.0, 2.0]);
        let b = t(1, 2, &[3.0, 4.0]);
        assert!(!a.add(&b).unwrap().is_on_tape());
    }

    #[test]
    fn zero_width_tensors_flow_through() {
        let tape = Tape::new();
        let z = tape.leaf(3, 0, &[]).unwrap();
        let w = tape.leaf(0, 2, &[]).unwrap();
        let c = z.matmul(&w).unwrap();
        assert_eq!(c.shape(), (3, 2));
        assert_eq!(c.values(), &[0.0; 6]);
        let per_row = z.sum_rows();
        assert_eq!(per_row.shape(), (3, 1));
        let x = tape.leaf(3, 2, &[1.0; 6]).unwrap();
        let joined = z.hcat(&x).unwrap();
        assert_eq!(joined.shape(), (3, 2));
        let loss = joined
            .sum_all()
            .add(&c.sum_all())
            .unwrap()
            .add(&per_row.sum_all())
            .unwrap();
        let grads = backward(&loss).unwrap();
        assert_eq!(grads.wrt(&x), vec![1.0; 6]);
        assert_eq!(grads.wrt(&z), Vec::<f64>::new());
    }

    #[test]
    fn replay_is_bitwise_deterministic() {
        let run = || {
            let tape = Tape::new();
            let x = tape.leaf(2, 2, &[0.1, -0.7, 2.3, 1.1]).unwrap();
            let y = tape.leaf(2, 2, &[1.4, 0.3, -0.2, 0.9]).unwrap();
            let loss = x
                .matmul(&y)
                .unwrap()
                .tanh()
                .mul(&x)
                .unwrap()
                .exp()
                .mean_all();
            let grads = backward(&loss).unwrap();
            (grads.wrt(&x), grads.wrt(&y))
        };
        let (gx1, gy1) = run();
        let (gx2, gy2) = run();
        assert_eq!(gx1, gx2);
        assert_eq!(gy1, gy2);
    }
}
