//! Reverse-mode automatic differentiation on an append-only tape.
//!
//! The tape runs in one of two modes sharing every code path that records
//! nodes:
//! - eager: each op computes its value immediately (fresh allocation per op);
//! - tracing: only shapes are computed; reading a value is an error, and the
//!   finished tape converts mechanically into an expression graph.
//!
//! `grad` records the reverse pass as ordinary tape nodes, so gradients of
//! gradients nest to any order and the same reverse pass becomes the graph
//! compiler's symbolic derivative when run on a tracing tape.

use std::cell::RefCell;

use crate::array::{kern, Array};
use crate::error::{Error, Result, Shape};
use crate::precision::Scalar;

pub type NodeId = usize;

/// Handle to a tape node. Copyable; values live on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tensor {
    pub(crate) id: NodeId,
    pub(crate) rows: usize,
    pub(crate) cols: usize,
}

impl Tensor {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> Shape {
        (self.rows, self.cols)
    }
}

/// Primitive op set; closed under the reverse pass (every VJP below is
/// expressed with these ops only).
#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    /// External input (variable or placeholder); `slot` is its feed position.
    Input {
        slot: usize,
    },
    Const,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Square(NodeId),
    PowI(NodeId, i32),
    Exp(NodeId),
    Sin(NodeId),
    Cos(NodeId),
    Tanh(NodeId),
    Sech(NodeId),
    Matmul(NodeId, NodeId),
    /// a [m,k] · bᵀ for row-major b [n,k].
    MatmulNT(NodeId, NodeId),
    /// aᵀ · b for row-major a [k,m], b [k,n].
    MatmulTN(NodeId, NodeId),
    Transpose(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    /// Column-wise sum: [n,m] -> [1,m].
    SumRows(NodeId),
    /// [1,1] filled to the node's own shape.
    BroadcastScalar(NodeId),
    /// [1,m] tiled to [n,m].
    BroadcastRow(NodeId),
    /// Concatenation along axis 1.
    Concat(Vec<NodeId>),
    SliceCols {
        input: NodeId,
        start: usize,
        len: usize,
    },
    /// Adjoint of SliceCols: block written into a zeroed wider array.
    ScatterCols {
        input: NodeId,
        start: usize,
        len: usize,
    },
}

impl Op {
    pub fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Input { .. } | Op::Const => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::Matmul(a, b)
            | Op::MatmulNT(a, b)
            | Op::MatmulTN(a, b) => {
                vec![*a, *b]
            }
            Op::Neg(a)
            | Op::Square(a)
            | Op::PowI(a, _)
            | Op::Exp(a)
            | Op::Sin(a)
            | Op::Cos(a)
            | Op::Tanh(a)
            | Op::Sech(a)
            | Op::Transpose(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SumRows(a)
            | Op::BroadcastScalar(a)
            | Op::BroadcastRow(a) => vec![*a],
            Op::Concat(parts) => parts.clone(),
            Op::SliceCols { input, .. } | Op::ScatterCols { input, .. } => vec![*input],
        }
    }
}

pub(crate) struct Node {
    pub op: Op,
    pub rows: usize,
    pub cols: usize,
}

struct Inner<S: Scalar> {
    nodes: Vec<Node>,
    /// Eager values; in tracing mode only constants are populated.
    vals: Vec<Option<Array<S>>>,
    tracing: bool,
    /// Feed values for inputs, in slot order (tracing records the value the
    /// eager path would have used; eager stores it as the node value too).
    feeds: Vec<Array<S>>,
    input_ids: Vec<NodeId>,
}

/// Append-only autodiff tape. All methods take `&self`; nodes are interior.
pub struct Tape<S: Scalar> {
    inner: RefCell<Inner<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            inner: RefCell::new(Inner {
                nodes: Vec::new(),
                vals: Vec::new(),
                tracing: false,
                feeds: Vec::new(),
                input_ids: Vec::new(),
            }),
        }
    }

    pub(crate) fn new_tracing() -> Self {
        let t = Self::new();
        t.inner.borrow_mut().tracing = true;
        t
    }

    pub fn is_tracing(&self) -> bool {
        self.inner.borrow().tracing
    }

    pub fn node_count(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    fn push(&self, op: Op, rows: usize, cols: usize, val: Option<Array<S>>) -> Tensor {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node { op, rows, cols });
        inner.vals.push(val);
        Tensor { id, rows, cols }
    }

    fn val<'a>(inner: &'a Inner<S>, id: NodeId) -> &'a Array<S> {
        inner.vals[id]
            .as_ref()
            .expect("missing eager value; tape is tracing")
    }

    /// Records an op, computing its value eagerly unless tracing. `compute`
    /// receives the input values and the preallocated output.
    fn record(
        &self,
        op: Op,
        rows: usize,
        cols: usize,
        compute: impl FnOnce(&Inner<S>, &mut Array<S>),
    ) -> Tensor {
        let val = if self.is_tracing() {
            None
        } else {
            let inner = self.inner.borrow();
            let mut out = Array::zeros(rows, cols);
            compute(&inner, &mut out);
            Some(out)
        };
        self.push(op, rows, cols, val)
    }

    // ---- leaves ----

    /// External input: a variable in eager mode, a placeholder under tracing.
    /// The value is remembered as the input's feed either way.
    pub fn input(&self, value: Array<S>) -> Tensor {
        let (rows, cols) = value.shape();
        let tracing = self.is_tracing();
        let slot = self.inner.borrow().feeds.len();
        let t = self.push(
            Op::Input { slot },
            rows,
            cols,
            if tracing { None } else { Some(value.clone()) },
        );
        let mut inner = self.inner.borrow_mut();
        inner.feeds.push(value);
        inner.input_ids.push(t.id);
        t
    }

    pub fn constant(&self, value: Array<S>) -> Tensor {
        let (rows, cols) = value.shape();
        // Constants keep their value even while tracing: passes fold them.
        self.push(Op::Const, rows, cols, Some(value))
    }

    pub fn scalar(&self, v: f64) -> Tensor {
        self.constant(Array::scalar(S::from_f64(v)))
    }

    // ---- value access ----

    /// Clones the value of `t`. Errors under tracing: any decision made on a
    /// value would not be captured by the graph.
    pub fn value(&self, t: Tensor) -> Result<Array<S>> {
        let inner = self.inner.borrow();
        if inner.tracing {
            return Err(Error::UntraceableControlFlow);
        }
        Ok(Self::val(&inner, t.id).clone())
    }

    pub fn scalar_value(&self, t: Tensor) -> Result<f64> {
        Ok(self.value(t)?.item().to_f64())
    }

    // ---- elementwise binary ----

    fn binary(
        &self,
        name: &'static str,
        a: Tensor,
        b: Tensor,
        make: impl Fn(NodeId, NodeId) -> Op,
        f: fn(&[S], &[S], &mut [S]),
    ) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(Error::ShapeMismatch {
                op: name,
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        Ok(self.record(make(a.id, b.id), a.rows, a.cols, |inner, out| {
            f(
                Self::val(inner, a.id).as_slice(),
                Self::val(inner, b.id).as_slice(),
                out.as_mut_slice(),
            )
        }))
    }

    pub fn add(&self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.binary("add", a, b, Op::Add, kern::add)
    }

    pub fn sub(&self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.binary("sub", a, b, Op::Sub, kern::sub)
    }

    pub fn mul(&self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.binary("mul", a, b, Op::Mul, kern::mul)
    }

    pub fn div(&self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.binary("div", a, b, Op::Div, kern::div)
    }

    // ---- elementwise unary ----

    fn unary(&self, a: Tensor, op: Op, f: fn(&[S], &mut [S])) -> Tensor {
        self.record(op, a.rows, a.cols, |inner, out| {
            f(Self::val(inner, a.id).as_slice(), out.as_mut_slice())
        })
    }

    pub fn neg(&self, a: Tensor) -> Tensor {
        self.unary(a, Op::Neg(a.id), kern::neg)
    }

    pub fn square(&self, a: Tensor) -> Tensor {
        self.unary(a, Op::Square(a.id), kern::square)
    }

    pub fn exp(&self, a: Tensor) -> Tensor {
        self.unary(a, Op::Exp(a.id), kern::exp)
    }

    pub fn sin(&self, a: Tensor) -> Tensor {
        self.unary(a, Op::Sin(a.id), kern::sin)
    }

    pub fn cos(&self, a: Tensor) -> Tensor {
        self.unary(a, Op::Cos(a.id), kern::cos)
    }

    pub fn tanh(&self, a: Tensor) -> Tensor {
        self.unary(a, Op::Tanh(a.id), kern::tanh)
    }

    pub fn sech(&self, a: Tensor) -> Tensor {
        self.unary(a, Op::Sech(a.id), kern::sech_u)
    }

    pub fn powi(&self, a: Tensor, n: i32) -> Tensor {
        self.record(Op::PowI(a.id, n), a.rows, a.cols, |inner, out| {
            kern::powi(Self::val(inner, a.id).as_slice(), n, out.as_mut_slice())
        })
    }

    // ---- structure ----

    pub fn matmul(&self, a: Tensor, b: Tensor) -> Result<Tensor> {
        if a.cols != b.rows {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        let (m, k, n) = (a.rows, a.cols, b.cols);
        Ok(self.record(Op::Matmul(a.id, b.id), m, n, |inner, out| {
            kern::matmul(
                m,
                k,
                n,
                Self::val(inner, a.id).as_slice(),
                Self::val(inner, b.id).as_slice(),
                out.as_mut_slice(),
            )
        }))
    }

    /// a [m,k] · bᵀ for b [n,k], without materializing the transpose.
    pub fn matmul_nt(&self, a: Tensor, b: Tensor) -> Result<Tensor> {
        if a.cols != b.cols {
            return Err(Error::ShapeMismatch {
                op: "matmul_nt",
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        let (m, k, n) = (a.rows, a.cols, b.rows);
        Ok(self.record(Op::MatmulNT(a.id, b.id), m, n, |inner, out| {
            kern::matmul_nt(
                m,
                k,
                n,
                Self::val(inner, a.id).as_slice(),
                Self::val(inner, b.id).as_slice(),
                out.as_mut_slice(),
            )
        }))
    }

    /// aᵀ · b for a [k,m], b [k,n], without materializing the transpose.
    pub fn matmul_tn(&self, a: Tensor, b: Tensor) -> Result<Tensor> {
        if a.rows != b.rows {
            return Err(Error::ShapeMismatch {
                op: "matmul_tn",
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        let (m, k, n) = (a.cols, a.rows, b.cols);
        Ok(self.record(Op::MatmulTN(a.id, b.id), m, n, |inner, out| {
            kern::matmul_tn(
                m,
                k,
                n,
                Self::val(inner, a.id).as_slice(),
                Self::val(inner, b.id).as_slice(),
                out.as_mut_slice(),
            )
        }))
    }

    pub fn transpose(&self, a: Tensor) -> Tensor {
        self.record(Op::Transpose(a.id), a.cols, a.rows, |inner, out| {
            kern::transpose(
                a.rows,
                a.cols,
                Self::val(inner, a.id).as_slice(),
                out.as_mut_slice(),
            )
        })
    }

    pub fn sum(&self, a: Tensor) -> Tensor {
        self.record(Op::Sum(a.id), 1, 1, |inner, out| {
            kern::sum(Self::val(inner, a.id).as_slice(), out.as_mut_slice())
        })
    }

    pub fn mean(&self, a: Tensor) -> Tensor {
        self.record(Op::Mean(a.id), 1, 1, |inner, out| {
            kern::mean(Self::val(inner, a.id).as_slice(), out.as_mut_slice())
        })
    }

    pub fn sum_rows(&self, a: Tensor) -> Tensor {
        self.record(Op::SumRows(a.id), 1, a.cols, |inner, out| {
            kern::sum_rows(
                a.rows,
                a.cols,
                Self::val(inner, a.id).as_slice(),
                out.as_mut_slice(),
            )
        })
    }

    pub fn broadcast_scalar(&self, a: Tensor, rows: usize, cols: usize) -> Result<Tensor> {
        if a.shape() != (1, 1) {
            return Err(Error::InvalidShape {
                op: "broadcast_scalar",
                message: format!("source is {:?}, expected (1, 1)", a.shape()),
            });
        }
        Ok(
            self.record(Op::BroadcastScalar(a.id), rows, cols, |inner, out| {
                kern::broadcast_scalar(Self::val(inner, a.id).as_slice(), out.as_mut_slice())
            }),
        )
    }

    pub fn broadcast_row(&self, a: Tensor, rows: usize) -> Result<Tensor> {
        if a.rows != 1 {
            return Err(Error::InvalidShape {
                op: "broadcast_row",
                message: format!("source is {:?}, expected (1, m)", a.shape()),
            });
        }
        let cols = a.cols;
        Ok(
            self.record(Op::BroadcastRow(a.id), rows, cols, |inner, out| {
                kern::broadcast_row(
                    rows,
                    cols,
                    Self::val(inner, a.id).as_slice(),
                    out.as_mut_slice(),
                )
            }),
        )
    }

    pub fn concat(&self, parts: &[Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::InvalidShape {
                op: "concat",
                message: "no inputs".into(),
            });
        }
        let rows = parts[0].rows;
        if let Some(bad) = parts.iter().find(|p| p.rows != rows) {
            return Err(Error::ShapeMismatch {
                op: "concat",
                lhs: parts[0].shape(),
                rhs: bad.shape(),
            });
        }
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let ids: Vec<NodeId> = parts.iter().map(|p| p.id).collect();
        let widths: Vec<usize> = parts.iter().map(|p| p.cols).collect();
        Ok(
            self.record(Op::Concat(ids.clone()), rows, cols, move |inner, out| {
                let vals: Vec<(&[S], usize)> = ids
                    .iter()
                    .zip(&widths)
                    .map(|(&id, &w)| (Self::val(inner, id).as_slice(), w))
                    .collect();
                kern::concat_cols(rows, &vals, out.as_mut_slice());
            }),
        )
    }

    pub fn slice_cols(&self, a: Tensor, start: usize, len: usize) -> Result<Tensor> {
        if start + len > a.cols || len == 0 {
            return Err(Error::InvalidShape {
                op: "slice_cols",
                message: format!("columns {start}..{} of {:?}", start + len, a.shape()),
            });
        }
        let op = Op::SliceCols {
            input: a.id,
            start,
            len,
        };
        Ok(self.record(op, a.rows, len, |inner, out| {
            kern::slice_cols(
                a.rows,
                a.cols,
                start,
                len,
                Self::val(inner, a.id).as_slice(),
                out.as_mut_slice(),
            )
        }))
    }

    pub(crate) fn scatter_cols(&self, a: Tensor, start: usize, total_cols: usize) -> Tensor {
        let len = a.cols;
        let op = Op::ScatterCols {
            input: a.id,
            start,
            len,
        };
        self.record(op, a.rows, total_cols, |inner, out| {
            kern::scatter_cols(
                a.rows,
                total_cols,
                start,
                len,
                Self::val(inner, a.id).as_slice(),
                out.as_mut_slice(),
            )
        })
    }

    // ---- scalar-broadcast conveniences ----

    pub fn add_scalar(&self, a: Tensor, v: f64) -> Tensor {
        let s = self.scalar(v);
        let b = self.broadcast_scalar(s, a.rows, a.cols).expect("scalar");
        self.add(a, b).expect("same shape")
    }

    pub fn mul_scalar(&self, a: Tensor, v: f64) -> Tensor {
        let s = self.scalar(v);
        let b = self.broadcast_scalar(s, a.rows, a.cols).expect("scalar");
        self.mul(a, b).expect("same shape")
    }

    // ---- reverse pass ----

    fn is_leaf(&self, id: NodeId) -> bool {
        matches!(self.inner.borrow().nodes[id].op, Op::Input { .. })
    }

    fn tensor_of(&self, id: NodeId) -> Tensor {
        let inner = self.inner.borrow();
        let n = &inner.nodes[id];
        Tensor {
            id,
            rows: n.rows,
            cols: n.cols,
        }
    }

    /// ∂output/∂wrt for each requested input, recorded as new tape nodes.
    /// Output must be [1,1]; every wrt must be an `input` of this tape.
    pub fn grad(&self, output: Tensor, wrt: &[Tensor]) -> Result<Vec<Tensor>> {
        if output.shape() != (1, 1) {
            return Err(Error::NonScalarSource(output.rows, output.cols));
        }
        for w in wrt {
            if w.id >= self.node_count() || !self.is_leaf(w.id) {
                return Err(Error::UnregisteredInput(w.id));
            }
        }

        // Backward reachability from the output.
        let frontier = output.id + 1;
        let mut needed = vec![false; frontier];
        needed[output.id] = true;
        {
            let inner = self.inner.borrow();
            for id in (0..frontier).rev() {
                if needed[id] {
                    for src in inner.nodes[id].op.inputs() {
                        needed[src] = true;
                    }
                }
            }
        }

        let mut adj: Vec<Option<Tensor>> = vec![None; frontier];
        adj[output.id] = Some(self.scalar(1.0));

        for id in (0..frontier).rev() {
            if !needed[id] {
                continue;
            }
            let g = match adj[id] {
                Some(g) => g,
                None => continue,
            };
            let op = self.inner.borrow().nodes[id].op.clone();
            self.backprop(id, &op, g, &mut adj)?;
        }

        wrt.iter()
            .map(|w| match adj.get(w.id).copied().flatten() {
                Some(g) => Ok(g),
                None => Ok(self.constant(Array::zeros(w.rows, w.cols))),
            })
            .collect()
    }

    /// Adds `delta` into the adjoint slot for node `id`.
    fn accumulate(&self, adj: &mut [Option<Tensor>], id: NodeId, delta: Tensor) -> Result<()> {
        adj[id] = Some(match adj[id] {
            Some(prev) => self.add(prev, delta)?,
            None => delta,
        });
        Ok(())
    }

    fn backprop(&self, id: NodeId, op: &Op, g: Tensor, adj: &mut [Option<Tensor>]) -> Result<()> {
        match *op {
            Op::Input { .. } | Op::Const => {}
            Op::Add(a, b) => {
                self.accumulate(adj, a, g)?;
                self.accumulate(adj, b, g)?;
            }
            Op::Sub(a, b) => {
                self.accumulate(adj, a, g)?;
                let nb = self.neg(g);
                self.accumulate(adj, b, nb)?;
            }
            Op::Mul(a, b) => {
                let ta = self.tensor_of(a);
                let tb = self.tensor_of(b);
                let da = self.mul(g, tb)?;
                self.accumulate(adj, a, da)?;
                let db = self.mul(g, ta)?;
                self.accumulate(adj, b, db)?;
            }
            Op::Div(a, b) => {
                let ta = self.tensor_of(a);
                let tb = self.tensor_of(b);
                let da = self.div(g, tb)?;
                self.accumulate(adj, a, da)?;
                // d/db (a/b) = -a/b²
                let ratio = self.div(ta, self.square(tb))?;
                let db = self.neg(self.mul(g, ratio)?);
                self.accumulate(adj, b, db)?;
            }
            Op::Neg(a) => {
                let da = self.neg(g);
                self.accumulate(adj, a, da)?;
            }
            Op::Square(a) => {
                let ta = self.tensor_of(a);
                let da = self.mul(g, self.mul_scalar(ta, 2.0))?;
                self.accumulate(adj, a, da)?;
            }
            Op::PowI(a, n) => {
                if n != 0 {
                    let ta = self.tensor_of(a);
                    let pw = if n == 1 {
                        None
                    } else if n == 2 {
                        Some(ta)
                    } else {
                        Some(self.powi(ta, n - 1))
                    };
                    let scaled = match pw {
                        Some(p) => self.mul(g, self.mul_scalar(p, n as f64))?,
                        None => g,
                    };
                    self.accumulate(adj, a, scaled)?;
                }
            }
            Op::Exp(_) => {
                // Reuses the forward value e^a.
                let y = self.tensor_of(id);
                let da = self.mul(g, y)?;
                self.accumulate(adj, op.inputs()[0], da)?;
            }
            Op::Sin(a) => {
                let ta = self.tensor_of(a);
                let da = self.mul(g, self.cos(ta))?;
                self.accumulate(adj, a, da)?;
            }
            Op::Cos(a) => {
                let ta = self.tensor_of(a);
                let da = self.neg(self.mul(g, self.sin(ta))?);
                self.accumulate(adj, a, da)?;
            }
            Op::Tanh(a) => {
                // 1 - tanh² from the forward value.
                let y = self.tensor_of(id);
                let one = self.scalar(1.0);
                let ones = self.broadcast_scalar(one, y.rows, y.cols)?;
                let da = self.mul(g, self.sub(ones, self.square(y))?)?;
                self.accumulate(adj, a, da)?;
            }
            Op::Sech(a) => {
                // d sech = -sech·tanh.
                let y = self.tensor_of(id);
                let ta = self.tensor_of(a);
                let da = self.neg(self.mul(g, self.mul(y, self.tanh(ta))?)?);
                self.accumulate(adj, a, da)?;
            }
            Op::Matmul(a, b) => {
                let ta = self.tensor_of(a);
                let tb = self.tensor_of(b);
                let da = self.matmul_nt(g, tb)?;
                self.accumulate(adj, a, da)?;
                let db = self.matmul_tn(ta, g)?;
                self.accumulate(adj, b, db)?;
            }
            Op::MatmulNT(a, b) => {
                // c = a·bᵀ: da = g·b, db = gᵀ·a.
                let ta = self.tensor_of(a);
                let tb = self.tensor_of(b);
                let da = self.matmul(g, tb)?;
                self.accumulate(adj, a, da)?;
                let db = self.matmul_tn(g, ta)?;
                self.accumulate(adj, b, db)?;
            }
            Op::MatmulTN(a, b) => {
                // c = aᵀ·b: da = b·gᵀ, db = a·g.
                let ta = self.tensor_of(a);
                let tb = self.tensor_of(b);
                let da = self.matmul_nt(tb, g)?;
                self.accumulate(adj, a, da)?;
                let db = self.matmul(ta, g)?;
                self.accumulate(adj, b, db)?;
            }
            Op::Transpose(a) => {
                let da = self.transpose(g);
                self.accumulate(adj, a, da)?;
            }
            Op::Sum(a) => {
                let ta = self.tensor_of(a);
                let da = self.broadcast_scalar(g, ta.rows, ta.cols)?;
                self.accumulate(adj, a, da)?;
            }
            Op::Mean(a) => {
                let ta = self.tensor_of(a);
                let scaled = self.mul_scalar(g, 1.0 / (ta.rows * ta.cols) as f64);
                let da = self.broadcast_scalar(scaled, ta.rows, ta.cols)?;
                self.accumulate(adj, a, da)?;
            }
            Op::SumRows(a) => {
                let ta = self.tensor_of(a);
                let da = self.broadcast_row(g, ta.rows)?;
                self.accumulate(adj, a, da)?;
            }
            Op::BroadcastScalar(a) => {
                let da = self.sum(g);
                self.accumulate(adj, a, da)?;
            }
            Op::BroadcastRow(a) => {
                let da = self.sum_rows(g);
                self.accumulate(adj, a, da)?;
            }
            Op::Concat(ref parts) => {
                let mut at = 0;
                for &p in parts {
                    let tp = self.tensor_of(p);
                    let da = self.slice_cols(g, at, tp.cols)?;
                    self.accumulate(adj, p, da)?;
                    at += tp.cols;
                }
            }
            Op::SliceCols { input, start, .. } => {
                let ti = self.tensor_of(input);
                let da = self.scatter_cols(g, start, ti.cols);
                self.accumulate(adj, input, da)?;
            }
            Op::ScatterCols { input, start, len } => {
                let da = self.slice_cols(g, start, len)?;
                self.accumulate(adj, input, da)?;
            }
        }
        Ok(())
    }

    /// Order-th partial derivative of a single-column, row-independent model
    /// output with respect to one input column: [N,1] per row.
    pub fn partials(
        &self,
        output: Tensor,
        x: Tensor,
        column: usize,
        order: usize,
    ) -> Result<Tensor> {
        if output.cols != 1 {
            return Err(Error::InvalidShape {
                op: "partials",
                message: format!("output is {:?}, expected (n, 1)", output.shape()),
            });
        }
        if !(1..=3).contains(&order) {
            return Err(Error::UnsupportedOrder(order));
        }
        if column >= x.cols {
            return Err(Error::InvalidShape {
                op: "partials",
                message: format!("column {column} of {:?}", x.shape()),
            });
        }
        let mut u = output;
        for _ in 0..order {
            let s = self.sum(u);
            let g = self.grad(s, &[x])?[0];
            u = self.slice_cols(g, column, 1)?;
        }
        Ok(u)
    }

    /// Entrywise ∂ᵒ U[i,j] / ∂x[i,column]ᵒ for a multi-column output, via two
    /// reverse passes per order: the cotangent of a dummy zero input W in
    /// Σᵢⱼ W[i,j]·(∂ U[i,j]/∂x[i]) is exactly the wanted matrix, because that
    /// sum is linear in W.
    pub fn partials_multi(
        &self,
        output: Tensor,
        x: Tensor,
        column: usize,
        order: usize,
    ) -> Result<Tensor> {
        if !(1..=3).contains(&order) {
            return Err(Error::UnsupportedOrder(order));
        }
        let mut u = output;
        for _ in 0..order {
            let w = self.input(Array::zeros(u.rows, u.cols));
            let weighted = self.sum(self.mul(u, w)?);
            let gx = self.grad(weighted, &[x])?[0];
            let vc = self.slice_cols(gx, column, 1)?;
            let sv = self.sum(vc);
            u = self.grad(sv, &[w])?[0];
        }
        Ok(u)
    }

    // ---- pub(crate) views for graph conversion ----

    pub(crate) fn snapshot(&self) -> (Vec<(Op, Shape)>, Vec<Option<Array<S>>>, Vec<NodeId>) {
        let inner = self.inner.borrow();
        let ops = inner
            .nodes
            .iter()
            .map(|n| (n.op.clone(), (n.rows, n.cols)))
            .collect();
        let consts = inner
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| match n.op {
                Op::Const => inner.vals[i].clone(),
                _ => None,
            })
            .collect();
        (ops, consts, inner.input_ids.clone())
    }

    pub(crate) fn feeds(&self) -> Vec<Array<S>> {
        self.inner.borrow().feeds.clone()
    }
}

/// Central finite differences vs autodiff for a pure elementwise-style map
/// f: [N,1] -> [N,1]; returns max |ad - fd| / max(|fd|, 1e-12).
pub fn finite_difference_check<S: Scalar, F>(
    f: F,
    x: &Array<S>,
    order: usize,
    step: f64,
) -> Result<f64>
where
    F: Fn(&Tape<S>, Tensor) -> Result<Tensor>,
{
    assert!(step > 0.0, "step must be positive");
    if !(1..=3).contains(&order) {
        return Err(Error::UnsupportedOrder(order));
    }

    let eval = |shift: f64| -> Result<Array<f64>> {
        let tape = Tape::<S>::new();
        let xs = x.map(|v| v + S::from_f64(shift));
        let xt = tape.input(xs);
        let y = f(&tape, xt)?;
        Ok(tape.value(y)?.to_f64())
    };

    let h = step;
    let fd: Array<f64> = match order {
        1 => {
            let (p, m) = (eval(h)?, eval(-h)?);
            Array::from_fn(p.rows(), 1, |i, _| (p.get(i, 0) - m.get(i, 0)) / (2.0 * h))
        }
        2 => {
            let (p, c, m) = (eval(h)?, eval(0.0)?, eval(-h)?);
            Array::from_fn(p.rows(), 1, |i, _| {
                (p.get(i, 0) - 2.0 * c.get(i, 0) + m.get(i, 0)) / (h * h)
            })
        }
        _ => {
            let (p2, p1, m1, m2) = (eval(2.0 * h)?, eval(h)?, eval(-h)?, eval(-2.0 * h)?);
            Array::from_fn(p1.rows(), 1, |i, _| {
                (p2.get(i, 0) - 2.0 * p1.get(i, 0) + 2.0 * m1.get(i, 0) - m2.get(i, 0))
                    / (2.0 * h * h * h)
            })
        }
    };

    let tape = Tape::<S>::new();
    let xt = tape.input(x.clone());
    let y = f(&tape, xt)?;
    let d = tape.partials(y, xt, 0, order)?;
    let ad = tape.value(d)?.to_f64();

    let mut worst = 0.0f64;
    for i in 0..ad.rows() {
        let (a, b) = (ad.get(i, 0), fd.get(i, 0));
        worst = worst.max((a - b).abs() / b.abs().max(1e-12));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(vals: &[f64]) -> Array<f64> {
        Array::column(vals)
    }

    #[test]
    fn tanh_gradient_at_zero_is_one() {
        let tape = Tape::<f64>::new();
        let x = tape.input(col(&[0.0]));
        let y = tape.sum(tape.tanh(x));
        let g = tape.grad(y, &[x]).unwrap();
        assert_eq!(tape.value(g[0]).unwrap().item(), 1.0);
    }

    #[test]
    fn third_derivative_of_cube_is_six() {
        let tape = Tape::<f64>::new();
        let x = tape.input(col(&[2.0]));
        let y = tape.powi(x, 3);
        let d3 = tape.partials(y, x, 0, 3).unwrap();
        assert_eq!(tape.value(d3).unwrap().item(), 6.0);
    }

    #[test]
    fn product_rule_matches_finite_differences() {
        let worst =
            finite_difference_check(|t, x| Ok(t.mul(t.sin(x), t.exp(x))?), &col(&[0.7]), 1, 1e-5)
                .unwrap();
        assert!(worst < 1e-6, "discrepancy {worst}");
    }

    #[test]
    fn fd_check_passes_spec_examples() {
        let w = finite_difference_check(|t, x| Ok(t.exp(x)), &col(&[0.0]), 1, 1e-5).unwrap();
        assert!(w < 1e-8, "exp order 1: {w}");

        let xs: Vec<f64> = (0..9).map(|i| -2.0 + 4.0 * i as f64 / 8.0).collect();
        let w = finite_difference_check(|t, x| Ok(t.tanh(x)), &col(&xs), 2, 1e-4).unwrap();
        assert!(w < 1e-5, "tanh order 2: {w}");

        let w = finite_difference_check(
            |t, x| {
                let z = t.mul_scalar(x, 0.0);
                Ok(t.add_scalar(z, 3.0))
            },
            &col(&[0.4, -1.1]),
            1,
            1e-5,
        )
        .unwrap();
        assert!(w < 1e-9, "constant: {w}");
    }

    #[test]
    fn grad_requires_scalar_output() {
        let tape = Tape::<f64>::new();
        let x = tape.input(col(&[1.0, 2.0]));
        let y = tape.square(x);
        assert!(matches!(
            tape.grad(y, &[x]),
            Err(Error::NonScalarSource(2, 1))
        ));
    }

    #[test]
    fn grad_rejects_non_input() {
        let tape = Tape::<f64>::new();
        let x = tape.input(col(&[1.0]));
        let y = tape.square(x);
        let s = tape.sum(y);
        assert!(matches!(
            tape.grad(s, &[y]),
            Err(Error::UnregisteredInput(_))
        ));
    }

    #[test]
    fn unsupported_order_rejected() {
        let tape = Tape::<f64>::new();
        let x = tape.input(col(&[1.0]));
        let y = tape.square(x);
        assert!(matches!(
            tape.partials(y, x, 0, 4),
            Err(Error::UnsupportedOrder(4))
        ));
        assert!(matches!(
            tape.partials(y, x, 0, 0),
            Err(Error::UnsupportedOrder(0))
        ));
    }

    #[test]
    fn second_partial_of_square_is_two() {
        let tape = Tape::<f64>::new();
        let x = tape.input(col(&[1.0, 3.0]));
        let y = tape.square(x);
        let d2 = tape.partials(y, x, 0, 2).unwrap();
        let v = tape.value(d2).unwrap();
        assert_eq!(v.as_slice(), &[2.0, 2.0]);
    }

    #[test]
    fn third_partial_of_sin_at_zero() {
        let tape = Tape::<f64>::new();
        let x = tape.input(col(&[0.0]));
        let y = tape.sin(x);
        let d3 = tape.partials(y, x, 0, 3).unwrap();
        assert!((tape.value(d3).unwrap().item() - (-1.0)).abs() < 1e-12);
    }

    #[test]
    fn linearity_of_grad() {
        let (a, b) = (2.5, -1.25);
        let xv = col(&[0.3, -0.8, 1.7]);

        let tape = Tape::<f64>::new();
        let x = tape.input(xv.clone());
        let fa = tape.sum(tape.sin(x));
        let fb = tape.sum(tape.exp(x));
        let combined = tape
            .add(tape.mul_scalar(fa, a), tape.mul_scalar(fb, b))
            .unwrap();
        let g = tape.grad(combined, &[x]).unwrap()[0];
        let ga = tape.grad(fa, &[x]).unwrap()[0];
        let gb = tape.grad(fb, &[x]).unwrap()[0];
        let gv = tape.value(g).unwrap();
        let gav = tape.value(ga).unwrap();
        let gbv = tape.value(gb).unwrap();
        for i in 0..3 {
            let want = a * gav.get(i, 0) + b * gbv.get(i, 0);
            assert!((gv.get(i, 0) - want).abs() < 1e-12 * want.abs().max(1.0));
        }
    }

    #[test]
    fn mean_gradient_is_sum_gradient_over_n() {
        let tape = Tape::<f64>::new();
        let x = tape.input(col(&[1.0, 2.0, 5.0, -3.0]));
        let y = tape.square(x);
        let gm = tape.grad(tape.mean(y), &[x]).unwrap()[0];
        let gs = tape.grad(tape.sum(y), &[x]).unwrap()[0];
        let (gm, gs) = (tape.value(gm).unwrap(), tape.value(gs).unwrap());
        for i in 0..4 {
            assert!((gm.get(i, 0) - gs.get(i, 0) / 4.0).abs() < 1e-15);
        }
    }

    #[test]
    fn matmul_gradients_match_fd() {
        // loss = sum((x·W + b)²) with fixed W, b; d/dx checked by stencil.
        let w = Array::from_vec(1, 3, vec![0.4, -0.7, 1.1]).unwrap();
        let b = Array::from_vec(1, 3, vec![0.1, 0.2, -0.3]).unwrap();
        let worst = finite_difference_check(
            move |t, x| {
                let wt = t.constant(w.clone());
                let bt = t.constant(b.clone());
                let h = t.matmul(x, wt)?;
                let hb = t.add(h, t.broadcast_row(bt, h.rows())?)?;
                let sq = t.square(hb);
                // Row sums keep the map row-independent with a [N,1] result.
                let s = t.sum_rows(t.transpose(sq));
                Ok(t.transpose(s))
            },
            &col(&[0.3, -0.2]),
            1,
            1e-6,
        )
        .unwrap();
        assert!(worst < 1e-7, "discrepancy {worst}");
    }

    #[test]
    fn div_and_concat_gradients_match_fd() {
        let worst = finite_difference_check(
            |t, x| {
                let e = t.exp(x);
                let c = t.concat(&[x, e])?;
                let num = t.slice_cols(c, 0, 1)?;
                let den = t.add_scalar(t.square(t.slice_cols(c, 1, 1)?), 1.0);
                Ok(t.div(num, den)?)
            },
            &col(&[0.5, -0.4, 2.0]),
            1,
            1e-5,
        )
        .unwrap();
        assert!(worst < 1e-6, "discrepancy {worst}");
    }

    #[test]
    fn sech_derivative_matches_fd() {
        let xs: Vec<f64> = (0..7).map(|i| -3.0 + i as f64).collect();
        let w = finite_difference_check(|t, x| Ok(t.sech(x)), &col(&xs), 1, 1e-5).unwrap();
        assert!(w < 1e-6, "sech order 1: {w}");
        let w = finite_difference_check(|t, x| Ok(t.sech(x)), &col(&xs), 2, 1e-4).unwrap();
        assert!(w < 1e-5, "sech order 2: {w}");
    }

    #[test]
    fn partials_multi_matches_per_column() {
        // U = [x², sin x] built as a two-column output.
        let tape = Tape::<f64>::new();
        let x = tape.input(col(&[0.4, -1.2, 2.0]));
        let u = tape.concat(&[tape.square(x), tape.sin(x)]).unwrap();
        let d = tape.partials_multi(u, x, 0, 1).unwrap();
        let dv = tape.value(d).unwrap();
        for i in 0..3 {
            let xv = [0.4, -1.2, 2.0][i];
            assert!((dv.get(i, 0) - 2.0 * xv).abs() < 1e-12);
            assert!((dv.get(i, 1) - xv.cos()).abs() < 1e-12);
        }

        let d2 = tape.partials_multi(u, x, 0, 2).unwrap();
        let dv2 = tape.value(d2).unwrap();
        for i in 0..3 {
            let xv: f64 = [0.4, -1.2, 2.0][i];
            assert!((dv2.get(i, 0) - 2.0).abs() < 1e-10);
            assert!((dv2.get(i, 1) + xv.sin()).abs() < 1e-10);
        }
    }

    #[test]
    fn value_read_fails_while_tracing() {
        let tape = Tape::<f64>::new_tracing();
        let x = tape.input(col(&[1.0]));
        let y = tape.square(x);
        assert!(matches!(tape.value(y), Err(Error::UntraceableControlFlow)));
    }

    #[test]
    fn tracing_records_same_nodes_as_eager() {
        let build = |tape: &Tape<f64>| {
            let x = tape.input(col(&[1.0, 2.0]));
            let y = tape.sum(tape.mul(tape.sin(x), x).unwrap());
            tape.grad(y, &[x]).unwrap();
        };
        let eager = Tape::<f64>::new();
        build(&eager);
        let tracing = Tape::<f64>::new_tracing();
        build(&tracing);
        let (eops, _, _) = eager.snapshot();
        let (tops, _, _) = tracing.snapshot();
        assert_eq!(eops.len(), tops.len());
        for (a, b) in eops.iter().zip(&tops) {
            assert_eq!(a.0, b.0);
            assert_eq!(a.1, b.1);
        }
    }
}
