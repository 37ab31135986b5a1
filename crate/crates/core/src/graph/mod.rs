//! Static expression graphs traced from tape computations.
//!
//! A graph is the unit the compiler works on: optimization passes rewrite it,
//! `derive` produces gradient graphs from it, and `compile` lowers it to an
//! executable kernel. Constants are stored in f64 and cast at compile time,
//! so one graph serves both precisions.

pub mod cache;
pub mod dump;
pub mod kernel;
pub mod passes;

use std::sync::atomic::{AtomicU64, Ordering};

use crate::array::{kern, Array};
use crate::error::{Error, Result, Shape};
use crate::precision::Scalar;
use crate::tape::{NodeId, Op, Tape, Tensor};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// How a fused-segment input is read per element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub(crate) enum LoadKind {
    /// Same-shape buffer, contiguous.
    Full,
    /// [1,1] buffer splatted across the segment.
    Scalar,
    /// [1,m] buffer indexed by element column (absorbed row broadcast).
    Row,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum UnKind {
    Neg,
    Square,
    Exp,
    Sin,
    Cos,
    Tanh,
    Sech,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

/// Register program of a fused elementwise segment. Registers are
/// block-local lanes; `Load`/`Unary`/`Binary` all operate lane-wise.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct FusedSeg {
    /// External graph nodes read by the segment, with their load kinds.
    pub inputs: Vec<(NodeId, LoadKind)>,
    pub instrs: Vec<FInstr>,
    pub n_regs: usize,
    pub out_reg: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum FInstr {
    Load {
        dst: usize,
        input: usize,
    },
    Imm {
        dst: usize,
        value: f64,
    },
    Unary {
        dst: usize,
        kind: UnKind,
        a: usize,
    },
    Binary {
        dst: usize,
        kind: BinKind,
        a: usize,
        b: usize,
    },
    Powi {
        dst: usize,
        a: usize,
        n: i32,
    },
}

/// Graph op: a tape primitive or a fused segment (post-fusion only).
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum GOp {
    Base(Op),
    Fused(FusedSeg),
}

impl GOp {
    pub fn inputs(&self) -> Vec<NodeId> {
        match self {
            GOp::Base(op) => op.inputs(),
            GOp::Fused(seg) => seg.inputs.iter().map(|&(id, _)| id).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct GNode {
    pub op: GOp,
    pub shape: Shape,
    /// Literal value for `Op::Const` nodes.
    pub cval: Option<Array<f64>>,
}

/// Immutable computation DAG with concrete shapes. Nodes are stored in
/// topological order; placeholders keep their feed-slot order in `inputs`.
#[derive(Debug, Clone)]
pub struct ExprGraph {
    pub(crate) nodes: Vec<GNode>,
    pub(crate) inputs: Vec<NodeId>,
    pub(crate) outputs: Vec<NodeId>,
    pub(crate) id: u64,
}

impl ExprGraph {
    pub(crate) fn new(nodes: Vec<GNode>, inputs: Vec<NodeId>, outputs: Vec<NodeId>) -> Self {
        ExprGraph {
            nodes,
            inputs,
            outputs,
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
        }
    }

    /// Converts a finished tape into a graph. Every tape node carries over
    /// one-to-one; run the optimizer to discard unreachable ones.
    pub fn from_tape<S: Scalar>(tape: &Tape<S>, outputs: &[Tensor]) -> Result<Self> {
        let (ops, consts, input_ids) = tape.snapshot();
        let mut nodes = Vec::with_capacity(ops.len());
        for (i, (op, shape)) in ops.into_iter().enumerate() {
            let cval = consts[i].as_ref().map(|a| a.to_f64());
            nodes.push(GNode {
                op: GOp::Base(op),
                shape,
                cval,
            });
        }
        let graph = ExprGraph::new(nodes, input_ids, outputs.iter().map(|t| t.id).collect());
        graph.validate()?;
        Ok(graph)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn input_count(&self) -> usize {
        self.inputs.len()
    }

    pub fn output_count(&self) -> usize {
        self.outputs.len()
    }

    pub fn input_shapes(&self) -> Vec<Shape> {
        self.inputs.iter().map(|&id| self.nodes[id].shape).collect()
    }

    pub fn output_shapes(&self) -> Vec<Shape> {
        self.outputs
            .iter()
            .map(|&id| self.nodes[id].shape)
            .collect()
    }

    /// Graph identity for kernel caching; changes on every rewrite.
    pub fn graph_id(&self) -> u64 {
        self.id
    }

    /// Checks topology, feed-slot ordering, and per-op shape rules.
    pub(crate) fn validate(&self) -> Result<()> {
        for (slot, &id) in self.inputs.iter().enumerate() {
            match self.nodes.get(id).map(|n| &n.op) {
                Some(GOp::Base(Op::Input { slot: s })) if *s == slot => {}
                _ => {
                    return Err(Error::InvalidShape {
                        op: "graph",
                        message: format!("input slot {slot} does not map to a placeholder"),
                    })
                }
            }
        }
        for (id, node) in self.nodes.iter().enumerate() {
            for src in node.op.inputs() {
                if src >= id {
                    return Err(Error::InvalidShape {
                        op: "graph",
                        message: format!("node {id} reads later node {src}"),
                    });
                }
            }
            if let GOp::Base(op) = &node.op {
                let got: Vec<Shape> = op.inputs().iter().map(|&s| self.nodes[s].shape).collect();
                let want = infer_shape(op, &got, node.shape)?;
                if want != node.shape {
                    return Err(Error::InvalidShape {
                        op: "graph",
                        message: format!(
                            "node {id}: annotated {:?}, inferred {want:?}",
                            node.shape
                        ),
                    });
                }
            }
        }
        for &out in &self.outputs {
            if out >= self.nodes.len() {
                return Err(Error::InvalidShape {
                    op: "graph",
                    message: format!("output {out} out of range"),
                });
            }
        }
        Ok(())
    }

    fn check_inputs<S: Scalar>(&self, inputs: &[Array<S>]) -> Result<()> {
        if inputs.len() != self.inputs.len() {
            return Err(Error::InputCount {
                want: self.inputs.len(),
                got: inputs.len(),
            });
        }
        for (index, (arr, &id)) in inputs.iter().zip(&self.inputs).enumerate() {
            if arr.shape() != self.nodes[id].shape {
                return Err(Error::ShapeSignatureViolation {
                    index,
                    got: arr.shape(),
                    want: self.nodes[id].shape,
                });
            }
        }
        Ok(())
    }

    /// Reference executor: evaluates node by node with fresh allocations.
    /// This is the semantic oracle for passes and kernels.
    pub fn interpret<S: Scalar>(&self, inputs: &[Array<S>]) -> Result<Vec<Array<S>>> {
        self.check_inputs(inputs)?;
        let mut vals: Vec<Option<Array<S>>> = vec![None; self.nodes.len()];
        for (id, node) in self.nodes.iter().enumerate() {
            let (rows, cols) = node.shape;
            let mut out = Array::<S>::zeros(rows, cols);
            match &node.op {
                GOp::Base(Op::Input { slot }) => out = inputs[*slot].clone(),
                GOp::Base(Op::Const) => {
                    out = Array::cast_from(node.cval.as_ref().expect("const value"))
                }
                GOp::Base(op) => {
                    let get = |id: NodeId| vals[id].as_ref().expect("topo order");
                    eval_base(op, node.shape, &get, &mut out, &self.nodes);
                }
                GOp::Fused(seg) => {
                    let srcs: Vec<&[S]> = seg
                        .inputs
                        .iter()
                        .map(|&(id, _)| vals[id].as_ref().expect("topo order").as_slice())
                        .collect();
                    let mut regs = kernel::FusedScratch::new(seg.n_regs);
                    kernel::exec_fused(seg, &srcs, cols, out.as_mut_slice(), &mut regs);
                }
            }
            vals[id] = Some(out);
        }
        Ok(self
            .outputs
            .iter()
            .map(|&id| vals[id].clone().expect("output computed"))
            .collect())
    }

    /// Graph-to-graph derivative: a new graph over the same placeholders
    /// whose single output is d(sum(outputs[output_index])) / d(input slot
    /// `wrt_slot`). Apply repeatedly for higher orders.
    pub fn derive(&self, output_index: usize, wrt_slot: usize) -> Result<ExprGraph> {
        if wrt_slot >= self.inputs.len() {
            return Err(Error::WrtNotFound);
        }
        if output_index >= self.outputs.len() {
            return Err(Error::InvalidShape {
                op: "derive",
                message: format!("output index {output_index} of {}", self.outputs.len()),
            });
        }
        let tape = Tape::<f64>::new_tracing();
        let map = self.replay_onto(&tape)?;
        let out = map[self.outputs[output_index]];
        let scalar_out = if out.shape() == (1, 1) {
            out
        } else {
            tape.sum(out)
        };
        let wrt = map[self.inputs[wrt_slot]];
        let g = tape.grad(scalar_out, &[wrt])?[0];
        ExprGraph::from_tape(&tape, &[g])
    }

    /// Replays every node of this graph onto a tape, returning the node map.
    /// Fused nodes cannot be replayed; run derive before fusion.
    fn replay_onto(&self, tape: &Tape<f64>) -> Result<Vec<Tensor>> {
        let mut map: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let t = |id: NodeId| map[id];
            let (rows, cols) = node.shape;
            let newt = match &node.op {
                GOp::Fused(_) => {
                    return Err(Error::InvalidShape {
                        op: "derive",
                        message: "cannot differentiate a fused graph".into(),
                    })
                }
                GOp::Base(op) => match *op {
                    Op::Input { .. } => tape.input(Array::zeros(rows, cols)),
                    Op::Const => tape.constant(node.cval.clone().expect("const value")),
                    Op::Add(a, b) => tape.add(t(a), t(b))?,
                    Op::Sub(a, b) => tape.sub(t(a), t(b))?,
                    Op::Mul(a, b) => tape.mul(t(a), t(b))?,
                    Op::Div(a, b) => tape.div(t(a), t(b))?,
                    Op::Neg(a) => tape.neg(t(a)),
                    Op::Square(a) => tape.square(t(a)),
                    Op::PowI(a, n) => tape.powi(t(a), n),
                    Op::Exp(a) => tape.exp(t(a)),
                    Op::Sin(a) => tape.sin(t(a)),
                    Op::Cos(a) => tape.cos(t(a)),
                    Op::Tanh(a) => tape.tanh(t(a)),
                    Op::Sech(a) => tape.sech(t(a)),
                    Op::Matmul(a, b) => tape.matmul(t(a), t(b))?,
                    Op::MatmulNT(a, b) => tape.matmul_nt(t(a), t(b))?,
                    Op::MatmulTN(a, b) => tape.matmul_tn(t(a), t(b))?,
                    Op::Transpose(a) => tape.transpose(t(a)),
                    Op::Sum(a) => tape.sum(t(a)),
                    Op::Mean(a) => tape.mean(t(a)),
                    Op::SumRows(a) => tape.sum_rows(t(a)),
                    Op::BroadcastScalar(a) => tape.broadcast_scalar(t(a), rows, cols)?,
                    Op::BroadcastRow(a) => tape.broadcast_row(t(a), rows)?,
                    Op::Concat(ref parts) => {
                        let ts: Vec<Tensor> = parts.iter().map(|&p| t(p)).collect();
                        tape.concat(&ts)?
                    }
                    Op::SliceCols { input, start, len } => tape.slice_cols(t(input), start, len)?,
                    Op::ScatterCols { input, start, .. } => {
                        tape.scatter_cols(t(input), start, cols)
                    }
                },
            };
            map.push(newt);
        }
        Ok(map)
    }
}

/// Output shape of a base op given input shapes. `annotated` disambiguates
/// ops whose output shape is not a function of input shapes alone
/// (broadcasts and scatter).
pub(crate) fn infer_shape(op: &Op, ins: &[Shape], annotated: Shape) -> Result<Shape> {
    let same = |a: Shape, b: Shape, name: &'static str| -> Result<Shape> {
        if a != b {
            return Err(Error::ShapeMismatch {
                op: name,
                lhs: a,
                rhs: b,
            });
        }
        Ok(a)
    };
    Ok(match *op {
        Op::Input { .. } | Op::Const => annotated,
        Op::Add(..) => same(ins[0], ins[1], "add")?,
        Op::Sub(..) => same(ins[0], ins[1], "sub")?,
        Op::Mul(..) => same(ins[0], ins[1], "mul")?,
        Op::Div(..) => same(ins[0], ins[1], "div")?,
        Op::Neg(_)
        | Op::Square(_)
        | Op::PowI(..)
        | Op::Exp(_)
        | Op::Sin(_)
        | Op::Cos(_)
        | Op::Tanh(_)
        | Op::Sech(_) => ins[0],
        Op::Matmul(..) => {
            if ins[0].1 != ins[1].0 {
                return Err(Error::ShapeMismatch {
                    op: "matmul",
                    lhs: ins[0],
                    rhs: ins[1],
                });
            }
            (ins[0].0, ins[1].1)
        }
        Op::MatmulNT(..) => {
            if ins[0].1 != ins[1].1 {
                return Err(Error::ShapeMismatch {
                    op: "matmul_nt",
                    lhs: ins[0],
                    rhs: ins[1],
                });
            }
            (ins[0].0, ins[1].0)
        }
        Op::MatmulTN(..) => {
            if ins[0].0 != ins[1].0 {
                return Err(Error::ShapeMismatch {
                    op: "matmul_tn",
                    lhs: ins[0],
                    rhs: ins[1],
                });
            }
            (ins[0].1, ins[1].1)
        }
        Op::Transpose(_) => (ins[0].1, ins[0].0),
        Op::Sum(_) | Op::Mean(_) => (1, 1),
        Op::SumRows(_) => (1, ins[0].1),
        Op::BroadcastScalar(_) => annotated,
        Op::BroadcastRow(_) => (annotated.0, ins[0].1),
        Op::Concat(_) => {
            let rows = ins[0].0;
            let mut cols = 0;
            for s in ins {
                if s.0 != rows {
                    return Err(Error::ShapeMismatch {
                        op: "concat",
                        lhs: ins[0],
                        rhs: *s,
                    });
                }
                cols += s.1;
            }
            (rows, cols)
        }
        Op::SliceCols { len, .. } => (ins[0].0, len),
        Op::ScatterCols { .. } => annotated,
    })
}

/// Evaluates one non-leaf base op into `out`; shared by the interpreter.
pub(crate) fn eval_base<'a, S: Scalar>(
    op: &Op,
    shape: Shape,
    get: &impl Fn(NodeId) -> &'a Array<S>,
    out: &mut Array<S>,
    nodes: &[GNode],
) {
    let o = out.as_mut_slice();
    match *op {
        Op::Input { .. } | Op::Const => unreachable!("leaves handled by caller"),
        Op::Add(a, b) => kern::add(get(a).as_slice(), get(b).as_slice(), o),
        Op::Sub(a, b) => kern::sub(get(a).as_slice(), get(b).as_slice(), o),
        Op::Mul(a, b) => kern::mul(get(a).as_slice(), get(b).as_slice(), o),
        Op::Div(a, b) => kern::div(get(a).as_slice(), get(b).as_slice(), o),
        Op::Neg(a) => kern::neg(get(a).as_slice(), o),
        Op::Square(a) => kern::square(get(a).as_slice(), o),
        Op::PowI(a, n) => kern::powi(get(a).as_slice(), n, o),
        Op::Exp(a) => kern::exp(get(a).as_slice(), o),
        Op::Sin(a) => kern::sin(get(a).as_slice(), o),
        Op::Cos(a) => kern::cos(get(a).as_slice(), o),
        Op::Tanh(a) => kern::tanh(get(a).as_slice(), o),
        Op::Sech(a) => kern::sech_u(get(a).as_slice(), o),
        Op::Matmul(a, b) => {
            let (m, k) = get(a).shape();
            let n = get(b).cols();
            kern::matmul(m, k, n, get(a).as_slice(), get(b).as_slice(), o);
        }
        Op::MatmulNT(a, b) => {
            let (m, k) = get(a).shape();
            let n = get(b).rows();
            kern::matmul_nt(m, k, n, get(a).as_slice(), get(b).as_slice(), o);
        }
        Op::MatmulTN(a, b) => {
            let (k, m) = get(a).shape();
            let n = get(b).cols();
            kern::matmul_tn(m, k, n, get(a).as_slice(), get(b).as_slice(), o);
        }
        Op::Transpose(a) => {
            let (r, c) = get(a).shape();
            kern::transpose(r, c, get(a).as_slice(), o);
        }
        Op::Sum(a) => kern::sum(get(a).as_slice(), o),
        Op::Mean(a) => kern::mean(get(a).as_slice(), o),
        Op::SumRows(a) => {
            let (r, c) = get(a).shape();
            kern::sum_rows(r, c, get(a).as_slice(), o);
        }
        Op::BroadcastScalar(a) => kern::broadcast_scalar(get(a).as_slice(), o),
        Op::BroadcastRow(a) => {
            kern::broadcast_row(shape.0, shape.1, get(a).as_slice(), o);
        }
        Op::Concat(ref parts) => {
            let vals: Vec<(&[S], usize)> = parts
                .iter()
                .map(|&p| (get(p).as_slice(), nodes[p].shape.1))
                .collect();
            kern::concat_cols(shape.0, &vals, o);
        }
        Op::SliceCols { input, start, len } => {
            let (r, c) = get(input).shape();
            kern::slice_cols(r, c, start, len, get(input).as_slice(), o);
        }
        Op::ScatterCols { input, start, len } => {
            let r = get(input).rows();
            kern::scatter_cols(r, shape.1, start, len, get(input).as_slice(), o);
        }
    }
}

/// Traces a pure tensor function into a graph: placeholders are created in
/// argument order with the given shapes.
pub fn trace<S: Scalar, F>(input_shapes: &[Shape], f: F) -> Result<ExprGraph>
where
    F: FnOnce(&Tape<S>, &[Tensor]) -> Result<Vec<Tensor>>,
{
    let tape = Tape::<S>::new_tracing();
    let args: Vec<Tensor> = input_shapes
        .iter()
        .map(|&(r, c)| tape.input(Array::zeros(r, c)))
        .collect();
    let outs = f(&tape, &args)?;
    ExprGraph::from_tape(&tape, &outs)
}

/// Traces a builder that creates its own inputs (with initial values); the
/// recorded feed values are returned alongside the graph in slot order.
pub fn trace_feeding<S: Scalar, F>(f: F) -> Result<(ExprGraph, Vec<Array<S>>)>
where
    F: FnOnce(&Tape<S>) -> Result<Vec<Tensor>>,
{
    let tape = Tape::<S>::new_tracing();
    let outs = f(&tape)?;
    let graph = ExprGraph::from_tape(&tape, &outs)?;
    let feeds = tape.feeds();
    Ok((graph, feeds))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(vals: &[f64]) -> Array<f64> {
        Array::column(vals)
    }

    #[test]
    fn trace_add_self() {
        let g = trace::<f64, _>(&[(3, 1)], |t, args| Ok(vec![t.add(args[0], args[0])?])).unwrap();
        assert_eq!(g.input_count(), 1);
        assert_eq!(g.node_count(), 2);
        let out = g.interpret(&[col(&[1.0, 2.0, 3.0])]).unwrap();
        assert_eq!(out[0].as_slice(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn traced_mlp_layer_matches_eager_bitwise() {
        let w = Array::from_fn(2, 3, |i, j| 0.3 * (i as f64 + 1.0) - 0.7 * j as f64);
        let b = Array::from_vec(1, 3, vec![0.01, -0.02, 0.03]).unwrap();
        let x = Array::from_fn(100, 2, |i, j| ((i * 7 + j * 13) % 23) as f64 / 11.0 - 1.0);

        let build = |t: &Tape<f64>, xt: Tensor| -> Result<Tensor> {
            let wt = t.constant(w.clone());
            let bt = t.constant(b.clone());
            let h = t.matmul(xt, wt)?;
            let hb = t.add(h, t.broadcast_row(bt, h.rows())?)?;
            Ok(t.tanh(hb))
        };

        let g = trace::<f64, _>(&[(100, 2)], |t, args| Ok(vec![build(t, args[0])?])).unwrap();
        let traced = g.interpret(&[x.clone()]).unwrap();

        let tape = Tape::<f64>::new();
        let xt = tape.input(x);
        let y = build(&tape, xt).unwrap();
        let eager = tape.value(y).unwrap();

        assert_eq!(traced[0].as_slice(), eager.as_slice());
    }

    #[test]
    fn control_flow_on_values_is_untraceable() {
        let err = trace::<f64, _>(&[(1, 1)], |t, args| {
            let v = t.value(args[0])?; // data-dependent branch would start here
            let _ = v;
            Ok(vec![args[0]])
        })
        .unwrap_err();
        assert!(matches!(err, Error::UntraceableControlFlow));
    }

    #[test]
    fn derive_square_is_two_x() {
        let g = trace::<f64, _>(&[(1, 1)], |t, args| Ok(vec![t.square(args[0])])).unwrap();
        let d = g.derive(0, 0).unwrap();
        let out = d.interpret(&[Array::scalar(5.0f64)]).unwrap();
        assert_eq!(out[0].item(), 10.0);
    }

    #[test]
    fn derive_thrice_sin_is_minus_cos() {
        let g = trace::<f64, _>(&[(4, 1)], |t, args| Ok(vec![t.sin(args[0])])).unwrap();
        let d3 = g
            .derive(0, 0)
            .unwrap()
            .derive(0, 0)
            .unwrap()
            .derive(0, 0)
            .unwrap();
        let xs = [0.0, 0.5, 1.0, -2.0];
        let out = d3.interpret(&[col(&xs)]).unwrap();
        for (i, &x) in xs.iter().enumerate() {
            assert!((out[0].get(i, 0) - (-x.cos())).abs() < 1e-12);
        }
    }

    #[test]
    fn derive_missing_wrt_errors() {
        let g = trace::<f64, _>(&[(1, 1)], |t, args| Ok(vec![t.square(args[0])])).unwrap();
        assert!(matches!(g.derive(0, 1), Err(Error::WrtNotFound)));
    }

    #[test]
    fn interpret_rejects_wrong_shapes() {
        let g = trace::<f64, _>(&[(3, 1)], |t, args| Ok(vec![t.exp(args[0])])).unwrap();
        let err = g.interpret(&[col(&[1.0, 2.0])]).unwrap_err();
        assert!(matches!(err, Error::ShapeSignatureViolation { .. }));
    }

    #[test]
    fn derive_param_grad_matches_tape() {
        // d/dW of sum(tanh(x·W)) via graph derive vs tape grad.
        let x = Array::from_fn(5, 2, |i, j| (i as f64 - 2.0) * 0.4 + j as f64 * 0.3);
        let w0 = Array::from_vec(2, 1, vec![0.5, -0.3]).unwrap();

        let g = trace::<f64, _>(&[(5, 2), (2, 1)], |t, args| {
            Ok(vec![t.sum(t.tanh(t.matmul(args[0], args[1])?))])
        })
        .unwrap();
        let dg = g.derive(0, 1).unwrap();
        let from_graph = dg.interpret(&[x.clone(), w0.clone()]).unwrap();

        let tape = Tape::<f64>::new();
        let xt = tape.input(x);
        let wt = tape.input(w0);
        let y = tape.sum(tape.tanh(tape.matmul(xt, wt).unwrap()));
        let gt = tape.grad(y, &[wt]).unwrap()[0];
        let from_tape = tape.value(gt).unwrap();

        assert_eq!(from_graph[0].as_slice(), from_tape.as_slice());
    }
}
