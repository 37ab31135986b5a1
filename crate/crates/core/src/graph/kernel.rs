//! Kernel compilation and execution.
//!
//! A kernel owns a preallocated buffer arena planned at compile time with
//! liveness-based reuse, so executing it performs no heap allocation. Graph
//! mode runs one node per step through the shared slice kernels; fused mode
//! runs fused segments blockwise through lane helpers, keeping intermediate
//! values in block-local registers instead of materializing them.

use std::collections::HashMap;

use super::{BinKind, ExprGraph, FInstr, FusedSeg, GOp, LoadKind, UnKind};
use crate::array::{kern, Array};
use crate::error::{Error, Result, Shape};
use crate::precision::{Precision, Scalar};
use crate::tape::{NodeId, Op};

/// Execution strategy of a compiled kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelMode {
    /// Node-by-node interpretation of the optimized, unfused graph.
    Graph,
    /// Elementwise chains collapsed into single loops.
    Fused,
}

pub(crate) const BLOCK: usize = 256;

/// Block-local register file for fused segments.
pub(crate) struct FusedScratch<S> {
    regs: Vec<S>,
}

impl<S: Scalar> FusedScratch<S> {
    pub fn new(n_regs: usize) -> Self {
        FusedScratch {
            regs: vec![S::ZERO; n_regs * BLOCK],
        }
    }

    fn ensure(&mut self, n_regs: usize) {
        if self.regs.len() < n_regs * BLOCK {
            self.regs.resize(n_regs * BLOCK, S::ZERO);
        }
    }
}

#[inline(always)]
pub(crate) fn apply_unary<S: Scalar>(kind: UnKind, x: S) -> S {
    match kind {
        UnKind::Neg => -x,
        UnKind::Square => x * x,
        UnKind::Exp => x.exp(),
        UnKind::Sin => x.sin(),
        UnKind::Cos => x.cos(),
        UnKind::Tanh => x.tanh(),
        UnKind::Sech => kern::sech(x),
    }
}

#[inline(always)]
pub(crate) fn apply_binary<S: Scalar>(kind: BinKind, a: S, b: S) -> S {
    match kind {
        BinKind::Add => a + b,
        BinKind::Sub => a - b,
        BinKind::Mul => a * b,
        BinKind::Div => a / b,
    }
}

/// Runs one fused segment over `out` given resolved source slices. Shared by
/// the graph interpreter; the kernel path inlines the same loop against its
/// arena. `cols` is the column count of the segment's (common) shape.
pub(crate) fn exec_fused<S: Scalar>(
    seg: &FusedSeg,
    srcs: &[&[S]],
    cols: usize,
    out: &mut [S],
    scratch: &mut FusedScratch<S>,
) {
    scratch.ensure(seg.n_regs);
    let regs = &mut scratch.regs;
    let len = out.len();
    let mut base = 0;
    while base < len {
        let bl = BLOCK.min(len - base);
        for instr in &seg.instrs {
            step_fused(instr, seg, srcs, cols, regs, base, bl);
        }
        let o = seg.out_reg * BLOCK;
        out[base..base + bl].copy_from_slice(&regs[o..o + bl]);
        base += bl;
    }
}

/// Writes `f(reg a)` into reg `d` lanewise. Register compaction reuses
/// source registers as destinations, so overlap means exact equality and
/// distinct registers give disjoint BLOCK-aligned ranges.
#[inline(always)]
fn un_apply<S: Scalar>(regs: &mut [S], d: usize, a: usize, bl: usize, f: impl Fn(S) -> S) {
    if d == a {
        for x in &mut regs[d..d + bl] {
            *x = f(*x);
        }
    } else {
        let [dr, ar] = regs
            .get_disjoint_mut([d..d + bl, a..a + bl])
            .expect("distinct registers do not overlap");
        for (x, &y) in dr.iter_mut().zip(ar.iter()) {
            *x = f(y);
        }
    }
}

#[inline(always)]
fn bin_apply<S: Scalar>(
    regs: &mut [S],
    d: usize,
    a: usize,
    b: usize,
    bl: usize,
    f: impl Fn(S, S) -> S,
) {
    if a == b {
        un_apply(regs, d, a, bl, |x| f(x, x));
    } else if d == a {
        let [dr, br] = regs
            .get_disjoint_mut([d..d + bl, b..b + bl])
            .expect("distinct registers do not overlap");
        for (x, &z) in dr.iter_mut().zip(br.iter()) {
            *x = f(*x, z);
        }
    } else if d == b {
        let [dr, ar] = regs
            .get_disjoint_mut([d..d + bl, a..a + bl])
            .expect("distinct registers do not overlap");
        for (x, &y) in dr.iter_mut().zip(ar.iter()) {
            *x = f(y, *x);
        }
    } else {
        let [dr, ar, br] = regs
            .get_disjoint_mut([d..d + bl, a..a + bl, b..b + bl])
            .expect("distinct registers do not overlap");
        for ((x, &y), &z) in dr.iter_mut().zip(ar.iter()).zip(br.iter()) {
            *x = f(y, z);
        }
    }
}

/// Loads a [1,cols] row value cyclically into a register block.
#[inline(always)]
fn row_load<S: Scalar>(dst: &mut [S], src: &[S], base: usize, cols: usize) {
    let mut c = base % cols;
    for x in dst {
        *x = src[c];
        c += 1;
        if c == cols {
            c = 0;
        }
    }
}

#[inline(always)]
pub(crate) fn step_fused<S: Scalar>(
    instr: &FInstr,
    seg: &FusedSeg,
    srcs: &[&[S]],
    cols: usize,
    regs: &mut [S],
    base: usize,
    bl: usize,
) {
    match *instr {
        FInstr::Load { dst, input } => {
            let d = dst * BLOCK;
            let src = srcs[input];
            match seg.inputs[input].1 {
                LoadKind::Full => regs[d..d + bl].copy_from_slice(&src[base..base + bl]),
                LoadKind::Scalar => regs[d..d + bl].fill(src[0]),
                LoadKind::Row => row_load(&mut regs[d..d + bl], src, base, cols),
            }
        }
        FInstr::Imm { dst, value } => {
            let d = dst * BLOCK;
            regs[d..d + bl].fill(S::from_f64(value));
        }
        FInstr::Unary { dst, kind, a } => {
            let (d, a) = (dst * BLOCK, a * BLOCK);
            // Matching outside the lane loop monomorphizes one tight loop
            // per kind; `apply_unary` with a known kind folds to the raw op.
            match kind {
                UnKind::Neg => un_apply(regs, d, a, bl, |x| apply_unary(UnKind::Neg, x)),
                UnKind::Square => un_apply(regs, d, a, bl, |x| apply_unary(UnKind::Square, x)),
                UnKind::Exp => un_apply(regs, d, a, bl, |x| apply_unary(UnKind::Exp, x)),
                UnKind::Sin => un_apply(regs, d, a, bl, |x| apply_unary(UnKind::Sin, x)),
                UnKind::Cos => un_apply(regs, d, a, bl, |x| apply_unary(UnKind::Cos, x)),
                UnKind::Tanh => un_apply(regs, d, a, bl, |x| apply_unary(UnKind::Tanh, x)),
                UnKind::Sech => un_apply(regs, d, a, bl, |x| apply_unary(UnKind::Sech, x)),
            }
        }
        FInstr::Binary { dst, kind, a, b } => {
            let (d, a, b) = (dst * BLOCK, a * BLOCK, b * BLOCK);
            match kind {
                BinKind::Add => {
                    bin_apply(regs, d, a, b, bl, |x, y| apply_binary(BinKind::Add, x, y))
                }
                BinKind::Sub => {
                    bin_apply(regs, d, a, b, bl, |x, y| apply_binary(BinKind::Sub, x, y))
                }
                BinKind::Mul => {
                    bin_apply(regs, d, a, b, bl, |x, y| apply_binary(BinKind::Mul, x, y))
                }
                BinKind::Div => {
                    bin_apply(regs, d, a, b, bl, |x, y| apply_binary(BinKind::Div, x, y))
                }
            }
        }
        FInstr::Powi { dst, a, n } => {
            let (d, a) = (dst * BLOCK, a * BLOCK);
            un_apply(regs, d, a, bl, |x| x.powi(n));
        }
    }
}

enum Step {
    /// Copies execute-call input `index` into its slot.
    CopyInput { index: usize, slot: usize },
    /// Evaluates graph node `node` into `slot`.
    Node { node: NodeId, slot: usize },
}

/// Executable form of a graph for one input-shape signature and precision.
pub struct Kernel<S: Scalar> {
    mode: KernelMode,
    graph: ExprGraph,
    steps: Vec<Step>,
    /// node -> arena slot (usize::MAX while unassigned).
    slot_of: Vec<usize>,
    bufs: Vec<Vec<S>>,
    input_shapes: Vec<Shape>,
    output_shapes: Vec<Shape>,
    scratch: FusedScratch<S>,
}

impl<S: Scalar> Kernel<S> {
    pub fn mode(&self) -> KernelMode {
        self.mode
    }

    pub fn precision(&self) -> Precision {
        S::PRECISION
    }

    pub fn input_shapes(&self) -> &[Shape] {
        &self.input_shapes
    }

    pub fn output_shapes(&self) -> &[Shape] {
        &self.output_shapes
    }

    /// Arena footprint in scalars; compile-time planned, fixed afterwards.
    pub fn arena_len(&self) -> usize {
        self.bufs.iter().map(|b| b.len()).sum()
    }

    /// Preallocates output arrays matching this kernel's output shapes.
    pub fn alloc_outputs(&self) -> Vec<Array<S>> {
        self.output_shapes
            .iter()
            .map(|&(r, c)| Array::zeros(r, c))
            .collect()
    }

    pub fn execute(&mut self, inputs: &[Array<S>]) -> Result<Vec<Array<S>>> {
        let mut outs = self.alloc_outputs();
        self.execute_into(inputs, &mut outs)?;
        Ok(outs)
    }

    /// Runs the kernel without allocating: `outs` must come from
    /// `alloc_outputs` (or match the output shapes exactly).
    pub fn execute_into(&mut self, inputs: &[Array<S>], outs: &mut [Array<S>]) -> Result<()> {
        if inputs.len() != self.input_shapes.len() {
            return Err(Error::InputCount {
                want: self.input_shapes.len(),
                got: inputs.len(),
            });
        }
        for (index, (arr, &want)) in inputs.iter().zip(&self.input_shapes).enumerate() {
            if arr.shape() != want {
                return Err(Error::ShapeSignatureViolation {
                    index,
                    got: arr.shape(),
                    want,
                });
            }
        }
        assert_eq!(outs.len(), self.output_shapes.len(), "output buffer count");

        for step in &self.steps {
            match *step {
                Step::CopyInput { index, slot } => {
                    self.bufs[slot].copy_from_slice(inputs[index].as_slice());
                }
                Step::Node { node, slot } => {
                    let mut out = std::mem::take(&mut self.bufs[slot]);
                    {
                        let nodes = &self.graph.nodes;
                        let gnode = &nodes[node];
                        let bufs = &self.bufs;
                        let slot_of = &self.slot_of;
                        match &gnode.op {
                            GOp::Base(op) => {
                                eval_base_slices(op, gnode.shape, bufs, slot_of, nodes, &mut out);
                            }
                            GOp::Fused(seg) => {
                                let cols = gnode.shape.1;
                                run_fused_from_slots(
                                    seg,
                                    bufs,
                                    slot_of,
                                    cols,
                                    &mut out,
                                    &mut self.scratch,
                                );
                            }
                        }
                    }
                    self.bufs[slot] = out;
                }
            }
        }

        for (o, &node) in outs.iter_mut().zip(&self.graph.outputs) {
            o.as_mut_slice()
                .copy_from_slice(&self.bufs[self.slot_of[node]]);
        }
        Ok(())
    }

    /// Executes once, timing every step and aggregating by op label.
    /// Diagnostic for finding where an iteration's time goes; entries come
    /// back sorted by total seconds, descending.
    pub fn profile(&mut self, inputs: &[Array<S>]) -> Result<Vec<ProfileEntry>> {
        let mut outs = self.alloc_outputs();
        let mut agg: HashMap<String, ProfileEntry> = HashMap::new();
        let labels: Vec<Option<String>> = self
            .steps
            .iter()
            .map(|s| match *s {
                Step::CopyInput { .. } => None,
                Step::Node { node, .. } => Some(op_label(&self.graph, node)),
            })
            .collect();
        // Warm once so allocation and cache effects do not charge one label.
        self.execute_into(inputs, &mut outs)?;
        for (i, label) in labels.iter().enumerate() {
            let Some(label) = label else { continue };
            let t0 = std::time::Instant::now();
            self.run_step(inputs, i);
            let dt = t0.elapsed().as_secs_f64();
            let e = agg.entry(label.clone()).or_insert_with(|| ProfileEntry {
                label: label.clone(),
                calls: 0,
                seconds: 0.0,
            });
            e.calls += 1;
            e.seconds += dt;
        }
        let mut entries: Vec<ProfileEntry> = agg.into_values().collect();
        entries.sort_by(|a, b| b.seconds.total_cmp(&a.seconds));
        Ok(entries)
    }

    fn run_step(&mut self, inputs: &[Array<S>], i: usize) {
        match self.steps[i] {
            Step::CopyInput { index, slot } => {
                self.bufs[slot].copy_from_slice(inputs[index].as_slice());
            }
            Step::Node { node, slot } => {
                let mut out = std::mem::take(&mut self.bufs[slot]);
                {
                    let nodes = &self.graph.nodes;
                    let gnode = &nodes[node];
                    let bufs = &self.bufs;
                    let slot_of = &self.slot_of;
                    match &gnode.op {
                        GOp::Base(op) => {
                            eval_base_slices(op, gnode.shape, bufs, slot_of, nodes, &mut out);
                        }
                        GOp::Fused(seg) => {
                            let cols = gnode.shape.1;
                            run_fused_from_slots(
                                seg,
                                bufs,
                                slot_of,
                                cols,
                                &mut out,
                                &mut self.scratch,
                            );
                        }
                    }
                }
                self.bufs[slot] = out;
            }
        }
    }
}

/// Aggregated cost of one op label inside `Kernel::profile`.
#[derive(Debug, Clone)]
pub struct ProfileEntry {
    pub label: String,
    pub calls: usize,
    pub seconds: f64,
}

fn op_label(graph: &ExprGraph, id: NodeId) -> String {
    let node = &graph.nodes[id];
    let (r, c) = node.shape;
    match &node.op {
        GOp::Fused(seg) => format!("fused[{} ops] [{r},{c}]", seg.instrs.len()),
        GOp::Base(op) => {
            // Products get the contraction dimension, which the output
            // shape alone hides.
            let contraction = match op {
                Op::Matmul(a, _) | Op::MatmulNT(a, _) => Some(graph.nodes[*a].shape.1),
                Op::MatmulTN(a, _) => Some(graph.nodes[*a].shape.0),
                _ => None,
            };
            let name = match op {
                Op::Input { .. } => "input",
                Op::Const => "const",
                Op::Add(..) => "add",
                Op::Sub(..) => "sub",
                Op::Mul(..) => "mul",
                Op::Div(..) => "div",
                Op::Neg(_) => "neg",
                Op::Square(_) => "square",
                Op::PowI(..) => "powi",
                Op::Exp(_) => "exp",
                Op::Sin(_) => "sin",
                Op::Cos(_) => "cos",
                Op::Tanh(_) => "tanh",
                Op::Sech(_) => "sech",
                Op::Matmul(..) => "matmul",
                Op::MatmulNT(..) => "matmul_nt",
                Op::MatmulTN(..) => "matmul_tn",
                Op::Transpose(_) => "transpose",
                Op::Sum(_) => "sum",
                Op::Mean(_) => "mean",
                Op::SumRows(_) => "sum_rows",
                Op::BroadcastScalar(_) => "broadcast_scalar",
                Op::BroadcastRow(_) => "broadcast_row",
                Op::Concat(_) => "concat",
                Op::SliceCols { .. } => "slice_cols",
                Op::ScatterCols { .. } => "scatter_cols",
            };
            match contraction {
                Some(k) => format!("{name} [{r}x{k}x{c}]"),
                None => format!("{name} [{r},{c}]"),
            }
        }
    }
}

/// Same loop as `exec_fused`, reading sources straight from arena slots.
fn run_fused_from_slots<S: Scalar>(
    seg: &FusedSeg,
    bufs: &[Vec<S>],
    slot_of: &[usize],
    cols: usize,
    out: &mut [S],
    scratch: &mut FusedScratch<S>,
) {
    scratch.ensure(seg.n_regs);
    let regs = &mut scratch.regs;
    let len = out.len();
    let mut base = 0;
    while base < len {
        let bl = BLOCK.min(len - base);
        for instr in &seg.instrs {
            // Resolve the (at most one) source slice of this instruction.
            match *instr {
                FInstr::Load { dst, input } => {
                    let (node, kind) = seg.inputs[input];
                    let src = bufs[slot_of[node]].as_slice();
                    let d = dst * BLOCK;
                    match kind {
                        LoadKind::Full => regs[d..d + bl].copy_from_slice(&src[base..base + bl]),
                        LoadKind::Scalar => regs[d..d + bl].fill(src[0]),
                        LoadKind::Row => row_load(&mut regs[d..d + bl], src, base, cols),
                    }
                }
                ref other => {
                    // Non-load instructions touch registers only.
                    step_fused(other, seg, &[], cols, regs, base, bl);
                }
            }
        }
        let o = seg.out_reg * BLOCK;
        out[base..base + bl].copy_from_slice(&regs[o..o + bl]);
        base += bl;
    }
}

/// `eval_base` against arena slots instead of per-node Arrays.
fn eval_base_slices<S: Scalar>(
    op: &Op,
    shape: Shape,
    bufs: &[Vec<S>],
    slot_of: &[usize],
    nodes: &[super::GNode],
    out: &mut Vec<S>,
) {
    let get = |id: NodeId| bufs[slot_of[id]].as_slice();
    let o = out.as_mut_slice();
    match *op {
        Op::Input { .. } | Op::Const => unreachable!("leaves have no execution step"),
        Op::Add(a, b) => kern::add(get(a), get(b), o),
        Op::Sub(a, b) => kern::sub(get(a), get(b), o),
        Op::Mul(a, b) => kern::mul(get(a), get(b), o),
        Op::Div(a, b) => kern::div(get(a), get(b), o),
        Op::Neg(a) => kern::neg(get(a), o),
        Op::Square(a) => kern::square(get(a), o),
        Op::PowI(a, n) => kern::powi(get(a), n, o),
        Op::Exp(a) => kern::exp(get(a), o),
        Op::Sin(a) => kern::sin(get(a), o),
        Op::Cos(a) => kern::cos(get(a), o),
        Op::Tanh(a) => kern::tanh(get(a), o),
        Op::Sech(a) => kern::sech_u(get(a), o),
        Op::Matmul(a, b) => {
            let (m, k) = nodes[a].shape;
            let n = nodes[b].shape.1;
            kern::matmul(m, k, n, get(a), get(b), o);
        }
        Op::MatmulNT(a, b) => {
            let (m, k) = nodes[a].shape;
            let n = nodes[b].shape.0;
            kern::matmul_nt(m, k, n, get(a), get(b), o);
        }
        Op::MatmulTN(a, b) => {
            let (k, m) = nodes[a].shape;
            let n = nodes[b].shape.1;
            kern::matmul_tn(m, k, n, get(a), get(b), o);
        }
        Op::Transpose(a) => {
            let (r, c) = nodes[a].shape;
            kern::transpose(r, c, get(a), o);
        }
        Op::Sum(a) => kern::sum(get(a), o),
        Op::Mean(a) => kern::mean(get(a), o),
        Op::SumRows(a) => {
            let (r, c) = nodes[a].shape;
            kern::sum_rows(r, c, get(a), o);
        }
        Op::BroadcastScalar(a) => kern::broadcast_scalar(get(a), o),
        Op::BroadcastRow(a) => kern::broadcast_row(shape.0, shape.1, get(a), o),
        Op::Concat(ref parts) => {
            let vals: Vec<(&[S], usize)> =
                parts.iter().map(|&p| (get(p), nodes[p].shape.1)).collect();
            kern::concat_cols(shape.0, &vals, o);
        }
        Op::SliceCols { input, start, len } => {
            let (r, c) = nodes[input].shape;
            kern::slice_cols(r, c, start, len, get(input), o);
        }
        Op::ScatterCols { input, start, len } => {
            let r = nodes[input].shape.0;
            kern::scatter_cols(r, shape.1, start, len, get(input), o);
        }
    }
}

/// Lowers a graph to a kernel, running the mode's optimization pipeline
/// first: cleanup passes for `Graph`, cleanup plus fusion for `Fused`.
pub fn compile<S: Scalar>(graph: &ExprGraph, mode: KernelMode) -> Result<Kernel<S>> {
    let pipeline = match mode {
        KernelMode::Graph => super::passes::GRAPH_PIPELINE,
        KernelMode::Fused => super::passes::FUSED_PIPELINE,
    };
    let (graph, _) = super::passes::optimize(graph, pipeline)?;
    graph.validate()?;
    let n = graph.nodes.len();

    // Liveness: index of the last step that reads each node.
    let mut last_use: Vec<usize> = vec![0; n];
    for (id, node) in graph.nodes.iter().enumerate() {
        for src in node.op.inputs() {
            last_use[src] = id;
        }
    }
    let mut is_output = vec![false; n];
    for &o in &graph.outputs {
        is_output[o] = true;
    }

    let mut slot_of = vec![usize::MAX; n];
    let mut bufs: Vec<Vec<S>> = Vec::new();
    let mut free: HashMap<usize, Vec<usize>> = HashMap::new();
    let mut steps = Vec::new();
    let mut max_regs = 1;

    let acquire = |len: usize, bufs: &mut Vec<Vec<S>>, free: &mut HashMap<usize, Vec<usize>>| {
        if let Some(slot) = free.get_mut(&len).and_then(Vec::pop) {
            slot
        } else {
            bufs.push(vec![S::ZERO; len]);
            bufs.len() - 1
        }
    };

    for (id, node) in graph.nodes.iter().enumerate() {
        let len = node.shape.0 * node.shape.1;
        match &node.op {
            GOp::Base(Op::Const) => {
                // Preloaded once and live for the whole execution, so the
                // buffer is pinned: never from, never into the free list.
                let cv = node.cval.as_ref().expect("const value");
                bufs.push(cv.as_slice().iter().map(|&v| S::from_f64(v)).collect());
                slot_of[id] = bufs.len() - 1;
                continue;
            }
            GOp::Base(Op::Input { slot: feed }) => {
                let slot = acquire(len, &mut bufs, &mut free);
                slot_of[id] = slot;
                steps.push(Step::CopyInput { index: *feed, slot });
            }
            op => {
                if let GOp::Fused(seg) = op {
                    max_regs = max_regs.max(seg.n_regs);
                }
                let slot = acquire(len, &mut bufs, &mut free);
                slot_of[id] = slot;
                steps.push(Step::Node { node: id, slot });
            }
        }
        // Release inputs whose last reader is this node.
        for src in node.op.inputs() {
            if last_use[src] == id
                && !is_output[src]
                && !matches!(graph.nodes[src].op, GOp::Base(Op::Const))
            {
                let slen = {
                    let s = graph.nodes[src].shape;
                    s.0 * s.1
                };
                free.entry(slen).or_default().push(slot_of[src]);
            }
        }
    }

    Ok(Kernel {
        mode,
        steps,
        slot_of,
        bufs,
        input_shapes: graph.input_shapes(),
        output_shapes: graph.output_shapes(),
        scratch: FusedScratch::new(max_regs),
        graph,
    })
}
