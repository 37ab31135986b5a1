//! Graph optimization passes.
//!
//! All passes are semantics-preserving rewrites: for any valid feed, the
//! optimized graph interprets to the same outputs (bitwise, since every mode
//! bottoms out in the same slice kernels). Placeholders are never removed,
//! so the feed signature of a graph is stable across optimization.

use std::collections::HashMap;

use super::{eval_base, BinKind, ExprGraph, FInstr, FusedSeg, GNode, GOp, LoadKind, UnKind};
use crate::array::Array;
use crate::error::Result;
use crate::tape::{NodeId, Op};

/// One rewrite pass selectable in an optimization pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pass {
    /// Drops nodes unreachable from the outputs (placeholders always stay).
    Dce,
    /// Merges structurally identical nodes; add/mul operands are compared
    /// order-insensitively.
    Cse,
    /// Evaluates nodes whose inputs are all constants, unless that would
    /// materialize a large broadcast.
    ConstFold,
    /// Collapses elementwise chains into register-program segments.
    FuseElementwise,
}

impl Pass {
    pub fn name(self) -> &'static str {
        match self {
            Pass::Dce => "dce",
            Pass::Cse => "cse",
            Pass::ConstFold => "const-fold",
            Pass::FuseElementwise => "fuse-elementwise",
        }
    }
}

/// Node-count accounting for one executed pass.
#[derive(Debug, Clone)]
pub struct PassStats {
    pub pass: &'static str,
    pub nodes_before: usize,
    pub nodes_after: usize,
}

/// Pipeline for graph-mode kernels: cleanup without fusion.
pub const GRAPH_PIPELINE: &[Pass] = &[Pass::Dce, Pass::Cse, Pass::ConstFold, Pass::Dce];

/// Pipeline for fused kernels: cleanup, fuse, then sweep absorbed nodes.
pub const FUSED_PIPELINE: &[Pass] = &[
    Pass::Dce,
    Pass::Cse,
    Pass::ConstFold,
    Pass::Dce,
    Pass::FuseElementwise,
    Pass::Dce,
];

/// Runs `passes` in order. Node count never increases across a pass.
pub fn optimize(graph: &ExprGraph, passes: &[Pass]) -> Result<(ExprGraph, Vec<PassStats>)> {
    let mut g = graph.clone();
    let mut stats = Vec::with_capacity(passes.len());
    for &pass in passes {
        let before = g.node_count();
        g = match pass {
            Pass::Dce => dce(&g),
            Pass::Cse => cse(&g),
            Pass::ConstFold => const_fold(&g)?,
            Pass::FuseElementwise => fuse_elementwise(&g),
        };
        debug_assert!(g.validate().is_ok(), "{} broke the graph", pass.name());
        stats.push(PassStats {
            pass: pass.name(),
            nodes_before: before,
            nodes_after: g.node_count(),
        });
    }
    Ok((g, stats))
}

/// Structural equality ignoring graph identity; used to check idempotence.
pub fn structurally_equal(a: &ExprGraph, b: &ExprGraph) -> bool {
    if a.inputs != b.inputs || a.outputs != b.outputs || a.nodes.len() != b.nodes.len() {
        return false;
    }
    a.nodes.iter().zip(&b.nodes).all(|(x, y)| {
        x.op == y.op
            && x.shape == y.shape
            && match (&x.cval, &y.cval) {
                (None, None) => true,
                (Some(u), Some(v)) => u.shape() == v.shape() && u.as_slice() == v.as_slice(),
                _ => false,
            }
    })
}

fn map_ids(op: &GOp, map: &[NodeId]) -> GOp {
    let m = |id: NodeId| map[id];
    match op {
        GOp::Fused(seg) => {
            let mut seg = seg.clone();
            for (id, _) in &mut seg.inputs {
                *id = m(*id);
            }
            GOp::Fused(seg)
        }
        GOp::Base(op) => GOp::Base(match *op {
            Op::Input { slot } => Op::Input { slot },
            Op::Const => Op::Const,
            Op::Add(a, b) => Op::Add(m(a), m(b)),
            Op::Sub(a, b) => Op::Sub(m(a), m(b)),
            Op::Mul(a, b) => Op::Mul(m(a), m(b)),
            Op::Div(a, b) => Op::Div(m(a), m(b)),
            Op::Neg(a) => Op::Neg(m(a)),
            Op::Square(a) => Op::Square(m(a)),
            Op::PowI(a, n) => Op::PowI(m(a), n),
            Op::Exp(a) => Op::Exp(m(a)),
            Op::Sin(a) => Op::Sin(m(a)),
            Op::Cos(a) => Op::Cos(m(a)),
            Op::Tanh(a) => Op::Tanh(m(a)),
            Op::Sech(a) => Op::Sech(m(a)),
            Op::Matmul(a, b) => Op::Matmul(m(a), m(b)),
            Op::MatmulNT(a, b) => Op::MatmulNT(m(a), m(b)),
            Op::MatmulTN(a, b) => Op::MatmulTN(m(a), m(b)),
            Op::Transpose(a) => Op::Transpose(m(a)),
            Op::Sum(a) => Op::Sum(m(a)),
            Op::Mean(a) => Op::Mean(m(a)),
            Op::SumRows(a) => Op::SumRows(m(a)),
            Op::BroadcastScalar(a) => Op::BroadcastScalar(m(a)),
            Op::BroadcastRow(a) => Op::BroadcastRow(m(a)),
            Op::Concat(ref parts) => Op::Concat(parts.iter().map(|&p| m(p)).collect()),
            Op::SliceCols { input, start, len } => Op::SliceCols {
                input: m(input),
                start,
                len,
            },
            Op::ScatterCols { input, start, len } => Op::ScatterCols {
                input: m(input),
                start,
                len,
            },
        }),
    }
}

/// Rebuilds a graph keeping nodes where `keep` is true, remapping ids.
/// `redirect[id]` may point a dropped node at its surviving replacement.
fn rebuild(graph: &ExprGraph, keep: &[bool], redirect: &[NodeId]) -> ExprGraph {
    let mut map = vec![usize::MAX; graph.nodes.len()];
    let mut nodes = Vec::new();
    for (id, node) in graph.nodes.iter().enumerate() {
        if keep[id] {
            map[id] = nodes.len();
            nodes.push(node.clone());
        }
    }
    // Resolve redirects through to kept nodes before remapping. Dropped
    // nodes without a redirect are unreachable; their map entry is never
    // read, so a sentinel is fine.
    let resolve = |mut id: NodeId| loop {
        if keep[id] {
            return map[id];
        }
        let next = redirect[id];
        if next == id {
            return usize::MAX;
        }
        id = next;
    };
    let full_map: Vec<NodeId> = (0..graph.nodes.len()).map(resolve).collect();
    for node in &mut nodes {
        node.op = map_ids(&node.op, &full_map);
    }
    let inputs = graph.inputs.iter().map(|&i| full_map[i]).collect();
    let outputs = graph.outputs.iter().map(|&o| full_map[o]).collect();
    ExprGraph::new(nodes, inputs, outputs)
}

fn dce(graph: &ExprGraph) -> ExprGraph {
    let n = graph.nodes.len();
    let mut keep = vec![false; n];
    for &o in &graph.outputs {
        keep[o] = true;
    }
    for &i in &graph.inputs {
        keep[i] = true;
    }
    for id in (0..n).rev() {
        if keep[id] {
            for src in graph.nodes[id].op.inputs() {
                keep[src] = true;
            }
        }
    }
    if keep.iter().all(|&k| k) {
        return graph.clone();
    }
    let redirect: Vec<NodeId> = (0..n).collect();
    rebuild(graph, &keep, &redirect)
}

/// Hashable identity of a node for value numbering.
#[derive(PartialEq, Eq, Hash)]
enum CseKey {
    Un(u8, NodeId),
    Bin(u8, NodeId, NodeId),
    PowI(NodeId, i32),
    Broadcast(u8, NodeId, usize, usize),
    Concat(Vec<NodeId>),
    Slice(u8, NodeId, usize, usize),
    Const((usize, usize), Vec<u64>),
}

fn cse_key(node: &GNode, map: &[NodeId]) -> Option<CseKey> {
    let m = |id: NodeId| map[id];
    let op = match &node.op {
        GOp::Base(op) => op,
        GOp::Fused(_) => return None,
    };
    Some(match *op {
        Op::Input { .. } => return None,
        Op::Const => CseKey::Const(
            node.shape,
            node.cval
                .as_ref()
                .expect("const value")
                .as_slice()
                .iter()
                .map(|v| v.to_bits())
                .collect(),
        ),
        // Float add/mul are exactly commutative, so operands sort.
        Op::Add(a, b) => {
            let (a, b) = (m(a), m(b));
            CseKey::Bin(0, a.min(b), a.max(b))
        }
        Op::Mul(a, b) => {
            let (a, b) = (m(a), m(b));
            CseKey::Bin(1, a.min(b), a.max(b))
        }
        Op::Sub(a, b) => CseKey::Bin(2, m(a), m(b)),
        Op::Div(a, b) => CseKey::Bin(3, m(a), m(b)),
        Op::Matmul(a, b) => CseKey::Bin(4, m(a), m(b)),
        Op::MatmulNT(a, b) => CseKey::Bin(5, m(a), m(b)),
        Op::MatmulTN(a, b) => CseKey::Bin(6, m(a), m(b)),
        Op::Neg(a) => CseKey::Un(0, m(a)),
        Op::Square(a) => CseKey::Un(1, m(a)),
        Op::Exp(a) => CseKey::Un(2, m(a)),
        Op::Sin(a) => CseKey::Un(3, m(a)),
        Op::Cos(a) => CseKey::Un(4, m(a)),
        Op::Tanh(a) => CseKey::Un(5, m(a)),
        Op::Sech(a) => CseKey::Un(6, m(a)),
        Op::Transpose(a) => CseKey::Un(7, m(a)),
        Op::Sum(a) => CseKey::Un(8, m(a)),
        Op::Mean(a) => CseKey::Un(9, m(a)),
        Op::SumRows(a) => CseKey::Un(10, m(a)),
        Op::PowI(a, n) => CseKey::PowI(m(a), n),
        Op::BroadcastScalar(a) => CseKey::Broadcast(0, m(a), node.shape.0, node.shape.1),
        Op::BroadcastRow(a) => CseKey::Broadcast(1, m(a), node.shape.0, node.shape.1),
        Op::Concat(ref parts) => CseKey::Concat(parts.iter().map(|&p| m(p)).collect()),
        Op::SliceCols { input, start, len } => CseKey::Slice(0, m(input), start, len),
        Op::ScatterCols { input, start, len } => CseKey::Slice(1, m(input), start, len),
    })
}

fn cse(graph: &ExprGraph) -> ExprGraph {
    let n = graph.nodes.len();
    let mut seen: HashMap<CseKey, NodeId> = HashMap::new();
    let mut keep = vec![true; n];
    let mut redirect: Vec<NodeId> = (0..n).collect();
    // redirect resolves forward as we go: map ids through it before keying.
    let mut canon: Vec<NodeId> = (0..n).collect();
    let mut changed = false;
    for (id, node) in graph.nodes.iter().enumerate() {
        let Some(key) = cse_key(node, &canon) else {
            continue;
        };
        match seen.get(&key) {
            Some(&prior) => {
                keep[id] = false;
                redirect[id] = prior;
                canon[id] = prior;
                changed = true;
            }
            None => {
                seen.insert(key, id);
            }
        }
    }
    if !changed {
        return graph.clone();
    }
    rebuild(graph, &keep, &redirect)
}

/// Folding never materializes an array larger than its largest input unless
/// the result is small anyway.
const FOLD_GROWTH_CAP: usize = 64;

fn const_fold(graph: &ExprGraph) -> Result<ExprGraph> {
    let n = graph.nodes.len();
    let mut is_const = vec![false; n];
    let mut folded: Vec<Option<Array<f64>>> = vec![None; n];
    let mut nodes: Vec<GNode> = Vec::with_capacity(n);
    let mut changed = false;
    for (id, node) in graph.nodes.iter().enumerate() {
        let mut out_node = node.clone();
        if let GOp::Base(op) = &node.op {
            if matches!(op, Op::Const) {
                is_const[id] = true;
                folded[id] = node.cval.clone();
            } else if !matches!(
                op,
                // Broadcasts expand O(1) data at execute time; folding them
                // would only trade that for materialized redundancy.
                Op::Input { .. } | Op::BroadcastScalar(_) | Op::BroadcastRow(_)
            ) {
                let srcs = op.inputs();
                if !srcs.is_empty() && srcs.iter().all(|&s| is_const[s]) {
                    let out_len = node.shape.0 * node.shape.1;
                    let max_in = srcs
                        .iter()
                        .map(|&s| {
                            let (r, c) = graph.nodes[s].shape;
                            r * c
                        })
                        .max()
                        .unwrap_or(0);
                    if out_len <= max_in.max(FOLD_GROWTH_CAP) {
                        let mut out = Array::<f64>::zeros(node.shape.0, node.shape.1);
                        {
                            let get = |i: NodeId| folded[i].as_ref().expect("const input");
                            eval_base(op, node.shape, &get, &mut out, &graph.nodes);
                        }
                        is_const[id] = true;
                        folded[id] = Some(out.clone());
                        out_node = GNode {
                            op: GOp::Base(Op::Const),
                            shape: node.shape,
                            cval: Some(out),
                        };
                        changed = true;
                    }
                }
            }
        }
        nodes.push(out_node);
    }
    if !changed {
        return Ok(graph.clone());
    }
    let g = ExprGraph::new(nodes, graph.inputs.clone(), graph.outputs.clone());
    g.validate()?;
    Ok(g)
}

/// Elementwise role a node can play inside a fused segment.
enum FuseRole {
    /// Lane computation (unary/binary/powi) at the segment shape.
    Compute,
    /// Broadcast absorbed into a load kind; not an instruction.
    Producer,
}

fn fuse_role(op: &Op) -> Option<FuseRole> {
    Some(match op {
        Op::Add(..)
        | Op::Sub(..)
        | Op::Mul(..)
        | Op::Div(..)
        | Op::Neg(_)
        | Op::Square(_)
        | Op::PowI(..)
        | Op::Exp(_)
        | Op::Sin(_)
        | Op::Cos(_)
        | Op::Tanh(_)
        | Op::Sech(_) => FuseRole::Compute,
        Op::BroadcastScalar(_) | Op::BroadcastRow(_) => FuseRole::Producer,
        _ => return None,
    })
}

fn fuse_elementwise(graph: &ExprGraph) -> ExprGraph {
    let n = graph.nodes.len();

    // consumers[id]: nodes reading id; outputs count as external consumers.
    let mut consumers: Vec<Vec<NodeId>> = vec![Vec::new(); n];
    for (id, node) in graph.nodes.iter().enumerate() {
        for src in node.op.inputs() {
            consumers[src].push(id);
        }
    }
    let mut is_output = vec![false; n];
    for &o in &graph.outputs {
        is_output[o] = true;
    }

    // Group assignment in reverse topological order: a node joins the group
    // of its consumers only when every consumer is in that one group, so no
    // value is ever computed twice.
    let mut group_of: Vec<Option<usize>> = vec![None; n];
    let mut groups: Vec<Group> = Vec::new();
    struct Group {
        root: NodeId,
        shape: (usize, usize),
        members: Vec<NodeId>,
    }
    for id in (0..n).rev() {
        let node = &graph.nodes[id];
        let op = match &node.op {
            GOp::Base(op) => op,
            GOp::Fused(_) => continue,
        };
        let Some(role) = fuse_role(op) else { continue };
        let shared = if is_output[id] || consumers[id].is_empty() {
            None
        } else {
            let g0 = group_of[consumers[id][0]];
            if g0.is_some() && consumers[id].iter().all(|&c| group_of[c] == g0) {
                g0
            } else {
                None
            }
        };
        match role {
            FuseRole::Compute => match shared {
                Some(g) if groups[g].shape == node.shape => {
                    group_of[id] = Some(g);
                    groups[g].members.push(id);
                }
                _ => {
                    group_of[id] = Some(groups.len());
                    groups.push(Group {
                        root: id,
                        shape: node.shape,
                        members: vec![id],
                    });
                }
            },
            FuseRole::Producer => {
                // A broadcast joins only if its output shape matches the
                // group; it contributes a load, not an instruction.
                if let Some(g) = shared {
                    if groups[g].shape == node.shape {
                        group_of[id] = Some(g);
                        groups[g].members.push(id);
                    }
                }
            }
        }
    }

    // A segment pays off only when it covers at least two nodes.
    for g in &mut groups {
        if g.members.len() < 2 {
            for &m in &g.members {
                group_of[m] = None;
            }
            g.members.clear();
        }
    }

    if groups.iter().all(|g| g.members.is_empty()) {
        return graph.clone();
    }

    // Emit each surviving group as one Fused node at its root's position.
    let mut seg_of_root: HashMap<NodeId, FusedSeg> = HashMap::new();
    for g in &groups {
        if g.members.is_empty() {
            continue;
        }
        let mut members = g.members.clone();
        members.sort_unstable();
        seg_of_root.insert(g.root, emit_segment(graph, &members, g.root));
    }

    let mut keep = vec![true; n];
    let mut redirect: Vec<NodeId> = (0..n).collect();
    let mut nodes: Vec<GNode> = graph.nodes.clone();
    for g in &groups {
        for &m in &g.members {
            if m != g.root {
                keep[m] = false;
                // Absorbed members are unreachable after the rewrite; point
                // any stale reference at the root for rebuild soundness.
                redirect[m] = g.root;
            }
        }
        if !g.members.is_empty() {
            nodes[g.root] = GNode {
                op: GOp::Fused(seg_of_root.remove(&g.root).expect("segment emitted")),
                shape: g.shape,
                cval: None,
            };
        }
    }
    let interim = ExprGraph::new(nodes, graph.inputs.clone(), graph.outputs.clone());
    rebuild(&interim, &keep, &redirect)
}

/// Builds the register program for one group. `members` is sorted ascending,
/// so every in-group operand is defined before use.
fn emit_segment(graph: &ExprGraph, members: &[NodeId], root: NodeId) -> FusedSeg {
    let member_set: HashMap<NodeId, ()> = members.iter().map(|&m| (m, ())).collect();
    let mut inputs: Vec<(NodeId, LoadKind)> = Vec::new();
    let mut input_index: HashMap<(NodeId, LoadKind), usize> = HashMap::new();
    let mut instrs: Vec<FInstr> = Vec::new();
    let mut reg_of: HashMap<NodeId, usize> = HashMap::new();
    let mut next_reg = 0;

    // Loads an external value (or materializes a scalar const) into a reg.
    let load = |node: NodeId,
                kind: LoadKind,
                instrs: &mut Vec<FInstr>,
                inputs: &mut Vec<(NodeId, LoadKind)>,
                input_index: &mut HashMap<(NodeId, LoadKind), usize>,
                next_reg: &mut usize|
     -> usize {
        let gn = &graph.nodes[node];
        if kind == LoadKind::Scalar {
            if let (GOp::Base(Op::Const), Some(cv)) = (&gn.op, &gn.cval) {
                let dst = *next_reg;
                *next_reg += 1;
                instrs.push(FInstr::Imm {
                    dst,
                    value: cv.item(),
                });
                return dst;
            }
        }
        let idx = *input_index.entry((node, kind)).or_insert_with(|| {
            inputs.push((node, kind));
            inputs.len() - 1
        });
        let dst = *next_reg;
        *next_reg += 1;
        instrs.push(FInstr::Load { dst, input: idx });
        dst
    };

    // Register for an operand: in-group compute reg, absorbed broadcast's
    // source load, or an external full load.
    macro_rules! operand {
        ($src:expr) => {{
            let src: NodeId = $src;
            if let Some(&r) = reg_of.get(&src) {
                r
            } else if member_set.contains_key(&src) {
                // Absorbed producer: load its source with the right kind.
                let (inner, kind) = match &graph.nodes[src].op {
                    GOp::Base(Op::BroadcastScalar(a)) => (*a, LoadKind::Scalar),
                    GOp::Base(Op::BroadcastRow(a)) => (*a, LoadKind::Row),
                    other => unreachable!("member without reg: {other:?}"),
                };
                let r = load(
                    inner,
                    kind,
                    &mut instrs,
                    &mut inputs,
                    &mut input_index,
                    &mut next_reg,
                );
                reg_of.insert(src, r);
                r
            } else {
                let r = load(
                    src,
                    LoadKind::Full,
                    &mut instrs,
                    &mut inputs,
                    &mut input_index,
                    &mut next_reg,
                );
                reg_of.insert(src, r);
                r
            }
        }};
    }

    for &m in members {
        let op = match &graph.nodes[m].op {
            GOp::Base(op) => op,
            GOp::Fused(_) => unreachable!("fused node in group"),
        };
        let un = |kind: UnKind, a: usize, next_reg: &mut usize, instrs: &mut Vec<FInstr>| {
            let dst = *next_reg;
            *next_reg += 1;
            instrs.push(FInstr::Unary { dst, kind, a });
            dst
        };
        let dst = match *op {
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
                let kind = match op {
                    Op::Add(..) => BinKind::Add,
                    Op::Sub(..) => BinKind::Sub,
                    Op::Mul(..) => BinKind::Mul,
                    Op::Div(..) => BinKind::Div,
                    _ => unreachable!(),
                };
                let (ra, rb) = (operand!(a), operand!(b));
                let dst = next_reg;
                next_reg += 1;
                instrs.push(FInstr::Binary {
                    dst,
                    kind,
                    a: ra,
                    b: rb,
                });
                dst
            }
            Op::Neg(a) => {
                let r = operand!(a);
                un(UnKind::Neg, r, &mut next_reg, &mut instrs)
            }
            Op::Square(a) => {
                let r = operand!(a);
                un(UnKind::Square, r, &mut next_reg, &mut instrs)
            }
            Op::Exp(a) => {
                let r = operand!(a);
                un(UnKind::Exp, r, &mut next_reg, &mut instrs)
            }
            Op::Sin(a) => {
                let r = operand!(a);
                un(UnKind::Sin, r, &mut next_reg, &mut instrs)
            }
            Op::Cos(a) => {
                let r = operand!(a);
                un(UnKind::Cos, r, &mut next_reg, &mut instrs)
            }
            Op::Tanh(a) => {
                let r = operand!(a);
                un(UnKind::Tanh, r, &mut next_reg, &mut instrs)
            }
            Op::Sech(a) => {
                let r = operand!(a);
                un(UnKind::Sech, r, &mut next_reg, &mut instrs)
            }
            Op::PowI(a, np) => {
                let r = operand!(a);
                let dst = next_reg;
                next_reg += 1;
                instrs.push(FInstr::Powi { dst, a: r, n: np });
                dst
            }
            Op::BroadcastScalar(a) => {
                let r = load(
                    a,
                    LoadKind::Scalar,
                    &mut instrs,
                    &mut inputs,
                    &mut input_index,
                    &mut next_reg,
                );
                r
            }
            Op::BroadcastRow(a) => {
                let r = load(
                    a,
                    LoadKind::Row,
                    &mut instrs,
                    &mut inputs,
                    &mut input_index,
                    &mut next_reg,
                );
                r
            }
            ref other => unreachable!("non-elementwise member {other:?}"),
        };
        reg_of.insert(m, dst);
    }

    let out_reg = reg_of[&root];
    let seg = FusedSeg {
        inputs,
        instrs,
        n_regs: next_reg,
        out_reg,
    };
    compact_registers(seg)
}

/// Linear-scan register reuse so segment scratch stays cache-resident.
fn compact_registers(seg: FusedSeg) -> FusedSeg {
    let n = seg.n_regs;
    let mut last_read = vec![0usize; n];
    for (i, instr) in seg.instrs.iter().enumerate() {
        match *instr {
            FInstr::Load { .. } | FInstr::Imm { .. } => {}
            FInstr::Unary { a, .. } | FInstr::Powi { a, .. } => last_read[a] = i,
            FInstr::Binary { a, b, .. } => {
                last_read[a] = i;
                last_read[b] = i;
            }
        }
    }
    last_read[seg.out_reg] = seg.instrs.len();

    let mut alias = vec![usize::MAX; n];
    let mut free: Vec<usize> = Vec::new();
    let mut next = 0;
    let mut assign = |r: usize, alias: &mut Vec<usize>, free: &mut Vec<usize>| {
        alias[r] = free.pop().unwrap_or_else(|| {
            next += 1;
            next - 1
        });
    };
    let mut instrs = seg.instrs.clone();
    for (i, instr) in instrs.iter_mut().enumerate() {
        // Reads first (so a dying operand's slot can be reused by dst).
        let release = |r: usize, alias: &Vec<usize>, free: &mut Vec<usize>| {
            if last_read[r] == i {
                free.push(alias[r]);
            }
        };
        match instr {
            FInstr::Load { dst, .. } | FInstr::Imm { dst, .. } => {
                assign(*dst, &mut alias, &mut free);
                *dst = alias[*dst];
            }
            FInstr::Unary { dst, a, .. } | FInstr::Powi { dst, a, .. } => {
                let ra = alias[*a];
                release(*a, &alias, &mut free);
                assign(*dst, &mut alias, &mut free);
                *dst = alias[*dst];
                *a = ra;
            }
            FInstr::Binary { dst, a, b, .. } => {
                let (ra, rb) = (alias[*a], alias[*b]);
                release(*a, &alias, &mut free);
                if *b != *a {
                    release(*b, &alias, &mut free);
                }
                assign(*dst, &mut alias, &mut free);
                *dst = alias[*dst];
                *a = ra;
                *b = rb;
            }
        }
    }
    FusedSeg {
        inputs: seg.inputs,
        instrs,
        n_regs: next,
        out_reg: alias[seg.out_reg],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::trace;
    use crate::tape::Tape;

    fn feed(rows: usize) -> Array<f64> {
        Array::from_fn(rows, 1, |i, _| (i as f64) * 0.173 - 0.5)
    }

    /// tanh(sin(x) * 2 + 1): the whole chain should fuse into one segment.
    fn chain_graph() -> ExprGraph {
        trace::<f64, _>(&[(10, 1)], |t, args| {
            let s = t.sin(args[0]);
            let two = t.mul_scalar(s, 2.0);
            let one = t.add_scalar(two, 1.0);
            Ok(vec![t.tanh(one)])
        })
        .unwrap()
    }

    fn count_fused(g: &ExprGraph) -> usize {
        g.nodes
            .iter()
            .filter(|n| matches!(n.op, GOp::Fused(_)))
            .count()
    }

    #[test]
    fn fuse_collapses_scalar_chain_to_one_segment() {
        let (g, stats) = optimize(&chain_graph(), FUSED_PIPELINE).unwrap();
        assert_eq!(count_fused(&g), 1);
        // input + fused only: broadcasts and scalar consts were absorbed.
        assert_eq!(g.node_count(), 2);
        for s in &stats {
            assert!(s.nodes_after <= s.nodes_before, "{} grew the graph", s.pass);
        }
        let x = feed(10);
        let plain = chain_graph().interpret(&[x.clone()]).unwrap();
        let fused = g.interpret(&[x]).unwrap();
        assert_eq!(plain[0].as_slice(), fused[0].as_slice());
    }

    #[test]
    fn optimize_is_idempotent() {
        let (g1, _) = optimize(&chain_graph(), FUSED_PIPELINE).unwrap();
        let (g2, _) = optimize(&g1, FUSED_PIPELINE).unwrap();
        assert!(structurally_equal(&g1, &g2));

        let (h1, _) = optimize(&chain_graph(), GRAPH_PIPELINE).unwrap();
        let (h2, _) = optimize(&h1, GRAPH_PIPELINE).unwrap();
        assert!(structurally_equal(&h1, &h2));
    }

    #[test]
    fn cse_merges_duplicate_subtrees() {
        let g = trace::<f64, _>(&[(5, 1)], |t, args| {
            let a = t.sin(args[0]);
            let b = t.sin(args[0]);
            Ok(vec![t.add(a, b)?])
        })
        .unwrap();
        let (opt, _) = optimize(&g, &[Pass::Cse]).unwrap();
        assert_eq!(opt.node_count(), g.node_count() - 1);
        let x = feed(5);
        assert_eq!(
            g.interpret(&[x.clone()]).unwrap()[0].as_slice(),
            opt.interpret(&[x]).unwrap()[0].as_slice()
        );
    }

    #[test]
    fn cse_treats_add_as_commutative() {
        let g = trace::<f64, _>(&[(5, 1), (5, 1)], |t, args| {
            let ab = t.add(args[0], args[1])?;
            let ba = t.add(args[1], args[0])?;
            Ok(vec![t.mul(ab, ba)?])
        })
        .unwrap();
        let (opt, _) = optimize(&g, &[Pass::Cse]).unwrap();
        assert_eq!(opt.node_count(), g.node_count() - 1);
    }

    #[test]
    fn dce_drops_unused_but_keeps_placeholders() {
        let g = trace::<f64, _>(&[(4, 1), (4, 1)], |t, args| {
            let _waste = t.exp(t.sin(args[1]));
            Ok(vec![t.tanh(args[0])])
        })
        .unwrap();
        let (opt, _) = optimize(&g, &[Pass::Dce]).unwrap();
        assert_eq!(opt.input_count(), 2);
        assert_eq!(opt.node_count(), g.node_count() - 2);
        // Feed signature unchanged: both inputs still required.
        let out = opt.interpret(&[feed(4), feed(4)]).unwrap();
        assert_eq!(out[0].rows(), 4);
    }

    #[test]
    fn const_fold_replaces_constant_subtree() {
        let g = trace::<f64, _>(&[(3, 1)], |t, args| {
            let c = t.mul(
                t.constant(Array::scalar(3.0)),
                t.constant(Array::scalar(4.0)),
            )?;
            let cb = t.broadcast_scalar(c, 3, 1)?;
            Ok(vec![t.add(args[0], cb)?])
        })
        .unwrap();
        let (opt, _) = optimize(&g, GRAPH_PIPELINE).unwrap();
        assert!(opt.node_count() < g.node_count());
        let out = opt.interpret(&[feed(3)]).unwrap();
        let want = g.interpret(&[feed(3)]).unwrap();
        assert_eq!(out[0].as_slice(), want[0].as_slice());
    }

    #[test]
    fn const_fold_skips_large_broadcast_materialization() {
        // Broadcasting a constant scalar to [10000,1] must stay lazy.
        let g = trace::<f64, _>(&[(10000, 1)], |t, args| {
            let c = t.constant(Array::scalar(2.5));
            let cb = t.broadcast_scalar(c, 10000, 1)?;
            Ok(vec![t.mul(args[0], cb)?])
        })
        .unwrap();
        let (opt, _) = optimize(&g, &[Pass::ConstFold]).unwrap();
        let big_consts = opt
            .nodes
            .iter()
            .filter(|n| {
                matches!(n.op, GOp::Base(Op::Const)) && n.shape.0 * n.shape.1 > FOLD_GROWTH_CAP
            })
            .count();
        assert_eq!(big_consts, 0);
    }

    #[test]
    fn fusion_barriers_stay_unfused() {
        // matmul and sum are barriers; elementwise islands around them fuse.
        let g = trace::<f64, _>(&[(8, 3), (3, 4)], |t, args| {
            let h = t.tanh(t.matmul(args[0], args[1])?);
            let s = t.sum(t.square(h));
            Ok(vec![s])
        })
        .unwrap();
        let (opt, _) = optimize(&g, FUSED_PIPELINE).unwrap();
        let has_matmul = opt
            .nodes
            .iter()
            .any(|n| matches!(n.op, GOp::Base(Op::Matmul(..))));
        let has_sum = opt
            .nodes
            .iter()
            .any(|n| matches!(n.op, GOp::Base(Op::Sum(_))));
        assert!(has_matmul && has_sum);
        // tanh and square fuse into one segment between the barriers.
        assert_eq!(count_fused(&opt), 1);
        let x = Array::from_fn(8, 3, |i, j| (i + j) as f64 * 0.1 - 1.0);
        let w = Array::from_fn(3, 4, |i, j| (i as f64 - j as f64) * 0.2);
        assert_eq!(
            g.interpret(&[x.clone(), w.clone()]).unwrap()[0].as_slice(),
            opt.interpret(&[x, w]).unwrap()[0].as_slice()
        );
    }

    #[test]
    fn shared_value_not_recomputed_by_fusion() {
        // exp(x) feeds two separate consumers; it must not be duplicated
        // into both segments.
        let g = trace::<f64, _>(&[(6, 1)], |t, args| {
            let e = t.exp(args[0]);
            let a = t.sum(t.sin(e));
            let b = t.sum(t.cos(e));
            Ok(vec![a, b])
        })
        .unwrap();
        let (opt, _) = optimize(&g, FUSED_PIPELINE).unwrap();
        let exp_count = opt
            .nodes
            .iter()
            .map(|n| match &n.op {
                GOp::Base(Op::Exp(_)) => 1,
                GOp::Fused(seg) => seg
                    .instrs
                    .iter()
                    .filter(|i| {
                        matches!(
                            i,
                            FInstr::Unary {
                                kind: UnKind::Exp,
                                ..
                            }
                        )
                    })
                    .count(),
                _ => 0,
            })
            .sum::<usize>();
        assert_eq!(exp_count, 1);
        let x = feed(6);
        let want = g.interpret(&[x.clone()]).unwrap();
        let got = opt.interpret(&[x]).unwrap();
        assert_eq!(want[0].as_slice(), got[0].as_slice());
        assert_eq!(want[1].as_slice(), got[1].as_slice());
    }

    #[test]
    fn fused_output_matches_over_block_boundaries() {
        // 1000 rows spans multiple 256-lane blocks, plus a row broadcast.
        let g = trace::<f64, _>(&[(1000, 3), (1, 3)], |t, args| {
            let b = t.broadcast_row(args[1], 1000)?;
            Ok(vec![t.tanh(t.add(t.square(args[0]), b)?)])
        })
        .unwrap();
        let (opt, _) = optimize(&g, FUSED_PIPELINE).unwrap();
        assert_eq!(count_fused(&opt), 1);
        let x = Array::from_fn(1000, 3, |i, j| ((i * 3 + j) as f64).sin());
        let r = Array::from_vec(1, 3, vec![0.5, -1.5, 2.0]).unwrap();
        let want = g.interpret(&[x.clone(), r.clone()]).unwrap();
        let got = opt.interpret(&[x, r]).unwrap();
        assert_eq!(want[0].as_slice(), got[0].as_slice());
    }

    #[test]
    fn register_compaction_bounds_scratch() {
        // A long chain reuses registers instead of growing linearly.
        let g = trace::<f64, _>(&[(10, 1)], |t, args| {
            let mut x = args[0];
            for _ in 0..30 {
                x = t.tanh(x);
            }
            Ok(vec![x])
        })
        .unwrap();
        let (opt, _) = optimize(&g, FUSED_PIPELINE).unwrap();
        let max_regs = opt
            .nodes
            .iter()
            .filter_map(|n| match &n.op {
                GOp::Fused(seg) => Some(seg.n_regs),
                _ => None,
            })
            .max()
            .unwrap();
        assert!(max_regs <= 4, "segment uses {max_regs} registers");
    }

    #[test]
    fn derive_then_optimize_preserves_gradient_values() {
        let g = trace::<f64, _>(&[(32, 1)], |t, args| {
            let y = t.mul(t.sin(args[0]), t.exp(t.neg(args[0])))?;
            Ok(vec![t.sum(y)])
        })
        .unwrap();
        let d = g.derive(0, 0).unwrap();
        let (opt, _) = optimize(&d, FUSED_PIPELINE).unwrap();
        let x = feed(32);
        let want = d.interpret(&[x.clone()]).unwrap();
        let got = opt.interpret(&[x]).unwrap();
        assert_eq!(want[0].as_slice(), got[0].as_slice());
    }

    #[test]
    fn optimized_training_graph_matches_eager_loss() {
        // A small end-to-end shape: loss of a 2-layer net on 100 points.
        let x = Array::from_fn(100, 1, |i, _| i as f64 / 50.0 - 1.0);
        let w1 = Array::from_fn(1, 8, |_, j| (j as f64 * 0.37).sin() * 0.5);
        let b1 = Array::from_fn(1, 8, |_, j| j as f64 * 0.01);
        let w2 = Array::from_fn(8, 1, |i, _| (i as f64 * 0.21).cos() * 0.4);

        let g = trace::<f64, _>(&[(100, 1), (1, 8), (1, 8), (8, 1)], |t, a| {
            let h = t.tanh(t.add(t.matmul(a[0], a[1])?, t.broadcast_row(a[2], 100)?)?);
            let y = t.matmul(h, a[3])?;
            Ok(vec![t.mean(t.square(y))])
        })
        .unwrap();
        let (fused, _) = optimize(&g, FUSED_PIPELINE).unwrap();
        let feeds = [x.clone(), w1.clone(), b1.clone(), w2.clone()];

        let tape = Tape::<f64>::new();
        let xt = tape.input(x);
        let w1t = tape.input(w1);
        let b1t = tape.input(b1);
        let w2t = tape.input(w2);
        let h = tape.tanh(
            tape.add(
                tape.matmul(xt, w1t).unwrap(),
                tape.broadcast_row(b1t, 100).unwrap(),
            )
            .unwrap(),
        );
        let y = tape.matmul(h, w2t).unwrap();
        let loss = tape.mean(tape.square(y));
        let eager = tape.value(loss).unwrap();

        let got = fused.interpret(&feeds).unwrap();
        assert_eq!(got[0].as_slice(), eager.as_slice());
    }
}
