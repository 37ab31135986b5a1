//! Human-readable graph listing, one node per line.

use std::fmt::Write;

use super::{ExprGraph, FInstr, GOp};
use crate::tape::Op;

/// Renders a graph as `id: op(args) [rows,cols]` lines in topological
/// order, with input and output manifests at the end.
pub fn dump(graph: &ExprGraph) -> String {
    let mut out = String::new();
    for (id, node) in graph.nodes.iter().enumerate() {
        let (r, c) = node.shape;
        let desc = match &node.op {
            GOp::Base(op) => base_desc(op, node),
            GOp::Fused(seg) => {
                let n_ops = seg
                    .instrs
                    .iter()
                    .filter(|i| {
                        matches!(
                            i,
                            FInstr::Unary { .. } | FInstr::Binary { .. } | FInstr::Powi { .. }
                        )
                    })
                    .count();
                let srcs: Vec<String> = seg.inputs.iter().map(|(n, _)| n.to_string()).collect();
                format!(
                    "fused[{n_ops} ops, {} regs]({})",
                    seg.n_regs,
                    srcs.join(", ")
                )
            }
        };
        writeln!(out, "{id}: {desc} [{r},{c}]").expect("string write");
    }
    let ins: Vec<String> = graph.inputs.iter().map(|i| i.to_string()).collect();
    let outs: Vec<String> = graph.outputs.iter().map(|o| o.to_string()).collect();
    writeln!(out, "inputs: {}", ins.join(", ")).expect("string write");
    writeln!(out, "outputs: {}", outs.join(", ")).expect("string write");
    out
}

fn base_desc(op: &Op, node: &super::GNode) -> String {
    let bin = |name: &str, a: usize, b: usize| format!("{name}({a}, {b})");
    let un = |name: &str, a: usize| format!("{name}({a})");
    match *op {
        Op::Input { slot } => format!("input(slot {slot})"),
        Op::Const => {
            let cv = node.cval.as_ref().expect("const value");
            if cv.len() == 1 {
                format!("const({})", cv.item())
            } else {
                format!("const({}x{})", cv.rows(), cv.cols())
            }
        }
        Op::Add(a, b) => bin("add", a, b),
        Op::Sub(a, b) => bin("sub", a, b),
        Op::Mul(a, b) => bin("mul", a, b),
        Op::Div(a, b) => bin("div", a, b),
        Op::Neg(a) => un("neg", a),
        Op::Square(a) => un("square", a),
        Op::PowI(a, n) => format!("powi({a}, {n})"),
        Op::Exp(a) => un("exp", a),
        Op::Sin(a) => un("sin", a),
        Op::Cos(a) => un("cos", a),
        Op::Tanh(a) => un("tanh", a),
        Op::Sech(a) => un("sech", a),
        Op::Matmul(a, b) => bin("matmul", a, b),
        Op::MatmulNT(a, b) => bin("matmul_nt", a, b),
        Op::MatmulTN(a, b) => bin("matmul_tn", a, b),
        Op::Transpose(a) => un("transpose", a),
        Op::Sum(a) => un("sum", a),
        Op::Mean(a) => un("mean", a),
        Op::SumRows(a) => un("sum_rows", a),
        Op::BroadcastScalar(a) => un("broadcast_scalar", a),
        Op::BroadcastRow(a) => un("broadcast_row", a),
        Op::Concat(ref parts) => {
            let ps: Vec<String> = parts.iter().map(|p| p.to_string()).collect();
            format!("concat({})", ps.join(", "))
        }
        Op::SliceCols { input, start, len } => {
            format!("slice_cols({input}, {start}..{})", start + len)
        }
        Op::ScatterCols { input, start, len } => {
            format!("scatter_cols({input}, {start}..{})", start + len)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::passes::{optimize, FUSED_PIPELINE};
    use crate::graph::trace;

    #[test]
    fn dump_lists_every_node_once() {
        let g = trace::<f64, _>(&[(4, 1)], |t, args| {
            Ok(vec![t.sum(t.tanh(t.mul_scalar(args[0], 2.0)))])
        })
        .unwrap();
        let text = dump(&g);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), g.node_count() + 2);
        assert!(lines[0].starts_with("0: input(slot 0)"));
        assert!(text.contains("outputs:"));
    }

    #[test]
    fn dump_shows_fused_segments() {
        let g = trace::<f64, _>(&[(4, 1)], |t, args| {
            Ok(vec![t.tanh(t.mul_scalar(t.sin(args[0]), 2.0))])
        })
        .unwrap();
        let (opt, _) = optimize(&g, FUSED_PIPELINE).unwrap();
        let text = dump(&opt);
        assert!(text.contains("fused["), "no fused line in:\n{text}");
    }
}
