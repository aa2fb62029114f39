//! Canonical pretty-printer. `parse_module(print_module(m))` reproduces `m`
//! exactly; binding shape annotations are never emitted since they are
//! recomputed on parse.

use std::fmt::Write;

use super::{Module, OpKind};

pub(super) fn op_head(op: &OpKind) -> String {
    match *op {
        OpKind::Matmul => "matmul".to_string(),
        OpKind::Transpose { l, r } => format!("transpose[{l}, {r}]"),
        OpKind::Reduce { dim, combiner } => format!("reduce[{dim}, {}]", combiner.token()),
        OpKind::Broadcast { at, extent } => format!("broadcast[{at}, {extent}]"),
        OpKind::Binary(b) => b.token().to_string(),
        OpKind::Unary(u) => u.token().to_string(),
    }
}

pub fn print_module(m: &Module) -> String {
    let mut out = String::new();
    let params: Vec<String> = m
        .params
        .iter()
        .map(|(name, shape)| {
            let dims: Vec<String> = shape.dims.iter().map(|d| d.to_string()).collect();
            format!("{name}: {}[{}]", m.elem.token(), dims.join(", "))
        })
        .collect();
    let _ = writeln!(out, "def {}({}) {{", m.name, params.join(", "));
    for b in &m.bindings {
        let _ = writeln!(out, "  {} = {}({})", b.var, op_head(&b.op), b.operands.join(", "));
    }
    let _ = writeln!(out, "  return {}", m.result);
    out.push_str("}\n");
    out
}
