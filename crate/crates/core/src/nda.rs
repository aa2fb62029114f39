//! Dimension-name analysis.
//!
//! Every tensor dimension at every *site* — a parameter definition, a binding
//! result, or one operand use — receives a fresh name. Two relations are
//! collected in a single pass over the program:
//!
//! * *identities*: per-operation equalities between names, one per way the
//!   operation can be computed on shards. A matmul `[d1, d2] x [c1, c2] ->
//!   [a1, a2]` yields `a1 = d1`, `a2 = c2`, and `d2 = c1` (the contraction);
//!   an elementwise op identifies operand and result names positionwise; a
//!   reduce drops the reduced name; a transpose identifies names under the
//!   swap; a broadcast introduces one brand-new unconstrained name.
//! * *flow edges*: a directed edge from each name of a value's definition to
//!   the corresponding fresh name of each of its uses.
//!
//! Quotienting the names by identities alone ([`Quotient::Local`]) yields
//! classes local to one operation; adding the flow edges
//! ([`Quotient::Global`]) yields whole-program colors — the sets of
//! dimensions that must be sharded together.

use std::collections::BTreeMap;

use crate::ir::{Module, OpKind};

/// A fresh dimension name. Ids are dense and globally unique per analysis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DimName(pub u32);

impl DimName {
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

/// A program location that carries dimension names.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Site {
    ParamDef(usize),
    OperandUse { binding: usize, operand: usize },
    BindingResult(usize),
}

impl Site {
    /// Canonical program order: parameters first, then per binding its
    /// operand uses followed by its result.
    fn order_key(self) -> (usize, usize, usize) {
        match self {
            Site::ParamDef(i) => (0, i, 0),
            Site::OperandUse { binding, operand } => (1, binding, operand),
            Site::BindingResult(b) => (1, b, usize::MAX),
        }
    }

    pub fn label(self, m: &Module) -> String {
        match self {
            Site::ParamDef(i) => m.params[i].0.clone(),
            Site::BindingResult(b) => m.bindings[b].var.clone(),
            Site::OperandUse { binding, operand } => {
                format!("{}.{}", m.bindings[binding].var, operand)
            }
        }
    }
}

impl PartialOrd for Site {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Site {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.order_key().cmp(&other.order_key())
    }
}

#[derive(Clone, Debug)]
struct NameInfo {
    site: Site,
    index: usize,
    extent: usize,
}

/// Raw analysis output: per-site name vectors plus the identity and flow
/// relations, before any quotienting.
#[derive(Clone, Debug)]
pub struct NdaRaw {
    names: BTreeMap<Site, Vec<DimName>>,
    identities: Vec<(DimName, DimName)>,
    flow_edges: Vec<(DimName, DimName)>,
    info: Vec<NameInfo>,
}

impl NdaRaw {
    pub fn name_count(&self) -> usize {
        self.info.len()
    }

    pub fn site_of(&self, n: DimName) -> Site {
        self.info[n.idx()].site
    }

    pub fn index_of(&self, n: DimName) -> usize {
        self.info[n.idx()].index
    }

    pub fn extent_of(&self, n: DimName) -> usize {
        self.info[n.idx()].extent
    }

    pub fn names_at(&self, site: Site) -> &[DimName] {
        &self.names[&site]
    }

    pub fn sites(&self) -> impl Iterator<Item = (Site, &[DimName])> {
        self.names.iter().map(|(s, v)| (*s, v.as_slice()))
    }

    /// Unordered identity pairs, in collection order.
    pub fn identities(&self) -> &[(DimName, DimName)] {
        &self.identities
    }

    /// Directed definition-to-use pairs, in collection order.
    pub fn flow_edges(&self) -> &[(DimName, DimName)] {
        &self.flow_edges
    }
}

/// Which relation the quotient identifies names by.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Quotient {
    /// Identities only: classes are local to one operation, each class one
    /// way of partitioning it.
    Local,
    /// Identities plus flow edges: whole-program colors.
    Global,
}

pub type ColorId = usize;

/// A partition of all dimension names into colors. Color ids are assigned in
/// first-encounter order when scanning names by ascending id, so they are
/// stable across runs.
#[derive(Clone, Debug)]
pub struct ColorAssignment {
    pub mode: Quotient,
    color_of: Vec<ColorId>,
    colors: Vec<Vec<DimName>>,
}

impl ColorAssignment {
    pub fn color_of(&self, n: DimName) -> ColorId {
        self.color_of[n.idx()]
    }

    pub fn color_count(&self) -> usize {
        self.colors.len()
    }

    pub fn members(&self, c: ColorId) -> &[DimName] {
        &self.colors[c]
    }

    pub fn colors(&self) -> impl Iterator<Item = (ColorId, &[DimName])> {
        self.colors.iter().enumerate().map(|(i, v)| (i, v.as_slice()))
    }

    /// Every member of a color has the same extent (identities and flow
    /// edges only ever relate equal extents), so a color has one extent.
    pub fn color_extent(&self, c: ColorId, raw: &NdaRaw) -> usize {
        let e = raw.extent_of(self.colors[c][0]);
        debug_assert!(self.colors[c].iter().all(|&n| raw.extent_of(n) == e));
        e
    }

    /// Rebuilds the assignment after merging some colors together (used for
    /// argument-group mirroring). `merge` maps old color id -> class key.
    pub fn coarsen(&self, merge: &[ColorId]) -> ColorAssignment {
        assert_eq!(merge.len(), self.colors.len());
        let mut first_seen: BTreeMap<ColorId, ColorId> = BTreeMap::new();
        let mut colors: Vec<Vec<DimName>> = Vec::new();
        let mut color_of = vec![0; self.color_of.len()];
        for id in 0..self.color_of.len() {
            let old = self.color_of[id];
            let class = merge[old];
            let new = *first_seen.entry(class).or_insert_with(|| {
                colors.push(Vec::new());
                colors.len() - 1
            });
            colors[new].push(DimName(id as u32));
            color_of[id] = new;
        }
        ColorAssignment { mode: self.mode, color_of, colors }
    }
}

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn new(n: usize) -> UnionFind {
        UnionFind { parent: (0..n as u32).collect() }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let gp = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = gp;
            x = gp;
        }
        x
    }

    // The smaller id stays the root, so the representative of a class is
    // always its smallest member.
    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi as usize] = lo;
    }
}

/// Runs the analysis over a shape-checked module.
pub fn analyze(m: &Module) -> NdaRaw {
    let mut raw = NdaRaw {
        names: BTreeMap::new(),
        identities: Vec::new(),
        flow_edges: Vec::new(),
        info: Vec::new(),
    };
    let mut env: BTreeMap<&str, Vec<DimName>> = BTreeMap::new();

    let mut fresh_vec = |raw: &mut NdaRaw, site: Site, extents: &[usize]| -> Vec<DimName> {
        let v: Vec<DimName> = extents
            .iter()
            .enumerate()
            .map(|(index, &extent)| {
                let id = DimName(raw.info.len() as u32);
                raw.info.push(NameInfo { site, index, extent });
                id
            })
            .collect();
        raw.names.insert(site, v.clone());
        v
    };

    for (i, (name, shape)) in m.params.iter().enumerate() {
        let v = fresh_vec(&mut raw, Site::ParamDef(i), &shape.dims);
        env.insert(name, v);
    }

    for (bi, b) in m.bindings.iter().enumerate() {
        // Variable-use rule: fresh names per use, flow edges from the
        // definition's names.
        let mut use_names: Vec<Vec<DimName>> = Vec::new();
        for (oi, operand) in b.operands.iter().enumerate() {
            let def_names = env[operand.as_str()].clone();
            let extents: Vec<usize> = m.shape_of(operand).unwrap().dims.clone();
            let u = fresh_vec(&mut raw, Site::OperandUse { binding: bi, operand: oi }, &extents);
            for (&d, &a) in def_names.iter().zip(&u) {
                raw.flow_edges.push((d, a));
            }
            use_names.push(u);
        }

        let res = fresh_vec(&mut raw, Site::BindingResult(bi), &b.result_shape.dims);
        match b.op {
            OpKind::Matmul => {
                raw.identities.push((res[0], use_names[0][0]));
                raw.identities.push((res[1], use_names[1][1]));
                raw.identities.push((use_names[0][1], use_names[1][0]));
            }
            OpKind::Transpose { l, r } => {
                for i in 0..res.len() {
                    let src = if i == l {
                        r
                    } else if i == r {
                        l
                    } else {
                        i
                    };
                    raw.identities.push((res[i], use_names[0][src]));
                }
            }
            OpKind::Reduce { dim, .. } => {
                // The reduced name joins no identity; it can still be
                // colored through the flow edge from the operand's def.
                for (out_i, in_i) in (0..use_names[0].len()).filter(|&i| i != dim).enumerate() {
                    raw.identities.push((res[out_i], use_names[0][in_i]));
                }
            }
            OpKind::Broadcast { at, .. } => {
                // The inserted name at `at` is brand new and unconstrained.
                for (in_i, out_i) in (0..res.len()).filter(|&i| i != at).enumerate() {
                    raw.identities.push((res[out_i], use_names[0][in_i]));
                }
            }
            OpKind::Binary(_) => {
                for i in 0..res.len() {
                    raw.identities.push((res[i], use_names[0][i]));
                    raw.identities.push((res[i], use_names[1][i]));
                }
            }
            OpKind::Unary(_) => {
                for i in 0..res.len() {
                    raw.identities.push((res[i], use_names[0][i]));
                }
            }
        }
        env.insert(&b.var, res);
    }
    raw
}

/// Closes the chosen relation under union-find and returns the classes.
pub fn quotient(raw: &NdaRaw, mode: Quotient) -> ColorAssignment {
    let n = raw.name_count();
    let mut uf = UnionFind::new(n);
    for &(a, b) in &raw.identities {
        uf.union(a.0, b.0);
    }
    if mode == Quotient::Global {
        for &(a, b) in &raw.flow_edges {
            uf.union(a.0, b.0);
        }
    }
    let mut first_seen: BTreeMap<u32, ColorId> = BTreeMap::new();
    let mut colors: Vec<Vec<DimName>> = Vec::new();
    let mut color_of = vec![0; n];
    for id in 0..n as u32 {
        let root = uf.find(id);
        let c = *first_seen.entry(root).or_insert_with(|| {
            colors.push(Vec::new());
            colors.len() - 1
        });
        colors[c].push(DimName(id));
        color_of[id as usize] = c;
    }
    ColorAssignment { mode, color_of, colors }
}

/// JSON dump of the raw analysis and both quotients, with stable ordering.
pub fn dump_json(m: &Module, raw: &NdaRaw) -> serde_json::Value {
    let local = quotient(raw, Quotient::Local);
    let global = quotient(raw, Quotient::Global);
    let sites: Vec<serde_json::Value> = raw
        .sites()
        .map(|(site, names)| {
            serde_json::json!({
                "site": site.label(m),
                "names": names.iter().map(|n| n.0).collect::<Vec<_>>(),
                "extents": names.iter().map(|&n| raw.extent_of(n)).collect::<Vec<_>>(),
            })
        })
        .collect();
    let quot = |a: &ColorAssignment| -> Vec<Vec<u32>> {
        a.colors.iter().map(|c| c.iter().map(|n| n.0).collect()).collect()
    };
    serde_json::json!({
        "sites": sites,
        "flow_edges": raw.flow_edges.iter().map(|(a, b)| [a.0, b.0]).collect::<Vec<_>>(),
        "identities": raw.identities.iter().map(|(a, b)| [a.0, b.0]).collect::<Vec<_>>(),
        "local_colors": quot(&local),
        "global_colors": quot(&global),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_module;

    fn mlp() -> Module {
        parse_module(
            "def mlp(x: f32[256, 32], w1: f32[32, 64], w2: f32[64, 16]) {
               y = matmul(x, w1)
               z = relu(y)
               w = matmul(z, w2)
               return w
             }",
        )
        .unwrap()
    }

    fn def_dim(m: &Module, raw: &NdaRaw, var: &str, dim: usize) -> DimName {
        use crate::ir::VarDef;
        let site = match m.def_of(var).unwrap() {
            VarDef::Param(i) => Site::ParamDef(i),
            VarDef::Binding(i) => Site::BindingResult(i),
        };
        raw.names_at(site)[dim]
    }

    #[test]
    fn identity_module_has_flow_edges_only() {
        let m = parse_module("def id(x: f32[4, 7]) { return x }").unwrap();
        let raw = analyze(&m);
        assert_eq!(raw.flow_edges().len(), 0);
        assert_eq!(raw.identities().len(), 0);
        assert_eq!(raw.name_count(), 2);
        // No bindings means no uses at all; both quotients are singletons.
        let local = quotient(&raw, Quotient::Local);
        let global = quotient(&raw, Quotient::Global);
        assert_eq!(local.color_count(), 2);
        assert_eq!(global.color_count(), 2);
    }

    #[test]
    fn single_use_module_flow_edge_per_dim() {
        let m = parse_module("def f(x: f32[4, 7]) { y = relu(x) return y }").unwrap();
        let raw = analyze(&m);
        assert_eq!(raw.flow_edges().len(), 2);
        assert_eq!(raw.identities().len(), 2);
    }

    #[test]
    fn mlp_global_has_four_colors() {
        let m = mlp();
        let raw = analyze(&m);
        let global = quotient(&raw, Quotient::Global);
        assert_eq!(global.color_count(), 4);

        // x:[B,X] w1:[X,U] w2:[U,W] y:[B,U] z:[B,U] w:[B,W]
        let c = |var: &str, d: usize| global.color_of(def_dim(&m, &raw, var, d));
        let batch = c("x", 0);
        assert_eq!(batch, c("y", 0));
        assert_eq!(batch, c("z", 0));
        assert_eq!(batch, c("w", 0));
        let contraction1 = c("x", 1);
        assert_eq!(contraction1, c("w1", 0));
        let hidden = c("w1", 1);
        assert_eq!(hidden, c("y", 1));
        assert_eq!(hidden, c("z", 1));
        assert_eq!(hidden, c("w2", 0));
        let out = c("w2", 1);
        assert_eq!(out, c("w", 1));
        let mut distinct = vec![batch, contraction1, hidden, out];
        distinct.dedup();
        distinct.sort_unstable();
        distinct.dedup();
        assert_eq!(distinct.len(), 4);
    }

    #[test]
    fn mlp_local_classes_are_op_local() {
        let m = mlp();
        let raw = analyze(&m);
        let local = quotient(&raw, Quotient::Local);

        // First matmul reads matmul(x: [A1, X1], w1: [X1, A2]) : [A1, A2].
        let x_use = raw.names_at(Site::OperandUse { binding: 0, operand: 0 });
        let w1_use = raw.names_at(Site::OperandUse { binding: 0, operand: 1 });
        let y_def = raw.names_at(Site::BindingResult(0));
        assert_eq!(local.color_of(y_def[0]), local.color_of(x_use[0]));
        assert_eq!(local.color_of(x_use[1]), local.color_of(w1_use[0]));
        assert_eq!(local.color_of(y_def[1]), local.color_of(w1_use[1]));
        // Param defs stay out of local classes.
        let x_def = raw.names_at(Site::ParamDef(0));
        assert_ne!(local.color_of(x_def[0]), local.color_of(x_use[0]));
    }

    #[test]
    fn local_refines_global() {
        let m = mlp();
        let raw = analyze(&m);
        let local = quotient(&raw, Quotient::Local);
        let global = quotient(&raw, Quotient::Global);
        for (_, members) in local.colors() {
            let g = global.color_of(members[0]);
            assert!(members.iter().all(|&n| global.color_of(n) == g));
        }
    }

    #[test]
    fn local_colors_touch_at_most_one_binding() {
        let m = mlp();
        let raw = analyze(&m);
        let local = quotient(&raw, Quotient::Local);
        for (_, members) in local.colors() {
            let mut bindings: Vec<usize> = members
                .iter()
                .filter_map(|&n| match raw.site_of(n) {
                    Site::ParamDef(_) => None,
                    Site::OperandUse { binding, .. } | Site::BindingResult(binding) => {
                        Some(binding)
                    }
                })
                .collect();
            bindings.sort_unstable();
            bindings.dedup();
            assert!(bindings.len() <= 1);
            // Param names never join an op's local class.
            if members.iter().any(|&n| matches!(raw.site_of(n), Site::ParamDef(_))) {
                assert_eq!(members.len(), 1);
            }
        }
    }

    #[test]
    fn transpose_swaps_pairing() {
        let m = parse_module("def f(x: f32[4, 7]) { y = transpose[0, 1](x) return y }").unwrap();
        let raw = analyze(&m);
        let local = quotient(&raw, Quotient::Local);
        let x_use = raw.names_at(Site::OperandUse { binding: 0, operand: 0 });
        let y_def = raw.names_at(Site::BindingResult(0));
        assert_eq!(local.color_of(y_def[0]), local.color_of(x_use[1]));
        assert_eq!(local.color_of(y_def[1]), local.color_of(x_use[0]));
    }

    #[test]
    fn broadcast_inserts_unconstrained_singleton() {
        let m = parse_module("def f(x: f32[4]) { y = broadcast[0, 6](x) return y }").unwrap();
        let raw = analyze(&m);
        let global = quotient(&raw, Quotient::Global);
        let y_def = raw.names_at(Site::BindingResult(0));
        assert_eq!(global.members(global.color_of(y_def[0])).len(), 1);
        assert_eq!(raw.extent_of(y_def[0]), 6);
    }

    #[test]
    fn reduce_drops_reduced_name_but_keeps_it_colorable() {
        let m = parse_module("def f(x: f32[4, 7]) { y = reduce[0, add](x) return y }").unwrap();
        let raw = analyze(&m);
        let global = quotient(&raw, Quotient::Global);
        let x_use = raw.names_at(Site::OperandUse { binding: 0, operand: 0 });
        let x_def = raw.names_at(Site::ParamDef(0));
        // The reduced use name is still connected to the param through flow.
        assert_eq!(global.color_of(x_use[0]), global.color_of(x_def[0]));
        let y_def = raw.names_at(Site::BindingResult(0));
        assert_eq!(global.color_of(y_def[0]), global.color_of(x_def[1]));
    }

    #[test]
    fn color_ids_are_deterministic() {
        let m = mlp();
        let raw = analyze(&m);
        let a = quotient(&raw, Quotient::Global);
        let b = quotient(&analyze(&m), Quotient::Global);
        for id in 0..raw.name_count() {
            assert_eq!(a.color_of(DimName(id as u32)), b.color_of(DimName(id as u32)));
        }
        // First-encounter order: the color of the first dimension name is 0.
        assert_eq!(a.color_of(DimName(0)), 0);
    }
}
