//! Tensor IR: straight-line programs in A-normal form over statically shaped
//! dense tensors, plus the device-mesh and machine descriptions consumed by
//! the partitioner.
//!
//! A [`Module`] is a named function with typed parameters, a list of
//! single-assignment [`Binding`]s, and one result variable. Shapes are written
//! explicitly on parameters and inferred for bindings; a shape annotation on a
//! binding in source is optional and checked against the inferred shape.
//!
//! The textual format (see [`parse_module`] / [`print_module`]):
//!
//! ```text
//! def mlp(x: f32[256, 32], w1: f32[32, 64], w2: f32[64, 16]) {
//!   y = matmul(x, w1)
//!   z = relu(y)
//!   w = matmul(z, w2)
//!   return w
//! }
//! ```

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

mod interp;
mod parse;
mod print;

pub use interp::{eval_op, interpret, Tensor};
pub use parse::parse_module;
pub use print::print_module;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Errors produced while parsing, validating, or interpreting a module.
#[derive(Error, Clone, Debug, PartialEq)]
pub enum IrError {
    #[error("{line}:{col}: syntax error: {msg}")]
    Syntax { line: usize, col: usize, msg: String },

    #[error("shape mismatch in binding `{binding}`: {detail}")]
    ShapeMismatch { binding: String, detail: String },

    #[error("binding `{binding}` uses undefined value `{name}`")]
    UseBeforeDef { binding: String, name: String },

    #[error("`{name}` is defined more than once")]
    DuplicateBinding { name: String },

    #[error("result `{name}` is not a defined value")]
    UndefinedResult { name: String },

    #[error("invalid mesh: {0}")]
    Mesh(String),

    #[error("missing input tensor for parameter `{name}`")]
    MissingInput { name: String },

    #[error("input `{name}` has shape {got:?}, expected {expected:?}")]
    InputShape { name: String, expected: Vec<usize>, got: Vec<usize> },
}

// ---------------------------------------------------------------------------
// Shapes and element types
// ---------------------------------------------------------------------------

/// Element type of a module's tensors. A module uses a single element width;
/// it only affects byte-size accounting, never interpreter arithmetic (which
/// is always f64).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ElemType {
    F16,
    F32,
    F64,
}

impl ElemType {
    pub fn bytes(self) -> usize {
        match self {
            ElemType::F16 => 2,
            ElemType::F32 => 4,
            ElemType::F64 => 8,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            ElemType::F16 => "f16",
            ElemType::F32 => "f32",
            ElemType::F64 => "f64",
        }
    }

    pub fn from_token(tok: &str) -> Option<ElemType> {
        match tok {
            "f16" => Some(ElemType::F16),
            "f32" => Some(ElemType::F32),
            "f64" => Some(ElemType::F64),
            _ => None,
        }
    }
}

/// Static tensor shape: ordered positive extents plus the element width.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub dims: Vec<usize>,
    pub elem_bytes: usize,
}

impl Shape {
    pub fn new(dims: Vec<usize>, elem_bytes: usize) -> Shape {
        debug_assert!(dims.iter().all(|&d| d >= 1));
        debug_assert!(elem_bytes >= 1);
        Shape { dims, elem_bytes }
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn elems(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn bytes(&self) -> u64 {
        self.elems() as u64 * self.elem_bytes as u64
    }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Combiner {
    Add,
    Mul,
    Max,
}

impl Combiner {
    pub fn token(self) -> &'static str {
        match self {
            Combiner::Add => "add",
            Combiner::Mul => "mul",
            Combiner::Max => "max",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Mul,
    Sub,
    Div,
}

impl BinOp {
    pub fn token(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Mul => "mul",
            BinOp::Sub => "sub",
            BinOp::Div => "div",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UnOp {
    Relu,
    Neg,
    Exp,
    Recip,
}

impl UnOp {
    pub fn token(self) -> &'static str {
        match self {
            UnOp::Relu => "relu",
            UnOp::Neg => "neg",
            UnOp::Exp => "exp",
            UnOp::Recip => "recip",
        }
    }
}

/// The IR's operation set. Matmul is restricted to rank-2 operands with a
/// matching contraction extent; elementwise binaries require equal shapes
/// (implicit broadcasting is expressed with an explicit `broadcast`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OpKind {
    Matmul,
    Transpose { l: usize, r: usize },
    Reduce { dim: usize, combiner: Combiner },
    Broadcast { at: usize, extent: usize },
    Binary(BinOp),
    Unary(UnOp),
}

impl OpKind {
    pub fn arity(&self) -> usize {
        match self {
            OpKind::Matmul | OpKind::Binary(_) => 2,
            _ => 1,
        }
    }

    /// Result extents for the given operand shapes, or a diagnostic message.
    pub fn infer_result_dims(&self, operands: &[&Shape]) -> Result<Vec<usize>, String> {
        match *self {
            OpKind::Matmul => {
                let (a, b) = (operands[0], operands[1]);
                if a.rank() != 2 || b.rank() != 2 {
                    return Err(format!(
                        "matmul requires rank-2 operands, got ranks {} and {}",
                        a.rank(),
                        b.rank()
                    ));
                }
                if a.dims[1] != b.dims[0] {
                    return Err(format!(
                        "matmul contraction extents differ: {} vs {}",
                        a.dims[1], b.dims[0]
                    ));
                }
                Ok(vec![a.dims[0], b.dims[1]])
            }
            OpKind::Transpose { l, r } => {
                let a = operands[0];
                if l >= a.rank() || r >= a.rank() {
                    return Err(format!(
                        "transpose indices [{l},{r}] out of range for rank {}",
                        a.rank()
                    ));
                }
                let mut dims = a.dims.clone();
                dims.swap(l, r);
                Ok(dims)
            }
            OpKind::Reduce { dim, .. } => {
                let a = operands[0];
                if dim >= a.rank() {
                    return Err(format!("reduce dim {dim} out of range for rank {}", a.rank()));
                }
                let mut dims = a.dims.clone();
                dims.remove(dim);
                Ok(dims)
            }
            OpKind::Broadcast { at, extent } => {
                let a = operands[0];
                if at > a.rank() {
                    return Err(format!(
                        "broadcast position {at} out of range for rank {}",
                        a.rank()
                    ));
                }
                if extent == 0 {
                    return Err("broadcast extent must be positive".to_string());
                }
                let mut dims = a.dims.clone();
                dims.insert(at, extent);
                Ok(dims)
            }
            OpKind::Binary(_) => {
                let (a, b) = (operands[0], operands[1]);
                if a.dims != b.dims {
                    return Err(format!(
                        "elementwise operands have different shapes: {:?} vs {:?}",
                        a.dims, b.dims
                    ));
                }
                Ok(a.dims.clone())
            }
            OpKind::Unary(_) => Ok(operands[0].dims.clone()),
        }
    }
}

// ---------------------------------------------------------------------------
// Modules
// ---------------------------------------------------------------------------

/// One `var = op(operands)` step. `result_shape` is always the inferred shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Binding {
    pub var: String,
    pub op: OpKind,
    pub operands: Vec<String>,
    pub result_shape: Shape,
}

/// Where a variable is defined within a module.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarDef {
    Param(usize),
    Binding(usize),
}

/// A straight-line tensor function. Invariants (enforced by [`Module::validate`],
/// which the parser always runs): identifiers are defined before use, each
/// exactly once, and all binding shapes are consistent with their operands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Module {
    pub name: String,
    pub elem: ElemType,
    pub params: Vec<(String, Shape)>,
    pub bindings: Vec<Binding>,
    pub result: String,
}

impl Module {
    /// Re-checks all structural invariants. Useful for modules built in code.
    pub fn validate(&self) -> Result<(), IrError> {
        let mut defs: BTreeMap<&str, VarDef> = BTreeMap::new();
        for (i, (name, shape)) in self.params.iter().enumerate() {
            if shape.dims.iter().any(|&d| d == 0) {
                return Err(IrError::ShapeMismatch {
                    binding: name.clone(),
                    detail: "zero extent".to_string(),
                });
            }
            if defs.insert(name, VarDef::Param(i)).is_some() {
                return Err(IrError::DuplicateBinding { name: name.clone() });
            }
        }
        for (i, b) in self.bindings.iter().enumerate() {
            if b.operands.len() != b.op.arity() {
                return Err(IrError::ShapeMismatch {
                    binding: b.var.clone(),
                    detail: format!(
                        "operation takes {} operand(s), got {}",
                        b.op.arity(),
                        b.operands.len()
                    ),
                });
            }
            let mut shapes = Vec::new();
            for o in &b.operands {
                match defs.get(o.as_str()) {
                    Some(d) => shapes.push(self.shape_of_def(*d)),
                    None => {
                        return Err(IrError::UseBeforeDef {
                            binding: b.var.clone(),
                            name: o.clone(),
                        })
                    }
                }
            }
            let dims = b.op.infer_result_dims(&shapes).map_err(|detail| {
                IrError::ShapeMismatch { binding: b.var.clone(), detail }
            })?;
            if dims != b.result_shape.dims {
                return Err(IrError::ShapeMismatch {
                    binding: b.var.clone(),
                    detail: format!(
                        "declared shape {:?} does not match inferred {:?}",
                        b.result_shape.dims, dims
                    ),
                });
            }
            if defs.insert(&b.var, VarDef::Binding(i)).is_some() {
                return Err(IrError::DuplicateBinding { name: b.var.clone() });
            }
        }
        if !defs.contains_key(self.result.as_str()) {
            return Err(IrError::UndefinedResult { name: self.result.clone() });
        }
        Ok(())
    }

    pub fn def_of(&self, var: &str) -> Option<VarDef> {
        if let Some(i) = self.params.iter().position(|(n, _)| n == var) {
            return Some(VarDef::Param(i));
        }
        self.bindings.iter().position(|b| b.var == var).map(VarDef::Binding)
    }

    pub fn shape_of_def(&self, def: VarDef) -> &Shape {
        match def {
            VarDef::Param(i) => &self.params[i].1,
            VarDef::Binding(i) => &self.bindings[i].result_shape,
        }
    }

    pub fn shape_of(&self, var: &str) -> Option<&Shape> {
        self.def_of(var).map(|d| self.shape_of_def(d))
    }
}

// ---------------------------------------------------------------------------
// Device mesh and machine description
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeshAxis {
    pub name: String,
    pub size: usize,
}

/// An n-dimensional logical device lattice spanned by named axes. The total
/// device count is the product of the axis sizes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mesh {
    axes: Vec<MeshAxis>,
}

impl Mesh {
    pub fn new(axes: Vec<(&str, usize)>) -> Result<Mesh, IrError> {
        let axes: Vec<MeshAxis> = axes
            .into_iter()
            .map(|(name, size)| MeshAxis { name: name.to_string(), size })
            .collect();
        Mesh::from_axes(axes)
    }

    pub fn from_axes(axes: Vec<MeshAxis>) -> Result<Mesh, IrError> {
        if axes.is_empty() {
            return Err(IrError::Mesh("mesh has no axes".to_string()));
        }
        for (i, a) in axes.iter().enumerate() {
            if a.size < 2 {
                return Err(IrError::Mesh(format!("axis `{}` must have size >= 2", a.name)));
            }
            if axes[..i].iter().any(|b| b.name == a.name) {
                return Err(IrError::Mesh(format!("duplicate axis `{}`", a.name)));
            }
        }
        Ok(Mesh { axes })
    }

    /// Parses the flag format `b=2,m=4` (ordered).
    pub fn parse(text: &str) -> Result<Mesh, IrError> {
        let mut axes = Vec::new();
        for part in text.split(',') {
            let part = part.trim();
            let (name, size) = part
                .split_once('=')
                .ok_or_else(|| IrError::Mesh(format!("expected `name=size`, got `{part}`")))?;
            let size: usize = size
                .trim()
                .parse()
                .map_err(|_| IrError::Mesh(format!("bad axis size in `{part}`")))?;
            axes.push(MeshAxis { name: name.trim().to_string(), size });
        }
        Mesh::from_axes(axes)
    }

    pub fn axes(&self) -> &[MeshAxis] {
        &self.axes
    }

    pub fn device_count(&self) -> usize {
        self.axes.iter().map(|a| a.size).product()
    }

    pub fn axis_size(&self, name: &str) -> Option<usize> {
        self.axes.iter().find(|a| a.name == name).map(|a| a.size)
    }

    pub fn axis_index(&self, name: &str) -> Option<usize> {
        self.axes.iter().position(|a| a.name == name)
    }

    /// Coordinates of a device id in row-major axis order.
    pub fn coords(&self, device: usize) -> Vec<usize> {
        let mut rem = device;
        let mut out = vec![0; self.axes.len()];
        for (i, a) in self.axes.iter().enumerate().rev() {
            out[i] = rem % a.size;
            rem /= a.size;
        }
        out
    }
}

impl fmt::Display for Mesh {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> =
            self.axes.iter().map(|a| format!("{}={}", a.name, a.size)).collect();
        write!(f, "{}", parts.join(","))
    }
}

/// Per-device compute rate, per-axis link bandwidth, and device memory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MachineSpec {
    pub flops_per_sec: f64,
    pub bandwidth: BTreeMap<String, f64>,
    pub device_memory_bytes: u64,
}

impl MachineSpec {
    /// A uniform machine: one bandwidth figure shared by every mesh axis.
    pub fn uniform(flops_per_sec: f64, bytes_per_sec: f64, device_memory_bytes: u64, mesh: &Mesh) -> MachineSpec {
        let bandwidth = mesh
            .axes()
            .iter()
            .map(|a| (a.name.clone(), bytes_per_sec))
            .collect();
        MachineSpec { flops_per_sec, bandwidth, device_memory_bytes }
    }
}
