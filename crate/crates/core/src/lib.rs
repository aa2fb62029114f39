//! Auto-partitioning for straight-line tensor programs on logical device
//! meshes.
//!
//! The pipeline, end to end:
//!
//! 1. [`ir`] — parse and shape-check a module; a dense reference interpreter
//!    acts as the semantics oracle.
//! 2. [`nda`] — assign fresh dimension names to every definition and use
//!    site and derive the two quotients that drive everything else: op-local
//!    classes and whole-program colors.
//! 3. [`dimgraph`] — build the dimension graph, detect sharding conflicts,
//!    close them into compatibility sets, and group isomorphic sets and
//!    structurally identical arguments across repeated layers.
//! 4. [`search`] — Monte Carlo Tree Search over (color, resolution, axis)
//!    sharding actions.
//! 5. [`lowering`] — apply a sharding state: annotate dimensions with mesh
//!    axes, insert collectives, and simulate per-device execution for
//!    equivalence checking.
//! 6. [`cost`] — analytical runtime and peak-memory estimates that score
//!    search states.

pub mod cost;
pub mod dimgraph;
pub mod ir;
pub mod lowering;
pub mod nda;
pub mod search;

pub use dimgraph::Analysis;
pub use ir::{MachineSpec, Mesh, Module, Tensor};
pub use lowering::{ShardedModule, ShardingState};
pub use search::{SearchConfig, SearchResult};
