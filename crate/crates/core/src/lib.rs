//! Physics-informed neural network engine with a tracing expression-graph
//! compiler. Training losses (PDE residuals, boundary/initial/observation
//! terms, implicit Runge-Kutta stage constraints) are built once on an
//! autodiff tape, traced into a static graph together with their parameter
//! gradients, optimized, and executed in one of three modes: eager (tape
//! interpretation), graph (preallocated node-by-node interpretation), or
//! fused (elementwise chains collapsed into single loops).

pub mod array;
pub mod conditions;
pub mod data;
pub mod error;
pub mod graph;
pub mod irk;
pub mod metrics;
pub mod network;
pub mod precision;
pub mod tape;

pub use array::Array;
pub use error::{Error, Result};
pub use graph::cache::KernelCache;
pub use graph::kernel::{compile, Kernel, KernelMode};
pub use graph::passes::{optimize, Pass, PassStats};
pub use graph::{trace, trace_feeding, ExprGraph};
pub use precision::{Precision, Scalar};
pub use tape::{finite_difference_check, Tape, Tensor};
