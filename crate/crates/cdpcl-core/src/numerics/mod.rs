//! Dense f64 arrays and a reverse-mode gradient engine sized for the toy
//! network and all losses. 64-bit throughout; graphs are rebuilt each step.

mod checkpoint;
mod fdcheck;
mod gemm;
mod graph;
mod ops;
mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, FORMAT_VERSION};
pub use fdcheck::finite_difference_check;
pub use graph::{GradOp, Graph, Var};
pub use ops::{OpKind, GUARD_EPS};
pub use tensor::Tensor;
