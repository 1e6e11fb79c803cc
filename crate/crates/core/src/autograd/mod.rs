//! Reverse-mode differentiation over the tensor kernels.

pub mod gradcheck;
mod graph;
mod params;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, GradMismatch};
pub use graph::{BnUpdate, Graph, SingularityEvent, Var, DENOMINATOR_FLOOR, SINGULARITY_THRESHOLD};
pub use params::{Param, ParamId, ParamStore};
