//! Minimal dense autodiff: a tape of primitives with hand-written backward
//! rules, plus a finite-difference checker.

mod gradcheck;
mod graph;
mod params;

pub use gradcheck::{grad_check, grad_check_params, relative_error, GradCheckReport, ParamCheck};
pub use graph::{sigmoid, softmax, Graph, NodeId, PROB_EPS};
pub use params::{Param, ParamId, ParamStore};
