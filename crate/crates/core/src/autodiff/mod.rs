//! Reverse-mode differentiation over dense-matrix computation graphs.
//!
//! Gradients come from a single reverse sweep over a [`Tape`]. Exact
//! Hessian-vector products come from the same sweep when the tape is built
//! with a direction: forward tangents ride along the primal pass and the
//! reverse pass differentiates the adjoints along that direction
//! (forward-over-reverse).

mod objective;
mod tape;

pub use objective::{Counted, EvalCounts, GraphObjective, Objective, Quadratic};
pub use tape::{Derivatives, Tape, Var};

pub(crate) use objective::check_len;
