//! Dense tensors with tape-based reverse-mode differentiation.

mod gradcheck;
mod params;
mod tape;

pub use gradcheck::{
    analytic_gradients, compare_gradients, finite_diff_check, relative_error, GradCheckConfig,
    GradCheckReport, ParamCheck,
};
pub use params::{HasParams, ParamId, ParamStore, Parameter};
pub use tape::{ConvSpec, Tape, Var};
