//! Reverse-mode automatic differentiation on dense arrays.
//!
//! A [`Tape`] records primitive operations as a forward computation runs
//! (define-by-run, rebuilt per pass); [`Tape::backward`] replays the record
//! in reverse to accumulate gradients. [`gradcheck::finite_diff_check`]
//! verifies analytic gradients against central finite differences.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, GradCheckReport, ParamCheck, ParamSet};
pub use tape::{GradientMap, Tape, Var};
pub use tensor::{fl, FloatWidth, Real, Tensor};
