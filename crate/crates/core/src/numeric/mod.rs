//! Dense tensors, the autodiff tape, gradient checking and Adamax.

pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod tape;
pub mod linear;
pub mod tensor;

pub use gradcheck::{grad_check, grad_check_piecewise, relative_error, GradCheckReport};
pub use optim::{adamax_step, AdamaxConfig, AdamaxState};
pub use params::{Bound, ParamId, ParamStore};
pub use tape::{sigmoid, softplus, Tape, Var};
pub use tensor::{count_valid, Mask, Tensor};
