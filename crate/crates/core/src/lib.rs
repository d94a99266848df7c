pub mod engine;
pub mod error;
pub mod graph;
pub mod harness;
pub mod head;
pub mod numeric;

pub use error::{GmaError, Result};
pub use numeric::{grad_check, AdamaxConfig, AdamaxState, ParamStore, Tape, Tensor, Var};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/tensors.md")]
    mod tensors {}
    #[doc = include_str!("../../../book/src/graphs.md")]
    mod graphs {}
    #[doc = include_str!("../../../book/src/matching.md")]
    mod matching {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
