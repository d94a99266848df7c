//! The graph matching attention module: dual-stage encoder, bilateral
//! matching attention, node update and stacking.

pub mod encoder;
pub mod matching;
pub mod module;

pub use encoder::{
    fc_transform, gconv_explicit, gconv_implicit, implicit_adjacency, normalized_laplacian, symmetrize, EncoderMode,
    SimilarityMode,
};
pub use matching::{affinity_matrix, bilateral_attention, log_affinity, update_nodes, BilateralAttention};
pub use module::{
    default_tau, gma_forward, stack_forward, AttentionTrace, EngineOptions, GmaParams, GraphContext, GraphState,
    ModuleTrace,
};
