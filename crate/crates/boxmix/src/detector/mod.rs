//! Desk-scale multiscale detector with hand-written forward/backward passes.

pub mod adam;
pub mod checkpoint;
pub mod conv;
pub mod model;
pub mod tensor;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use checkpoint::{file_digest, load_checkpoint, save_checkpoint};
pub use model::{backward, forward, init_params, zero_params, DetectorSpec, ForwardCache};
pub use tensor::{ParamBlock, ParamSet};

/// Gradient container; structurally identical to the parameters.
pub type GradientSet = ParamSet;
