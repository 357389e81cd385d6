//! Differentiable numeric primitives with reverse-mode gradients.

mod adam;
mod array;
mod gradcheck;
pub mod kernels;
mod layers;
mod params;
mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use array::NumArray;
pub use gradcheck::{grad_check, GradCheckReport, FULL_CHECK_LIMIT, SAMPLED_COORDS};
pub use layers::{linear, multi_head, residual_norm, scaled_attention, MultiHeadVars, LN_EPS};
pub use params::{glorot, ParamSet, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use tape::{Gradients, Tape, Var};
