//! Small reverse-mode automatic differentiation engine over `f64` tensors.
//!
//! Only the layers the networks need are provided: convolution and its
//! transpose, batch and instance normalization, the four activations,
//! dropout, reductions and the elementwise algebra used to compose them.
//! Backward passes can be recorded (`create_graph`) so that a gradient norm
//! can itself be differentiated.

mod conv;
mod norm;
mod ops;
mod tape;
mod tensor;

pub use conv::{conv1d, conv1d_out_len, conv_transpose1d, conv_transpose1d_out_len};
pub use norm::{batch_norm1d, instance_norm1d, RunningStats, BN_MOMENTUM, NORM_EPS};
pub use ops::{Activation, Mode, Reduction};
pub use tape::{GradientMap, Tape};
pub use tensor::{
    debug_checks, deterministic_reductions, set_debug_checks, set_deterministic_reductions,
    Tensor,
};
