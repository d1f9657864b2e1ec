//! Dense kernels, reverse-mode differentiation and the optimizer.
//!
//! Everything runs in `f64`. Model code is generic over [`Ops`], so the same
//! forward definition is evaluated directly ([`Eval`]) at inference time and
//! recorded on a [`Tape`] for training and gradient checks.

mod adam;
mod gradcheck;
mod init;
mod ops;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState, Hyper};
pub use gradcheck::grad_check;
pub use init::ParamRng;
pub use ops::{Eval, Ops};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{dot, layer_norm, linear_forward, softmax, softmax_rows, Tensor2};
