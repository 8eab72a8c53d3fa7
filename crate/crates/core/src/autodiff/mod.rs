//! Dense tensors with a forward tangent channel and a reverse pass.
//!
//! The network is evaluated on [`DualBatch`]es: each activation travels with
//! its derivative with respect to the scalar time input. Losses may consume
//! that derivative, and [`dual_backward`] differentiates the whole augmented
//! computation with respect to every parameter.

mod dual;
pub mod gradcheck;
mod matrix;
mod primitives;

pub use dual::DualBatch;
pub use gradcheck::{check_gradients, relative_error, GradCheckReport};
pub use matrix::Matrix;
pub use primitives::{
    concat_backward, concat_forward, dual_backward, dual_forward, sigmoid, swish, swish_d1,
    swish_d2, Adjoints, BatchNormCache, Mode, Primitive, PrimitiveCache,
};

#[cfg(test)]
mod primitive_tests;
