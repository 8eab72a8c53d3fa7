//! Multi-task physics-informed network for electrodermal activity (EDA).
//!
//! A small two-head network regresses window-mean EDA and classifies binary
//! stress from a time proxy and three self-report features. Training adds the
//! squared residual of the first-order dynamics
//!
//! ```text
//! γ·dEDA/dt + α₀·EDA = βᵀe
//! ```
//!
//! where dEDA/dt is carried through the network as a forward tangent and the
//! coefficients (α₀, β, γ) and the physics weight λ are trained with the
//! network weights.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod autodiff;
pub mod baselines;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod objective;
pub mod rng;
pub mod trainer;

pub use error::{CheckpointError, Error, Result};

/// Shortest decimal string that parses back to exactly `x`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}
