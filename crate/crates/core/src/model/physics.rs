use serde::{Deserialize, Serialize};

use crate::autodiff::sigmoid;
use crate::data::EMOTION_FEATURES;

/// softplus(x) = ln(1 + eˣ), evaluated without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn inverse_softplus(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp_m1()).ln()
    } else {
        y.exp_m1().ln()
    }
}

/// Trainable coefficients of `γ·dEDA/dt + α₀·EDA = βᵀe` and the physics weight.
///
/// The weight is `λ = max(softplus(ρ), floor)`; `ρ` is unconstrained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsParams {
    /// Decay coefficient.
    pub alpha0: f64,
    /// Weights for PANAS mean, SAM valence, SAM arousal.
    pub beta: [f64; EMOTION_FEATURES],
    /// Time sensitivity.
    pub gamma: f64,
    pub rho: f64,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        Self {
            alpha0: 1.0,
            beta: [0.1; EMOTION_FEATURES],
            gamma: 1.0,
            rho: inverse_softplus(0.1),
        }
    }
}

impl PhysicsParams {
    pub fn lambda_raw(&self) -> f64 {
        softplus(self.rho)
    }

    pub fn lambda_eff(&self, floor: f64) -> f64 {
        self.lambda_raw().max(floor)
    }

    /// dλ_eff/dρ; zero while the floor is active.
    pub fn lambda_derivative(&self, floor: f64) -> f64 {
        if self.lambda_raw() > floor {
            sigmoid(self.rho)
        } else {
            0.0
        }
    }

    pub fn is_finite(&self) -> bool {
        self.alpha0.is_finite()
            && self.gamma.is_finite()
            && self.rho.is_finite()
            && self.beta.iter().all(|b| b.is_finite())
    }
}
