//! Recover (α₀, β) from noise-free trajectories by descending the physics loss.
//!
//! The residual is invariant in sign under a joint rescaling of (α₀, β, γ), so
//! γ is pinned to a known value and only (α₀, β) move.

use crate::data::EMOTION_FEATURES;
use crate::error::Error;
use crate::model::PhysicsParams;
use crate::objective::{physics_loss, physics_residual};

/// Samples of a trajectory: time, emotion drive, EDA and its derivative.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub e: Vec<[f64; EMOTION_FEATURES]>,
    pub y: Vec<f64>,
    pub dydt: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryConfig {
    pub steps: usize,
    /// Converged once the gradient norm falls below this fraction of its initial value.
    pub relative_tolerance: f64,
    /// Also converged once the gradient norm is below this absolute level.
    pub absolute_tolerance: f64,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            relative_tolerance: 1e-10,
            absolute_tolerance: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryReport {
    pub params: PhysicsParams,
    pub steps_taken: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub gradient_norm: f64,
    pub converged: bool,
}

const DIM: usize = 1 + EMOTION_FEATURES;

/// θ = (α₀, β₁, β₂, β₃); the residual is A·θ + γ·dy/dt with rows A = (y, −e).
fn gradient(rows: &[[f64; DIM]], offset: &[f64], theta: &[f64; DIM]) -> [f64; DIM] {
    let n = rows.len() as f64;
    let mut g = [0.0; DIM];
    for (a, c) in rows.iter().zip(offset) {
        let r: f64 = a.iter().zip(theta).map(|(x, w)| x * w).sum::<f64>() + c;
        for k in 0..DIM {
            g[k] += 2.0 * r * a[k] / n;
        }
    }
    g
}

fn norm(v: &[f64; DIM]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Accelerated gradient descent on the physics loss over (α₀, β) with γ fixed.
///
/// Returns an error carrying the diagnostic report when the step budget runs
/// out before convergence.
pub fn recover_physics(
    trajectory: &Trajectory,
    gamma: f64,
    init: &PhysicsParams,
    cfg: &RecoveryConfig,
) -> std::result::Result<RecoveryReport, RecoveryFailure> {
    let n = trajectory.len();
    if n == 0 || trajectory.e.len() != n || trajectory.dydt.len() != n {
        return Err(RecoveryFailure::Invalid(Error::contract(
            "trajectory columns must be non-empty and equally long",
        )));
    }
    let rows: Vec<[f64; DIM]> = trajectory
        .y
        .iter()
        .zip(&trajectory.e)
        .map(|(&y, e)| [y, -e[0], -e[1], -e[2]])
        .collect();
    let offset: Vec<f64> = trajectory.dydt.iter().map(|d| gamma * d).collect();

    // Step 1/L with L bounding the Hessian's largest eigenvalue (Frobenius norm).
    let mut hess = [[0.0; DIM]; DIM];
    for a in &rows {
        for i in 0..DIM {
            for j in 0..DIM {
                hess[i][j] += 2.0 * a[i] * a[j] / n as f64;
            }
        }
    }
    let lipschitz = hess.iter().flatten().map(|h| h * h).sum::<f64>().sqrt();

    let to_params = |theta: &[f64; DIM]| PhysicsParams {
        alpha0: theta[0],
        beta: [theta[1], theta[2], theta[3]],
        gamma,
        rho: init.rho,
    };
    let loss_of = |theta: &[f64; DIM]| -> f64 {
        let p = to_params(theta);
        physics_residual(&trajectory.dydt, &trajectory.y, &trajectory.e, &p)
            .and_then(|r| physics_loss(&r))
            .unwrap_or(f64::INFINITY)
    };

    let mut theta = [init.alpha0, init.beta[0], init.beta[1], init.beta[2]];
    let initial_loss = loss_of(&theta);
    let g0 = norm(&gradient(&rows, &offset, &theta));
    let target = (cfg.relative_tolerance * g0).max(cfg.absolute_tolerance);
    let report = |theta: &[f64; DIM], steps: usize, g: f64, converged: bool| RecoveryReport {
        params: to_params(theta),
        steps_taken: steps,
        initial_loss,
        final_loss: loss_of(theta),
        gradient_norm: g,
        converged,
    };
    if g0 <= target || lipschitz == 0.0 {
        return Ok(report(&theta, 0, g0, true));
    }

    let step = 1.0 / lipschitz;
    let mut previous = theta;
    let mut momentum_k = 0usize;
    let mut g_norm = g0;
    for s in 1..=cfg.steps {
        let beta_m = momentum_k as f64 / (momentum_k as f64 + 3.0);
        let mut look = [0.0; DIM];
        for k in 0..DIM {
            look[k] = theta[k] + beta_m * (theta[k] - previous[k]);
        }
        let g = gradient(&rows, &offset, &look);
        let mut next = [0.0; DIM];
        for k in 0..DIM {
            next[k] = look[k] - step * g[k];
        }
        // Restart the momentum when it points uphill.
        let uphill: f64 = (0..DIM).map(|k| g[k] * (next[k] - theta[k])).sum();
        if uphill > 0.0 {
            momentum_k = 0;
        } else {
            momentum_k += 1;
        }
        previous = theta;
        theta = next;
        g_norm = norm(&gradient(&rows, &offset, &theta));
        if g_norm <= target {
            return Ok(report(&theta, s, g_norm, true));
        }
    }
    Err(RecoveryFailure::NotConverged(Box::new(report(&theta, cfg.steps, g_norm, false))))
}

/// Why a recovery produced no result.
#[derive(Debug)]
pub enum RecoveryFailure {
    Invalid(Error),
    NotConverged(Box<RecoveryReport>),
}

impl std::fmt::Display for RecoveryFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RecoveryFailure::Invalid(e) => write!(f, "{e}"),
            RecoveryFailure::NotConverged(r) => write!(
                f,
                "physics recovery did not converge after {} steps (loss {:e}, gradient norm {:e})",
                r.steps_taken, r.final_loss, r.gradient_norm
            ),
        }
    }
}

impl std::error::Error for RecoveryFailure {}

impl From<RecoveryFailure> for Error {
    fn from(f: RecoveryFailure) -> Self {
        match f {
            RecoveryFailure::Invalid(e) => e,
            other => Error::NumericDomain {
                location: "physics recovery".into(),
                detail: other.to_string(),
            },
        }
    }
}
