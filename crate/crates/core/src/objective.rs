//! Supervised losses, the physics residual and the composite objective
//! `L = L_eda + L_emotion + λ·L_physics`.

use crate::autodiff::Mode;
use crate::data::{SampleBatch, EMOTION_FEATURES};
use crate::error::{Error, Result};
use crate::model::{self, Gradients, ModelParams, OutputAdjoints, PhysicsParams, Predictions, PROB_CLAMP};
use crate::rng::Rng;

/// Mean squared error.
pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::contract(format!(
            "mse: {} predictions vs {} targets",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::contract("mse of empty vectors"));
    }
    let sum: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / pred.len() as f64)
}

/// Mean binary cross-entropy with probabilities clamped to `[1e-7, 1 − 1e-7]`.
pub fn bce(prob: &[f64], label: &[u8]) -> Result<f64> {
    if prob.len() != label.len() {
        return Err(Error::contract("bce: probability and label lengths differ"));
    }
    if prob.is_empty() {
        return Err(Error::contract("bce of empty vectors"));
    }
    let mut sum = 0.0;
    for (&p, &y) in prob.iter().zip(label) {
        let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        sum += match y {
            1 => -p.ln(),
            0 => -(1.0 - p).ln(),
            other => return Err(Error::contract(format!("label {other} outside {{0, 1}}"))),
        };
    }
    Ok(sum / prob.len() as f64)
}

/// rᵢ = γ·(dŷ/dt)ᵢ + α₀·ŷᵢ − βᵀeᵢ.
pub fn physics_residual(
    dydt: &[f64],
    y: &[f64],
    e: &[[f64; EMOTION_FEATURES]],
    phys: &PhysicsParams,
) -> Result<Vec<f64>> {
    if dydt.len() != y.len() || e.len() != y.len() {
        return Err(Error::contract(format!(
            "physics residual: lengths {}, {}, {} differ",
            dydt.len(),
            y.len(),
            e.len()
        )));
    }
    Ok(dydt
        .iter()
        .zip(y)
        .zip(e)
        .map(|((&d, &v), ei)| {
            let drive: f64 = phys.beta.iter().zip(ei).map(|(b, x)| b * x).sum();
            phys.gamma * d + phys.alpha0 * v - drive
        })
        .collect())
}

/// Mean squared residual.
pub fn physics_loss(residual: &[f64]) -> Result<f64> {
    if residual.is_empty() {
        return Err(Error::contract("physics loss of an empty residual"));
    }
    Ok(residual.iter().map(|r| r * r).sum::<f64>() / residual.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l_eda: f64,
    pub l_emotion: f64,
    pub l_physics: f64,
    /// The physics weight actually applied (0 when the physics term is off).
    pub lambda_eff: f64,
    pub total: f64,
}

/// Per-term weights of the composite objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub eda: f64,
    pub emotion: f64,
    /// When false the physics term is dropped and λ is reported as 0.
    pub physics: bool,
}

impl LossWeights {
    pub const FULL: LossWeights = LossWeights {
        eda: 1.0,
        emotion: 1.0,
        physics: true,
    };
}

/// All three terms with λ = max(softplus(ρ), floor).
pub fn total_loss(
    preds: &Predictions,
    batch: &SampleBatch,
    phys: &PhysicsParams,
    lambda_floor: f64,
) -> Result<LossBreakdown> {
    weighted_loss(preds, batch, phys, lambda_floor, LossWeights::FULL)
}

pub fn weighted_loss(
    preds: &Predictions,
    batch: &SampleBatch,
    phys: &PhysicsParams,
    lambda_floor: f64,
    weights: LossWeights,
) -> Result<LossBreakdown> {
    Ok(evaluate_terms(preds, batch, phys, lambda_floor, weights)?.0)
}

fn evaluate_terms(
    preds: &Predictions,
    batch: &SampleBatch,
    phys: &PhysicsParams,
    lambda_floor: f64,
    weights: LossWeights,
) -> Result<(LossBreakdown, Vec<f64>)> {
    if preds.eda.len() != batch.len() {
        return Err(Error::contract("predictions and batch differ in size"));
    }
    let l_eda = mse(&preds.eda, &batch.eda)?;
    let l_emotion = bce(&preds.prob, &batch.label)?;
    let residual = physics_residual(&preds.eda_dt, &preds.eda, &batch.residual_emotion, phys)?;
    let l_physics = physics_loss(&residual)?;
    let lambda_eff = if weights.physics {
        phys.lambda_eff(lambda_floor)
    } else {
        0.0
    };
    let total = weights.eda * l_eda + weights.emotion * l_emotion + lambda_eff * l_physics;
    Ok((
        LossBreakdown {
            l_eda,
            l_emotion,
            l_physics,
            lambda_eff,
            total,
        },
        residual,
    ))
}

/// Forward, weighted loss and full gradient (network weights and physics
/// coefficients) for one batch.
pub fn loss_and_gradients(
    params: &ModelParams,
    batch: &SampleBatch,
    weights: LossWeights,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(LossBreakdown, Gradients, Predictions)> {
    let preds = model::forward(params, batch, mode, rng)?;
    let phys = &params.physics;
    let floor = params.config.lambda_floor;
    let (loss, residual) = evaluate_terms(&preds, batch, phys, floor, weights)?;

    let n = batch.len() as f64;
    let lambda = loss.lambda_eff;
    let mut adj = OutputAdjoints {
        eda: vec![0.0; batch.len()],
        eda_dt: vec![0.0; batch.len()],
        prob: vec![0.0; batch.len()],
    };
    let mut g_alpha = 0.0;
    let mut g_gamma = 0.0;
    let mut g_beta = [0.0; EMOTION_FEATURES];
    for i in 0..batch.len() {
        let dr = lambda * 2.0 * residual[i] / n;
        adj.eda[i] = weights.eda * 2.0 * (preds.eda[i] - batch.eda[i]) / n + dr * phys.alpha0;
        adj.eda_dt[i] = dr * phys.gamma;
        let p = preds.prob[i];
        let dp = if batch.label[i] == 1 { -1.0 / p } else { 1.0 / (1.0 - p) };
        adj.prob[i] = weights.emotion * dp / n;
        g_alpha += dr * preds.eda[i];
        g_gamma += dr * preds.eda_dt[i];
        for (g, e) in g_beta.iter_mut().zip(&batch.residual_emotion[i]) {
            *g -= dr * e;
        }
    }

    let mut grads = model::backward(params, &preds, &adj)?;
    grads.physics.alpha0 = g_alpha;
    grads.physics.gamma = g_gamma;
    grads.physics.beta = g_beta;
    grads.physics.rho = if weights.physics {
        loss.l_physics * phys.lambda_derivative(floor)
    } else {
        0.0
    };
    Ok((loss, grads, preds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::closed_form;
    use crate::rng::Rng;
    use proptest::prelude::*;

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 12.5);
        assert_eq!(mse(&[-0.0, -0.0], &[-3.0, -4.0]).unwrap(), 12.5);
        assert!(mse(&[], &[]).is_err());
        assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn bce_examples() {
        let half = bce(&[0.5; 4], &[0, 1, 1, 0]).unwrap();
        assert!((half - 2f64.ln()).abs() < 1e-15);
        assert!((half - 0.693147).abs() < 1e-6);
        let v = bce(&[0.9], &[1]).unwrap();
        assert!((v - (-(0.9f64).ln())).abs() < 1e-15);
        assert!((v - 0.105361).abs() < 1e-6);
        let exact = bce(&[1.0, 0.0], &[1, 0]).unwrap();
        assert!(exact > 0.0 && exact <= 1.1e-7);
        assert!(bce(&[0.5], &[2]).is_err());
    }

    #[test]
    fn residual_examples() {
        let phys = PhysicsParams {
            alpha0: 1.0,
            beta: [0.1, 0.2, 0.3],
            gamma: 1.0,
            ..PhysicsParams::default()
        };
        let r = physics_residual(&[0.2], &[0.5], &[[1.0, 1.0, 1.0]], &phys).unwrap();
        assert!((r[0] - 0.1).abs() < 1e-15);
        let r = physics_residual(&[0.0], &[0.0], &[[0.0; 3]], &phys).unwrap();
        assert_eq!(r[0], 0.0);
        assert!(physics_residual(&[0.0], &[0.0, 1.0], &[[0.0; 3]], &phys).is_err());
    }

    #[test]
    fn residual_vanishes_on_the_exact_solution() {
        let phys = PhysicsParams {
            alpha0: 2.3,
            beta: [0.4, -1.2, 0.7],
            gamma: 0.6,
            ..PhysicsParams::default()
        };
        let e = [0.9, 0.2, -0.4];
        let drive: f64 = phys.beta.iter().zip(&e).map(|(b, x)| b * x).sum();
        let ts: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
        let y: Vec<f64> = ts.iter().map(|&t| closed_form(phys.alpha0, drive, phys.gamma, 0.3, t)).collect();
        // Derivative of the closed form by hand, independent of the library helper.
        let dy: Vec<f64> = ts
            .iter()
            .map(|&t| (drive - phys.alpha0 * 0.3) / phys.gamma * (-phys.alpha0 * t / phys.gamma).exp())
            .collect();
        let r = physics_residual(&dy, &y, &vec![e; ts.len()], &phys).unwrap();
        assert!(r.iter().all(|v| v.abs() <= 1e-10));
    }

    #[test]
    fn physics_loss_examples() {
        assert_eq!(physics_loss(&[0.0, 0.0]).unwrap(), 0.0);
        assert!((physics_loss(&[0.1]).unwrap() - 0.01).abs() < 1e-17);
        assert_eq!(physics_loss(&[0.3, -0.2]).unwrap(), physics_loss(&[-0.3, 0.2]).unwrap());
    }

    fn arb_phys() -> impl Strategy<Value = PhysicsParams> {
        (-3.0..3.0f64, proptest::array::uniform3(-3.0..3.0f64), -3.0..3.0f64).prop_map(|(a, b, g)| PhysicsParams {
            alpha0: a,
            beta: b,
            gamma: g,
            ..PhysicsParams::default()
        })
    }

    proptest! {
        #[test]
        fn residual_is_linear_and_gauge_scaled(
            phys in arb_phys(),
            y in proptest::collection::vec(-2.0..2.0f64, 5),
            d in proptest::collection::vec(-2.0..2.0f64, 5),
            e in proptest::collection::vec(proptest::array::uniform3(-2.0..2.0f64), 5),
            c in 0.1..5.0f64,
        ) {
            let r = physics_residual(&d, &y, &e, &phys).unwrap();
            let scaled = PhysicsParams {
                alpha0: c * phys.alpha0,
                beta: phys.beta.map(|b| c * b),
                gamma: c * phys.gamma,
                ..phys
            };
            let rs = physics_residual(&d, &y, &e, &scaled).unwrap();
            for (a, b) in r.iter().zip(&rs) {
                prop_assert!((c * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
            let l = physics_loss(&r).unwrap();
            let ls = physics_loss(&rs).unwrap();
            prop_assert!((c * c * l - ls).abs() <= 1e-10 * (1.0 + ls));

            // Linear in (ŷ, dŷ/dt, e) jointly.
            let y2: Vec<f64> = y.iter().map(|v| c * v).collect();
            let d2: Vec<f64> = d.iter().map(|v| c * v).collect();
            let e2: Vec<[f64; 3]> = e.iter().map(|v| v.map(|x| c * x)).collect();
            let r2 = physics_residual(&d2, &y2, &e2, &phys).unwrap();
            for (a, b) in r.iter().zip(&r2) {
                prop_assert!((c * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
            prop_assert!(l >= 0.0);
        }

        #[test]
        fn supervised_losses_are_non_negative(
            p in proptest::collection::vec(0.0..1.0f64, 1..20),
            seed in 0u64..1000,
        ) {
            let mut rng = Rng::from_seed(seed);
            let labels: Vec<u8> = p.iter().map(|_| (rng.uniform() < 0.5) as u8).collect();
            prop_assert!(bce(&p, &labels).unwrap() >= 0.0);
            let t: Vec<f64> = p.iter().map(|_| rng.normal()).collect();
            prop_assert!(mse(&p, &t).unwrap() >= 0.0);
        }
    }
}
