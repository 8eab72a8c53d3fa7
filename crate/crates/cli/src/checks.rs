//! Self-checks run by `eda-pinn check`: gradient and tangent consistency,
//! the ODE oracle, residual-free synthesis, parameter recovery, metric
//! recounts and fold stratification.

use std::time::Instant;

use eda_pinn::autodiff::{check_gradients, relative_error, Matrix, Mode};
use eda_pinn::baselines::ridge_fit;
use eda_pinn::data::{
    closed_form, rk4_integrate, stratified_kfold, synth_generate, Dataset, Normalizer, SampleBatch, SynthSpec,
};
use eda_pinn::eval::{classification_metrics, regression_metrics};
use eda_pinn::model::{forward, init_model, ModelConfig, ModelParams, PhysicsParams};
use eda_pinn::objective::{mse, physics_residual};
use eda_pinn::rng::{Purpose, Rng};
use eda_pinn::trainer::{recover_physics, RecoveryConfig, Trajectory};
use eda_pinn::Result;

/// Outcome of one suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    /// Headline measurement compared against the tolerance.
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
    pub seconds: f64,
}

impl std::fmt::Display for SuiteResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {:<16} value={:e} tol={:e} ({:.2}s) {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.tolerance,
            self.seconds,
            self.detail
        )
    }
}

fn timed(
    name: &'static str,
    tolerance: f64,
    body: impl FnOnce() -> Result<(bool, f64, String)>,
) -> Result<SuiteResult> {
    let start = Instant::now();
    let (passed, value, detail) = body()?;
    Ok(SuiteResult {
        name,
        passed,
        value,
        tolerance,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Normalized synthetic rows, as the network sees them during training.
fn normalized_batch(seed: u64, n: usize) -> Result<SampleBatch> {
    let spec = SynthSpec {
        samples: n,
        seed,
        ..SynthSpec::default()
    };
    let (data, _) = synth_generate(&spec)?;
    let norm = Normalizer::fit(&data)?;
    Ok(SampleBatch::from_samples(norm.apply(&data).samples()))
}

/// A small seeded model with its batch-norm state moved off the identity.
pub fn probe_model(model: &ModelConfig, seed: u64) -> Result<ModelParams> {
    let cfg = ModelConfig {
        hidden_widths: vec![8, 8],
        seed,
        ..model.clone()
    };
    let mut params = init_model(&cfg)?;
    let mut rng = Rng::stream(seed, Purpose::Init, 1_000);
    for layer in &mut params.hidden {
        for v in layer.bn_scale.as_mut_slice() {
            *v = rng.uniform_range(0.5, 1.5);
        }
        for v in layer.bn_shift.as_mut_slice() {
            *v = rng.uniform_range(-0.5, 0.5);
        }
        for v in layer.running_mean.as_mut_slice() {
            *v = rng.uniform_range(-0.3, 0.3);
        }
        for v in layer.running_var.as_mut_slice() {
            *v = rng.uniform_range(0.5, 2.0);
        }
    }
    params.physics = PhysicsParams {
        alpha0: 1.3,
        beta: [0.2, -0.3, 0.4],
        gamma: 0.8,
        ..params.physics
    };
    Ok(params)
}

pub fn gradient_suite(model: &ModelConfig, seed: u64) -> Result<SuiteResult> {
    timed("gradient", 1e-6, || {
        let params = probe_model(model, seed)?;
        let batch = normalized_batch(seed, 16)?;
        let report = check_gradients(&params, &batch, 1e-5, 1e-6)?;
        Ok((
            report.passed,
            report.max_relative_error,
            format!("max relative error {:e} in block {}", report.max_relative_error, report.worst_block),
        ))
    })
}

pub fn tangent_suite(model: &ModelConfig, seed: u64) -> Result<SuiteResult> {
    timed("tangent", 1e-5, || {
        let params = probe_model(model, seed)?;
        let batch = normalized_batch(seed.wrapping_add(1), 100)?;
        let eval = |b: &SampleBatch| forward(&params, b, Mode::Eval, &mut Rng::from_seed(0));
        let base = eval(&batch)?;
        let h = 1e-6;
        let shifted = |delta: f64| {
            let mut b = batch.clone();
            b.time.iter_mut().for_each(|t| *t += delta);
            eval(&b).map(|p| p.eda)
        };
        let (plus, minus) = (shifted(h)?, shifted(-h)?);
        let worst = (0..batch.len())
            .map(|i| relative_error(base.eda_dt[i], (plus[i] - minus[i]) / (2.0 * h)))
            .fold(0.0, f64::max);
        Ok((worst <= 1e-5, worst, format!("{} samples, h = 1e-6", batch.len())))
    })
}

fn uniform_grid(step: f64) -> Vec<f64> {
    let n = (1.0 / step).round() as usize;
    (0..=n).map(|i| i as f64 * step).collect()
}

/// Below this, a coarse-step error is roundoff and its halving ratio carries no information.
const ROUNDOFF_FLOOR: f64 = 1e-12;

/// Closed form against RK4 for 20 draws of (α₀, β, γ) in [0.1, 10]. The
/// emotion inputs and the initial value come from the default synthetic generator.
pub fn ode_suite(seed: u64) -> Result<SuiteResult> {
    timed("ode", 1e-8, || {
        let inputs = SynthSpec {
            samples: 20,
            seed,
            ..SynthSpec::default()
        };
        let (data, _) = synth_generate(&inputs)?;
        let mut rng = Rng::stream(seed, Purpose::Synth, 1 << 40);
        let (mut worst, mut worst_ratio, mut resolved) = (0.0f64, f64::INFINITY, 0);
        for sample in data.samples() {
            let e = sample.e;
            let y0 = inputs.y0;
            let mut draw = || rng.uniform_range(0.1, 10.0);
            let phys = PhysicsParams {
                alpha0: draw(),
                beta: [draw(), draw(), draw()],
                gamma: draw(),
                ..PhysicsParams::default()
            };
            let drive: f64 = phys.beta.iter().zip(&e).map(|(b, x)| b * x).sum();
            let max_err = |step: f64| -> Result<f64> {
                let grid = uniform_grid(step);
                let ys = rk4_integrate(&phys, &e, y0, &grid)?;
                Ok(grid
                    .iter()
                    .zip(&ys)
                    .map(|(&t, &y)| (y - closed_form(phys.alpha0, drive, phys.gamma, y0, t)).abs())
                    .fold(0.0, f64::max))
            };
            worst = worst.max(max_err(1e-3)?);
            let (coarse, fine) = (max_err(1e-2)?, max_err(5e-3)?);
            if coarse > ROUNDOFF_FLOOR {
                resolved += 1;
                worst_ratio = worst_ratio.min(coarse / fine);
            }
        }
        let passed = worst <= 1e-8 && (resolved == 0 || worst_ratio >= 12.0);
        Ok((
            passed,
            worst,
            format!("min halving ratio {worst_ratio:.2} over {resolved} draws above roundoff"),
        ))
    })
}

fn trajectory(data: &Dataset, dydt: Vec<f64>) -> Trajectory {
    Trajectory {
        t: data.samples().iter().map(|s| s.t).collect(),
        e: data.samples().iter().map(|s| s.e).collect(),
        y: data.targets(),
        dydt,
    }
}

pub fn residual_free_suite(seed: u64) -> Result<SuiteResult> {
    timed("residual_free", 1e-10, || {
        let spec = SynthSpec {
            samples: 10_000,
            noise_sd: 0.0,
            seed,
            ..SynthSpec::default()
        };
        let (data, dydt) = synth_generate(&spec)?;
        let traj = trajectory(&data, dydt);
        let r = physics_residual(&traj.dydt, &traj.y, &traj.e, &spec.physics())?;
        let worst = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Ok((worst <= 1e-10, worst, format!("{} samples", r.len())))
    })
}

/// Least-squares (α₀, β) with γ fixed, from the normal equations.
pub fn recovery_oracle(traj: &Trajectory, gamma: f64) -> Result<[f64; 4]> {
    let mut rows = Vec::with_capacity(traj.len() * 4);
    for (y, e) in traj.y.iter().zip(&traj.e) {
        rows.extend_from_slice(&[*y, -e[0], -e[1], -e[2]]);
    }
    let a = Matrix::from_vec(traj.len(), 4, rows)?;
    let rhs: Vec<f64> = traj.dydt.iter().map(|d| -gamma * d).collect();
    let fit = ridge_fit(&a, &rhs, 0.0, false)?;
    Ok([fit.weights[0], fit.weights[1], fit.weights[2], fit.weights[3]])
}

pub fn recovery_suite(seed: u64) -> Result<SuiteResult> {
    timed("recovery", 1e-2, || {
        let spec = SynthSpec {
            samples: 2_000,
            noise_sd: 0.0,
            seed,
            ..SynthSpec::default()
        };
        let (data, dydt) = synth_generate(&spec)?;
        let traj = trajectory(&data, dydt);
        let truth = spec.physics();
        let init = PhysicsParams {
            alpha0: 1.5 * truth.alpha0,
            beta: truth.beta.map(|b| 1.5 * b),
            ..truth
        };
        let report = recover_physics(&traj, truth.gamma, &init, &RecoveryConfig::default())?;
        let oracle = recovery_oracle(&traj, truth.gamma)?;
        let got = [report.params.alpha0, report.params.beta[0], report.params.beta[1], report.params.beta[2]];
        let worst = got
            .iter()
            .zip(&oracle)
            .map(|(g, o)| ((g - o) / o).abs())
            .fold(0.0, f64::max);
        Ok((
            worst <= 1e-2,
            worst,
            format!("{} steps, final physics loss {:e}", report.steps_taken, report.final_loss),
        ))
    })
}

pub fn metrics_suite(seed: u64) -> Result<SuiteResult> {
    timed("metrics", 1e-12, || {
        let mut rng = Rng::stream(seed, Purpose::Synth, 1 << 41);
        let mut mismatches = 0usize;
        let mut worst_rmse_gap = 0.0f64;
        for _ in 0..200 {
            let n = 2 + rng.below(40);
            let prob: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
            let label: Vec<u8> = (0..n).map(|_| (rng.uniform() < 0.5) as u8).collect();
            let m = classification_metrics(&prob, &label, 0.5)?;
            let mut cells = [[0usize; 2]; 2];
            for (p, &l) in prob.iter().zip(&label) {
                cells[l as usize][(*p >= 0.5) as usize] += 1;
            }
            let [[tn, fp], [fn_, tp]] = cells;
            let c = m.confusion;
            if (c.true_neg, c.false_pos, c.false_neg, c.true_pos) != (tn, fp, fn_, tp) {
                mismatches += 1;
            }
            if m.accuracy != (tp + tn) as f64 / n as f64 {
                mismatches += 1;
            }
            let pred: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
            let target: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
            let r = regression_metrics(&pred, &target)?;
            worst_rmse_gap = worst_rmse_gap.max((r.rmse * r.rmse - mse(&pred, &target)?).abs());
        }
        Ok((
            mismatches == 0 && worst_rmse_gap <= 1e-12,
            worst_rmse_gap,
            format!("{mismatches} confusion mismatches over 200 instances"),
        ))
    })
}

pub fn stratification_suite(seed: u64) -> Result<SuiteResult> {
    timed("stratification", 1.0, || {
        let mut rng = Rng::stream(seed, Purpose::Folds, 1 << 42);
        let mut worst = 0.0f64;
        for d in 0..50u64 {
            let n = 50 + rng.below(950);
            let p = rng.uniform_range(0.2, 0.8);
            let k = 2 + rng.below(9);
            let mut labels: Vec<u8> = (0..n).map(|_| (rng.uniform() < p) as u8).collect();
            // Keep both classes at least k strong.
            for i in 0..k {
                labels[i] = 0;
                labels[n - 1 - i] = 1;
            }
            for fold in stratified_kfold(&labels, k, seed.wrapping_add(d))? {
                for class in 0..2u8 {
                    let total = labels.iter().filter(|&&l| l == class).count() as f64;
                    let got = fold.valid.iter().filter(|&&i| labels[i] == class).count() as f64;
                    worst = worst.max((got - total / k as f64).abs());
                }
            }
        }
        Ok((worst <= 1.0, worst, "50 datasets".into()))
    })
}

/// Every suite, in a fixed order.
pub fn run_all(model: &ModelConfig, seed: u64) -> Result<Vec<SuiteResult>> {
    Ok(vec![
        gradient_suite(model, seed)?,
        tangent_suite(model, seed)?,
        ode_suite(seed)?,
        residual_free_suite(seed)?,
        recovery_suite(seed)?,
        metrics_suite(seed)?,
        stratification_suite(seed)?,
    ])
}
