use serde::{Deserialize, Serialize};

use super::{Dataset, Sample, EMOTION_FEATURES};
use crate::error::{Error, Result};
use crate::model::PhysicsParams;
use crate::rng::{Purpose, Rng};

/// Diagonal Gaussian over the three emotion features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassCluster {
    pub mean: [f64; EMOTION_FEATURES],
    pub std: [f64; EMOTION_FEATURES],
}

/// Parameters of a synthetic dataset generated from the EDA dynamics
/// `γ·dy/dt + α₀·y = βᵀe` with `e` constant per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub alpha0: f64,
    pub beta: [f64; EMOTION_FEATURES],
    pub gamma: f64,
    pub samples: usize,
    pub noise_sd: f64,
    /// Probability that a sample comes from the stress cluster.
    pub stress_fraction: f64,
    pub non_stress: ClassCluster,
    pub stress: ClassCluster,
    /// Scales both cluster means about their midpoint.
    pub separation: f64,
    pub y0: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            alpha0: 1.5,
            beta: [0.6, -0.4, 0.8],
            gamma: 0.5,
            samples: 2000,
            noise_sd: 0.01,
            stress_fraction: 0.5,
            non_stress: ClassCluster {
                mean: [0.0, 0.5, -0.5],
                std: [0.6; 3],
            },
            stress: ClassCluster {
                mean: [0.8, -0.6, 1.0],
                std: [0.6; 3],
            },
            separation: 1.0,
            y0: 0.5,
            t_min: 0.0,
            t_max: 1.0,
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn physics(&self) -> PhysicsParams {
        PhysicsParams {
            alpha0: self.alpha0,
            beta: self.beta,
            gamma: self.gamma,
            ..PhysicsParams::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha0 > 0.0) || !self.alpha0.is_finite() {
            return Err(Error::config(format!("alpha0 = {} must be positive", self.alpha0)));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::config(format!("gamma = {} must be positive", self.gamma)));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::config("noise_sd must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.stress_fraction) {
            return Err(Error::config("stress_fraction must lie in [0, 1]"));
        }
        if !(self.t_max > self.t_min) {
            return Err(Error::config("t_max must exceed t_min"));
        }
        if !(self.separation >= 0.0) {
            return Err(Error::config("separation must be non-negative"));
        }
        for c in [&self.non_stress, &self.stress] {
            if c.std.iter().any(|s| !(*s >= 0.0)) || c.mean.iter().any(|m| !m.is_finite()) {
                return Err(Error::config("cluster means must be finite and std non-negative"));
            }
        }
        if self.beta.iter().any(|b| !b.is_finite()) || !self.y0.is_finite() {
            return Err(Error::config("beta and y0 must be finite"));
        }
        Ok(())
    }

    fn cluster_mean(&self, stress: bool) -> [f64; EMOTION_FEATURES] {
        let mut out = [0.0; EMOTION_FEATURES];
        for i in 0..EMOTION_FEATURES {
            let mid = 0.5 * (self.non_stress.mean[i] + self.stress.mean[i]);
            let m = if stress { self.stress.mean[i] } else { self.non_stress.mean[i] };
            out[i] = mid + self.separation * (m - mid);
        }
        out
    }
}

/// y(t) = (drive/α₀)(1 − exp(−α₀t/γ)) + y₀·exp(−α₀t/γ), with `drive = βᵀe`.
pub fn closed_form(alpha0: f64, drive: f64, gamma: f64, y0: f64, t: f64) -> f64 {
    if alpha0 == 0.0 {
        return y0 + drive * t / gamma;
    }
    let decay = (-alpha0 * t / gamma).exp();
    drive / alpha0 * (1.0 - decay) + y0 * decay
}

/// dy/dt of [`closed_form`].
pub fn closed_form_derivative(alpha0: f64, drive: f64, gamma: f64, y0: f64, t: f64) -> f64 {
    if alpha0 == 0.0 {
        return drive / gamma;
    }
    let decay = (-alpha0 * t / gamma).exp();
    (drive - alpha0 * y0) / gamma * decay
}

fn dot(a: &[f64; EMOTION_FEATURES], b: &[f64; EMOTION_FEATURES]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Draw a dataset and the noise-free dy/dt of every sample.
pub fn synth_generate(spec: &SynthSpec) -> Result<(Dataset, Vec<f64>)> {
    spec.validate()?;
    let mut samples = Vec::with_capacity(spec.samples);
    let mut dydt = Vec::with_capacity(spec.samples);
    for i in 0..spec.samples {
        let mut rng = Rng::stream(spec.seed, Purpose::Synth, i as u64);
        let stress = rng.uniform() < spec.stress_fraction;
        let cluster = if stress { &spec.stress } else { &spec.non_stress };
        let mean = spec.cluster_mean(stress);
        let mut e = [0.0; EMOTION_FEATURES];
        for k in 0..EMOTION_FEATURES {
            e[k] = mean[k] + cluster.std[k] * rng.normal();
        }
        let t = rng.uniform_range(spec.t_min, spec.t_max);
        let drive = dot(&spec.beta, &e);
        let clean = closed_form(spec.alpha0, drive, spec.gamma, spec.y0, t);
        let noise = if spec.noise_sd > 0.0 { spec.noise_sd * rng.normal() } else { 0.0 };
        samples.push(Sample {
            t,
            e,
            eda: clean + noise,
            label: stress as u8,
        });
        dydt.push(closed_form_derivative(spec.alpha0, drive, spec.gamma, spec.y0, t));
    }
    Ok((Dataset::new(samples)?, dydt))
}

/// Classic fourth-order Runge–Kutta for `dy/dt = (βᵀe − α₀y)/γ` on `grid`.
pub fn rk4_integrate(
    phys: &PhysicsParams,
    e: &[f64; EMOTION_FEATURES],
    y0: f64,
    grid: &[f64],
) -> Result<Vec<f64>> {
    if !(phys.gamma != 0.0 && phys.gamma.is_finite()) {
        return Err(Error::contract("gamma must be finite and non-zero"));
    }
    for w in grid.windows(2) {
        let h = w[1] - w[0];
        if !(h > 0.0) {
            return Err(Error::contract("time grid must be strictly increasing"));
        }
        if h > 1e-2 * (1.0 + 1e-9) {
            return Err(Error::contract(format!("grid step {h} exceeds 1e-2")));
        }
    }
    let drive = dot(&phys.beta, e);
    let f = |y: f64| (drive - phys.alpha0 * y) / phys.gamma;
    let mut out = Vec::with_capacity(grid.len());
    let mut y = y0;
    if !grid.is_empty() {
        out.push(y);
    }
    for w in grid.windows(2) {
        let h = w[1] - w[0];
        let k1 = f(y);
        let k2 = f(y + 0.5 * h * k1);
        let k3 = f(y + 0.5 * h * k2);
        let k4 = f(y + h * k3);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        out.push(y);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::physics_residual;

    fn grid(step: f64, end: f64) -> Vec<f64> {
        let n = (end / step).round() as usize;
        (0..=n).map(|i| i as f64 * step).collect()
    }

    fn unit_phys() -> PhysicsParams {
        PhysicsParams {
            alpha0: 1.0,
            beta: [1.0, 0.0, 0.0],
            gamma: 1.0,
            ..PhysicsParams::default()
        }
    }

    #[test]
    fn initial_condition_and_steady_state() {
        assert_eq!(closed_form(1.3, 0.7, 0.4, 0.25, 0.0), 0.25);
        assert!((closed_form(1.0, 1.0, 1.0, 0.0, 60.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn unit_time_value_matches_rk4() {
        let ys = rk4_integrate(&unit_phys(), &[1.0, 0.0, 0.0], 0.0, &grid(1e-3, 1.0)).unwrap();
        let rk = *ys.last().unwrap();
        assert!((rk - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
        assert!((closed_form(1.0, 1.0, 1.0, 0.0, 1.0) - 0.632121).abs() < 1e-6);
        assert!((closed_form(1.0, 1.0, 1.0, 0.0, 1.0) - rk).abs() < 1e-12);
    }

    #[test]
    fn zero_dynamics_stay_constant() {
        let phys = PhysicsParams {
            alpha0: 0.0,
            beta: [0.0; 3],
            gamma: 1.0,
            ..PhysicsParams::default()
        };
        let ys = rk4_integrate(&phys, &[0.3, -2.0, 5.0], 0.42, &grid(1e-2, 1.0)).unwrap();
        assert!(ys.iter().all(|&y| y == 0.42));
    }

    #[test]
    fn fourth_order_convergence() {
        let phys = unit_phys();
        let e = [1.0, 0.0, 0.0];
        let err = |step: f64| {
            let g = grid(step, 1.0);
            let ys = rk4_integrate(&phys, &e, 0.3, &g).unwrap();
            g.iter()
                .zip(&ys)
                .map(|(&t, &y)| (y - closed_form(1.0, 1.0, 1.0, 0.3, t)).abs())
                .fold(0.0, f64::max)
        };
        let coarse = err(1e-2);
        let fine = err(5e-3);
        assert!(err(1e-3) <= 1e-8);
        assert!(coarse / fine >= 12.0, "ratio {}", coarse / fine);
    }

    #[test]
    fn rk4_rejects_bad_grids() {
        let e = [0.0; 3];
        assert!(rk4_integrate(&unit_phys(), &e, 0.0, &[0.0, 0.01, 0.005]).is_err());
        assert!(rk4_integrate(&unit_phys(), &e, 0.0, &[0.0, 0.5]).is_err());
    }

    #[test]
    fn noise_free_samples_are_residual_free() {
        let spec = SynthSpec {
            noise_sd: 0.0,
            samples: 500,
            ..SynthSpec::default()
        };
        let (data, dydt) = synth_generate(&spec).unwrap();
        let y = data.targets();
        let e: Vec<[f64; 3]> = data.samples().iter().map(|s| s.e).collect();
        let r = physics_residual(&dydt, &y, &e, &spec.physics()).unwrap();
        assert!(r.iter().all(|v| v.abs() <= 1e-10));
    }

    #[test]
    fn generation_is_deterministic_and_validated() {
        let spec = SynthSpec { samples: 50, ..SynthSpec::default() };
        assert_eq!(synth_generate(&spec).unwrap(), synth_generate(&spec).unwrap());
        let bad = SynthSpec { alpha0: 0.0, ..SynthSpec::default() };
        assert!(matches!(synth_generate(&bad), Err(Error::Config(_))));
        let bad = SynthSpec { gamma: -1.0, ..SynthSpec::default() };
        assert!(matches!(synth_generate(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn separation_increases_threshold_accuracy() {
        let accuracy = |sep: f64| {
            let spec = SynthSpec { separation: sep, samples: 3000, ..SynthSpec::default() };
            let (data, _) = synth_generate(&spec).unwrap();
            let mid: Vec<f64> = (0..3)
                .map(|i| 0.5 * (spec.stress.mean[i] + spec.non_stress.mean[i]))
                .collect();
            let dir: Vec<f64> = (0..3).map(|i| spec.stress.mean[i] - spec.non_stress.mean[i]).collect();
            let correct = data
                .samples()
                .iter()
                .filter(|s| {
                    let score: f64 = (0..3).map(|i| (s.e[i] - mid[i]) * dir[i]).sum();
                    (score > 0.0) == (s.label == 1)
                })
                .count();
            correct as f64 / data.len() as f64
        };
        let accs: Vec<f64> = [0.0, 0.25, 0.5, 1.0, 2.0].iter().map(|&s| accuracy(s)).collect();
        for w in accs.windows(2) {
            assert!(w[1] >= w[0], "{accs:?}");
        }
        assert!(accs[4] > 0.99 && accs[0] < 0.6, "{accs:?}");
    }
}
