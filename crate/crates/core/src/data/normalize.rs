use serde::{Deserialize, Serialize};

use super::{Dataset, Sample, INPUT_FEATURES};
use crate::error::{Error, Result};

const INPUT_NAMES: [&str; INPUT_FEATURES] = ["t", "panas_mean", "sam_valence", "sam_arousal"];

/// Z-scores the four inputs and maps the EDA target affinely onto [0, 1].
///
/// Statistics come from a training split only; standard deviations use the
/// population convention (divide by `n`). Values outside the training range
/// are not clamped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalizer {
    pub input_mean: [f64; INPUT_FEATURES],
    pub input_std: [f64; INPUT_FEATURES],
    pub target_min: f64,
    pub target_max: f64,
}

impl Default for Normalizer {
    fn default() -> Self {
        Self::identity()
    }
}

impl Normalizer {
    /// Leaves inputs and targets unchanged.
    pub fn identity() -> Self {
        Self {
            input_mean: [0.0; INPUT_FEATURES],
            input_std: [1.0; INPUT_FEATURES],
            target_min: 0.0,
            target_max: 1.0,
        }
    }

    pub fn fit(train: &Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::config("cannot fit a normalizer on an empty dataset"));
        }
        let n = train.len() as f64;
        let mut mean = [0.0; INPUT_FEATURES];
        for s in train.samples() {
            for (m, v) in mean.iter_mut().zip(s.inputs()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = [0.0; INPUT_FEATURES];
        for s in train.samples() {
            for ((acc, v), m) in var.iter_mut().zip(s.inputs()).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        let mut std = [0.0; INPUT_FEATURES];
        for (i, (s, v)) in std.iter_mut().zip(&var).enumerate() {
            *s = (v / n).sqrt();
            if !(*s > 0.0) {
                return Err(Error::config(format!(
                    "input column {} is constant and cannot be standardized",
                    INPUT_NAMES[i]
                )));
            }
        }
        let (min, max) = train
            .samples()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s.eda), hi.max(s.eda)));
        if !(max > min) {
            return Err(Error::config("target column eda_mean is constant"));
        }
        Ok(Self {
            input_mean: mean,
            input_std: std,
            target_min: min,
            target_max: max,
        })
    }

    pub fn apply_inputs(&self, inputs: [f64; INPUT_FEATURES]) -> [f64; INPUT_FEATURES] {
        let mut out = [0.0; INPUT_FEATURES];
        for i in 0..INPUT_FEATURES {
            out[i] = (inputs[i] - self.input_mean[i]) / self.input_std[i];
        }
        out
    }

    pub fn apply_target(&self, y: f64) -> f64 {
        (y - self.target_min) / (self.target_max - self.target_min)
    }

    pub fn invert_target(&self, y: f64) -> f64 {
        y * (self.target_max - self.target_min) + self.target_min
    }

    pub fn apply_sample(&self, s: &Sample) -> Sample {
        let x = self.apply_inputs(s.inputs());
        Sample {
            t: x[0],
            e: [x[1], x[2], x[3]],
            eda: self.apply_target(s.eda),
            label: s.label,
        }
    }

    pub fn apply(&self, data: &Dataset) -> Dataset {
        Dataset {
            samples: data.samples().iter().map(|s| self.apply_sample(s)).collect(),
        }
    }

    /// Standard deviation of the time input, i.e. d(normalized t)/d(raw t) = 1/std.
    pub fn time_scale(&self) -> f64 {
        self.input_std[0]
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.input_mean.iter().all(|v| v.is_finite())
            && self.input_std.iter().all(|v| v.is_finite() && *v > 0.0)
            && self.target_min.is_finite()
            && self.target_max.is_finite()
            && self.target_max > self.target_min;
        if ok {
            Ok(())
        } else {
            Err(Error::config("normalizer statistics are invalid"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dataset(rows: &[[f64; 5]]) -> Dataset {
        Dataset::new(
            rows.iter()
                .enumerate()
                .map(|(i, r)| Sample {
                    t: r[0],
                    e: [r[1], r[2], r[3]],
                    eda: r[4],
                    label: (i % 2) as u8,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn population_sd_z_scores() {
        let d = dataset(&[
            [1.0, 1.0, 5.0, 2.0, 0.0],
            [2.0, 2.0, 6.0, 4.0, 1.0],
            [3.0, 3.0, 7.0, 9.0, 4.0],
        ]);
        let n = Normalizer::fit(&d).unwrap();
        let z = n.apply(&d);
        let ts: Vec<f64> = z.samples().iter().map(|s| s.t).collect();
        let expected = 1.5f64.sqrt();
        assert!((ts[0] + expected).abs() < 1e-12);
        assert!(ts[1].abs() < 1e-12);
        assert!((ts[2] - expected).abs() < 1e-12);
        assert!((ts[2] - 1.2247).abs() < 1e-4);
        assert_eq!(z.targets(), vec![0.0, 0.25, 1.0]);
    }

    #[test]
    fn constant_columns_are_rejected() {
        let d = dataset(&[[1.0, 1.0, 5.0, 2.0, 0.0], [2.0, 1.0, 6.0, 4.0, 1.0]]);
        match Normalizer::fit(&d).unwrap_err() {
            Error::Config(msg) => assert!(msg.contains("panas_mean")),
            e => panic!("{e:?}"),
        }
        let d = dataset(&[[1.0, 1.0, 5.0, 2.0, 3.0], [2.0, 2.0, 6.0, 4.0, 3.0]]);
        assert!(matches!(Normalizer::fit(&d), Err(Error::Config(_))));
        assert!(Normalizer::fit(&Dataset::default()).is_err());
    }

    #[test]
    fn validation_targets_may_leave_unit_interval() {
        let train = dataset(&[[1.0, 1.0, 5.0, 2.0, 0.0], [2.0, 2.0, 6.0, 4.0, 1.0]]);
        let valid = dataset(&[[1.5, 1.5, 5.5, 3.0, 2.0], [1.5, 1.5, 5.5, 3.0, -1.0]]);
        let n = Normalizer::fit(&train).unwrap();
        let v = n.apply(&valid);
        assert_eq!(v.targets(), vec![2.0, -1.0]);
    }

    proptest! {
        #[test]
        fn standardized_training_columns(rows in proptest::collection::vec(
            proptest::array::uniform5(-100.0..100.0f64), 3..60)) {
            let d = dataset(&rows.to_vec());
            let Ok(n) = Normalizer::fit(&d) else { return Ok(()); };
            let z = n.apply(&d);
            let len = z.len() as f64;
            for col in 0..INPUT_FEATURES {
                let vals: Vec<f64> = z.samples().iter().map(|s| s.inputs()[col]).collect();
                let mean = vals.iter().sum::<f64>() / len;
                let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / len;
                prop_assert!(mean.abs() < 1e-10);
                prop_assert!((var.sqrt() - 1.0).abs() < 1e-10);
            }
            for s in z.samples() {
                prop_assert!((0.0..=1.0).contains(&s.eda));
            }
            for s in d.samples() {
                let back = n.invert_target(n.apply_target(s.eda));
                prop_assert!((back - s.eda).abs() <= 1e-12 * (1.0 + s.eda.abs()));
            }
        }
    }
}
