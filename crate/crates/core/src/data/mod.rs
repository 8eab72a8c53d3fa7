//! Tabular samples, normalization, stratified folds and synthetic benchmarks.
//!
//! One row carries a scalar time proxy `t`, three emotion features
//! (PANAS mean, SAM valence, SAM arousal), the window-mean EDA target and a
//! binary label (0 = non-stress, 1 = stress). When exporting WESAD, baseline
//! and amusement windows map to 0 and stress windows to 1.

mod csv_io;
mod folds;
mod normalize;
mod synth;

pub use csv_io::{load_csv, read_derivatives, write_csv, write_derivatives, CSV_HEADER};
pub use folds::{stratified_kfold, Fold};
pub use normalize::Normalizer;
pub use synth::{
    closed_form, closed_form_derivative, rk4_integrate, synth_generate, ClassCluster, SynthSpec,
};

use crate::error::{Error, Result};

/// Number of emotion features per sample.
pub const EMOTION_FEATURES: usize = 3;
/// Network input width: time plus emotion features.
pub const INPUT_FEATURES: usize = 1 + EMOTION_FEATURES;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub e: [f64; EMOTION_FEATURES],
    pub eda: f64,
    pub label: u8,
}

impl Sample {
    pub fn validate(&self) -> Result<()> {
        let finite = self.t.is_finite() && self.eda.is_finite() && self.e.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::contract("sample contains a non-finite field"));
        }
        if self.label > 1 {
            return Err(Error::contract(format!("label {} outside {{0, 1}}", self.label)));
        }
        Ok(())
    }

    /// `[t, e1, e2, e3]`.
    pub fn inputs(&self) -> [f64; INPUT_FEATURES] {
        [self.t, self.e[0], self.e[1], self.e[2]]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        for s in &samples {
            s.validate()?;
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.eda).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }
}

/// Which emotion values enter the physics residual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualFeatures {
    /// The normalized features fed to the network.
    #[default]
    Normalized,
    /// The features in their original units.
    Raw,
}

/// A minibatch laid out for the network and the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub time: Vec<f64>,
    pub emotion: Vec<[f64; EMOTION_FEATURES]>,
    pub eda: Vec<f64>,
    pub label: Vec<u8>,
    /// Emotion vector used in the physics residual.
    pub residual_emotion: Vec<[f64; EMOTION_FEATURES]>,
}

impl SampleBatch {
    /// Batch from already normalized samples; the residual uses the same features.
    pub fn from_samples(samples: &[Sample]) -> Self {
        Self {
            time: samples.iter().map(|s| s.t).collect(),
            emotion: samples.iter().map(|s| s.e).collect(),
            eda: samples.iter().map(|s| s.eda).collect(),
            label: samples.iter().map(|s| s.label).collect(),
            residual_emotion: samples.iter().map(|s| s.e).collect(),
        }
    }

    /// Gather rows `indices` of a normalized dataset. With
    /// [`ResidualFeatures::Raw`], `raw` must be the same rows before normalization.
    pub fn gather(
        normalized: &Dataset,
        raw: &Dataset,
        indices: &[usize],
        features: ResidualFeatures,
    ) -> Result<Self> {
        if normalized.len() != raw.len() {
            return Err(Error::contract("normalized and raw datasets differ in length"));
        }
        let picked: Vec<Sample> = indices.iter().map(|&i| normalized.samples[i].clone()).collect();
        let mut batch = Self::from_samples(&picked);
        if features == ResidualFeatures::Raw {
            batch.residual_emotion = indices.iter().map(|&i| raw.samples[i].e).collect();
        }
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }
}
