//! Minibatch training, fold execution and k-fold cross-validation.

mod adam;
mod recovery;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use recovery::{recover_physics, RecoveryConfig, RecoveryFailure, RecoveryReport, Trajectory};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Mode;
use crate::data::{stratified_kfold, Dataset, Normalizer, SampleBatch, EMOTION_FEATURES};
use crate::error::{Error, Result};
use crate::eval::{classification_metrics, regression_metrics, FoldReport};
use crate::model::{self, init_model, ModelConfig, ModelParams};
use crate::objective::{physics_loss, physics_residual, LossWeights};
use crate::rng::{Purpose, Rng};

/// Which loss terms a run optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// EDA, emotion and physics terms.
    Full,
    /// EDA and emotion terms; λ forced to 0.
    NoPhysics,
    /// EDA and physics terms.
    EdaOnly,
    /// Emotion and physics terms. The EDA head only moves through the physics term.
    EmotionOnly,
    /// Emotion term alone.
    EmotionOnlyNoPhys,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoPhysics,
        Variant::EdaOnly,
        Variant::EmotionOnly,
        Variant::EmotionOnlyNoPhys,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoPhysics => "no_physics",
            Variant::EdaOnly => "eda_only",
            Variant::EmotionOnly => "emotion_only",
            Variant::EmotionOnlyNoPhys => "emotion_only_no_phys",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.id() == id)
    }

    pub fn weights(self) -> LossWeights {
        let (eda, emotion, physics) = match self {
            Variant::Full => (1.0, 1.0, true),
            Variant::NoPhysics => (1.0, 1.0, false),
            Variant::EdaOnly => (1.0, 0.0, true),
            Variant::EmotionOnly => (0.0, 1.0, true),
            Variant::EmotionOnlyNoPhys => (0.0, 1.0, false),
        };
        LossWeights {
            eda,
            emotion,
            physics,
        }
    }

    /// Whether the variant trains a classifier at all.
    pub fn trains_classifier(self) -> bool {
        self.weights().emotion > 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRunConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub variant: Variant,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 128,
            variant: Variant::Full,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainRunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.adam.lr > 0.0) || !(self.adam.epsilon > 0.0) {
            return Err(Error::config("learning rate and epsilon must be positive"));
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return Err(Error::config("adam betas must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochTrace {
    pub epoch: usize,
    pub l_eda: f64,
    pub l_emotion: f64,
    pub l_physics: f64,
    /// Physics weight in force at the end of the epoch (0 when the term is off).
    pub lambda_eff: f64,
    pub alpha0: f64,
    pub beta: [f64; EMOTION_FEATURES],
    pub gamma: f64,
}

/// Random streams used while training one fold.
#[derive(Debug, Clone)]
pub struct TrainStreams {
    pub shuffle: Rng,
    pub dropout: Rng,
}

impl TrainStreams {
    pub fn new(seed: u64, fold: u64) -> Self {
        Self {
            shuffle: Rng::stream(seed, Purpose::Shuffle, fold),
            dropout: Rng::stream(seed, Purpose::Dropout, fold),
        }
    }
}

/// One pass over `normalized` in seeded-shuffle order, contiguous batches,
/// final short batch kept. `raw` must hold the same rows unnormalized.
pub fn train_epoch(
    params: &mut ModelParams,
    opt: &mut AdamState,
    normalized: &Dataset,
    raw: &Dataset,
    cfg: &TrainRunConfig,
    epoch: usize,
    streams: &mut TrainStreams,
) -> Result<EpochTrace> {
    if normalized.is_empty() {
        return Err(Error::contract("training on an empty dataset"));
    }
    let weights = cfg.variant.weights();
    let mut order: Vec<usize> = (0..normalized.len()).collect();
    streams.shuffle.shuffle(&mut order);

    let (mut l_eda, mut l_emotion, mut l_physics) = (0.0, 0.0, 0.0);
    for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
        let wrap = |e: Error| Error::Batch {
            batch: b,
            source: Box::new(e),
        };
        let batch = SampleBatch::gather(normalized, raw, chunk, params.config.residual_features)
            .map_err(wrap)?;
        let (loss, grads, preds) = crate::objective::loss_and_gradients(
            params,
            &batch,
            weights,
            Mode::Train,
            &mut streams.dropout,
        )
        .map_err(wrap)?;
        let n = chunk.len() as f64;
        l_eda += n * loss.l_eda;
        l_emotion += n * loss.l_emotion;
        l_physics += n * loss.l_physics;
        params.update_running_statistics(&preds).map_err(wrap)?;
        adam_step(opt, params, &grads).map_err(wrap)?;
        if !params.physics.is_finite() || grads.max_abs().is_nan() {
            return Err(wrap(Error::NumericDomain {
                location: "optimizer".into(),
                detail: "parameters became non-finite".into(),
            }));
        }
    }
    let total = normalized.len() as f64;
    Ok(EpochTrace {
        epoch,
        l_eda: l_eda / total,
        l_emotion: l_emotion / total,
        l_physics: l_physics / total,
        lambda_eff: if weights.physics { params.lambda_eff() } else { 0.0 },
        alpha0: params.physics.alpha0,
        beta: params.physics.beta,
        gamma: params.physics.gamma,
    })
}

/// Evaluation-mode predictions for a raw dataset, normalized with the model's stored statistics.
pub fn predict(params: &ModelParams, raw: &Dataset) -> Result<model::Predictions> {
    let normalized = params.normalizer.apply(raw);
    let indices: Vec<usize> = (0..raw.len()).collect();
    let batch = SampleBatch::gather(&normalized, raw, &indices, params.config.residual_features)?;
    // Eval mode draws no random numbers.
    let mut rng = Rng::from_seed(0);
    model::forward(params, &batch, Mode::Eval, &mut rng)
}

/// Validation metrics of a trained model on a raw dataset. Regression
/// metrics are in normalized target units.
pub fn evaluate(params: &ModelParams, raw: &Dataset, fold: usize) -> Result<FoldReport> {
    let preds = predict(params, raw)?;
    let normalized = params.normalizer.apply(raw);
    let targets = normalized.targets();
    let labels = normalized.labels();
    let regression = regression_metrics(&preds.eda, &targets)?;
    let classification = classification_metrics(&preds.prob, &labels, params.config.threshold)?;
    let indices: Vec<usize> = (0..raw.len()).collect();
    let batch = SampleBatch::gather(&normalized, raw, &indices, params.config.residual_features)?;
    let residual = physics_residual(&preds.eda_dt, &preds.eda, &batch.residual_emotion, &params.physics)?;
    Ok(FoldReport {
        fold,
        regression,
        classification,
        physics: params.physics,
        lambda_eff: params.lambda_eff(),
        valid_physics_loss: physics_loss(&residual)?,
        traces: Vec::new(),
    })
}

/// A trained fold: its report and final model.
#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub report: FoldReport,
    pub model: ModelParams,
}

/// Fit the normalizer on `train`, train for `cfg.epochs`, evaluate on `valid`.
pub fn run_fold(
    train: &Dataset,
    valid: &Dataset,
    cfg: &TrainRunConfig,
    model_cfg: &ModelConfig,
    fold: usize,
) -> Result<FoldOutcome> {
    cfg.validate()?;
    let normalizer = Normalizer::fit(train)?;
    let normalized = normalizer.apply(train);
    let mut params = init_model(model_cfg)?;
    params.normalizer = normalizer;
    let mut opt = AdamState::new(&params, cfg.adam);
    let mut streams = TrainStreams::new(cfg.seed, fold as u64);
    let mut traces = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        traces.push(train_epoch(&mut params, &mut opt, &normalized, train, cfg, epoch, &mut streams)?);
    }
    let mut report = evaluate(&params, valid, fold)?;
    if !cfg.variant.weights().physics {
        report.lambda_eff = 0.0;
    }
    report.traces = traces;
    Ok(FoldOutcome { report, model: params })
}

/// Stratified k-fold cross-validation. Folds train in parallel; results are
/// returned in fold order.
pub fn run_kfold(
    data: &Dataset,
    k: usize,
    cfg: &TrainRunConfig,
    model_cfg: &ModelConfig,
) -> Result<Vec<FoldOutcome>> {
    cfg.validate()?;
    model_cfg.validate()?;
    let folds = stratified_kfold(&data.labels(), k, cfg.seed)?;
    folds
        .par_iter()
        .enumerate()
        .map(|(i, f)| run_fold(&data.subset(&f.train), &data.subset(&f.valid), cfg, model_cfg, i))
        .collect()
}

#[cfg(test)]
mod tests;
