//! Two-branch, two-head network with trainable physics coefficients.
//!
//! The time column and the three emotion features are concatenated and pass
//! through hidden blocks of `Dense → BatchNorm → Swish → Dropout`. The last
//! hidden activation feeds both a linear EDA head and a logistic stress head.
//! Hidden dense layers carry no bias; the batch-norm shift plays that role.

mod checkpoint;
mod physics;

pub use checkpoint::{load_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use physics::{inverse_softplus, softplus, PhysicsParams};

use serde::{Deserialize, Serialize};

use crate::autodiff::{
    concat_backward, concat_forward, dual_backward, dual_forward, DualBatch, Matrix, Mode,
    Primitive, PrimitiveCache,
};
use crate::data::{Normalizer, ResidualFeatures, SampleBatch, EMOTION_FEATURES, INPUT_FEATURES};
use crate::error::{Error, Result};
use crate::rng::{Purpose, Rng};

/// Probabilities are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_widths: Vec<usize>,
    pub dropout: f64,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
    pub seed: u64,
    pub threshold: f64,
    pub lambda_floor: f64,
    pub lambda_frozen: bool,
    pub residual_features: ResidualFeatures,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_widths: vec![64, 64],
            dropout: 0.1,
            bn_epsilon: 1e-5,
            bn_momentum: 0.9,
            seed: 0,
            threshold: 0.5,
            lambda_floor: 1e-3,
            lambda_frozen: false,
            residual_features: ResidualFeatures::Normalized,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_widths.is_empty() || self.hidden_widths.contains(&0) {
            return Err(Error::config("hidden_widths must be non-empty with every width >= 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.bn_epsilon > 0.0) {
            return Err(Error::config("bn_epsilon must be positive"));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::config("bn_momentum must lie in [0, 1]"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::config(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        if !(self.lambda_floor >= 0.0) || !self.lambda_floor.is_finite() {
            return Err(Error::config(format!(
                "lambda_floor {} must be finite and >= 0",
                self.lambda_floor
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLayer {
    /// `fan_in × width`.
    pub weight: Matrix,
    pub bn_scale: Matrix,
    pub bn_shift: Matrix,
    pub running_mean: Matrix,
    pub running_var: Matrix,
}

impl HiddenLayer {
    pub fn width(&self) -> usize {
        self.weight.cols()
    }

    fn bn_params(&self) -> [Matrix; 4] {
        [
            self.bn_scale.clone(),
            self.bn_shift.clone(),
            self.running_mean.clone(),
            self.running_var.clone(),
        ]
    }
}

/// A scalar output head: `h·W + b` with `W: width × 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Head {
    fn zeros(width: usize) -> Self {
        Self {
            weight: Matrix::zeros(width, 1),
            bias: Matrix::zeros(1, 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub hidden: Vec<HiddenLayer>,
    pub eda_head: Head,
    pub emotion_head: Head,
    pub physics: PhysicsParams,
    pub normalizer: Normalizer,
}

/// Names a trainable parameter block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockId {
    HiddenWeight(usize),
    BnScale(usize),
    BnShift(usize),
    EdaHeadWeight,
    EdaHeadBias,
    EmotionHeadWeight,
    EmotionHeadBias,
    Alpha0,
    Beta,
    Gamma,
    Rho,
}

impl std::fmt::Display for BlockId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BlockId::HiddenWeight(i) => write!(f, "hidden{i}.weight"),
            BlockId::BnScale(i) => write!(f, "hidden{i}.bn_scale"),
            BlockId::BnShift(i) => write!(f, "hidden{i}.bn_shift"),
            BlockId::EdaHeadWeight => f.write_str("eda_head.weight"),
            BlockId::EdaHeadBias => f.write_str("eda_head.bias"),
            BlockId::EmotionHeadWeight => f.write_str("emotion_head.weight"),
            BlockId::EmotionHeadBias => f.write_str("emotion_head.bias"),
            BlockId::Alpha0 => f.write_str("physics.alpha0"),
            BlockId::Beta => f.write_str("physics.beta"),
            BlockId::Gamma => f.write_str("physics.gamma"),
            BlockId::Rho => f.write_str("physics.rho"),
        }
    }
}

/// Gradients shaped like the trainable part of [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub hidden_weight: Vec<Matrix>,
    pub bn_scale: Vec<Matrix>,
    pub bn_shift: Vec<Matrix>,
    pub eda_head: Head,
    pub emotion_head: Head,
    pub physics: PhysicsParams,
    rho_trainable: bool,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        let zeros = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        Self {
            hidden_weight: params.hidden.iter().map(|l| zeros(&l.weight)).collect(),
            bn_scale: params.hidden.iter().map(|l| zeros(&l.bn_scale)).collect(),
            bn_shift: params.hidden.iter().map(|l| zeros(&l.bn_shift)).collect(),
            eda_head: Head::zeros(params.eda_head.weight.rows()),
            emotion_head: Head::zeros(params.emotion_head.weight.rows()),
            physics: PhysicsParams {
                alpha0: 0.0,
                beta: [0.0; EMOTION_FEATURES],
                gamma: 0.0,
                rho: 0.0,
            },
            rho_trainable: !params.config.lambda_frozen,
        }
    }

    /// Blocks in the same order as [`ModelParams::trainable_blocks`].
    pub fn blocks(&self) -> Vec<(BlockId, &[f64])> {
        let mut out = Vec::new();
        for i in 0..self.hidden_weight.len() {
            out.push((BlockId::HiddenWeight(i), self.hidden_weight[i].as_slice()));
            out.push((BlockId::BnScale(i), self.bn_scale[i].as_slice()));
            out.push((BlockId::BnShift(i), self.bn_shift[i].as_slice()));
        }
        out.push((BlockId::EdaHeadWeight, self.eda_head.weight.as_slice()));
        out.push((BlockId::EdaHeadBias, self.eda_head.bias.as_slice()));
        out.push((BlockId::EmotionHeadWeight, self.emotion_head.weight.as_slice()));
        out.push((BlockId::EmotionHeadBias, self.emotion_head.bias.as_slice()));
        out.push((BlockId::Alpha0, std::slice::from_ref(&self.physics.alpha0)));
        out.push((BlockId::Beta, &self.physics.beta[..]));
        out.push((BlockId::Gamma, std::slice::from_ref(&self.physics.gamma)));
        if self.rho_trainable {
            out.push((BlockId::Rho, std::slice::from_ref(&self.physics.rho)));
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|(_, b)| b.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl ModelParams {
    /// Trainable blocks in a fixed order. `ρ` is omitted when λ is frozen.
    pub fn trainable_blocks(&self) -> Vec<(BlockId, &[f64])> {
        let mut out = Vec::new();
        for (i, l) in self.hidden.iter().enumerate() {
            out.push((BlockId::HiddenWeight(i), l.weight.as_slice()));
            out.push((BlockId::BnScale(i), l.bn_scale.as_slice()));
            out.push((BlockId::BnShift(i), l.bn_shift.as_slice()));
        }
        out.push((BlockId::EdaHeadWeight, self.eda_head.weight.as_slice()));
        out.push((BlockId::EdaHeadBias, self.eda_head.bias.as_slice()));
        out.push((BlockId::EmotionHeadWeight, self.emotion_head.weight.as_slice()));
        out.push((BlockId::EmotionHeadBias, self.emotion_head.bias.as_slice()));
        out.push((BlockId::Alpha0, std::slice::from_ref(&self.physics.alpha0)));
        out.push((BlockId::Beta, &self.physics.beta[..]));
        out.push((BlockId::Gamma, std::slice::from_ref(&self.physics.gamma)));
        if !self.config.lambda_frozen {
            out.push((BlockId::Rho, std::slice::from_ref(&self.physics.rho)));
        }
        out
    }

    pub fn trainable_blocks_mut(&mut self) -> Vec<(BlockId, &mut [f64])> {
        let mut out: Vec<(BlockId, &mut [f64])> = Vec::new();
        for (i, l) in self.hidden.iter_mut().enumerate() {
            out.push((BlockId::HiddenWeight(i), l.weight.as_mut_slice()));
            out.push((BlockId::BnScale(i), l.bn_scale.as_mut_slice()));
            out.push((BlockId::BnShift(i), l.bn_shift.as_mut_slice()));
        }
        out.push((BlockId::EdaHeadWeight, self.eda_head.weight.as_mut_slice()));
        out.push((BlockId::EdaHeadBias, self.eda_head.bias.as_mut_slice()));
        out.push((BlockId::EmotionHeadWeight, self.emotion_head.weight.as_mut_slice()));
        out.push((BlockId::EmotionHeadBias, self.emotion_head.bias.as_mut_slice()));
        let phys = &mut self.physics;
        out.push((BlockId::Alpha0, std::slice::from_mut(&mut phys.alpha0)));
        out.push((BlockId::Beta, &mut phys.beta[..]));
        out.push((BlockId::Gamma, std::slice::from_mut(&mut phys.gamma)));
        if !self.config.lambda_frozen {
            out.push((BlockId::Rho, std::slice::from_mut(&mut phys.rho)));
        }
        out
    }

    pub fn lambda_eff(&self) -> f64 {
        self.physics.lambda_eff(self.config.lambda_floor)
    }

    /// Fold train-mode batch statistics into the running estimates:
    /// `running ← momentum·running + (1 − momentum)·batch`.
    pub fn update_running_statistics(&mut self, preds: &Predictions) -> Result<()> {
        let m = self.config.bn_momentum;
        for (layer, trace) in self.hidden.iter_mut().zip(&preds.trace.hidden) {
            let Some((mean, var)) = trace.batch_norm.batch_statistics() else {
                continue;
            };
            if mean.len() != layer.width() {
                return Err(Error::contract("batch statistics width mismatch"));
            }
            for (r, b) in layer.running_mean.as_mut_slice().iter_mut().zip(mean) {
                *r = m * *r + (1.0 - m) * b;
            }
            for (r, b) in layer.running_var.as_mut_slice().iter_mut().zip(var) {
                *r = m * *r + (1.0 - m) * b;
            }
        }
        Ok(())
    }

    pub fn validate_shapes(&self) -> Result<()> {
        self.config.validate()?;
        if self.hidden.len() != self.config.hidden_widths.len() {
            return Err(Error::contract("hidden layer count does not match config"));
        }
        let mut fan_in = INPUT_FEATURES;
        for (l, &w) in self.hidden.iter().zip(&self.config.hidden_widths) {
            l.weight.ensure_shape(fan_in, w, "hidden weight")?;
            for m in [&l.bn_scale, &l.bn_shift, &l.running_mean, &l.running_var] {
                m.ensure_shape(1, w, "batch-norm vector")?;
            }
            fan_in = w;
        }
        for h in [&self.eda_head, &self.emotion_head] {
            h.weight.ensure_shape(fan_in, 1, "head weight")?;
            h.bias.ensure_shape(1, 1, "head bias")?;
        }
        Ok(())
    }
}

fn glorot(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Matrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.uniform_range(-limit, limit))
        .collect();
    Matrix::from_vec(fan_in, fan_out, data).expect("sized by construction")
}

/// Glorot-uniform weights from the config seed, zero biases, unit batch-norm
/// scale, and the default physics coefficients.
pub fn init_model(config: &ModelConfig) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = Rng::stream(config.seed, Purpose::Init, 0);
    let mut fan_in = INPUT_FEATURES;
    let mut hidden = Vec::with_capacity(config.hidden_widths.len());
    for &w in &config.hidden_widths {
        hidden.push(HiddenLayer {
            weight: glorot(&mut rng, fan_in, w),
            bn_scale: Matrix::filled(1, w, 1.0),
            bn_shift: Matrix::zeros(1, w),
            running_mean: Matrix::zeros(1, w),
            running_var: Matrix::filled(1, w, 1.0),
        });
        fan_in = w;
    }
    let eda_head = Head {
        weight: glorot(&mut rng, fan_in, 1),
        bias: Matrix::zeros(1, 1),
    };
    let emotion_head = Head {
        weight: glorot(&mut rng, fan_in, 1),
        bias: Matrix::zeros(1, 1),
    };
    Ok(ModelParams {
        config: config.clone(),
        hidden,
        eda_head,
        emotion_head,
        physics: PhysicsParams::default(),
        normalizer: Normalizer::identity(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenTrace {
    pub affine: PrimitiveCache,
    pub batch_norm: PrimitiveCache,
    pub swish: PrimitiveCache,
    pub dropout: PrimitiveCache,
}

/// Every primitive cache of one forward pass, in network order.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub concat: PrimitiveCache,
    pub hidden: Vec<HiddenTrace>,
    pub eda_affine: PrimitiveCache,
    pub eda_output: PrimitiveCache,
    pub emotion_affine: PrimitiveCache,
    pub emotion_output: PrimitiveCache,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub eda: Vec<f64>,
    /// dŷ/dt with respect to the network's time input.
    pub eda_dt: Vec<f64>,
    /// Clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]`.
    pub prob: Vec<f64>,
    /// Sigmoid output before clamping.
    pub prob_raw: Vec<f64>,
    pub trace: ForwardTrace,
}

impl Predictions {
    pub fn caches(&self) -> Vec<&PrimitiveCache> {
        let t = &self.trace;
        let mut out = vec![&t.concat];
        for h in &t.hidden {
            out.extend([&h.affine, &h.batch_norm, &h.swish, &h.dropout]);
        }
        out.extend([&t.eda_affine, &t.eda_output, &t.emotion_affine, &t.emotion_output]);
        out
    }
}

fn locate(err: Error, layer: &str) -> Error {
    match err {
        Error::NumericDomain { location, detail } => Error::NumericDomain {
            location: format!("{layer} ({location})"),
            detail,
        },
        other => other,
    }
}

/// Forward pass with the time tangent seeded to 1 and emotion tangents to 0.
pub fn forward(
    params: &ModelParams,
    batch: &SampleBatch,
    mode: Mode,
    rng: &mut Rng,
) -> Result<Predictions> {
    forward_seeded(params, batch, mode, rng, 1.0, 0.0)
}

/// Forward pass with explicit tangent seeds for the time and emotion inputs.
pub fn forward_seeded(
    params: &ModelParams,
    batch: &SampleBatch,
    mode: Mode,
    rng: &mut Rng,
    time_seed: f64,
    emotion_seed: f64,
) -> Result<Predictions> {
    if batch.is_empty() {
        return Err(Error::contract("forward on an empty batch"));
    }
    if batch.emotion.len() != batch.len() {
        return Err(Error::contract("batch columns differ in length"));
    }
    let n = batch.len();
    let time = DualBatch::new(
        Matrix::column(&batch.time),
        Matrix::filled(n, 1, time_seed),
    )?;
    let emotion_values: Vec<f64> = batch.emotion.iter().flat_map(|e| e.iter().copied()).collect();
    let emotion = DualBatch::new(
        Matrix::from_vec(n, EMOTION_FEATURES, emotion_values)?,
        Matrix::filled(n, EMOTION_FEATURES, emotion_seed),
    )?;
    let (mut h, concat) = concat_forward(&[&time, &emotion]).map_err(|e| locate(e, "input"))?;

    let cfg = &params.config;
    let bn = Primitive::BatchNorm {
        epsilon: cfg.bn_epsilon,
    };
    let dropout = Primitive::Dropout { rate: cfg.dropout };
    let mut hidden = Vec::with_capacity(params.hidden.len());
    for (i, layer) in params.hidden.iter().enumerate() {
        let name = format!("hidden layer {}", i + 1);
        let (a, affine) = dual_forward(&Primitive::Affine, std::slice::from_ref(&layer.weight), &h, mode, rng)
            .map_err(|e| locate(e, &name))?;
        let (b, batch_norm) =
            dual_forward(&bn, &layer.bn_params(), &a, mode, rng).map_err(|e| locate(e, &name))?;
        let (s, swish) =
            dual_forward(&Primitive::Swish, &[], &b, mode, rng).map_err(|e| locate(e, &name))?;
        let (d, drop) = dual_forward(&dropout, &[], &s, mode, rng).map_err(|e| locate(e, &name))?;
        hidden.push(HiddenTrace {
            affine,
            batch_norm,
            swish,
            dropout: drop,
        });
        h = d;
    }

    let head_params = |head: &Head| [head.weight.clone(), head.bias.clone()];
    let (eda_lin, eda_affine) =
        dual_forward(&Primitive::Affine, &head_params(&params.eda_head), &h, mode, rng)
            .map_err(|e| locate(e, "eda head"))?;
    let (eda_out, eda_output) = dual_forward(&Primitive::Identity, &[], &eda_lin, mode, rng)
        .map_err(|e| locate(e, "eda head"))?;
    let (emo_lin, emotion_affine) =
        dual_forward(&Primitive::Affine, &head_params(&params.emotion_head), &h, mode, rng)
            .map_err(|e| locate(e, "emotion head"))?;
    let (emo_out, emotion_output) = dual_forward(&Primitive::Sigmoid, &[], &emo_lin, mode, rng)
        .map_err(|e| locate(e, "emotion head"))?;

    if !eda_out.is_finite() {
        return Err(Error::NumericDomain {
            location: "eda head".into(),
            detail: "non-finite output".into(),
        });
    }
    let prob_raw = emo_out.value.into_vec();
    Ok(Predictions {
        eda: eda_out.value.into_vec(),
        eda_dt: eda_out.tangent.into_vec(),
        prob: prob_raw
            .iter()
            .map(|p| p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP))
            .collect(),
        prob_raw,
        trace: ForwardTrace {
            concat,
            hidden,
            eda_affine,
            eda_output,
            emotion_affine,
            emotion_output,
        },
    })
}

/// Loss adjoints with respect to the network outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputAdjoints {
    pub eda: Vec<f64>,
    pub eda_dt: Vec<f64>,
    /// With respect to the clamped probability.
    pub prob: Vec<f64>,
}

/// Reverse pass from output adjoints to network-weight gradients. Physics
/// gradients are left at zero; the objective fills them in.
pub fn backward(params: &ModelParams, preds: &Predictions, adj: &OutputAdjoints) -> Result<Gradients> {
    let n = preds.eda.len();
    if adj.eda.len() != n || adj.eda_dt.len() != n || adj.prob.len() != n {
        return Err(Error::contract("output adjoints do not match the batch size"));
    }
    let t = &preds.trace;
    let mut grads = Gradients::zeros_like(params);

    let (av, at) = (Matrix::column(&adj.eda), Matrix::column(&adj.eda_dt));
    let a = dual_backward(&Primitive::Identity, &t.eda_output, &av, &at)?;
    let a = dual_backward(&Primitive::Affine, &t.eda_affine, &a.value, &a.tangent)?;
    let mut h_value = a.value;
    let mut h_tangent = a.tangent;
    let mut p = a.params.into_iter();
    grads.eda_head.weight = p.next().expect("affine weight grad");
    grads.eda_head.bias = p.next().expect("affine bias grad");

    // The clamp passes gradient only where it is inactive.
    let prob_adj: Vec<f64> = adj
        .prob
        .iter()
        .zip(&preds.prob_raw)
        .map(|(g, &p)| if (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) { *g } else { 0.0 })
        .collect();
    let zeros = Matrix::zeros(n, 1);
    let a = dual_backward(&Primitive::Sigmoid, &t.emotion_output, &Matrix::column(&prob_adj), &zeros)?;
    let a = dual_backward(&Primitive::Affine, &t.emotion_affine, &a.value, &a.tangent)?;
    h_value.add_assign(&a.value)?;
    h_tangent.add_assign(&a.tangent)?;
    let mut p = a.params.into_iter();
    grads.emotion_head.weight = p.next().expect("affine weight grad");
    grads.emotion_head.bias = p.next().expect("affine bias grad");

    let cfg = &params.config;
    let bn = Primitive::BatchNorm {
        epsilon: cfg.bn_epsilon,
    };
    let dropout = Primitive::Dropout { rate: cfg.dropout };
    for (i, trace) in t.hidden.iter().enumerate().rev() {
        let a = dual_backward(&dropout, &trace.dropout, &h_value, &h_tangent)?;
        let a = dual_backward(&Primitive::Swish, &trace.swish, &a.value, &a.tangent)?;
        let a = dual_backward(&bn, &trace.batch_norm, &a.value, &a.tangent)?;
        let mut bp = a.params.into_iter();
        grads.bn_scale[i] = bp.next().expect("bn scale grad");
        grads.bn_shift[i] = bp.next().expect("bn shift grad");
        let a = dual_backward(&Primitive::Affine, &trace.affine, &a.value, &a.tangent)?;
        grads.hidden_weight[i] = a.params.into_iter().next().expect("affine weight grad");
        h_value = a.value;
        h_tangent = a.tangent;
    }
    concat_backward(&t.concat, &h_value, &h_tangent)?;
    Ok(grads)
}
