//! Layer primitives with a value channel, a tangent channel and a reverse pass.
//!
//! The loss consumes both channels, so every backward returns
//!
//! * `adj_input_value   = Jᵀ·adj_value + (∂(J·ẋ)/∂x)ᵀ·adj_tangent`
//! * `adj_input_tangent = Jᵀ·adj_tangent`
//!
//! where `J` is the primitive's Jacobian and `ẋ` the incoming tangent. For
//! elementwise nonlinearities the middle term needs the second derivative.

use super::{DualBatch, Matrix};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Train mode uses batch statistics and live dropout; eval mode uses running
/// statistics and no dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    /// `x·W (+ b)`. Params: `[W]` or `[W, b]` with `W: in×out`, `b: 1×out`.
    Affine,
    /// `x·σ(x)`.
    Swish,
    /// Per-column normalization. Params: `[scale, shift, running_mean, running_var]`, each `1×w`.
    BatchNorm { epsilon: f64 },
    /// Inverted dropout; the same mask multiplies value and tangent.
    Dropout { rate: f64 },
    /// Logistic output.
    Sigmoid,
    Identity,
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Affine => "affine",
            Primitive::Swish => "swish",
            Primitive::BatchNorm { .. } => "batch_norm",
            Primitive::Dropout { .. } => "dropout",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Identity => "identity",
        }
    }
}

/// Forward intermediates kept for the reverse pass.
#[derive(Debug, Clone, PartialEq)]
pub enum PrimitiveCache {
    Affine {
        input: DualBatch,
        weight: Matrix,
        has_bias: bool,
    },
    Swish {
        input: DualBatch,
    },
    BatchNorm(BatchNormCache),
    Dropout {
        mask: Option<Matrix>,
    },
    Sigmoid {
        output: Matrix,
        input_tangent: Matrix,
    },
    Identity,
    Concat {
        widths: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormCache {
    pub mode: Mode,
    /// x̂ = (x − μ)/√(σ² + ε) under whichever statistics were used.
    pub normalized: Matrix,
    pub input_tangent: Matrix,
    pub inv_std: Vec<f64>,
    pub scale: Vec<f64>,
    /// Batch mean and population variance (train mode only).
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

impl PrimitiveCache {
    fn kind(&self) -> &'static str {
        match self {
            PrimitiveCache::Affine { .. } => "affine",
            PrimitiveCache::Swish { .. } => "swish",
            PrimitiveCache::BatchNorm(_) => "batch_norm",
            PrimitiveCache::Dropout { .. } => "dropout",
            PrimitiveCache::Sigmoid { .. } => "sigmoid",
            PrimitiveCache::Identity => "identity",
            PrimitiveCache::Concat { .. } => "concat",
        }
    }

    /// Batch mean and variance recorded by a train-mode batch-norm forward.
    pub fn batch_statistics(&self) -> Option<(&[f64], &[f64])> {
        match self {
            PrimitiveCache::BatchNorm(c) if c.mode == Mode::Train => {
                Some((&c.batch_mean, &c.batch_var))
            }
            _ => None,
        }
    }
}

/// Result of a reverse pass through one primitive.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjoints {
    pub value: Matrix,
    pub tangent: Matrix,
    /// Gradients for the trainable params, in the order the forward received them.
    pub params: Vec<Matrix>,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn swish(x: f64) -> f64 {
    x * sigmoid(x)
}

/// s′(x) = σ(x) + x·σ(x)(1 − σ(x)).
pub fn swish_d1(x: f64) -> f64 {
    let s = sigmoid(x);
    s + x * s * (1.0 - s)
}

/// s″(x) = σ(x)(1 − σ(x))·(2 + x(1 − 2σ(x))).
pub fn swish_d2(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s))
}

fn check_finite(m: &Matrix, prim: &str, what: &str) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::NumericDomain {
            location: prim.to_string(),
            detail: format!("non-finite {what}"),
        })
    }
}

fn param<'a>(params: &'a [Matrix], idx: usize, prim: &str) -> Result<&'a Matrix> {
    params
        .get(idx)
        .ok_or_else(|| Error::contract(format!("{prim}: missing parameter {idx}")))
}

/// Forward pass of one primitive on both channels.
pub fn dual_forward(
    prim: &Primitive,
    params: &[Matrix],
    input: &DualBatch,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(DualBatch, PrimitiveCache)> {
    let name = prim.name();
    check_finite(&input.value, name, "input value")?;
    check_finite(&input.tangent, name, "input tangent")?;
    let (rows, cols) = input.shape();

    match *prim {
        Primitive::Affine => {
            let w = param(params, 0, name)?;
            if w.rows() != cols {
                return Err(Error::contract(format!(
                    "affine: input width {cols} does not match weight fan-in {}",
                    w.rows()
                )));
            }
            let mut value = input.value.matmul(w)?;
            let tangent = input.tangent.matmul(w)?;
            let has_bias = params.len() > 1;
            if has_bias {
                let b = &params[1];
                b.ensure_shape(1, w.cols(), "affine bias")?;
                for r in 0..rows {
                    for c in 0..w.cols() {
                        value[(r, c)] += b[(0, c)];
                    }
                }
            }
            let cache = PrimitiveCache::Affine {
                input: input.clone(),
                weight: w.clone(),
                has_bias,
            };
            Ok((DualBatch { value, tangent }, cache))
        }
        Primitive::Swish => {
            let value = input.value.map(swish);
            let tangent = input
                .value
                .zip_map(&input.tangent, |x, dx| swish_d1(x) * dx)?;
            let cache = PrimitiveCache::Swish {
                input: input.clone(),
            };
            Ok((DualBatch { value, tangent }, cache))
        }
        Primitive::BatchNorm { epsilon } => {
            let scale = param(params, 0, name)?;
            let shift = param(params, 1, name)?;
            for p in [scale, shift] {
                p.ensure_shape(1, cols, "batch-norm parameter")?;
            }
            let (mean, var) = match mode {
                Mode::Train => {
                    if rows == 0 {
                        return Err(Error::contract("batch-norm on empty batch"));
                    }
                    let n = rows as f64;
                    let mut mean = vec![0.0; cols];
                    for r in 0..rows {
                        for (m, v) in mean.iter_mut().zip(input.value.row(r)) {
                            *m += v;
                        }
                    }
                    mean.iter_mut().for_each(|m| *m /= n);
                    let mut var = vec![0.0; cols];
                    for r in 0..rows {
                        for ((s, v), m) in var.iter_mut().zip(input.value.row(r)).zip(&mean) {
                            *s += (v - m) * (v - m);
                        }
                    }
                    var.iter_mut().for_each(|s| *s /= n);
                    (mean, var)
                }
                Mode::Eval => {
                    let rm = param(params, 2, name)?;
                    let rv = param(params, 3, name)?;
                    rm.ensure_shape(1, cols, "batch-norm running mean")?;
                    rv.ensure_shape(1, cols, "batch-norm running variance")?;
                    (rm.as_slice().to_vec(), rv.as_slice().to_vec())
                }
            };
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + epsilon).sqrt()).collect();
            let mut normalized = Matrix::zeros(rows, cols);
            let mut value = Matrix::zeros(rows, cols);
            let mut tangent = Matrix::zeros(rows, cols);
            for r in 0..rows {
                for c in 0..cols {
                    let xh = (input.value[(r, c)] - mean[c]) * inv_std[c];
                    normalized[(r, c)] = xh;
                    value[(r, c)] = scale[(0, c)] * xh + shift[(0, c)];
                    tangent[(r, c)] = scale[(0, c)] * inv_std[c] * input.tangent[(r, c)];
                }
            }
            let (batch_mean, batch_var) = match mode {
                Mode::Train => (mean, var),
                Mode::Eval => (Vec::new(), Vec::new()),
            };
            let cache = PrimitiveCache::BatchNorm(BatchNormCache {
                mode,
                normalized,
                input_tangent: input.tangent.clone(),
                inv_std,
                scale: scale.as_slice().to_vec(),
                batch_mean,
                batch_var,
            });
            Ok((DualBatch { value, tangent }, cache))
        }
        Primitive::Dropout { rate } => {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::contract(format!("dropout rate {rate} outside [0, 1)")));
            }
            if mode == Mode::Eval || rate == 0.0 {
                return Ok((input.clone(), PrimitiveCache::Dropout { mask: None }));
            }
            let keep = 1.0 / (1.0 - rate);
            let mut mask = Matrix::zeros(rows, cols);
            for v in mask.as_mut_slice() {
                *v = if rng.uniform() >= rate { keep } else { 0.0 };
            }
            let value = input.value.zip_map(&mask, |x, m| x * m)?;
            let tangent = input.tangent.zip_map(&mask, |x, m| x * m)?;
            Ok((DualBatch { value, tangent }, PrimitiveCache::Dropout { mask: Some(mask) }))
        }
        Primitive::Sigmoid => {
            let value = input.value.map(sigmoid);
            let tangent = value.zip_map(&input.tangent, |p, dx| p * (1.0 - p) * dx)?;
            let cache = PrimitiveCache::Sigmoid {
                output: value.clone(),
                input_tangent: input.tangent.clone(),
            };
            Ok((DualBatch { value, tangent }, cache))
        }
        Primitive::Identity => Ok((input.clone(), PrimitiveCache::Identity)),
    }
}

/// Reverse pass of one primitive.
pub fn dual_backward(
    prim: &Primitive,
    cache: &PrimitiveCache,
    adj_value: &Matrix,
    adj_tangent: &Matrix,
) -> Result<Adjoints> {
    let mismatch = || {
        Error::contract(format!(
            "backward for {} given a {} cache",
            prim.name(),
            cache.kind()
        ))
    };
    if adj_value.shape() != adj_tangent.shape() {
        return Err(Error::contract("value and tangent adjoints differ in shape"));
    }

    match (prim, cache) {
        (
            Primitive::Affine,
            PrimitiveCache::Affine {
                input,
                weight,
                has_bias,
            },
        ) => {
            adj_value.ensure_shape(input.rows(), weight.cols(), "affine adjoint")?;
            let value = adj_value.matmul_transposed(weight)?;
            let tangent = adj_tangent.matmul_transposed(weight)?;
            let mut dw = Matrix::zeros(weight.rows(), weight.cols());
            input.value.add_transposed_matmul_into(adj_value, &mut dw)?;
            input.tangent.add_transposed_matmul_into(adj_tangent, &mut dw)?;
            let mut params = vec![dw];
            if *has_bias {
                params.push(adj_value.column_sums());
            }
            Ok(Adjoints {
                value,
                tangent,
                params,
            })
        }
        (Primitive::Swish, PrimitiveCache::Swish { input }) => {
            adj_value.ensure_shape(input.rows(), input.cols(), "swish adjoint")?;
            let (rows, cols) = input.shape();
            let mut value = Matrix::zeros(rows, cols);
            let mut tangent = Matrix::zeros(rows, cols);
            for r in 0..rows {
                for c in 0..cols {
                    let x = input.value[(r, c)];
                    let d1 = swish_d1(x);
                    value[(r, c)] = d1 * adj_value[(r, c)]
                        + swish_d2(x) * input.tangent[(r, c)] * adj_tangent[(r, c)];
                    tangent[(r, c)] = d1 * adj_tangent[(r, c)];
                }
            }
            Ok(Adjoints {
                value,
                tangent,
                params: Vec::new(),
            })
        }
        (Primitive::BatchNorm { .. }, PrimitiveCache::BatchNorm(c)) => {
            batch_norm_backward(c, adj_value, adj_tangent)
        }
        (Primitive::Dropout { .. }, PrimitiveCache::Dropout { mask }) => {
            let (value, tangent) = match mask {
                Some(m) => (
                    adj_value.zip_map(m, |a, k| a * k)?,
                    adj_tangent.zip_map(m, |a, k| a * k)?,
                ),
                None => (adj_value.clone(), adj_tangent.clone()),
            };
            Ok(Adjoints {
                value,
                tangent,
                params: Vec::new(),
            })
        }
        (
            Primitive::Sigmoid,
            PrimitiveCache::Sigmoid {
                output,
                input_tangent,
            },
        ) => {
            adj_value.ensure_shape(output.rows(), output.cols(), "sigmoid adjoint")?;
            let (rows, cols) = output.shape();
            let mut value = Matrix::zeros(rows, cols);
            let mut tangent = Matrix::zeros(rows, cols);
            for r in 0..rows {
                for c in 0..cols {
                    let p = output[(r, c)];
                    let d1 = p * (1.0 - p);
                    let d2 = d1 * (1.0 - 2.0 * p);
                    value[(r, c)] =
                        d1 * adj_value[(r, c)] + d2 * input_tangent[(r, c)] * adj_tangent[(r, c)];
                    tangent[(r, c)] = d1 * adj_tangent[(r, c)];
                }
            }
            Ok(Adjoints {
                value,
                tangent,
                params: Vec::new(),
            })
        }
        (Primitive::Identity, PrimitiveCache::Identity) => Ok(Adjoints {
            value: adj_value.clone(),
            tangent: adj_tangent.clone(),
            params: Vec::new(),
        }),
        _ => Err(mismatch()),
    }
}

// Batch statistics are constants for the tangent channel, but they still
// depend on the input values, so the tangent adjoint feeds back into the
// value adjoint through 1/√(σ² + ε).
fn batch_norm_backward(
    c: &BatchNormCache,
    adj_value: &Matrix,
    adj_tangent: &Matrix,
) -> Result<Adjoints> {
    let (rows, cols) = c.normalized.shape();
    adj_value.ensure_shape(rows, cols, "batch-norm adjoint")?;
    let mut value = Matrix::zeros(rows, cols);
    let mut tangent = Matrix::zeros(rows, cols);
    let mut d_scale = Matrix::zeros(1, cols);
    let mut d_shift = Matrix::zeros(1, cols);
    let n = rows as f64;

    for j in 0..cols {
        let g = c.scale[j];
        let inv = c.inv_std[j];
        let mut sum_adj = 0.0;
        let mut sum_adj_xhat = 0.0;
        let mut sum_tan = 0.0;
        for i in 0..rows {
            let av = adj_value[(i, j)];
            let at = adj_tangent[(i, j)];
            let xh = c.normalized[(i, j)];
            let dx = c.input_tangent[(i, j)];
            sum_adj += av;
            sum_adj_xhat += av * xh;
            sum_tan += at * dx;
            tangent[(i, j)] = g * inv * at;
        }
        d_scale[(0, j)] = sum_adj_xhat + inv * sum_tan;
        d_shift[(0, j)] = sum_adj;

        match c.mode {
            Mode::Train => {
                let tangent_term = g * sum_tan * inv * inv / n;
                for i in 0..rows {
                    let xh = c.normalized[(i, j)];
                    value[(i, j)] = g * inv / n * (n * adj_value[(i, j)] - sum_adj - xh * sum_adj_xhat)
                        - tangent_term * xh;
                }
            }
            Mode::Eval => {
                for i in 0..rows {
                    value[(i, j)] = g * inv * adj_value[(i, j)];
                }
            }
        }
    }

    Ok(Adjoints {
        value,
        tangent,
        params: vec![d_scale, d_shift],
    })
}

/// Joins column blocks (time column, emotion columns) into one batch.
pub fn concat_forward(parts: &[&DualBatch]) -> Result<(DualBatch, PrimitiveCache)> {
    let values: Vec<&Matrix> = parts.iter().map(|p| &p.value).collect();
    let tangents: Vec<&Matrix> = parts.iter().map(|p| &p.tangent).collect();
    let out = DualBatch {
        value: Matrix::hconcat(&values)?,
        tangent: Matrix::hconcat(&tangents)?,
    };
    check_finite(&out.value, "concat", "input value")?;
    let widths = parts.iter().map(|p| p.cols()).collect();
    Ok((out, PrimitiveCache::Concat { widths }))
}

/// Splits concatenated adjoints back into per-part `(value, tangent)` adjoints.
pub fn concat_backward(
    cache: &PrimitiveCache,
    adj_value: &Matrix,
    adj_tangent: &Matrix,
) -> Result<Vec<(Matrix, Matrix)>> {
    let PrimitiveCache::Concat { widths } = cache else {
        return Err(Error::contract(format!(
            "concat backward given a {} cache",
            cache.kind()
        )));
    };
    let mut start = 0;
    let mut out = Vec::with_capacity(widths.len());
    for &w in widths {
        out.push((
            adj_value.column_slice(start, w)?,
            adj_tangent.column_slice(start, w)?,
        ));
        start += w;
    }
    Ok(out)
}
