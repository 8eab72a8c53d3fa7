//! Linear comparators: ridge regression for EDA and logistic regression for stress.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::data::{Dataset, Fold, Normalizer, INPUT_FEATURES};
use crate::error::{Error, Result};
use crate::eval::{classification_metrics, regression_metrics, AblationRow};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
}

impl LinearModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        (0..x.rows()).map(|i| self.predict_row(x.row(i))).collect()
    }

    pub fn predict_proba(&self, x: &Matrix) -> Vec<f64> {
        self.predict(x).into_iter().map(sigmoid).collect()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Regularized normal matrix and right-hand side. With an intercept the
/// ones column is appended last and left unpenalized.
fn normal_system(x: &Matrix, y: &[f64], lambda: f64, intercept: bool) -> (DMatrix<f64>, DVector<f64>) {
    let p = x.cols() + usize::from(intercept);
    let design = DMatrix::from_fn(x.rows(), p, |i, j| if j < x.cols() { x[(i, j)] } else { 1.0 });
    let mut a = design.transpose() * &design;
    for j in 0..x.cols() {
        a[(j, j)] += lambda;
    }
    let b = design.transpose() * DVector::from_column_slice(y);
    (a, b)
}

/// Solve `(XᵀX + λI)w = Xᵀy` by Cholesky factorization, with one step of
/// iterative refinement.
pub fn ridge_fit(x: &Matrix, y: &[f64], lambda: f64, intercept: bool) -> Result<LinearModel> {
    if x.rows() != y.len() {
        return Err(Error::contract(format!("ridge: {} rows but {} targets", x.rows(), y.len())));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::config(format!("ridge lambda {lambda} must be finite and >= 0")));
    }
    if x.rows() == 0 {
        return Err(Error::contract("ridge: empty design matrix"));
    }
    let (a, b) = normal_system(x, y, lambda, intercept);
    let scale = a.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular(format!("ridge normal matrix is not positive definite (lambda = {lambda})")))?;
    let l = chol.l();
    let min_pivot = l.diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v * v));
    if scale == 0.0 || min_pivot <= 1e-12 * scale {
        return Err(Error::Singular(format!(
            "ridge normal matrix is numerically singular: smallest pivot {min_pivot:e} against scale {scale:e} (lambda = {lambda})"
        )));
    }
    let mut w = chol.solve(&b);
    let correction = chol.solve(&(&b - &a * &w));
    w += correction;
    let weights: Vec<f64> = w.iter().take(x.cols()).copied().collect();
    Ok(LinearModel {
        weights,
        intercept: if intercept { w[x.cols()] } else { 0.0 },
        lambda,
    })
}

/// `(XᵀX + λI)w − Xᵀy` for a fitted model, in the same layout as the solve.
pub fn normal_equation_residual(model: &LinearModel, x: &Matrix, y: &[f64], intercept: bool) -> Vec<f64> {
    let (a, b) = normal_system(x, y, model.lambda, intercept);
    let mut w = model.weights.clone();
    if intercept {
        w.push(model.intercept);
    }
    (a * DVector::from_vec(w) - b).iter().copied().collect()
}

/// Mean BCE of a linear-logit model.
pub fn logistic_loss(model: &LinearModel, x: &Matrix, labels: &[u8]) -> f64 {
    let n = labels.len() as f64;
    (0..x.rows())
        .map(|i| {
            let z = model.predict_row(x.row(i));
            // log(1 + e^z) − y·z, written stably.
            let softplus = z.max(0.0) + (-z.abs()).exp().ln_1p();
            softplus - f64::from(labels[i]) * z
        })
        .sum::<f64>()
        / n
}

/// Full-batch gradient descent on mean BCE from zero weights and intercept.
pub fn logistic_fit(x: &Matrix, labels: &[u8], steps: usize, lr: f64) -> Result<LinearModel> {
    if x.rows() != labels.len() || x.rows() == 0 {
        return Err(Error::contract("logistic: labels must match a non-empty design matrix"));
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::contract(format!("logistic: label {bad} is not 0 or 1")));
    }
    let n = x.rows() as f64;
    let mut model = LinearModel {
        weights: vec![0.0; x.cols()],
        intercept: 0.0,
        lambda: 0.0,
    };
    for _ in 0..steps {
        let mut gw = vec![0.0; x.cols()];
        let mut gb = 0.0;
        for i in 0..x.rows() {
            let row = x.row(i);
            let err = sigmoid(model.predict_row(row)) - f64::from(labels[i]);
            for (g, v) in gw.iter_mut().zip(row) {
                *g += err * v / n;
            }
            gb += err / n;
        }
        for (w, g) in model.weights.iter_mut().zip(&gw) {
            *w -= lr * g;
        }
        model.intercept -= lr * gb;
    }
    Ok(model)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub ridge_lambda: f64,
    pub logistic_steps: usize,
    pub logistic_lr: f64,
    pub threshold: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            ridge_lambda: 1e-3,
            logistic_steps: 2000,
            logistic_lr: 0.1,
            threshold: 0.5,
        }
    }
}

/// Mean-across-folds rows for the two comparators.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineRows {
    /// EDA columns from ridge regression; F1 from a ridge classifier on the labels.
    pub ridge: AblationRow,
    /// F1 only; the EDA columns are undefined.
    pub logistic: AblationRow,
}

fn design(data: &Dataset) -> Matrix {
    let mut values = Vec::with_capacity(data.len() * INPUT_FEATURES);
    for s in data.samples() {
        values.extend_from_slice(&s.inputs());
    }
    Matrix::from_vec(data.len(), INPUT_FEATURES, values).expect("consistent design shape")
}

/// Fit both comparators on every fold's training rows (fold-local
/// normalization, as for the network) and score the validation rows.
pub fn baseline_rows(data: &Dataset, folds: &[Fold], cfg: &BaselineConfig) -> Result<BaselineRows> {
    if folds.is_empty() {
        return Err(Error::contract("baselines need at least one fold"));
    }
    let (mut rmse, mut r, mut r_count, mut ridge_f1, mut logistic_f1) = (0.0, 0.0, 0usize, 0.0, 0.0);
    for fold in folds {
        let train = data.subset(&fold.train);
        let valid = data.subset(&fold.valid);
        let norm = Normalizer::fit(&train)?;
        let (train, valid) = (norm.apply(&train), norm.apply(&valid));
        let (xt, xv) = (design(&train), design(&valid));

        let reg = ridge_fit(&xt, &train.targets(), cfg.ridge_lambda, true)?;
        let m = regression_metrics(&reg.predict(&xv), &valid.targets())?;
        rmse += m.rmse;
        if let Some(v) = m.pearson_r {
            r += v;
            r_count += 1;
        }

        let label_targets: Vec<f64> = train.labels().iter().map(|&l| f64::from(l)).collect();
        let ridge_cls = ridge_fit(&xt, &label_targets, cfg.ridge_lambda, true)?;
        ridge_f1 += classification_metrics(
            &ridge_cls.predict(&xv).iter().map(|v| v.clamp(0.0, 1.0)).collect::<Vec<_>>(),
            &valid.labels(),
            cfg.threshold,
        )?
        .f1;

        let logit = logistic_fit(&xt, &train.labels(), cfg.logistic_steps, cfg.logistic_lr)?;
        logistic_f1 += classification_metrics(&logit.predict_proba(&xv), &valid.labels(), cfg.threshold)?.f1;
    }
    let k = folds.len() as f64;
    Ok(BaselineRows {
        ridge: AblationRow {
            variant: "ridge".into(),
            eda_rmse: Some(rmse / k),
            emotion_f1: Some(ridge_f1 / k),
            pearson_r: (r_count > 0).then(|| r / r_count as f64),
            physics_loss: None,
        },
        logistic: AblationRow {
            variant: "logistic".into(),
            eda_rmse: None,
            emotion_f1: Some(logistic_f1 / k),
            pearson_r: None,
            physics_loss: None,
        },
    })
}
