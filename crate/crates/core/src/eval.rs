//! Regression and classification metrics, fold aggregation and report tables.

use std::io::Write;

use rayon::prelude::*;

use crate::baselines::{baseline_rows, BaselineConfig};
use crate::data::{stratified_kfold, Dataset};
use crate::error::{Error, Result};
use crate::fmt_f64;
use crate::model::{ModelConfig, PhysicsParams};
use crate::trainer::{run_kfold, EpochTrace, TrainRunConfig, Variant};

/// Rendering of an undefined value in every table.
pub const NA: &str = "NA";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionMetrics {
    pub rmse: f64,
    pub mae: f64,
    /// `None` when either argument is constant.
    pub pearson_r: Option<f64>,
}

/// Confusion counts with label 1 as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub true_neg: usize,
    pub false_pos: usize,
    pub false_neg: usize,
    pub true_pos: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.true_neg + self.false_pos + self.false_neg + self.true_pos
    }

    /// Rows are true classes, each divided by its class count. A class absent
    /// from the labels gives `None` for that row.
    pub fn row_normalized(&self) -> [Option<[f64; 2]>; 2] {
        let row = |a: usize, b: usize| {
            let n = a + b;
            (n > 0).then(|| [a as f64 / n as f64, b as f64 / n as f64])
        };
        [row(self.true_neg, self.false_pos), row(self.false_neg, self.true_pos)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    /// 0 when nothing was predicted positive; see `precision_defined`.
    pub precision: f64,
    /// 0 when no positive labels exist; see `recall_defined`.
    pub recall: f64,
    pub f1: f64,
    pub confusion: Confusion,
    pub precision_defined: bool,
    pub recall_defined: bool,
}

/// Validation results of one trained fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldReport {
    pub fold: usize,
    pub regression: RegressionMetrics,
    pub classification: ClassificationMetrics,
    pub physics: PhysicsParams,
    pub lambda_eff: f64,
    /// Physics loss of the trained model on the validation rows.
    pub valid_physics_loss: f64,
    pub traces: Vec<EpochTrace>,
}

fn check_lengths(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::contract(format!("{what}: lengths {a} and {b} differ")));
    }
    Ok(())
}

/// Pearson correlation from centered sums; `None` if either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn regression_metrics(pred: &[f64], target: &[f64]) -> Result<RegressionMetrics> {
    check_lengths(pred.len(), target.len(), "regression metrics")?;
    if pred.len() < 2 {
        return Err(Error::contract("regression metrics need at least 2 samples"));
    }
    let n = pred.len() as f64;
    let mut se = 0.0;
    let mut ae = 0.0;
    for (p, t) in pred.iter().zip(target) {
        let d = p - t;
        se += d * d;
        ae += d.abs();
    }
    Ok(RegressionMetrics {
        rmse: (se / n).sqrt(),
        mae: ae / n,
        pearson_r: pearson(pred, target),
    })
}

/// Threshold `prob` (ties count as positive) and score against `label`.
pub fn classification_metrics(prob: &[f64], label: &[u8], threshold: f64) -> Result<ClassificationMetrics> {
    check_lengths(prob.len(), label.len(), "classification metrics")?;
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::contract(format!("threshold {threshold} outside (0, 1)")));
    }
    let mut c = Confusion::default();
    for (&p, &l) in prob.iter().zip(label) {
        match (l, p >= threshold) {
            (0, false) => c.true_neg += 1,
            (0, true) => c.false_pos += 1,
            (1, false) => c.false_neg += 1,
            (1, true) => c.true_pos += 1,
            _ => return Err(Error::contract(format!("label {l} is not 0 or 1"))),
        }
    }
    Ok(metrics_from_confusion(c))
}

pub fn metrics_from_confusion(c: Confusion) -> ClassificationMetrics {
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let predicted_pos = c.true_pos + c.false_pos;
    let actual_pos = c.true_pos + c.false_neg;
    let precision = ratio(c.true_pos, predicted_pos);
    let recall = ratio(c.true_pos, actual_pos);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    ClassificationMetrics {
        accuracy: ratio(c.true_pos + c.true_neg, c.total()),
        precision,
        recall,
        f1,
        confusion: c,
        precision_defined: predicted_pos > 0,
        recall_defined: actual_pos > 0,
    }
}

/// One line of the fold table: a fold or the mean across folds.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub label: String,
    pub eda_rmse: f64,
    pub eda_mae: f64,
    pub eda_r: Option<f64>,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub note: String,
}

fn note_for(c: &ClassificationMetrics) -> Vec<&'static str> {
    let mut out = Vec::new();
    if !c.precision_defined {
        out.push("precision undefined (reported as 0)");
    }
    if !c.recall_defined {
        out.push("recall undefined (reported as 0)");
    }
    out
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

/// Mean over the defined values; `None` when none are defined.
fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    (!defined.is_empty()).then(|| mean(defined.into_iter()))
}

/// Rows for folds 1..k in report order followed by a `Mean` row.
pub fn aggregate_folds(reports: &[FoldReport]) -> Result<Vec<MetricsRow>> {
    if reports.is_empty() {
        return Err(Error::contract("no fold reports to aggregate"));
    }
    let mut rows: Vec<MetricsRow> = reports
        .iter()
        .map(|r| MetricsRow {
            label: (r.fold + 1).to_string(),
            eda_rmse: r.regression.rmse,
            eda_mae: r.regression.mae,
            eda_r: r.regression.pearson_r,
            accuracy: r.classification.accuracy,
            precision: r.classification.precision,
            recall: r.classification.recall,
            f1: r.classification.f1,
            note: note_for(&r.classification).join("; "),
        })
        .collect();
    let folds = &rows[..];
    let mean_row = MetricsRow {
        label: "Mean".into(),
        eda_rmse: mean(folds.iter().map(|r| r.eda_rmse)),
        eda_mae: mean(folds.iter().map(|r| r.eda_mae)),
        eda_r: mean_defined(folds.iter().map(|r| r.eda_r)),
        accuracy: mean(folds.iter().map(|r| r.accuracy)),
        precision: mean(folds.iter().map(|r| r.precision)),
        recall: mean(folds.iter().map(|r| r.recall)),
        f1: mean(folds.iter().map(|r| r.f1)),
        note: if folds.iter().any(|r| !r.note.is_empty()) {
            "includes folds with undefined metrics".into()
        } else {
            String::new()
        },
    };
    rows.push(mean_row);
    Ok(rows)
}

/// Row-normalized confusion averaged over folds (rows are true classes).
pub fn average_confusion(reports: &[FoldReport]) -> [[f64; 2]; 2] {
    let mut out = [[0.0; 2]; 2];
    for (class, row) in out.iter_mut().enumerate() {
        let fold_rows: Vec<[f64; 2]> = reports
            .iter()
            .filter_map(|r| r.classification.confusion.row_normalized()[class])
            .collect();
        if !fold_rows.is_empty() {
            let n = fold_rows.len() as f64;
            for c in 0..2 {
                row[c] = fold_rows.iter().map(|r| r[c]).sum::<f64>() / n;
            }
        }
    }
    out
}

/// One line of the ablation table. `None` renders as `NA`.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub eda_rmse: Option<f64>,
    pub emotion_f1: Option<f64>,
    pub pearson_r: Option<f64>,
    /// Mean validation physics loss (PINN variants only).
    pub physics_loss: Option<f64>,
}

/// Summarize a variant's folds. Variants without a trained classifier report F1 = 0.
pub fn ablation_row(variant: Variant, reports: &[FoldReport]) -> Result<AblationRow> {
    if reports.is_empty() {
        return Err(Error::contract("no fold reports for ablation row"));
    }
    Ok(AblationRow {
        variant: variant.id().into(),
        eda_rmse: Some(mean(reports.iter().map(|r| r.regression.rmse))),
        emotion_f1: Some(if variant.trains_classifier() {
            mean(reports.iter().map(|r| r.classification.f1))
        } else {
            0.0
        }),
        pearson_r: mean_defined(reports.iter().map(|r| r.regression.pearson_r)),
        physics_loss: Some(mean(reports.iter().map(|r| r.valid_physics_loss))),
    })
}

/// Entries of an ablation request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationEntry {
    Pinn(Variant),
    Ridge,
    Logistic,
}

impl AblationEntry {
    pub fn parse(id: &str) -> Result<Self> {
        match id {
            "ridge" => Ok(Self::Ridge),
            "logistic" => Ok(Self::Logistic),
            other => Variant::from_id(other).map(Self::Pinn).ok_or_else(|| {
                let known: Vec<&str> = Variant::ALL.iter().map(|v| v.id()).collect();
                Error::config(format!(
                    "unknown variant {other:?}; expected one of {}, ridge, logistic",
                    known.join(", ")
                ))
            }),
        }
    }
}

/// Cross-validate each requested entry on the same stratified folds and
/// return one row per entry, in request order.
pub fn ablation_table(
    data: &Dataset,
    entries: &[String],
    k: usize,
    model_cfg: &ModelConfig,
    cfg: &TrainRunConfig,
    baseline: &BaselineConfig,
) -> Result<Vec<AblationRow>> {
    let parsed: Vec<AblationEntry> = entries.iter().map(|e| AblationEntry::parse(e)).collect::<Result<_>>()?;
    if parsed.is_empty() {
        return Err(Error::config("ablation needs at least one variant"));
    }
    let folds = stratified_kfold(&data.labels(), k, cfg.seed)?;
    let needs_baselines = parsed.iter().any(|e| !matches!(e, AblationEntry::Pinn(_)));
    let baselines = if needs_baselines {
        Some(baseline_rows(data, &folds, baseline)?)
    } else {
        None
    };
    parsed
        .par_iter()
        .map(|entry| match entry {
            AblationEntry::Pinn(v) => {
                let run = TrainRunConfig {
                    variant: *v,
                    ..cfg.clone()
                };
                let outcomes = run_kfold(data, k, &run, model_cfg)?;
                let reports: Vec<FoldReport> = outcomes.into_iter().map(|o| o.report).collect();
                ablation_row(*v, &reports)
            }
            AblationEntry::Ridge => Ok(baselines.as_ref().expect("computed above").ridge.clone()),
            AblationEntry::Logistic => Ok(baselines.as_ref().expect("computed above").logistic.clone()),
        })
        .collect()
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_else(|| NA.into())
}

fn io_err(e: std::io::Error) -> Error {
    Error::Io {
        path: "<table>".into(),
        source: e,
    }
}

pub const METRICS_HEADER: &str = "fold,eda_rmse,eda_mae,eda_r,accuracy,precision,recall,f1,note";

pub fn write_metrics(rows: &[MetricsRow], w: &mut impl Write) -> Result<()> {
    writeln!(w, "{METRICS_HEADER}").map_err(io_err)?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.label,
            fmt_f64(r.eda_rmse),
            fmt_f64(r.eda_mae),
            opt(r.eda_r),
            fmt_f64(r.accuracy),
            fmt_f64(r.precision),
            fmt_f64(r.recall),
            fmt_f64(r.f1),
            r.note
        )
        .map_err(io_err)?;
    }
    Ok(())
}

pub fn write_curves(reports: &[FoldReport], w: &mut impl Write) -> Result<()> {
    writeln!(w, "epoch,fold,l_eda,l_emotion,l_physics,lambda_eff").map_err(io_err)?;
    for r in reports {
        for t in &r.traces {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                t.epoch + 1,
                r.fold + 1,
                fmt_f64(t.l_eda),
                fmt_f64(t.l_emotion),
                fmt_f64(t.l_physics),
                fmt_f64(t.lambda_eff)
            )
            .map_err(io_err)?;
        }
    }
    Ok(())
}

pub fn write_params(reports: &[FoldReport], w: &mut impl Write) -> Result<()> {
    writeln!(w, "fold,alpha0,beta1,beta2,beta3,gamma").map_err(io_err)?;
    for r in reports {
        let p = &r.physics;
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.fold + 1,
            fmt_f64(p.alpha0),
            fmt_f64(p.beta[0]),
            fmt_f64(p.beta[1]),
            fmt_f64(p.beta[2]),
            fmt_f64(p.gamma)
        )
        .map_err(io_err)?;
    }
    Ok(())
}

pub fn write_confusion(matrix: &[[f64; 2]; 2], w: &mut impl Write) -> Result<()> {
    writeln!(w, "true_class,pred_0,pred_1").map_err(io_err)?;
    for (class, row) in matrix.iter().enumerate() {
        writeln!(w, "{class},{},{}", fmt_f64(row[0]), fmt_f64(row[1])).map_err(io_err)?;
    }
    Ok(())
}

pub fn write_ablation(rows: &[AblationRow], w: &mut impl Write) -> Result<()> {
    writeln!(w, "variant,eda_rmse,emotion_f1,pearson_r").map_err(io_err)?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.variant, opt(r.eda_rmse), opt(r.emotion_f1), opt(r.pearson_r))
            .map_err(io_err)?;
    }
    Ok(())
}

/// Long-format summary, one line per (variant, metric).
pub fn write_comparison(rows: &[AblationRow], w: &mut impl Write) -> Result<()> {
    writeln!(w, "variant,metric,value").map_err(io_err)?;
    for r in rows {
        for (metric, value) in [
            ("eda_rmse", r.eda_rmse),
            ("emotion_f1", r.emotion_f1),
            ("pearson_r", r.pearson_r),
        ] {
            writeln!(w, "{},{metric},{}", r.variant, opt(value)).map_err(io_err)?;
        }
    }
    Ok(())
}
