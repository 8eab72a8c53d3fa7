//! Command-line front end: synthesize data, train, cross-validate, ablate,
//! self-check and report.

pub mod checks;
pub mod config;
pub mod error;
pub mod output;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use eda_pinn::data::{load_csv, read_derivatives, synth_generate, write_csv, write_derivatives, Dataset};
use eda_pinn::eval::{
    ablation_table, aggregate_folds, average_confusion, regression_metrics, write_ablation, write_comparison,
    write_confusion, write_curves, write_metrics, write_params, FoldReport,
};
use eda_pinn::model::{load_checkpoint, write_checkpoint};
use eda_pinn::objective::physics_residual;
use eda_pinn::trainer::{predict, run_fold, run_kfold};
use eda_pinn::{fmt_f64, Error};

pub use config::RunConfigFile;
pub use error::{CliError, CliResult};
use output::write_atomic;

#[derive(Debug, Parser)]
#[command(name = "eda-pinn", version, about = "Physics-informed multi-task EDA model")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `output` in the config).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Master seed (overrides `seed` in the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for fold- and variant-level parallelism.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset, its true derivatives and a manifest.
    Synth {
        /// Re-read the files and check the physics residual at the true parameters.
        #[arg(long)]
        verify: bool,
    },
    /// Train one model on the whole dataset.
    Train,
    /// Stratified k-fold cross-validation.
    Kfold,
    /// Cross-validate every configured variant and baseline.
    Ablate,
    /// Run the numerical self-check suites.
    Check,
    /// Predict with a saved checkpoint.
    Report {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

/// Lines to print and files written by a command.
#[derive(Debug, Default)]
pub struct Outcome {
    pub lines: Vec<String>,
    pub files: Vec<PathBuf>,
}

/// Load, override and validate the configuration.
pub fn resolve_config(common: &CommonArgs) -> CliResult<RunConfigFile> {
    let mut cfg = match &common.config {
        Some(path) => RunConfigFile::load(path)?,
        None => RunConfigFile::default(),
    };
    let seed = common.seed.unwrap_or(cfg.seed);
    cfg.apply_seed(seed);
    if let Some(out) = &common.out {
        cfg.output = out.clone();
    }
    if common.threads == Some(0) {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Execute a parsed command line. Shared by `main` and the tests.
pub fn run(cli: &Cli) -> CliResult<Outcome> {
    let cfg = resolve_config(&cli.common)?;
    let work = || execute(&cli.command, &cfg);
    match cli.common.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start {n} threads: {e}")))?
            .install(work),
        None => work(),
    }
}

fn execute(command: &Command, cfg: &RunConfigFile) -> CliResult<Outcome> {
    match command {
        Command::Synth { verify } => cmd_synth(cfg, *verify),
        Command::Train => cmd_train(cfg),
        Command::Kfold => cmd_kfold(cfg),
        Command::Ablate => cmd_ablate(cfg),
        Command::Check => cmd_check(cfg),
        Command::Report { checkpoint } => cmd_report(cfg, checkpoint),
    }
}

fn load_dataset(cfg: &RunConfigFile) -> CliResult<Dataset> {
    Ok(match &cfg.data.input {
        Some(path) => load_csv(path)?,
        None => synth_generate(&cfg.data.synth)?.0,
    })
}

fn io_error(e: std::io::Error) -> Error {
    Error::Io {
        path: "<buffer>".into(),
        source: e,
    }
}

pub const SYNTH_CSV: &str = "synthetic.csv";
pub const SYNTH_DDT: &str = "synthetic.ddt.csv";
pub const SYNTH_MANIFEST: &str = "synthetic.manifest.json";

pub fn cmd_synth(cfg: &RunConfigFile, verify: bool) -> CliResult<Outcome> {
    let spec = &cfg.data.synth;
    let (data, dydt) = synth_generate(spec)?;
    let out = &cfg.output;
    let mut outcome = Outcome::default();
    outcome
        .files
        .push(write_atomic(out, SYNTH_CSV, |w| write_csv(&data, w).map_err(io_error))?);
    outcome
        .files
        .push(write_atomic(out, SYNTH_DDT, |w| write_derivatives(&dydt, w).map_err(io_error))?);
    outcome.files.push(write_atomic(out, SYNTH_MANIFEST, |w| {
        let manifest = serde_json::json!({
            "dataset": SYNTH_CSV,
            "derivatives": SYNTH_DDT,
            "rows": data.len(),
            "seed": spec.seed,
            "true_physics": { "alpha0": spec.alpha0, "beta": spec.beta, "gamma": spec.gamma },
            "spec": spec,
        });
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Contract(e.to_string()))?;
        writeln!(w, "{text}").map_err(io_error)
    })?);
    outcome.lines.push(format!("wrote {} rows to {}", data.len(), out.join(SYNTH_CSV).display()));

    if verify {
        let reread = load_csv(out.join(SYNTH_CSV))?;
        let ddt = read_derivatives(out.join(SYNTH_DDT))?;
        let e: Vec<[f64; 3]> = reread.samples().iter().map(|s| s.e).collect();
        let r = physics_residual(&ddt, &reread.targets(), &e, &spec.physics())?;
        let worst = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let line = format!("max |physics residual| at the true parameters: {}", fmt_f64(worst));
        if worst > 1e-10 {
            return Err(CliError::Acceptance(format!(
                "{line} exceeds 1e-10 (noise_sd = {})",
                fmt_f64(spec.noise_sd)
            )));
        }
        outcome.lines.push(line);
    }
    Ok(outcome)
}

pub fn cmd_train(cfg: &RunConfigFile) -> CliResult<Outcome> {
    let data = load_dataset(cfg)?;
    let fold = run_fold(&data, &data, &cfg.train_run(), &cfg.model, 0)?;
    let out = &cfg.output;
    let reports = std::slice::from_ref(&fold.report);
    let files = vec![
        write_atomic(out, "model.json", |w| write_checkpoint(&fold.model, w))?,
        write_atomic(out, "curves.csv", |w| write_curves(reports, w))?,
        write_atomic(out, "params.csv", |w| write_params(reports, w))?,
    ];
    let r = &fold.report;
    let lines = vec![format!(
        "training fit: rmse {} r {} f1 {} alpha0 {} gamma {} lambda {}",
        fmt_f64(r.regression.rmse),
        r.regression.pearson_r.map(fmt_f64).unwrap_or_else(|| "NA".into()),
        fmt_f64(r.classification.f1),
        fmt_f64(r.physics.alpha0),
        fmt_f64(r.physics.gamma),
        fmt_f64(r.lambda_eff)
    )];
    Ok(Outcome { lines, files })
}

pub fn cmd_kfold(cfg: &RunConfigFile) -> CliResult<Outcome> {
    let data = load_dataset(cfg)?;
    let outcomes = run_kfold(&data, cfg.k, &cfg.train_run(), &cfg.model)?;
    let reports: Vec<FoldReport> = outcomes.iter().map(|o| o.report.clone()).collect();
    let rows = aggregate_folds(&reports)?;
    let out = &cfg.output;
    let mut files = vec![
        write_atomic(out, "metrics.csv", |w| write_metrics(&rows, w))?,
        write_atomic(out, "curves.csv", |w| write_curves(&reports, w))?,
        write_atomic(out, "params.csv", |w| write_params(&reports, w))?,
        write_atomic(out, "confusion.csv", |w| write_confusion(&average_confusion(&reports), w))?,
    ];
    for (i, o) in outcomes.iter().enumerate() {
        files.push(write_atomic(out, &format!("checkpoints/fold_{}.json", i + 1), |w| {
            write_checkpoint(&o.model, w)
        })?);
    }
    let mean = rows.last().expect("aggregate rows end with the mean");
    let lines = vec![format!(
        "{}-fold mean: rmse {} mae {} r {} f1 {}",
        cfg.k,
        fmt_f64(mean.eda_rmse),
        fmt_f64(mean.eda_mae),
        mean.eda_r.map(fmt_f64).unwrap_or_else(|| "NA".into()),
        fmt_f64(mean.f1)
    )];
    Ok(Outcome { lines, files })
}

pub fn cmd_ablate(cfg: &RunConfigFile) -> CliResult<Outcome> {
    let data = load_dataset(cfg)?;
    let rows = ablation_table(&data, &cfg.variants, cfg.k, &cfg.model, &cfg.train_run(), &cfg.baseline)?;
    let out = &cfg.output;
    let files = vec![
        write_atomic(out, "ablation.csv", |w| write_ablation(&rows, w))?,
        write_atomic(out, "comparison.csv", |w| write_comparison(&rows, w))?,
    ];
    let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_else(|| "NA".into());
    let lines = rows
        .iter()
        .map(|r| {
            format!(
                "{:<22} rmse {:<22} f1 {:<22} r {}",
                r.variant,
                opt(r.eda_rmse),
                opt(r.emotion_f1),
                opt(r.pearson_r)
            )
        })
        .collect();
    Ok(Outcome { lines, files })
}

pub fn cmd_check(cfg: &RunConfigFile) -> CliResult<Outcome> {
    let suites = checks::run_all(&cfg.model, cfg.seed)?;
    let lines: Vec<String> = suites.iter().map(|s| s.to_string()).collect();
    let failed: Vec<&str> = suites.iter().filter(|s| !s.passed).map(|s| s.name).collect();
    if failed.is_empty() {
        Ok(Outcome {
            lines,
            files: Vec::new(),
        })
    } else {
        Err(CliError::Acceptance(format!(
            "{}\nfailed suites: {}",
            lines.join("\n"),
            failed.join(", ")
        )))
    }
}

pub fn cmd_report(cfg: &RunConfigFile, checkpoint: &Path) -> CliResult<Outcome> {
    let params = load_checkpoint(checkpoint)?;
    let data = load_dataset(cfg)?;
    let preds = predict(&params, &data)?;
    let norm = &params.normalizer;
    let dt_scale = (norm.target_max - norm.target_min) / norm.time_scale();
    let eda_pred: Vec<f64> = preds.eda.iter().map(|&y| norm.invert_target(y)).collect();
    let threshold = params.config.threshold;
    let file = write_atomic(&cfg.output, "predictions.csv", |w| {
        writeln!(w, "t,eda,eda_pred,eda_dt_pred,prob,label,pred_label").map_err(io_error)?;
        for (i, s) in data.samples().iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                fmt_f64(s.t),
                fmt_f64(s.eda),
                fmt_f64(eda_pred[i]),
                fmt_f64(preds.eda_dt[i] * dt_scale),
                fmt_f64(preds.prob[i]),
                s.label,
                u8::from(preds.prob[i] >= threshold)
            )
            .map_err(io_error)?;
        }
        Ok(())
    })?;
    let m = regression_metrics(&eda_pred, &data.targets())?;
    let lines = vec![format!(
        "{} rows; rmse {} (original units), r {}",
        data.len(),
        fmt_f64(m.rmse),
        m.pearson_r.map(fmt_f64).unwrap_or_else(|| "NA".into())
    )];
    Ok(Outcome {
        lines,
        files: vec![file],
    })
}
