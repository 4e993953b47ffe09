use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pose_uq::bench::experiment::{
    predict_method, read_dataset, read_trained, train_method, write_config, write_dataset,
    write_trained,
};
use pose_uq::bench::report::{
    calibration_csv, calibration_summary_csv, emit_report, evaluate_log, gate_csv, method_dir,
    summary_csv, write_method_report, PREDICTIONS_FILE,
};
use pose_uq::bench::{gen_dataset, ExperimentConfig, MethodSummary};
use pose_uq::calibration::calibration_curves;
use pose_uq::gating::{apply_gate, confidence_sweep, percentile_thresholds, split_gate};
use pose_uq::{read_log, write_log, Error, Method, Result};

/// Uncertainty-aware pose regression benchmark.
#[derive(Parser)]
#[command(name = "pose-uq", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for the dataset and training (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config; POSE_UQ_OUT overrides both).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Total training epochs (overrides the config).
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Comma-separated methods, e.g. `DER,DE` (overrides the config).
    #[arg(long, global = true, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic train/validation sets.
    Gen,
    /// Train the configured methods on the generated dataset.
    Train,
    /// Write a prediction log per method from the trained models.
    Predict,
    /// Calibration curves of one log (stdout) or of every method's log.
    Calibrate {
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Apply the covariance-trace gate to one log and print the report row.
    Gate {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value_t = pose_uq::gating::DEFAULT_PERCENTILE)]
        percentile: f64,
        /// Fit thresholds on this log instead of the gated one.
        #[arg(long)]
        fit_log: Option<PathBuf>,
    },
    /// Confidence sweep of one log, printed as CSV.
    Sweep {
        #[arg(long)]
        log: PathBuf,
        /// Comma-separated percentiles; the config's sweep when omitted.
        #[arg(long, value_delimiter = ',')]
        percentiles: Option<Vec<f64>>,
    },
    /// Rebuild every table and plot from the stored logs.
    Report,
    /// gen, train, predict and report in one go.
    All,
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(epochs) = common.epochs {
        cfg.schedule.epochs_total = epochs;
        cfg.schedule.epochs_phase1 = cfg.schedule.epochs_phase1.min(epochs);
    }
    if let Some(methods) = &common.methods {
        cfg.methods = methods.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_summaries(summaries: &[MethodSummary]) {
    print!("{}", summary_csv(summaries));
}

fn train(root: &Path, cfg: &ExperimentConfig) -> Result<()> {
    let data = read_dataset(root)?;
    for &method in &cfg.methods {
        eprintln!("training {method}");
        let trained = train_method(cfg, method, &data)?;
        write_trained(root, &trained)?;
    }
    Ok(())
}

fn predict(root: &Path, cfg: &ExperimentConfig) -> Result<()> {
    let data = read_dataset(root)?;
    for &method in &cfg.methods {
        let trained = read_trained(root, cfg, method)?;
        let log = predict_method(cfg, &trained, &data.val)?;
        write_log(&method_dir(root, method).join(PREDICTIONS_FILE), &log)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    let root = cfg.resolved_output();
    match cli.command {
        Command::Gen => {
            std::fs::create_dir_all(&root)?;
            write_config(&root, &cfg)?;
            write_dataset(&root, &gen_dataset(&cfg.dataset)?)?;
        }
        Command::Train => train(&root, &cfg)?,
        Command::Predict => predict(&root, &cfg)?,
        Command::Calibrate { log: Some(path) } => {
            let log = read_log(&path)?;
            let curves =
                calibration_curves(&log, cfg.calibration.levels, cfg.calibration.predictive)?;
            print!("{}", calibration_csv(&curves));
            eprint!("{}", calibration_summary_csv(&curves));
        }
        Command::Calibrate { log: None } => {
            for &method in &cfg.methods {
                let dir = method_dir(&root, method);
                let log = read_log(&dir.join(PREDICTIONS_FILE))?;
                write_method_report(&dir, method, &evaluate_log(&log, &cfg)?)?;
            }
        }
        Command::Gate {
            log,
            percentile,
            fit_log,
        } => {
            let target = read_log(&log)?;
            let report = match fit_log {
                Some(fit) => split_gate(&read_log(&fit)?, &target, percentile)?,
                None => apply_gate(&target, &percentile_thresholds(&target, percentile)?),
            };
            print!("{}", gate_csv(&[report]));
        }
        Command::Sweep { log, percentiles } => {
            let log = read_log(&log)?;
            let ps = percentiles.unwrap_or_else(|| cfg.gate.sweep.clone());
            print!("{}", gate_csv(&confidence_sweep(&log, &ps)?));
        }
        Command::Report => print_summaries(&emit_report(&root, &cfg)?),
        Command::All => {
            if cli.common.seed.is_none() {
                return Err(Error::Config("`all` requires --seed".into()));
            }
            std::fs::create_dir_all(&root)?;
            write_config(&root, &cfg)?;
            write_dataset(&root, &gen_dataset(&cfg.dataset)?)?;
            train(&root, &cfg)?;
            predict(&root, &cfg)?;
            print_summaries(&emit_report(&root, &cfg)?);
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Domain(_) | Error::Representation(_) => 2,
        Error::Divergence { .. } | Error::NonFinite(_) => 3,
        Error::Io(_)
        | Error::MissingArtifact(_)
        | Error::Header(_)
        | Error::Parse { .. }
        | Error::Version { .. }
        | Error::DuplicateId(_) => 4,
        Error::LengthMismatch { .. } | Error::Dimension { .. } => 1,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
