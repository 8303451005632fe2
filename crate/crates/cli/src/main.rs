use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use tabsae::data::{EncodedMatrix, TrainStats, CLASS_NAMES};
use tabsae::models::{argmax, AnyModel, Checkpoint, ModelKind, PfnConfig, PfnModel, TaskPrior};
use tabsae::pipeline::{self, read_json, RunConfig};
use tabsae::train::{evaluate, EvaluationReport, TrainingLog};
use tabsae::Error;

#[derive(Parser)]
#[command(name = "tabsae", version, about = "Tabular classifiers for crash automation levels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Flat key = value run configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    model: Option<String>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage end to end.
    Run(RunArgs),
    /// Load or synthesize the table and encode it.
    Prepare(RunArgs),
    /// SMOTE + ENN over the prepared matrix.
    Resample(RunArgs),
    /// Split, train and evaluate; runs the whole pipeline unless `--staged`.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Continue from the artifacts of `prepare` / `resample` in the run directory.
        #[arg(long)]
        staged: bool,
    },
    /// Score an encoded CSV with a row-classifier checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        stats: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-render figures from a run directory's metrics and training log.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
    /// Side-by-side table of several metrics.json files.
    Compare {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true, num_args = 2..)]
        reports: Vec<PathBuf>,
    },
    /// Meta-train the in-context model on synthetic tasks.
    PfnMetaTrain {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 8)]
        tasks_per_step: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Predict query rows from a labelled support file in one forward pass.
    PfnPredict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        support: PathBuf,
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        stats: PathBuf,
        /// Directory for predictions.csv and metrics.json.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

fn load_config(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Ok(s) = std::env::var("TABSAE_SEED") {
        cfg.set("seed", s.trim())?;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(m) = &args.model {
        cfg.model = m.parse()?;
    }
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {kv:?} is not key=value")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_matrix(path: &Path, stats: &Path) -> Result<EncodedMatrix> {
    let stats: TrainStats = read_json(stats).with_context(|| format!("reading {}", stats.display()))?;
    Ok(EncodedMatrix::read_csv(path, &stats.layout)?)
}

fn staged_train(cfg: &RunConfig) -> Result<()> {
    if cfg.resample_after_split {
        bail!(Error::Config("staged training follows the resample-before-split order".into()));
    }
    let dir = cfg.run_dir();
    let (encoded, _) = pipeline::load_prepared(&dir)?;
    let resampled = if cfg.resample {
        Some(read_matrix(&dir.join("resampled.csv"), &dir.join("stats.json"))?)
    } else {
        None
    };
    let outcome = pipeline::train_stage(cfg, resampled.as_ref().unwrap_or(&encoded), &dir)?;
    let (dataset, _) = pipeline::load_dataset(cfg)?;
    pipeline::report_stage(cfg, Some(&dataset), Some(&encoded), resampled.as_ref(), &outcome, &dir)?;
    println!("{}", dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) | Command::Train { run: args, staged: false } => {
            let cfg = load_config(&args)?;
            let dir = pipeline::run_pipeline(&cfg)?;
            println!("{}", dir.display());
        }
        Command::Train { run: args, staged: true } => staged_train(&load_config(&args)?)?,
        Command::Prepare(args) => {
            let cfg = load_config(&args)?;
            let p = pipeline::prepare(&cfg, &cfg.run_dir())?;
            println!("encoded {} rows x {} columns", p.encoded.n_rows(), p.encoded.width());
        }
        Command::Resample(args) => {
            let cfg = load_config(&args)?;
            let dir = cfg.run_dir();
            let (m, _) = pipeline::load_prepared(&dir)?;
            let (_, audit) = pipeline::resample_stage(&cfg, &m, &dir)?;
            println!("{}", serde_json::to_string(&audit)?);
        }
        Command::Evaluate {
            checkpoint,
            input,
            stats,
            out,
        } => {
            let model = AnyModel::from_checkpoint(&Checkpoint::load(&checkpoint)?)?;
            if model.kind() == ModelKind::Pfn {
                bail!(Error::Config("use pfn-predict for in-context models".into()));
            }
            let m = read_matrix(&input, &stats)?;
            let probs = pipeline::predict(&model, &m.to_model_input())?;
            let mut report = evaluate(&probs, &m.labels)?;
            report.config = serde_json::json!({ "checkpoint": checkpoint, "input": input, "model": model.kind() });
            report.write(&out)?;
            println!("accuracy {:.4}", report.overall_accuracy);
        }
        Command::Report { run } => {
            let report = EvaluationReport::read(&run.join("metrics.json"))?;
            pipeline::render_evaluation(&report, &run)?;
            let log_path = run.join("training_log.csv");
            if log_path.exists() {
                let log = TrainingLog::read_csv(&log_path)?;
                tabsae::report::render_curves(&log, &run.join("curves.svg"), &run.join("curves.csv"))?;
            }
        }
        Command::Compare { out, reports } => {
            let mut loaded = Vec::with_capacity(reports.len());
            for p in &reports {
                let r = EvaluationReport::read(p).with_context(|| format!("reading {}", p.display()))?;
                loaded.push((pipeline::report_name(&r, &p.display().to_string()), r));
            }
            let rows = pipeline::compare(&loaded)?;
            pipeline::write_comparison(&rows, &out)?;
            for r in &rows {
                println!("{}\t{:.4}\t{:?}", r.model, r.overall_accuracy, r.macro_auc);
            }
        }
        Command::PfnMetaTrain {
            out,
            steps,
            tasks_per_step,
            lr,
            seed,
        } => {
            let mut m = PfnModel::new(PfnConfig { seed, ..PfnConfig::default() })?;
            let log = m.meta_train(&TaskPrior::default(), steps, tasks_per_step, lr, seed)?;
            println!("final loss {:.4} after {} tasks", log.losses.last().unwrap_or(&f64::NAN), log.tasks_seen());
            m.checkpoint()?.save(&out)?;
        }
        Command::PfnPredict {
            checkpoint,
            support,
            query,
            stats,
            out,
            seed,
        } => {
            let model = PfnModel::from_checkpoint(&Checkpoint::load(&checkpoint)?)?;
            let s = read_matrix(&support, &stats)?;
            let q = read_matrix(&query, &stats)?;
            let cfg = RunConfig {
                seed,
                ..RunConfig::default()
            };
            let probs = pipeline::pfn_predict_matrix(&cfg, &model, &s, &q)?;
            std::fs::create_dir_all(&out)?;
            let mut w = csv_writer(&out.join("predictions.csv"))?;
            writeln!(w, "{},predicted", CLASS_NAMES.map(|c| format!("p_{}", c.replace(' ', "_"))).join(","))?;
            for p in &probs {
                writeln!(w, "{},{},{},{}", p[0], p[1], p[2], argmax(p))?;
            }
            let mut report = evaluate(&probs, &q.labels)?;
            report.config = serde_json::json!({ "checkpoint": checkpoint, "model": "pfn" });
            report.seed = seed;
            report.write(&out.join("metrics.json"))?;
            println!("accuracy {:.4}", report.overall_accuracy);
        }
    }
    Ok(())
}

use std::io::Write;

fn csv_writer(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    Ok(std::io::BufWriter::new(std::fs::File::create(path)?))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let Some(e) = err.downcast_ref::<Error>() else {
        return 1;
    };
    match e.root() {
        Error::Config(_) => 2,
        Error::Schema(_)
        | Error::Row { .. }
        | Error::InsufficientData(_)
        | Error::InsufficientClass { .. }
        | Error::Csv(_)
        | Error::Io(_)
        | Error::Json(_)
        | Error::Toml(_) => 3,
        Error::TrainingFailure(_) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
