use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use rumor_core::cli::{self, RunConfig};
use rumor_core::evaluation::format_metrics_report;

/// Early rumor detection with a stacked attention LSTM.
#[derive(Parser)]
#[command(name = "rumor", version)]
struct Args {
    #[command(subcommand)]
    command: Command,

    /// `key = value` config file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated earliness fractions, e.g. 0.1,0.2,0.5
    #[arg(long, global = true)]
    fractions: Option<String>,
    /// Extra `key=value` setting; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    Synth,
    /// Split, build the vocabulary, train and write checkpoint, vocabulary and log.
    Train,
    /// Precision, recall and F-measure on the test split.
    Eval,
    /// Metrics on growing prefixes of each test event.
    Earliness,
    /// Compare analytic and numerical gradients on a tiny model.
    Gradcheck,
    /// Per-step attention weights for one event.
    AttentionDump,
}

fn config(args: &Args) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("config {}", p.display()))?,
        None => RunConfig::default(),
    };
    let mut flags: Vec<(String, String)> = Vec::new();
    if let Some(s) = args.seed {
        flags.push(("seed".into(), s.to_string()));
    }
    for (key, path) in [("corpus", &args.corpus), ("checkpoint", &args.checkpoint), ("out", &args.out)] {
        if let Some(p) = path {
            flags.push((key.into(), p.display().to_string()));
        }
    }
    if let Some(f) = &args.fractions {
        flags.push(("fractions".into(), f.clone()));
    }
    for kv in &args.set {
        let Some((k, v)) = kv.split_once('=') else {
            bail!("--set expects KEY=VALUE, got {kv:?}");
        };
        flags.push((k.trim().into(), v.into()));
    }
    for (k, v) in flags {
        cfg.set(&k, &v).context("command line")?;
    }
    Ok(cfg)
}

fn run(args: &Args) -> Result<()> {
    let cfg = config(args)?;
    match args.command {
        Command::Synth => println!("{}", cli::cmd_synth(&cfg).context("synth")?),
        Command::Train => {
            let s = cli::cmd_train(&cfg).context("train")?;
            println!(
                "trained {} epochs on {} sequences; best epoch {} with holdout F1 {:.4}",
                s.epochs_run, s.train_events, s.best_epoch, s.holdout_f1
            );
        }
        Command::Eval => {
            let e = cli::cmd_eval(&cfg).context("eval")?;
            print!("{}", format_metrics_report(&[(1.0, e.metrics)]));
            if e.skipped > 0 {
                eprintln!("{} events skipped (too short)", e.skipped);
            }
        }
        Command::Earliness => {
            let curve = cli::cmd_earliness(&cfg).context("earliness")?;
            print!("{}", format_metrics_report(&curve.rows()));
        }
        Command::Gradcheck => {
            let report = cli::cmd_gradcheck(&cfg).context("gradcheck")?;
            print!("{report}");
            if !report.passed(1e-4) {
                bail!("gradcheck: max relative error {:.3e} exceeds 1e-4", report.max_error());
            }
        }
        Command::AttentionDump => println!("{}", cli::cmd_attention_dump(&cfg).context("attention-dump")?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
