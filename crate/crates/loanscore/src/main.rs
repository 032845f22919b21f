use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use loanscore::commands::{self, CommandError};
use loanscore::config::RunConfig;

/// Two-stage loan scoring: PD gate, then IRR ranking.
#[derive(Debug, Parser)]
#[command(name = "loanscore", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Common {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Set every per-module seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// none, undersample, oversample or smote.
    #[arg(long, global = true)]
    resample: Option<String>,
    /// PD above this is filtered before IRR ranking.
    #[arg(long, global = true)]
    gamma: Option<f64>,
    #[arg(long, global = true)]
    top_k: Option<usize>,
    /// Override any config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic loans.csv and payments.csv.
    Synth,
    /// Descriptive statistics of the cohort.
    Describe,
    /// Train both stages and save the model files.
    Train,
    /// Metric grid over model components and resampling methods.
    Evaluate,
    /// Top-k comparison of credit scoring, profit scoring and two-stage.
    Compare,
    /// Score unlabeled listings with saved models.
    Score {
        /// Directory with stage1.model and stage2.model.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        listings: Option<PathBuf>,
    },
}

fn resolve(cli: &Cli) -> Result<RunConfig, CommandError> {
    let mut config = RunConfig::default();
    let c = &cli.common;
    if let Some(path) = &c.config {
        config.apply_file(path)?;
    }
    for kv in &c.set {
        let (k, v) = kv.split_once('=').ok_or(loanscore::config::ConfigError::Syntax { line: 0 })?;
        config.apply(k.trim(), v.trim())?;
    }
    if let Some(seed) = c.seed {
        config.set_seed(seed);
    }
    if let Some(dir) = &c.out_dir {
        config.out_dir = dir.clone();
    }
    if let Some(m) = &c.resample {
        config.apply("resample.method", m)?;
    }
    if let Some(g) = c.gamma {
        config.apply("gamma", &g.to_string())?;
    }
    if let Some(k) = c.top_k {
        config.pipeline.top_k = k;
    }
    if let Command::Score { model, listings } = &cli.command {
        if model.is_some() {
            config.model_dir = model.clone();
        }
        if listings.is_some() {
            config.listings = listings.clone();
        }
    }
    config.pipeline.validate()?;
    Ok(config)
}

fn run(cli: &Cli) -> Result<(), CommandError> {
    let config = resolve(cli)?;
    match &cli.command {
        Command::Synth => {
            let out = commands::cmd_synth(&config)?;
            println!("wrote {} loans to {} and {}", out.rows, out.loans.display(), out.payments.display());
        }
        Command::Describe => {
            let r = commands::cmd_describe(&config)?;
            println!("{} loans from {}", r.summary.loans, r.cohort.source);
            if let Some(rate) = r.summary.default_rate {
                println!("default rate {rate:.4}");
            }
            if let Some(rate) = r.summary.positive_irr_rate {
                println!("positive IRR share {rate:.4}");
            }
        }
        Command::Train => {
            let r = commands::cmd_train(&config)?;
            println!(
                "stage 1: {} rows ({} defaults), stage 2: {} rows; models in {}",
                r.stage1_rows,
                r.stage1_defaults,
                r.stage2_rows,
                config.out_dir.display()
            );
        }
        Command::Evaluate => {
            let r = commands::cmd_evaluate(&config)?;
            println!("{:<10} {:<12} {:>8} {:>8} {:>8} {:>8}", "model", "resample", "prec_p", "rec_p", "prec_n", "rec_n");
            for c in &r.classification {
                let m = &c.metrics;
                println!(
                    "{:<10} {:<12} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
                    c.components, c.resample, m.precision_p, m.recall_p, m.precision_n, m.recall_n
                );
            }
            for c in &r.regression {
                println!("{:<10} mse {:.6} (n={})", c.components, c.metrics.mse, c.metrics.n);
            }
        }
        Command::Compare => {
            let (r, _) = commands::cmd_compare(&config)?;
            for a in &r.approaches {
                let avg = a.average_actual_irr.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
                let flag = if a.shortfall { " (shortfall)" } else { "" };
                println!("approach {} {:<15} top-{} average IRR {avg}{flag}", a.number, a.approach.name(), a.requested);
            }
        }
        Command::Score { .. } => {
            let out = commands::cmd_score(&config)?;
            println!("scored {} listings ({} passed the gate) -> {}", out.rows, out.passed, out.scored.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
