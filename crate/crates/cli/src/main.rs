use std::env;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sparsam_bench::report::format_table;
use sparsam_bench::{
    apply_seed_override, parse_optimizers, parse_probs, project, run_compare, run_train, CliError, ExperimentConfig,
    SEED_ENV,
};

/// Train and compare sparse-layer SAM optimizers on synthetic benchmarks.
#[derive(Debug, Parser)]
#[command(name = "sparsam", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one training job and write steps.csv and summary.json.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run several optimizers on identical data and seed.
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated optimizer names, e.g. adamw,adasam,slsam.
        #[arg(long)]
        optimizers: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Project positive weights onto {Σq = s, pmin ≤ q ≤ 1}.
    Project {
        /// Comma-separated values, or a file containing them.
        #[arg(long)]
        probs: String,
        #[arg(long)]
        s: f64,
        #[arg(long)]
        pmin: f64,
    },
}

fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(path)?;
    apply_seed_override(&mut cfg, env::var(SEED_ENV).ok().as_deref())?;
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config, out } => {
            let cfg = load(&config)?;
            let dir = out.unwrap_or_else(|| cfg.output.dir.clone());
            let art = run_train(&cfg, &dir)?;
            let s = &art.summary;
            println!(
                "{}: final loss {:.6e}, active ratio {:.4}, {} steps -> {}",
                s.optimizer,
                s.final_loss,
                s.active_ratio,
                s.steps,
                dir.display()
            );
            Ok(())
        }
        Command::Compare {
            config,
            optimizers,
            out,
        } => {
            let cfg = load(&config)?;
            let kinds = parse_optimizers(&optimizers)?;
            let dir = out.unwrap_or_else(|| cfg.output.dir.clone());
            let rows = run_compare(&cfg, &kinds, &dir)?;
            print!("{}", format_table(&rows));
            match rows.iter().find(|r| r.diverged()) {
                Some(r) => Err(CliError::Diverged(format!("{}: {}", r.optimizer, r.note))),
                None => Ok(()),
            }
        }
        Command::Project { probs, s, pmin } => {
            let q = project(&parse_probs(&probs)?, s, pmin)?;
            println!("{}", q.iter().map(f64::to_string).collect::<Vec<_>>().join(","));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
