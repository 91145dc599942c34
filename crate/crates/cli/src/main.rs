use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

mod config;
mod run;

use config::{Config, RunMode};

/// Resummed tree expansions for quasi-periodically forced rotators.
#[derive(Debug, Parser)]
#[command(name = "rg-tori", version)]
struct Args {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override `run.mode`.
    #[arg(long, value_enum)]
    mode: Option<RunMode>,
    /// Worker threads; 1 runs sequentially.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory for CSV tables and report.json.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Seed for sampled quantities.
    #[arg(long)]
    seed: Option<u64>,
    /// Treat warnings and failed checks as errors.
    #[arg(long)]
    strict: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let mut cfg = match Config::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(m) = args.mode {
        cfg.run.mode = m;
    }
    if let Some(w) = args.workers {
        if w == 0 {
            eprintln!("error: --workers must be positive");
            return ExitCode::from(2);
        }
        cfg.run.workers = w;
    }
    if let Some(s) = args.seed {
        cfg.run.seed = s;
    }
    cfg.run.strict |= args.strict;
    rg_tori::par::configure(cfg.run.workers);

    let outcome = match run::execute(&cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run::write_outputs(&cfg, &outcome, &args.out) {
        Ok(path) => {
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            println!("{}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
