use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use joinopt::acceptance::{self, Scale};
use joinopt::config::RunConfig;
use joinopt::report::{sweep, write_csv};

#[derive(Parser)]
#[command(name = "joinopt", version, about = "Simulate data vs compute requests for key-value joins")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (strategy, z, seed) in the config and write one CSV row each.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output CSV; `-` for stdout.
        #[arg(long, default_value = "-")]
        out: PathBuf,
    },
    /// Like `run`, with seeds 1..=N and the default skew grid unless the config sets one.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "-")]
        out: PathBuf,
        #[arg(long)]
        seeds: Option<u64>,
    },
    /// Run the acceptance criteria and print one verdict per line.
    Accept {
        /// Smaller workloads and fewer seeds.
        #[arg(long)]
        quick: bool,
    },
}

fn output(path: &Path) -> Result<Box<dyn Write>> {
    if path == Path::new("-") {
        Ok(Box::new(BufWriter::new(io::stdout().lock())))
    } else {
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        Ok(Box::new(BufWriter::new(f)))
    }
}

fn load(path: &Path) -> Result<RunConfig> {
    RunConfig::load(path).with_context(|| format!("invalid config {}", path.display()))
}

fn emit(cfg: &RunConfig, out: &Path) -> Result<()> {
    let rows = sweep(cfg)?;
    let mut w = output(out)?;
    write_csv(&mut w, cfg, &rows)?;
    w.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out } => load(&config).and_then(|cfg| emit(&cfg, &out)).map(|_| true),
        Command::Sweep { config, out, seeds } => load(&config)
            .and_then(|mut cfg| {
                if let Some(n) = seeds {
                    anyhow::ensure!(n > 0, "--seeds must be positive");
                    cfg.run.seeds = (1..=n).collect();
                }
                emit(&cfg, &out)
            })
            .map(|_| true),
        Command::Accept { quick } => {
            let scale = if quick { Scale::quick() } else { Scale::full() };
            let verdicts = acceptance::run_all(&scale);
            let mut all = true;
            for v in &verdicts {
                println!("{v}");
                all &= v.passed;
            }
            Ok(all)
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
