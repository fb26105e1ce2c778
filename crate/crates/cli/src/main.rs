use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use contin::commands::{cmd_compare, cmd_optimize, cmd_sweep, cmd_verify};
use contin::{ExperimentConfig, Method};

#[derive(Parser)]
#[command(name = "contin", version, about = "Policy optimization by continuation on the hill-car task")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Return of the K-controller over a θ-grid for each action-noise level.
    Sweep(Common),
    /// Statistical and algebraic checks of the mirror-policy identities.
    Verify(Common),
    /// Run one optimizer and label the basin it ends in.
    Optimize {
        #[command(flatten)]
        common: Common,
        /// Overrides `method` from the config.
        #[arg(long, value_enum)]
        method: Option<Method>,
    },
    /// Run several optimizers over several seeds.
    Compare(Common),
}

#[derive(Args)]
struct Common {
    /// JSON configuration; defaults apply to absent fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for rollouts. Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn resolve(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(n) = self.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .context("configuring the thread pool")?;
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Sweep(common) => {
            let cfg = common.resolve()?;
            let path = cmd_sweep(&cfg)?;
            println!("wrote {}", path.display());
            Ok(true)
        }
        Command::Verify(common) => {
            let cfg = common.resolve()?;
            let (report, path) = cmd_verify(&cfg)?;
            for c in report.checks.iter().filter(|c| !c.pass) {
                println!("FAIL {} statistic={} tolerance={}", c.name, c.statistic, c.tolerance);
            }
            let passed = report.checks.iter().filter(|c| c.pass).count();
            println!("{passed}/{} checks passed; wrote {}", report.checks.len(), path.display());
            Ok(report.pass)
        }
        Command::Optimize { common, method } => {
            let cfg = common.resolve()?;
            let method = method.unwrap_or(cfg.method);
            let (summary, paths) = cmd_optimize(&cfg, method)?;
            println!(
                "{}: final theta {:?}, return {:.4} ± {:.4}, basin {}",
                method.as_str(),
                summary.final_theta,
                summary.final_return.mean,
                summary.final_return.stderr,
                summary.basin_label.as_str()
            );
            for p in paths {
                println!("wrote {}", p.display());
            }
            Ok(true)
        }
        Command::Compare(common) => {
            let cfg = common.resolve()?;
            let (_, rates, paths) = cmd_compare(&cfg)?;
            for r in &rates {
                println!("{}: {}/{} global", r.method.as_str(), r.n_global, r.n_seeds);
            }
            for p in paths {
                println!("wrote {}", p.display());
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
