use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use epirisk::harness::{self, oracle, parse_seeds};

#[derive(Parser)]
#[command(name = "epirisk", version, about = "Epistemic risk-sensitive RL experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configured experiment over all seeds.
    Run(RunArgs),
    /// Summarize one run directory, or every run directory below a parent.
    Aggregate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check library results against independently computed values.
    Oracle,
}

#[derive(clap::Args)]
struct RunArgs {
    /// TOML config file; flags and --set overrides are applied on top.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `gridworld` or `option`.
    #[arg(long)]
    env: Option<String>,
    /// `ersbi`, `erpg`, `pg`, `bpg` or `cvar-bpg`.
    #[arg(long)]
    algo: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    beta: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    episodes: Option<usize>,
    /// `0..20`, `7` or `1,2,3`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Any config key, dotted for nested tables: `pg.learning_rate=0.05`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn quoted(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

impl RunArgs {
    fn overrides(&self) -> Result<Vec<String>> {
        let mut o = Vec::new();
        if let Some(v) = &self.env {
            o.push(format!("env={}", quoted(v)));
        }
        if let Some(v) = &self.algo {
            o.push(format!("algo={}", quoted(v)));
        }
        if let Some(v) = self.beta {
            o.push(format!("beta={v:?}"));
        }
        if let Some(v) = self.alpha {
            o.push(format!("alpha={v:?}"));
        }
        if let Some(v) = self.episodes {
            o.push(format!("episodes={v}"));
        }
        if let Some(v) = &self.seeds {
            let seeds = parse_seeds(v)?;
            let list: Vec<String> = seeds.iter().map(u64::to_string).collect();
            o.push(format!("seeds=[{}]", list.join(",")));
        }
        if let Some(v) = &self.out {
            o.push(format!("out={}", quoted(&v.to_string_lossy())));
        }
        o.extend(self.set.iter().cloned());
        Ok(o)
    }
}

fn run(args: RunArgs) -> Result<()> {
    let cfg = harness::load_config(args.config.as_deref(), &args.overrides()?).context("loading config")?;
    let report = harness::run_experiment(&cfg).context("running experiment")?;
    let a = &report.aggregate;
    println!("wrote {} ({} seeds)", report.out.display(), a.n_seeds);
    println!(
        "{}: return {:.4} ± {:.4}, cumulative regret {:.4} ± {:.4}, final-window shortfall {:.4}",
        a.label, a.mean_return.mean, a.mean_return.se, a.cumulative_regret.mean, a.cumulative_regret.se, a.final_shortfall
    );
    if let (Some(f), Some(t)) = (a.falls, a.falls_total) {
        println!("falls per seed {:.3} ± {:.3} (total {t})", f.mean, f.se);
    }
    Ok(())
}

fn main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Run(args) => run(args)?,
        Command::Aggregate { input, out } => {
            let runs = harness::aggregate(&input).with_context(|| format!("aggregating {}", input.display()))?;
            harness::write_aggregate(&out, &runs)?;
            println!("aggregated {} run(s) into {}", runs.len(), out.display());
        }
        Command::Oracle => {
            let checks = oracle::conformance_report();
            let failed = checks.iter().filter(|c| !c.passed()).count();
            for c in &checks {
                println!("{c}");
            }
            println!("{} checks, {failed} failed", checks.len());
            if failed > 0 {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
