//! Experiment harness: configuration, per-seed runners, CSV metrics and
//! aggregation, plus the built-in oracle conformance report.

pub mod config;
pub mod metrics;
pub mod oracle;
mod runners;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{load_config, parse_seeds, AlgoId, EnvId, ErsbiSettings, ExperimentConfig, PgSettings};
pub use metrics::{aggregate, write_aggregate, Histogram, MeanSe, MetricRow, RunAggregate, SeedSummary};
pub use runners::{run_gridworld_seed, run_option_seed};

use metrics::{metrics_file_name, write_rows, write_seed_summaries, Manifest, MANIFEST};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("schema: {0}")]
    Schema(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Risk(#[from] crate::risk::RiskError),
    #[error(transparent)]
    Env(#[from] crate::envs::EnvError),
    #[error(transparent)]
    Gp(#[from] crate::gp::GpError),
    #[error(transparent)]
    Belief(#[from] crate::belief::BeliefError),
    #[error(transparent)]
    Mdp(#[from] crate::mdp::MdpError),
    #[error(transparent)]
    Plan(#[from] crate::ersbi::PlanError),
    #[error(transparent)]
    Train(#[from] crate::erpg::TrainError),
}

/// What a finished run wrote and its per-seed summaries.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub out: PathBuf,
    pub seeds: Vec<SeedSummary>,
    pub aggregate: RunAggregate,
}

/// Runs every configured seed, writing `manifest.json`, one metrics CSV per
/// seed, `summary.csv` and `histogram.csv` into `config.out`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport, HarnessError> {
    config.validate()?;
    std::fs::create_dir_all(&config.out)?;
    let manifest = Manifest::new(config);
    std::fs::write(config.out.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    let mut per_seed = Vec::with_capacity(manifest.seeds.len());
    for &seed in &manifest.seeds {
        let rows = run_seed(config, seed)?;
        write_rows(&config.out.join(metrics_file_name(seed)), &rows)?;
        per_seed.push((SeedSummary::from_rows(seed, &rows), rows));
    }
    write_seed_summaries(&config.out, config.env, &per_seed)?;
    let seeds = per_seed.iter().map(|(s, _)| s.clone()).collect();
    let aggregate = RunAggregate::from_seeds(manifest.label, config.env, per_seed);
    Ok(RunReport { out: config.out.clone(), seeds, aggregate })
}

/// Metric rows of one seed, without touching the filesystem.
pub fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<Vec<MetricRow>, HarnessError> {
    match config.env {
        EnvId::Gridworld => run_gridworld_seed(config, seed),
        EnvId::Option => run_option_seed(config, seed),
    }
}
