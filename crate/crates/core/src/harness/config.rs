//! Experiment configuration: a TOML table with dotted-key overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::envs::{GridworldSpec, OptionSpec};
use crate::gp::GpHyper;
use crate::risk::{RiskObjective, ScoringForm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvId {
    #[default]
    Gridworld,
    Option,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlgoId {
    /// Risk-sensitive backward induction over posterior samples.
    #[default]
    Ersbi,
    /// Exponential-utility policy gradient on belief samples.
    Erpg,
    /// Risk-neutral REINFORCE planning on the true environment.
    Pg,
    /// Risk-neutral policy gradient on belief samples.
    Bpg,
    /// CVaR-truncated policy gradient on belief samples.
    CvarBpg,
}

impl AlgoId {
    pub fn name(self) -> &'static str {
        match self {
            AlgoId::Ersbi => "ersbi",
            AlgoId::Erpg => "erpg",
            AlgoId::Pg => "pg",
            AlgoId::Bpg => "bpg",
            AlgoId::CvarBpg => "cvar-bpg",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErsbiSettings {
    pub tol: f64,
    /// Sweep cap per plan. On the gridworld, plans whose policy settles
    /// converge within about 1750 sweeps; plans still running at the cap are
    /// cycling.
    pub max_sweeps: usize,
    /// Posterior samples per plan, in addition to the two structural variants.
    pub n_samples: usize,
    pub replan_every: usize,
    pub scoring: ScoringForm,
    pub prior_alpha: f64,
}

impl Default for ErsbiSettings {
    fn default() -> Self {
        ErsbiSettings {
            tol: 1e-6,
            max_sweeps: 2000,
            n_samples: 16,
            replan_every: 10,
            scoring: ScoringForm::ExpectedUtility,
            prior_alpha: crate::belief::DEFAULT_TRANSITION_PRIOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PgSettings {
    pub n_models: usize,
    pub n_rollouts: usize,
    pub learning_rate: f64,
    /// Gradient steps per episode. Fewer than the library default of 10, with
    /// a proportionally larger learning rate, so the full option-task sweep
    /// fits in an hour on one core.
    pub planning_steps: usize,
    pub hidden_width: usize,
    pub baseline: bool,
    pub max_grad_norm: Option<f64>,
}

impl Default for PgSettings {
    fn default() -> Self {
        PgSettings {
            n_models: 64,
            n_rollouts: 4,
            learning_rate: 0.03,
            planning_steps: 3,
            hidden_width: crate::policy::DEFAULT_HIDDEN_WIDTH,
            baseline: false,
            max_grad_norm: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvId,
    pub algo: AlgoId,
    pub beta: Option<f64>,
    pub alpha: Option<f64>,
    /// Defaults to 200 for the gridworld and 2000 for the option task.
    pub episodes: Option<usize>,
    /// Defaults to `0..100` for the gridworld and `0..20` for the option task.
    pub seeds: Option<Vec<u64>>,
    pub out: PathBuf,
    /// Record per-episode wall time; otherwise the column is written as 0.
    pub timing: bool,
    pub ersbi: ErsbiSettings,
    pub pg: PgSettings,
    pub gridworld: GridworldSpec<f64>,
    pub option: OptionSpec<f64>,
    pub gp: GpHyper<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            env: EnvId::default(),
            algo: AlgoId::default(),
            beta: None,
            alpha: None,
            episodes: None,
            seeds: None,
            out: PathBuf::from("out"),
            timing: false,
            ersbi: ErsbiSettings::default(),
            pg: PgSettings::default(),
            gridworld: GridworldSpec::default(),
            option: OptionSpec::default(),
            gp: GpHyper::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn episodes(&self) -> usize {
        self.episodes.unwrap_or(match self.env {
            EnvId::Gridworld => 200,
            EnvId::Option => 2000,
        })
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| match self.env {
            EnvId::Gridworld => (0..100).collect(),
            EnvId::Option => (0..20).collect(),
        })
    }

    /// The risk objective implied by algorithm, `beta` and `alpha`.
    pub fn objective(&self) -> Result<RiskObjective<f64>, HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(format!("{}: {m}", self.algo.name())));
        let obj = match (self.algo, self.beta, self.alpha) {
            (_, Some(_), Some(_)) => return bad("give beta or alpha, not both"),
            (AlgoId::Ersbi, Some(b), None) => RiskObjective::exponential(b),
            (AlgoId::Ersbi, None, Some(a)) => RiskObjective::cvar(a)?,
            (AlgoId::Ersbi, None, None) => RiskObjective::Neutral,
            (AlgoId::Erpg, Some(b), None) => RiskObjective::exponential(b),
            (AlgoId::Erpg, _, _) => return bad("needs beta"),
            (AlgoId::Pg | AlgoId::Bpg, None, None) => RiskObjective::Neutral,
            (AlgoId::Pg | AlgoId::Bpg, _, _) => return bad("is risk neutral; drop beta/alpha"),
            (AlgoId::CvarBpg, None, Some(a)) => RiskObjective::cvar(a)?,
            (AlgoId::CvarBpg, _, _) => return bad("needs alpha"),
        };
        obj.validate()?;
        Ok(obj)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.objective()?;
        match (self.env, self.algo) {
            (EnvId::Gridworld, AlgoId::Ersbi) => self.gridworld.validate()?,
            (EnvId::Option, AlgoId::Erpg | AlgoId::Pg | AlgoId::Bpg | AlgoId::CvarBpg) => self.option.validate()?,
            (env, algo) => {
                return Err(HarnessError::Config(format!("algorithm {} is not available for {env:?}", algo.name())))
            }
        }
        if self.seeds().is_empty() {
            return Err(HarnessError::Config("seed list is empty".into()));
        }
        if self.episodes() == 0 {
            return Err(HarnessError::Config("episode count must be positive".into()));
        }
        if self.ersbi.replan_every == 0 {
            return Err(HarnessError::Config("replan_every must be positive".into()));
        }
        self.gp.validate()?;
        Ok(())
    }
}

/// Builds a config from an optional TOML file plus `key=value` overrides,
/// applied in order. Keys may be dotted (`pg.learning_rate=0.05`); values are
/// parsed as TOML and fall back to strings.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig, HarnessError> {
    let mut table = match path {
        Some(p) => std::fs::read_to_string(p)?.parse::<toml::Table>()?,
        None => toml::Table::new(),
    };
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("override `{item}` is not key=value")))?;
        set_dotted(&mut table, key.trim(), parse_value(raw.trim()))?;
    }
    let cfg: ExperimentConfig = toml::Value::Table(table).try_into()?;
    cfg.validate()?;
    Ok(cfg)
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), HarnessError> {
    let mut parts = key.split('.').peekable();
    let mut cur = table;
    while let Some(part) = parts.next() {
        if part.is_empty() {
            return Err(HarnessError::Config(format!("bad key `{key}`")));
        }
        if parts.peek().is_none() {
            cur.insert(part.to_string(), value);
            return Ok(());
        }
        let entry = cur.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| HarnessError::Config(format!("`{part}` in `{key}` is not a table")))?;
    }
    Ok(())
}

/// Parses `0..20`, `3` or `1,4,9`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, HarnessError> {
    let bad = || HarnessError::Config(format!("bad seed list `{s}`"));
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if a >= b {
            return Err(bad());
        }
        return Ok((a..b).collect());
    }
    s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect()
}
