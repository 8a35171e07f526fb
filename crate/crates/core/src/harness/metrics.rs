//! Per-episode metric rows, per-seed summaries, histograms and aggregation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{EnvId, ExperimentConfig};
use super::HarnessError;
use crate::risk::{cvar, WeightedReturns};

pub const SCHEMA_VERSION: u32 = 1;
pub const COLUMNS: [&str; 6] = ["seed", "episode", "return", "regret", "fell", "wall_time_ms"];
/// Lower-tail mass used for the shortfall statistic.
pub const SHORTFALL_LEVEL: f64 = 0.05;
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub seed: u64,
    pub episode: usize,
    #[serde(rename = "return")]
    pub ret: f64,
    pub regret: f64,
    /// 1 if the episode ended in water; empty where falls do not apply.
    pub fell: Option<u8>,
    pub wall_time_ms: u64,
}

pub fn metrics_file_name(seed: u64) -> String {
    format!("metrics_seed{seed}.csv")
}

/// Fixed-edge histogram; values outside the range land in the end bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub step: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, step: f64) -> Self {
        let n = ((hi - lo) / step).round() as usize;
        Histogram { lo, step, counts: vec![0; n.max(1)] }
    }

    pub fn for_env(env: EnvId) -> Self {
        match env {
            EnvId::Gridworld => Histogram::new(-20.0, 0.0, 0.5),
            EnvId::Option => Histogram::new(-3.0, 5.0, 0.1),
        }
    }

    pub fn add(&mut self, x: f64) {
        let i = ((x - self.lo) / self.step).floor();
        let i = if i < 0.0 { 0 } else { (i as usize).min(self.counts.len() - 1) };
        self.counts[i] += 1;
    }

    pub fn edges(&self, i: usize) -> (f64, f64) {
        let a = self.lo + self.step * i as f64;
        (round12(a), round12(a + self.step))
    }

    pub fn merge(&mut self, other: &Histogram) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += *b;
        }
    }
}

/// Edge labels without accumulated floating-point noise.
fn round12(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

/// Number of trailing episodes forming the final window (10%, at least one).
pub fn final_window(episodes: usize) -> usize {
    episodes.div_ceil(10).max(1)
}

/// `−CVaR_{5%}` of the returns: the mean loss over the worst 5%.
pub fn expected_shortfall(returns: &[f64]) -> f64 {
    match WeightedReturns::uniform(returns.to_vec()) {
        Ok(wr) => -cvar(&wr, SHORTFALL_LEVEL).expect("valid level"),
        Err(_) => f64::NAN,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub episodes: usize,
    pub mean_return: f64,
    pub final_mean_return: f64,
    pub cumulative_regret: f64,
    pub falls: Option<u64>,
    pub final_shortfall: f64,
}

impl SeedSummary {
    pub fn from_rows(seed: u64, rows: &[MetricRow]) -> Self {
        let n = rows.len();
        let tail = &rows[n - final_window(n).min(n)..];
        let tail_returns: Vec<f64> = tail.iter().map(|r| r.ret).collect();
        let falls = rows.iter().map(|r| r.fell.map(u64::from)).sum::<Option<u64>>();
        SeedSummary {
            seed,
            episodes: n,
            mean_return: rows.iter().map(|r| r.ret).sum::<f64>() / n as f64,
            final_mean_return: tail_returns.iter().sum::<f64>() / tail_returns.len() as f64,
            cumulative_regret: rows.iter().map(|r| r.regret).sum(),
            falls,
            final_shortfall: expected_shortfall(&tail_returns),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub columns: Vec<String>,
    pub label: String,
    pub seeds: Vec<u64>,
    pub episodes: usize,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn new(config: &ExperimentConfig) -> Self {
        let label = match (config.beta, config.alpha) {
            (Some(b), _) => format!("{}_beta{b}", config.algo.name()),
            (_, Some(a)) => format!("{}_alpha{a}", config.algo.name()),
            _ => config.algo.name().to_string(),
        };
        Manifest {
            schema_version: SCHEMA_VERSION,
            columns: COLUMNS.iter().map(|c| c.to_string()).collect(),
            label,
            seeds: config.seeds(),
            episodes: config.episodes(),
            config: config.clone(),
        }
    }
}

pub fn write_rows(path: &Path, rows: &[MetricRow]) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
    if rows.is_empty() {
        w.write_record(COLUMNS)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<MetricRow>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != COLUMNS {
        return Err(HarnessError::Schema(format!("{}: columns {header:?}", path.display())));
    }
    Ok(r.deserialize().collect::<Result<Vec<MetricRow>, _>>()?)
}

/// Mean and standard error of the mean across seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        if xs.len() < 2 {
            return MeanSe { mean, se: 0.0 };
        }
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        MeanSe { mean, se: (var / n).sqrt() }
    }

    /// Standard error of the difference of two independent means.
    pub fn diff_se(&self, other: &MeanSe) -> f64 {
        self.se.hypot(other.se)
    }
}

/// Cross-seed statistics of one run directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunAggregate {
    pub label: String,
    pub env: EnvId,
    pub n_seeds: usize,
    pub mean_return: MeanSe,
    pub final_mean_return: MeanSe,
    pub cumulative_regret: MeanSe,
    pub falls: Option<MeanSe>,
    pub falls_total: Option<u64>,
    /// Shortfall of the final-window returns pooled over seeds.
    pub final_shortfall: f64,
    pub histogram: Histogram,
    pub seeds: Vec<SeedSummary>,
}

impl RunAggregate {
    pub fn from_seeds(label: String, env: EnvId, seeds: Vec<(SeedSummary, Vec<MetricRow>)>) -> Self {
        let mut histogram = Histogram::for_env(env);
        let mut pooled = Vec::new();
        for (_, rows) in &seeds {
            let tail = &rows[rows.len() - final_window(rows.len())..];
            for r in tail {
                histogram.add(r.ret);
                pooled.push(r.ret);
            }
        }
        let sums: Vec<SeedSummary> = seeds.into_iter().map(|(s, _)| s).collect();
        let col = |f: fn(&SeedSummary) -> f64| MeanSe::of(&sums.iter().map(f).collect::<Vec<_>>());
        let falls: Option<Vec<u64>> = sums.iter().map(|s| s.falls).collect();
        RunAggregate {
            label,
            env,
            n_seeds: sums.len(),
            mean_return: col(|s| s.mean_return),
            final_mean_return: col(|s| s.final_mean_return),
            cumulative_regret: col(|s| s.cumulative_regret),
            falls: falls.as_ref().map(|f| MeanSe::of(&f.iter().map(|x| *x as f64).collect::<Vec<_>>())),
            falls_total: falls.map(|f| f.iter().sum()),
            final_shortfall: expected_shortfall(&pooled),
            histogram,
            seeds: sums,
        }
    }
}

fn read_manifest(dir: &Path) -> Result<Manifest, HarnessError> {
    let text = std::fs::read_to_string(dir.join(MANIFEST))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let version = value.get("schema_version").and_then(|v| v.as_u64());
    if version != Some(u64::from(SCHEMA_VERSION)) {
        return Err(HarnessError::Schema(format!("{}: schema version {version:?}, expected {SCHEMA_VERSION}", dir.display())));
    }
    let m: Manifest = serde_json::from_value(value)?;
    if m.columns != COLUMNS {
        return Err(HarnessError::Schema(format!("{}: columns {:?}", dir.display(), m.columns)));
    }
    Ok(m)
}

/// Aggregates one run directory.
pub fn aggregate_run(dir: &Path) -> Result<RunAggregate, HarnessError> {
    let m = read_manifest(dir)?;
    let mut seeds = Vec::with_capacity(m.seeds.len());
    for &seed in &m.seeds {
        let rows = read_rows(&dir.join(metrics_file_name(seed)))?;
        if rows.is_empty() {
            return Err(HarnessError::Schema(format!("seed {seed} has no rows")));
        }
        if rows.iter().any(|r| r.seed != seed || !r.ret.is_finite()) {
            return Err(HarnessError::Schema(format!("seed {seed}: foreign or non-finite rows")));
        }
        seeds.push((SeedSummary::from_rows(seed, &rows), rows));
    }
    Ok(RunAggregate::from_seeds(m.label, m.config.env, seeds))
}

/// Aggregates `dir` itself if it holds a manifest, otherwise every
/// subdirectory that does, in name order.
pub fn aggregate(dir: &Path) -> Result<Vec<RunAggregate>, HarnessError> {
    if dir.join(MANIFEST).exists() {
        return Ok(vec![aggregate_run(dir)?]);
    }
    let mut subdirs: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST).exists())
        .collect();
    subdirs.sort();
    if subdirs.is_empty() {
        return Err(HarnessError::Schema(format!("no run manifests under {}", dir.display())));
    }
    subdirs.iter().map(|d| aggregate_run(d)).collect()
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

/// Writes the summary table to `out` and the pooled final-window histograms
/// next to it as `<stem>_histogram.csv`.
pub fn write_aggregate(out: &Path, runs: &[RunAggregate]) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(out)?;
    w.write_record([
        "run",
        "n_seeds",
        "mean_return",
        "mean_return_se",
        "final_mean_return",
        "final_mean_return_se",
        "cumulative_regret",
        "cumulative_regret_se",
        "falls_mean",
        "falls_se",
        "falls_total",
        "final_shortfall_5pct",
    ])?;
    for r in runs {
        w.write_record([
            r.label.clone(),
            r.n_seeds.to_string(),
            r.mean_return.mean.to_string(),
            r.mean_return.se.to_string(),
            r.final_mean_return.mean.to_string(),
            r.final_mean_return.se.to_string(),
            r.cumulative_regret.mean.to_string(),
            r.cumulative_regret.se.to_string(),
            fmt_opt(r.falls.map(|f| f.mean)),
            fmt_opt(r.falls.map(|f| f.se)),
            r.falls_total.map_or_else(|| "NA".to_string(), |t| t.to_string()),
            r.final_shortfall.to_string(),
        ])?;
    }
    w.flush()?;
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("summary");
    let hist_path = out.with_file_name(format!("{stem}_histogram.csv"));
    let mut h = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(hist_path)?;
    h.write_record(["run", "bin_lo", "bin_hi", "count"])?;
    for r in runs {
        for (i, c) in r.histogram.counts.iter().enumerate() {
            let (a, b) = r.histogram.edges(i);
            h.write_record([r.label.clone(), a.to_string(), b.to_string(), c.to_string()])?;
        }
    }
    h.flush()?;
    Ok(())
}

/// Writes `summary.csv` (one row per seed) and `histogram.csv` (final-window
/// counts per seed) into a run directory.
pub fn write_seed_summaries(dir: &Path, env: EnvId, seeds: &[(SeedSummary, Vec<MetricRow>)]) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(dir.join("summary.csv"))?;
    for (s, _) in seeds {
        w.serialize(s)?;
    }
    w.flush()?;
    let mut h = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(dir.join("histogram.csv"))?;
    h.write_record(["seed", "bin_lo", "bin_hi", "count"])?;
    for (s, rows) in seeds {
        let mut hist = Histogram::for_env(env);
        for r in &rows[rows.len() - final_window(rows.len())..] {
            hist.add(r.ret);
        }
        for (i, c) in hist.counts.iter().enumerate() {
            let (a, b) = hist.edges(i);
            h.write_record([s.seed.to_string(), a.to_string(), b.to_string(), c.to_string()])?;
        }
    }
    h.flush()?;
    Ok(())
}
