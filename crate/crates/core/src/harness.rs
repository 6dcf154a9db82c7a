//! Experiment orchestration: a TOML config names an environment, the
//! learners, the seeds, and optionally a sweep over target margins; the
//! runner executes every (learner, seed, margin) combination, writing one
//! JSONL log per run plus a manifest with the fully resolved
//! configuration. Summaries reduce the logs to a Pareto table (return vs
//! failure rate) and a violations-versus-return curve, both as CSV.
//!
//! Log lines are single JSON objects, append-only, so a crash never
//! leaves a partial record ahead of complete ones. Runs are independent
//! and deterministic given (config, seed); executing them in any order
//! or in parallel processes yields the same artifacts.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{train, AgentConfig, AlgoKind, LogRecord};
use crate::envs::make_env;
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ExperimentSection {
    name: String,
    seeds: Vec<u64>,
    algos: Vec<String>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            name: "experiment".to_string(),
            seeds: vec![0],
            algos: vec!["sorl".to_string()],
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SweepSection {
    delta_list: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: Option<ExperimentSection>,
    env: toml::value::Table,
    agent: Option<AgentConfig>,
    sweep: Option<SweepSection>,
}

/// Fully parsed experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    pub algos: Vec<AlgoKind>,
    pub env_name: String,
    /// Environment keys other than `name`, passed through to `make_env`.
    pub env_config: toml::value::Table,
    pub agent: AgentConfig,
    /// Target margins swept for the shaped learner; baselines ignore it.
    pub delta_sweep: Option<Vec<f64>>,
}

pub fn parse_experiment(text: &str) -> Result<ExperimentConfig> {
    let raw: RawConfig = toml::from_str(text)
        .map_err(|e| CoreError::Config(format!("experiment config: {e}")))?;
    let section = raw.experiment.unwrap_or_default();
    if section.seeds.is_empty() {
        return Err(CoreError::Config("experiment.seeds must not be empty".into()));
    }
    if section.algos.is_empty() {
        return Err(CoreError::Config("experiment.algos must not be empty".into()));
    }
    let algos = section
        .algos
        .iter()
        .map(|s| AlgoKind::from_name(s))
        .collect::<Result<Vec<_>>>()?;
    let mut env_config = raw.env;
    let env_name = match env_config.remove("name") {
        Some(toml::Value::String(s)) => s,
        Some(other) => {
            return Err(CoreError::Config(format!(
                "env.name must be a string, got {other}"
            )))
        }
        None => return Err(CoreError::Config("env.name is required".into())),
    };
    let agent = raw.agent.unwrap_or_default();
    agent.validate()?;
    let delta_sweep = match raw.sweep {
        None => None,
        Some(s) if s.delta_list.is_empty() => {
            return Err(CoreError::Config("sweep.delta_list must not be empty".into()))
        }
        Some(s) => Some(s.delta_list),
    };
    Ok(ExperimentConfig {
        name: section.name,
        seeds: section.seeds,
        algos,
        env_name,
        env_config,
        agent,
        delta_sweep,
    })
}

pub fn load_experiment(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)?;
    parse_experiment(&text)
}

/// One executed (learner, seed, margin) combination.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunOutcome {
    pub algo: String,
    pub seed: u64,
    pub delta: Option<f64>,
    /// Log file name, relative to the run directory.
    pub log: String,
    /// None when the run completed; the error text otherwise.
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub version: String,
    pub env_name: String,
    pub env_config: serde_json::Value,
    pub agent: AgentConfig,
    pub algos: Vec<String>,
    pub seeds: Vec<u64>,
    pub delta_sweep: Option<Vec<f64>>,
    pub runs: Vec<RunOutcome>,
}

#[derive(Debug)]
pub struct ExperimentReport {
    pub dir: PathBuf,
    pub manifest_path: PathBuf,
    pub manifest: Manifest,
}

impl ExperimentReport {
    pub fn failed_runs(&self) -> usize {
        self.manifest.runs.iter().filter(|r| r.error.is_some()).count()
    }
}

fn fmt_delta(d: f64) -> String {
    let s = if d == d.trunc() && d.abs() < 1e15 {
        format!("{}", d as i64)
    } else {
        format!("{d}")
    };
    s.replace('-', "m").replace('.', "p")
}

fn log_name(algo: AlgoKind, seed: u64, delta: Option<f64>) -> String {
    match delta {
        None => format!("{}_seed{}.jsonl", algo.name(), seed),
        Some(d) => format!("{}_seed{}_delta{}.jsonl", algo.name(), seed, fmt_delta(d)),
    }
}

fn write_log(path: &Path, records: &[LogRecord]) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r)?;
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let rec: LogRecord = serde_json::from_str(line).map_err(|e| {
            CoreError::Config(format!("{}:{}: bad log line: {e}", path.display(), i + 1))
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Executes every planned run sequentially, recording per-run failures
/// without aborting the rest. Configuration problems (bad environment
/// keys, inconsistent agent settings) surface as errors before any run
/// starts. A manifest with the resolved configuration and all outcomes is
/// written last.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentReport> {
    cfg.agent.validate()?;
    // Fail fast on environment problems: every run shares the table.
    make_env(&cfg.env_name, cfg.seeds[0], &cfg.env_config)?;

    let mut plan: Vec<(AlgoKind, u64, Option<f64>)> = Vec::new();
    for &algo in &cfg.algos {
        let deltas: Vec<Option<f64>> = match (&cfg.delta_sweep, algo) {
            (Some(list), AlgoKind::Sorl) => list.iter().copied().map(Some).collect(),
            _ => vec![None],
        };
        for &delta in &deltas {
            for &seed in &cfg.seeds {
                plan.push((algo, seed, delta));
            }
        }
    }
    {
        let mut names: Vec<String> =
            plan.iter().map(|&(a, s, d)| log_name(a, s, d)).collect();
        names.sort();
        names.dedup();
        if names.len() != plan.len() {
            return Err(CoreError::Config(
                "duplicate (algo, seed, delta) combinations in the experiment".into(),
            ));
        }
    }
    for &(algo, _, delta) in &plan {
        let mut agent = cfg.agent.clone();
        agent.delta_target = if algo == AlgoKind::Sorl {
            delta.or(agent.delta_target)
        } else {
            None
        };
        agent.validate()?;
    }

    fs::create_dir_all(out_dir)?;
    let mut runs = Vec::with_capacity(plan.len());
    for &(algo, seed, delta) in &plan {
        let mut agent = cfg.agent.clone();
        agent.delta_target = if algo == AlgoKind::Sorl {
            delta.or(agent.delta_target)
        } else {
            None
        };
        let name = log_name(algo, seed, delta);
        let path = out_dir.join(&name);
        let mut env = make_env(&cfg.env_name, seed, &cfg.env_config)?;
        let error = match train(&mut env, algo, &agent, seed, None) {
            Ok(out) => {
                write_log(&path, &out.records)?;
                None
            }
            Err(e) => Some(e.to_string()),
        };
        runs.push(RunOutcome { algo: algo.name().to_string(), seed, delta, log: name, error });
    }

    let manifest = Manifest {
        name: cfg.name.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        env_name: cfg.env_name.clone(),
        env_config: serde_json::to_value(&cfg.env_config)?,
        agent: cfg.agent.clone(),
        algos: cfg.algos.iter().map(|a| a.name().to_string()).collect(),
        seeds: cfg.seeds.clone(),
        delta_sweep: cfg.delta_sweep.clone(),
        runs,
    };
    let manifest_path = out_dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&manifest_path, text)?;
    Ok(ExperimentReport { dir: out_dir.to_path_buf(), manifest_path, manifest })
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path)
        .map_err(|e| CoreError::Config(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// Scalar statistics of one completed run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunStats {
    pub algo: String,
    pub seed: u64,
    pub delta: Option<f64>,
    pub episodes: u64,
    /// Mean undiscounted return over the last tenth of the episodes.
    pub final_window_return: f64,
    /// Fraction of all episodes containing at least one violation.
    pub failure_rate: f64,
    pub cumulative_violations: u64,
}

pub fn run_stats(
    algo: &str,
    seed: u64,
    delta: Option<f64>,
    records: &[LogRecord],
) -> Option<RunStats> {
    let episodes: Vec<_> = records
        .iter()
        .filter_map(|r| match r {
            LogRecord::Episode(e) => Some(e),
            _ => None,
        })
        .collect();
    if episodes.is_empty() {
        return None;
    }
    let n = episodes.len();
    let window = (n + 9) / 10;
    let tail = &episodes[n - window..];
    let final_window_return =
        tail.iter().map(|e| e.undiscounted_return).sum::<f64>() / window as f64;
    let failures = episodes.iter().filter(|e| e.violated).count();
    Some(RunStats {
        algo: algo.to_string(),
        seed,
        delta,
        episodes: n as u64,
        final_window_return,
        failure_rate: failures as f64 / n as f64,
        cumulative_violations: episodes.last().unwrap().cumulative_violations,
    })
}

/// One algorithm's point on the return-versus-failure plane.
#[derive(Debug, Clone, PartialEq)]
pub struct ParetoPoint {
    pub algo: String,
    pub mean_return: f64,
    pub mean_failure: f64,
    /// Min-max normalized across algorithms into [0,1]; constant → 0.
    pub norm_return: f64,
    /// Scaled into [-1,0]: the lowest failure rate maps to 0, the highest
    /// to -1; constant → 0.
    pub norm_failure: f64,
    /// True when some other algorithm is at least as good on both axes
    /// and strictly better on one.
    pub dominated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParetoSummary {
    pub points: Vec<ParetoPoint>,
}

fn normalize_returns(raw: &[f64]) -> Vec<f64> {
    let min = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max - min).is_normal() {
        return vec![0.0; raw.len()];
    }
    raw.iter().map(|r| (r - min) / (max - min)).collect()
}

/// Raw failure rates are non-negative; any negative input is therefore
/// already in the scaled form and passes through unchanged, which makes
/// the scaling idempotent.
fn normalize_failures(raw: &[f64]) -> Vec<f64> {
    let min = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if min < 0.0 {
        return raw.to_vec();
    }
    if !(max - min).is_normal() {
        return vec![0.0; raw.len()];
    }
    raw.iter().map(|f| -(f - min) / (max - min)).collect()
}

/// Aggregates per-run statistics into one point per algorithm (means
/// across runs), normalizes the two axes, and flags dominance: an
/// algorithm is dominated when another has return no worse and failure
/// no worse, at least one strictly.
pub fn pareto_summary(stats: &[RunStats]) -> Result<ParetoSummary> {
    if stats.is_empty() {
        return Err(CoreError::Config("no completed runs to summarize".into()));
    }
    let mut order: Vec<&str> = Vec::new();
    for s in stats {
        if !order.contains(&s.algo.as_str()) {
            order.push(&s.algo);
        }
    }
    let mut means: Vec<(String, f64, f64)> = Vec::new();
    for algo in order {
        let group: Vec<&RunStats> = stats.iter().filter(|s| s.algo == algo).collect();
        let n = group.len() as f64;
        let ret = group.iter().map(|s| s.final_window_return).sum::<f64>() / n;
        let fail = group.iter().map(|s| s.failure_rate).sum::<f64>() / n;
        means.push((algo.to_string(), ret, fail));
    }
    let returns: Vec<f64> = means.iter().map(|m| m.1).collect();
    let failures: Vec<f64> = means.iter().map(|m| m.2).collect();
    let norm_r = normalize_returns(&returns);
    let norm_f = normalize_failures(&failures);
    let points = means
        .iter()
        .enumerate()
        .map(|(i, (algo, ret, fail))| {
            let dominated = means.iter().enumerate().any(|(j, (_, rj, fj))| {
                j != i && rj >= ret && fj <= fail && (rj > ret || fj < fail)
            });
            ParetoPoint {
                algo: algo.clone(),
                mean_return: *ret,
                mean_failure: *fail,
                norm_return: norm_r[i],
                norm_failure: norm_f[i],
                dominated,
            }
        })
        .collect();
    Ok(ParetoSummary { points })
}

/// One recorded (violation count, evaluation return) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub algo: String,
    pub seed: u64,
    pub delta: Option<f64>,
    pub total_steps: u64,
    pub cumulative_violations: u64,
    pub eval_return: f64,
    pub eval_violation_rate: f64,
}

pub fn curve_points(
    algo: &str,
    seed: u64,
    delta: Option<f64>,
    records: &[LogRecord],
) -> Vec<CurvePoint> {
    records
        .iter()
        .filter_map(|r| match r {
            LogRecord::ViolationEval(v) => Some(CurvePoint {
                algo: algo.to_string(),
                seed,
                delta,
                total_steps: v.total_steps,
                cumulative_violations: v.cumulative_violations,
                eval_return: v.eval_return,
                eval_violation_rate: v.eval_violation_rate,
            }),
            _ => None,
        })
        .collect()
}

fn fmt_opt(d: Option<f64>) -> String {
    match d {
        None => String::new(),
        Some(v) => format!("{v}"),
    }
}

pub fn write_pareto_csv(summary: &ParetoSummary, path: &Path) -> Result<()> {
    let mut text =
        String::from("algo,mean_return,mean_failure_rate,norm_return,norm_failure,dominated\n");
    for p in &summary.points {
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.algo, p.mean_return, p.mean_failure, p.norm_return, p.norm_failure, p.dominated
        ));
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn write_curve_csv(points: &[CurvePoint], path: &Path) -> Result<()> {
    let mut text = String::from(
        "algo,seed,delta,total_steps,cumulative_violations,eval_return,eval_violation_rate\n",
    );
    for p in points {
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            p.algo,
            p.seed,
            fmt_opt(p.delta),
            p.total_steps,
            p.cumulative_violations,
            p.eval_return,
            p.eval_violation_rate
        ));
    }
    fs::write(path, text)?;
    Ok(())
}

#[derive(Debug)]
pub struct SummaryArtifacts {
    pub pareto: ParetoSummary,
    pub pareto_csv: PathBuf,
    pub curve_csv: PathBuf,
}

/// Reads a run directory back and writes `pareto.csv` and
/// `violations_vs_return.csv` next to the logs.
pub fn summarize_experiment(dir: &Path) -> Result<SummaryArtifacts> {
    let manifest = load_manifest(dir)?;
    let mut stats = Vec::new();
    let mut curve = Vec::new();
    for run in &manifest.runs {
        if run.error.is_some() {
            continue;
        }
        let records = read_log(&dir.join(&run.log))?;
        if let Some(s) = run_stats(&run.algo, run.seed, run.delta, &records) {
            stats.push(s);
        }
        curve.extend(curve_points(&run.algo, run.seed, run.delta, &records));
    }
    let pareto = pareto_summary(&stats)?;
    let pareto_csv = dir.join("pareto.csv");
    write_pareto_csv(&pareto, &pareto_csv)?;
    let curve_csv = dir.join("violations_vs_return.csv");
    write_curve_csv(&curve, &curve_csv)?;
    Ok(SummaryArtifacts { pareto, pareto_csv, curve_csv })
}
