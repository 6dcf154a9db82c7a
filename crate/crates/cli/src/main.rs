//! Command line front end. Exit codes: 0 success, 1 unusable configuration
//! or invocation, 2 experiment finished with failed runs, 3 a verification
//! check did not hold.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde_json::json;

use sorl_core::{
    check_critic_floor, check_safe_dominance, delta_margin, enumerate_tabular,
    label_irrecoverable, load_experiment, penalty_from_range, run_experiment, solve_lambda,
    summarize_experiment, worst_trajectory_length, AlgoKind, ConditionInputs, CoreError,
    DoomCorridor, EnvKind, ExperimentConfig, HazardGrid, PenaltyRule, PointVelocity, Result,
    SafetyParams, StateLabel, TabularMDP,
};

#[derive(Parser)]
#[command(name = "sorl", version, about = "Desk-scale safety-shaped reinforcement learning lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute every run of an experiment config and write logs plus a manifest.
    Run {
        /// Experiment TOML file.
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        /// Directory receiving one JSONL log per run and manifest.json.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Replace the config's seed list with this single seed.
        #[arg(long, value_name = "N")]
        seed: Option<u64>,
        /// Replace the config's learner list with this single learner.
        #[arg(long, value_name = "NAME")]
        algo: Option<String>,
        /// Replace the config's margin sweep with this single target.
        #[arg(long, value_name = "X", allow_negative_numbers = true)]
        delta: Option<f64>,
    },
    /// Solve the shaping weight and penalty for a config without training.
    Tune {
        /// Experiment TOML file; the environment's exact reward range is used.
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        /// Target margin, overriding the config's delta_target.
        #[arg(long, value_name = "X", allow_negative_numbers = true)]
        delta: Option<f64>,
    },
    /// Machine-check the critic floor and dominance guarantees on the built-in suite.
    Verify,
    /// Recompute pareto.csv and violations_vs_return.csv for a finished run directory.
    Summarize {
        /// Directory written by a previous `run`.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    ExitCode::SUCCESS
                }
                _ => {
                    eprint!("{e}");
                    ExitCode::from(1)
                }
            };
        }
    };
    match cli.command {
        Command::Run { config, out, seed, algo, delta } => cmd_run(&config, &out, seed, algo, delta),
        Command::Tune { config, delta } => cmd_tune(&config, delta),
        Command::Verify => cmd_verify(),
        Command::Summarize { out } => cmd_summarize(&out),
    }
}

fn fail(e: &CoreError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(1)
}

fn cmd_run(
    config: &PathBuf,
    out: &PathBuf,
    seed: Option<u64>,
    algo: Option<String>,
    delta: Option<f64>,
) -> ExitCode {
    let mut cfg = match load_experiment(config) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    if let Some(name) = algo {
        match AlgoKind::from_name(&name) {
            Ok(kind) => cfg.algos = vec![kind],
            Err(e) => return fail(&e),
        }
    }
    if let Some(d) = delta {
        cfg.delta_sweep = Some(vec![d]);
    }
    let report = match run_experiment(&cfg, out) {
        Ok(r) => r,
        Err(e) => return fail(&e),
    };
    for run in &report.manifest.runs {
        println!(
            "{}",
            json!({
                "event": "run",
                "algo": run.algo,
                "seed": run.seed,
                "delta": run.delta,
                "log": run.log,
                "error": run.error,
            })
        );
    }
    let failed = report.failed_runs();
    println!(
        "{}",
        json!({
            "event": "done",
            "dir": report.dir,
            "manifest": report.manifest_path,
            "runs": report.manifest.runs.len(),
            "failed": failed,
        })
    );
    if failed > 0 {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}

/// Derives the tuning inputs for a config from the environment's exact
/// tabular reward range, mirroring what the online range tracker converges to.
fn tuning_inputs(cfg: &ExperimentConfig) -> Result<ConditionInputs> {
    let env = sorl_core::make_env(&cfg.env_name, cfg.seeds[0], &cfg.env_config)?;
    let mdp = enumerate_tabular(&env)?;
    let (r_min, r_max) = mdp.clamped_reward_range();
    let penalty_c = match &cfg.agent.penalty {
        PenaltyRule::Auto => penalty_from_range(r_min, r_max, cfg.agent.gamma, mdp.h_star)?,
        PenaltyRule::Fixed(c) => *c,
    };
    Ok(ConditionInputs {
        gamma: cfg.agent.gamma,
        gamma_safe: cfg.agent.gamma_safe,
        h_star: mdp.h_star,
        r_min,
        r_max,
        penalty_c,
        lambda: cfg.agent.lambda_init,
    })
}

fn cmd_tune(config: &PathBuf, delta: Option<f64>) -> ExitCode {
    let cfg = match load_experiment(config) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    let inputs = match tuning_inputs(&cfg) {
        Ok(i) => i,
        Err(e) => return fail(&e),
    };
    let margin_init = match delta_margin(&inputs) {
        Ok(m) => m,
        Err(e) => return fail(&e),
    };
    let worst_init = match worst_trajectory_length(&inputs) {
        Ok(w) => w,
        Err(e) => return fail(&e),
    };
    let target = delta.or(cfg.agent.delta_target);
    let solution = match target {
        None => None,
        Some(t) => match solve_lambda(t, &inputs, cfg.agent.lambda_init) {
            Ok(s) => Some(s),
            Err(e) => return fail(&e),
        },
    };
    println!(
        "{}",
        json!({
            "env": cfg.env_name,
            "gamma": inputs.gamma,
            "gamma_safe": inputs.gamma_safe,
            "h_star": inputs.h_star,
            "r_min": inputs.r_min,
            "r_max": inputs.r_max,
            "penalty_c": inputs.penalty_c,
            "lambda_init": cfg.agent.lambda_init,
            "delta_at_lambda_init": margin_init,
            "worst_length_at_lambda_init": worst_init,
            "target_delta": target,
            "lambda_solved": solution.map(|s| s.lambda),
            "delta_achieved": solution.map(|s| s.delta_achieved),
            "worst_length_at_solution": solution.map(|s| s.worst_length),
            "attainable": solution.map(|s| s.attainable),
        })
    );
    ExitCode::SUCCESS
}

fn cmd_summarize(out: &PathBuf) -> ExitCode {
    let artifacts = match summarize_experiment(out) {
        Ok(a) => a,
        Err(e) => return fail(&e),
    };
    let points: Vec<_> = artifacts
        .pareto
        .points
        .iter()
        .map(|p| {
            json!({
                "algo": p.algo,
                "mean_return": p.mean_return,
                "mean_failure": p.mean_failure,
                "norm_return": p.norm_return,
                "norm_failure": p.norm_failure,
                "dominated": p.dominated,
            })
        })
        .collect();
    println!(
        "{}",
        json!({
            "event": "summary",
            "pareto_csv": artifacts.pareto_csv,
            "curve_csv": artifacts.curve_csv,
            "points": points,
        })
    );
    ExitCode::SUCCESS
}

fn corridor_mdp(length: u32, h_star: u32, doom: f64) -> Result<TabularMDP> {
    let env = EnvKind::Corridor(DoomCorridor::new(length, h_star, doom, 0.05)?);
    enumerate_tabular(&env)
}

/// One verification check: a closure either produces a JSON line carrying a
/// `pass` flag or errors, which is itself reported as a failed line.
fn emit(name: &str, body: Result<serde_json::Value>, failed: &mut usize) {
    let line = match body {
        Ok(v) => v,
        Err(e) => json!({ "check": name, "pass": false, "error": e.to_string() }),
    };
    if line.get("pass").and_then(|p| p.as_bool()) != Some(true) {
        *failed += 1;
    }
    println!("{line}");
}

fn cmd_verify() -> ExitCode {
    let mut failed = 0usize;
    let mut checks = 0usize;

    // Exhaustive critic floor on corridors of every length up to the horizon.
    for gamma_safe in [0.7, 0.8, 0.9, 0.99] {
        checks += 1;
        let body = (|| {
            let mut min_slack = f64::INFINITY;
            let mut trajectories = 0usize;
            let mut holds = true;
            let mut equality_at_horizon = false;
            for length in 1..=10 {
                let mdp = corridor_mdp(length, 10, 0.2)?;
                let rep = check_critic_floor(&mdp, gamma_safe)?;
                holds &= rep.holds;
                min_slack = min_slack.min(rep.min_slack);
                trajectories += rep.trajectories;
                if length == 10 {
                    equality_at_horizon = rep.equality_cases > 0;
                }
            }
            Ok(json!({
                "check": "critic_floor",
                "env": "doom_corridor",
                "gamma_safe": gamma_safe,
                "lengths": 10,
                "trajectories": trajectories,
                "min_slack": min_slack,
                "equality_at_horizon": equality_at_horizon,
                "pass": holds && equality_at_horizon,
            }))
        })();
        emit("critic_floor", body, &mut failed);
    }

    // Reachability labeling stays computable and within the declared horizon.
    let labeling_envs: Vec<(&str, Result<EnvKind>)> = vec![
        ("hazard_grid", Ok(EnvKind::Grid(HazardGrid::bridge_default()))),
        (
            "point_velocity",
            PointVelocity::new(1.0, 1.0, 2.0, 0.1, 10, Some(401), Some(21)).map(EnvKind::Point),
        ),
    ];
    for (name, env) in labeling_envs {
        checks += 1;
        let body = (|| {
            let mdp = enumerate_tabular(&env?)?;
            let lab = label_irrecoverable(&mdp)?;
            Ok(json!({
                "check": "labeling",
                "env": name,
                "states": mdp.n_states,
                "safe": lab.count(StateLabel::Safe),
                "irrecoverable": lab.count(StateLabel::Irrecoverable),
                "unsafe": lab.count(StateLabel::Unsafe),
                "max_steps_to_violation": lab.max_steps,
                "pass": lab.count(StateLabel::Unsafe) > 0 && lab.max_steps <= mdp.h_star,
            }))
        })();
        emit("labeling", body, &mut failed);
    }

    // Dominance of compliant actions at weights solved for each target margin.
    let dominance_envs: Vec<(&str, Result<TabularMDP>)> = vec![
        ("doom_corridor", corridor_mdp(10, 10, 0.2)),
        ("hazard_grid", enumerate_tabular(&EnvKind::Grid(HazardGrid::bridge_default()))),
    ];
    for (name, mdp) in dominance_envs {
        let mdp = match mdp {
            Ok(m) => m,
            Err(e) => {
                checks += 3;
                for _ in 0..3 {
                    emit("safe_dominance", Err(CoreError::Env(e.to_string())), &mut failed);
                }
                continue;
            }
        };
        for target in [1.0, 50.0, 300.0] {
            checks += 1;
            let body = (|| {
                let (r_min, r_max) = mdp.clamped_reward_range();
                let penalty_c = penalty_from_range(r_min, r_max, 0.99, mdp.h_star)?;
                let inputs = ConditionInputs {
                    gamma: 0.99,
                    gamma_safe: 0.85,
                    h_star: mdp.h_star,
                    r_min,
                    r_max,
                    penalty_c,
                    lambda: 1.0,
                };
                let sol = solve_lambda(target, &inputs, 1.0)?;
                let params = SafetyParams {
                    gamma: 0.99,
                    gamma_safe: 0.85,
                    horizon_h_star: mdp.h_star,
                    lambda: sol.lambda,
                    penalty_c,
                    r_min_emp: r_min,
                    r_max_emp: r_max,
                };
                let rep = check_safe_dominance(&mdp, &params)?;
                Ok(json!({
                    "check": "safe_dominance",
                    "env": name,
                    "delta_target": target,
                    "lambda": sol.lambda,
                    "attainable": sol.attainable,
                    "delta_achieved": sol.delta_achieved,
                    "states_compared": rep.states_compared,
                    "tightest_margin": rep.tightest_margin,
                    "pass": rep.holds,
                }))
            })();
            emit("safe_dominance", body, &mut failed);
        }
    }

    // Necessity: with the shaping switched off and no terminal penalty, a
    // tempting corridor must break dominance.
    checks += 1;
    let body = (|| {
        let mdp = corridor_mdp(10, 10, 5.0)?;
        let (r_min, r_max) = mdp.clamped_reward_range();
        let params = SafetyParams {
            gamma: 0.99,
            gamma_safe: 0.85,
            horizon_h_star: mdp.h_star,
            lambda: 0.0,
            penalty_c: 0.0,
            r_min_emp: r_min,
            r_max_emp: r_max,
        };
        let rep = check_safe_dominance(&mdp, &params)?;
        Ok(json!({
            "check": "safe_dominance_necessity",
            "env": "doom_corridor",
            "lambda": 0.0,
            "penalty_c": 0.0,
            "pass": !rep.holds,
        }))
    })();
    emit("safe_dominance_necessity", body, &mut failed);

    // Weight solver round trip: the margin at a known weight, fed back as the
    // target, must be recovered to solver tolerance.
    checks += 1;
    let body = (|| {
        let mut cases = 0usize;
        let mut max_rel = 0.0f64;
        let mut ok = true;
        for (gamma, gamma_safe) in [(0.99, 0.85), (0.95, 0.7)] {
            for r_max in [0.2, 1.0, 5.0, 20.0, 100.0] {
                for lambda_true in [0.1, 1.0, 5.0, 25.0, 100.0] {
                    let penalty_c = penalty_from_range(-0.01, r_max, gamma, 10)?;
                    let inputs = ConditionInputs {
                        gamma,
                        gamma_safe,
                        h_star: 10,
                        r_min: -0.01,
                        r_max,
                        penalty_c,
                        lambda: lambda_true,
                    };
                    let target = delta_margin(&inputs)?;
                    let sol = solve_lambda(target, &inputs, 1.0)?;
                    let rel = (sol.delta_achieved - target).abs() / target.abs().max(1.0);
                    max_rel = max_rel.max(rel);
                    ok &= rel <= 1e-6 && sol.attainable;
                    cases += 1;
                }
            }
        }
        Ok(json!({
            "check": "solver_round_trip",
            "cases": cases,
            "max_rel_err": max_rel,
            "pass": ok,
        }))
    })();
    emit("solver_round_trip", body, &mut failed);

    println!(
        "{}",
        json!({ "check": "summary", "checks": checks, "failed": failed, "pass": failed == 0 })
    );
    if failed > 0 {
        ExitCode::from(3)
    } else {
        ExitCode::SUCCESS
    }
}
