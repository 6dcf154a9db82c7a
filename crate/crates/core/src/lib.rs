//! sorl-core: safety-shaped off-policy reinforcement learning.
//!
//! The crate bundles deterministic desk-scale environments, a hand-rolled
//! MLP stack with twin reward and safety critics, reward shaping driven by
//! the safety critics, closed-form tuning of the shaping weight against a
//! target safety margin, exact tabular oracles that verify the shaping
//! guarantees on enumerable MDPs, and an experiment harness with JSONL
//! run logs and CSV summaries.

pub mod agent;
pub mod baselines;
pub mod buffer;
pub mod critics;
pub mod envs;
pub mod error;
pub mod harness;
pub mod mdp;
pub mod nn;
pub mod oracle;
pub mod shaping;
pub mod tuning;

pub use agent::{
    evaluate, train, AgentConfig, AlgoKind, EpisodeRecord, LogRecord, ParamsRecord, PenaltyRule,
    TrainOutput, ViolationEvalRecord,
};
pub use buffer::ReplayBuffer;
pub use baselines::{train_lagrangian, train_sac_c};
pub use envs::{enumerate_tabular, make_env, DoomCorridor, EnvKind, HazardGrid, PointVelocity};
pub use error::{CoreError, FaultSnapshot, Result};
pub use harness::{
    curve_points, load_experiment, load_manifest, parse_experiment, pareto_summary, read_log,
    run_experiment, run_stats, summarize_experiment, write_curve_csv, write_pareto_csv,
    CurvePoint, ExperimentConfig, ExperimentReport, Manifest, ParetoPoint, ParetoSummary,
    RunOutcome, RunStats, SummaryArtifacts,
};
pub use mdp::{discounted_return, Action, ActionSpace, Env, SafetyParams, StepOutcome, Transition};
pub use oracle::{
    check_critic_floor, check_safe_dominance, exact_shaped_q, greedy_policy, label_irrecoverable,
    solve_shaped_fixed_point, tabular_safety_critic, uniform_policy, IrrecoverableLabeling,
    CriticFloorReport, StateLabel, TabularMDP, SafeDominanceReport,
};
pub use shaping::{
    penalty_from_range, penalty_lower_bound, shape_reward, RewardRangeTracker,
    DEFAULT_EPSILON_CLAMP, PENALTY_MARGIN,
};
pub use tuning::{
    critical_length_closed_form, delta_margin, safe_return_lower_bound, solve_lambda,
    unsafe_return_bound, worst_trajectory_length, ConditionInputs, LambdaSolution,
};
