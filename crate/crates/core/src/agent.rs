//! The training loop tying environments, shaping, weight tuning, and the
//! approximator bundle together, plus the two baseline learners sharing
//! the same backbone.
//!
//! Per step: act, estimate failure probability, step the environment, fold
//! the raw reward into the empirical range (re-deriving the penalty and
//! the shaping weight when the range grows), shape the reward, store the
//! transition (violations also go to the dedicated violation buffer), and
//! take one round of gradient updates. Every random choice draws from its
//! own named ChaCha stream, so learners that skip a concern (e.g. the
//! baselines never touch the safety streams) still replay the shared
//! concerns identically under the same seed.

use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::buffer::ReplayBuffer;
use crate::critics::{save_checkpoint, ApproximatorBundle, BundleConfig, UpdateNoise};
use crate::envs::EnvKind;
use crate::error::{CoreError, Result};
use crate::mdp::{Action, ActionSpace, Env, SafetyParams, Transition};
use crate::shaping::{penalty_from_range, shape_reward, RewardRangeTracker, DEFAULT_EPSILON_CLAMP};
use crate::tuning::{delta_margin, solve_lambda, worst_trajectory_length, ConditionInputs};

/// Named ChaCha streams under one run seed.
mod streams {
    pub const INIT: u64 = 0;
    pub const ACTOR: u64 = 1;
    pub const REWARD_BATCH: u64 = 2;
    pub const SAFETY_BATCH: u64 = 3;
    pub const UPDATE_NOISE: u64 = 4;
    pub const SAFETY_NOISE: u64 = 5;
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlgoKind {
    /// Safety-critic-driven shaping with the tuned weight.
    Sorl,
    /// Penalty-only shaping: raw reward, or -C on violation.
    SacC,
    /// Lagrangian relaxation: raw reward minus a dual multiplier times the
    /// safety signal, with per-episode dual ascent.
    Lagrangian,
}

impl AlgoKind {
    pub fn name(self) -> &'static str {
        match self {
            AlgoKind::Sorl => "sorl",
            AlgoKind::SacC => "sac_c",
            AlgoKind::Lagrangian => "lagrangian",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "sorl" => Ok(AlgoKind::Sorl),
            "sac_c" => Ok(AlgoKind::SacC),
            "lagrangian" => Ok(AlgoKind::Lagrangian),
            other => Err(CoreError::Config(format!(
                "unknown algorithm \"{other}\" (expected sorl, sac_c or lagrangian)"
            ))),
        }
    }
}

/// How the terminal penalty is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyRule {
    /// Re-derived from the empirical range with a 5% margin whenever the
    /// range grows.
    Auto,
    /// Pinned to a constant (used by ablations; may be inadmissible).
    Fixed(f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub gamma: f64,
    pub gamma_safe: f64,
    pub total_steps: u64,
    pub max_episodes: Option<u64>,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub safe_buffer_capacity: usize,
    pub warmup_steps: u64,
    pub updates_per_step: u32,
    pub hidden: usize,
    pub lr: f64,
    pub alpha: f64,
    pub rho: f64,
    /// Fraction of each safety-critic batch drawn from the violation
    /// buffer when it is nonempty.
    pub safe_mix: f64,
    pub lambda_init: f64,
    /// Target margin for the shaping-weight solver; None pins the weight
    /// at `lambda_init`.
    pub delta_target: Option<f64>,
    pub penalty: PenaltyRule,
    /// The weight is re-solved when the range grows and at this cadence.
    pub resolve_every: u64,
    /// Floor the positive-reward attenuation factor at zero instead of
    /// letting large weights flip it negative.
    pub clamp_weight: bool,
    /// Run a greedy evaluation each time the violation count grows and
    /// log the return against that count.
    pub eval_on_violation: bool,
    pub eval_episodes: u32,
    /// Expected violations per episode tolerated by the Lagrangian dual.
    pub constraint_threshold: f64,
    pub dual_lr: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            gamma: 0.99,
            gamma_safe: 0.85,
            total_steps: 20_000,
            max_episodes: None,
            batch_size: 64,
            buffer_capacity: 100_000,
            safe_buffer_capacity: 10_000,
            warmup_steps: 1000,
            updates_per_step: 1,
            hidden: 64,
            lr: 3e-4,
            alpha: 0.1,
            rho: 0.005,
            safe_mix: 0.25,
            lambda_init: 1.0,
            delta_target: None,
            penalty: PenaltyRule::Auto,
            resolve_every: 1000,
            clamp_weight: false,
            eval_on_violation: true,
            eval_episodes: 1,
            constraint_threshold: 0.0,
            dual_lr: 1e-3,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let positives = [
            ("total_steps", self.total_steps as f64),
            ("batch_size", self.batch_size as f64),
            ("buffer_capacity", self.buffer_capacity as f64),
            ("safe_buffer_capacity", self.safe_buffer_capacity as f64),
            ("updates_per_step", self.updates_per_step as f64),
            ("hidden", self.hidden as f64),
            ("lr", self.lr),
            ("rho", self.rho),
            ("resolve_every", self.resolve_every as f64),
            ("eval_episodes", self.eval_episodes as f64),
            ("dual_lr", self.dual_lr),
        ];
        for (name, v) in positives {
            if !(v > 0.0) {
                return Err(CoreError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("gamma", self.gamma), ("gamma_safe", self.gamma_safe)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(CoreError::Config(format!("{name} must lie in (0,1), got {v}")));
            }
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(CoreError::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.safe_mix) {
            return Err(CoreError::Config(format!(
                "safe_mix must lie in [0,1], got {}",
                self.safe_mix
            )));
        }
        if !(self.lambda_init >= 0.0 && self.lambda_init.is_finite()) {
            return Err(CoreError::Config(format!(
                "lambda_init must be a finite non-negative weight, got {}",
                self.lambda_init
            )));
        }
        if let Some(d) = self.delta_target {
            if !d.is_finite() {
                return Err(CoreError::Config(format!("delta_target must be finite, got {d}")));
            }
            if self.lambda_init <= 0.0 {
                return Err(CoreError::Config(
                    "solving for a target margin needs a positive lambda_init anchor".into(),
                ));
            }
        }
        if let PenaltyRule::Fixed(c) = self.penalty {
            if !c.is_finite() {
                return Err(CoreError::Config(format!("fixed penalty must be finite, got {c}")));
            }
        }
        if !(self.constraint_threshold >= 0.0) {
            return Err(CoreError::Config(format!(
                "constraint_threshold must be >= 0, got {}",
                self.constraint_threshold
            )));
        }
        Ok(())
    }
}

/// One completed training episode.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EpisodeRecord {
    pub episode: u64,
    pub algo: String,
    pub seed: u64,
    pub undiscounted_return: f64,
    pub discounted_return: f64,
    pub episode_length: u32,
    pub violated: bool,
    pub cumulative_violations: u64,
    pub total_steps: u64,
    pub lambda: f64,
    pub penalty_c: f64,
    pub delta_achieved: f64,
    pub delta_attainable: bool,
    pub mu_dual: f64,
    pub r_min_emp: f64,
    pub r_max_emp: f64,
    pub wall_clock_s: f64,
}

/// Snapshot of the shaping parameters after a re-derivation.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ParamsRecord {
    pub total_steps: u64,
    pub lambda: f64,
    pub penalty_c: f64,
    pub delta_achieved: f64,
    pub delta_attainable: bool,
    pub worst_length: u32,
    pub r_min_emp: f64,
    pub r_max_emp: f64,
}

/// Greedy-policy evaluation triggered by a violation-count increment.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ViolationEvalRecord {
    pub total_steps: u64,
    pub episode: u64,
    pub cumulative_violations: u64,
    pub eval_return: f64,
    pub eval_violation_rate: f64,
}

/// One line of the run log.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Episode(EpisodeRecord),
    Params(ParamsRecord),
    ViolationEval(ViolationEvalRecord),
}

#[derive(Debug)]
pub struct TrainOutput {
    pub bundle: ApproximatorBundle,
    pub records: Vec<LogRecord>,
    pub episodes: u64,
    pub total_steps: u64,
}

/// Current shaping state carried across steps.
struct ShapingState {
    lambda: f64,
    penalty_c: f64,
    delta_achieved: f64,
    delta_attainable: bool,
    worst_length: u32,
}

fn resolve_shaping(
    cfg: &AgentConfig,
    tracker: &RewardRangeTracker,
    h_star: u32,
    current: &ShapingState,
) -> Result<ShapingState> {
    let penalty_c = match cfg.penalty {
        PenaltyRule::Auto => penalty_from_range(tracker.r_min(), tracker.r_max(), cfg.gamma, h_star)?,
        PenaltyRule::Fixed(c) => c,
    };
    let inputs = ConditionInputs {
        gamma: cfg.gamma,
        gamma_safe: cfg.gamma_safe,
        h_star,
        r_min: tracker.r_min(),
        r_max: tracker.r_max(),
        penalty_c,
        lambda: current.lambda,
    };
    match cfg.delta_target {
        None => Ok(ShapingState {
            lambda: current.lambda,
            penalty_c,
            delta_achieved: delta_margin(&inputs)?,
            delta_attainable: true,
            worst_length: worst_trajectory_length(&inputs)?,
        }),
        Some(target) => {
            let anchor = if current.lambda > 0.0 { current.lambda } else { cfg.lambda_init };
            let sol = solve_lambda(target, &inputs, anchor)?;
            Ok(ShapingState {
                lambda: sol.lambda,
                penalty_c,
                delta_achieved: sol.delta_achieved,
                delta_attainable: sol.attainable,
                worst_length: sol.worst_length,
            })
        }
    }
}

fn safety_params(
    cfg: &AgentConfig,
    h_star: u32,
    shaping: &ShapingState,
    tracker: &RewardRangeTracker,
) -> SafetyParams {
    SafetyParams {
        gamma: cfg.gamma,
        gamma_safe: cfg.gamma_safe,
        horizon_h_star: h_star,
        lambda: shaping.lambda,
        penalty_c: shaping.penalty_c,
        r_min_emp: tracker.r_min(),
        r_max_emp: tracker.r_max(),
    }
}

fn warmup_action(space: ActionSpace, rng: &mut ChaCha8Rng) -> Action {
    match space {
        ActionSpace::Discrete(n) => Action::Discrete(rng.gen_range(0..n)),
        ActionSpace::Continuous { dim, bound } => {
            Action::Continuous((0..dim).map(|_| rng.gen_range(-bound..bound)).collect())
        }
    }
}

/// Safety-critic batch: a fixed fraction from the violation buffer when it
/// has content, the rest from the main buffer.
fn mixed_batch(
    d: &ReplayBuffer,
    d_safe: &ReplayBuffer,
    n: usize,
    frac: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Transition> {
    let n_safe = if d_safe.is_empty() { 0 } else { ((n as f64) * frac).round() as usize };
    let n_safe = n_safe.min(n);
    let mut batch = if n_safe > 0 { d_safe.sample_with(n_safe, rng) } else { Vec::new() };
    batch.extend(d.sample_with(n - n_safe, rng));
    batch
}

fn fill_fault(e: CoreError, step: u64, episode: u64) -> CoreError {
    match e {
        CoreError::TrainingFault(mut snap) => {
            snap.step = step;
            snap.episode = episode;
            CoreError::TrainingFault(snap)
        }
        other => other,
    }
}

/// Greedy (mode-of-policy) rollouts without learning. Returns the mean
/// undiscounted raw return and the fraction of episodes ending in a
/// violation. The environments are deterministic, so the seed only matters
/// for interface uniformity.
pub fn evaluate(
    bundle: &ApproximatorBundle,
    env: &mut EnvKind,
    episodes: u32,
    _seed: u64,
) -> (f64, f64) {
    let mut total_return = 0.0;
    let mut violations = 0u32;
    for _ in 0..episodes.max(1) {
        let mut state = env.reset();
        loop {
            let action = bundle.act_greedy(&state);
            let out = env.step(&action);
            total_return += out.reward;
            state = out.next_state;
            if out.safety_signal {
                violations += 1;
            }
            if out.done || out.truncated {
                break;
            }
        }
    }
    let n = episodes.max(1) as f64;
    (total_return / n, violations as f64 / n)
}

/// Runs one learner on one environment under one seed. On a training
/// fault the checkpoint (when a path is given) still captures the
/// pre-fault networks, and the error carries the step and episode.
pub fn train(
    env: &mut EnvKind,
    algo: AlgoKind,
    cfg: &AgentConfig,
    seed: u64,
    checkpoint_path: Option<&Path>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let start = std::time::Instant::now();
    let h_star = env.horizon_h_star();

    let mut bundle_cfg = BundleConfig::new(env.state_dim(), env.action_space());
    bundle_cfg.hidden = cfg.hidden;
    bundle_cfg.lr = cfg.lr;
    bundle_cfg.alpha = cfg.alpha;
    bundle_cfg.rho = cfg.rho;
    let mut init_rng = stream_rng(seed, streams::INIT);
    let mut bundle = ApproximatorBundle::new(bundle_cfg, &mut init_rng)?;

    let mut actor_rng = stream_rng(seed, streams::ACTOR);
    let mut reward_batch_rng = stream_rng(seed, streams::REWARD_BATCH);
    let mut safety_batch_rng = stream_rng(seed, streams::SAFETY_BATCH);
    let mut update_noise_rng = stream_rng(seed, streams::UPDATE_NOISE);
    let mut safety_noise_rng = stream_rng(seed, streams::SAFETY_NOISE);

    let act_dim = match env.action_space() {
        ActionSpace::Discrete(_) => 0,
        ActionSpace::Continuous { dim, .. } => dim,
    };

    let mut d = ReplayBuffer::new(cfg.buffer_capacity);
    let mut d_safe = ReplayBuffer::new(cfg.safe_buffer_capacity);
    let mut tracker = RewardRangeTracker::new(DEFAULT_EPSILON_CLAMP)?;

    let mut shaping = ShapingState {
        lambda: cfg.lambda_init,
        penalty_c: 0.0,
        delta_achieved: 0.0,
        delta_attainable: true,
        worst_length: h_star,
    };
    shaping = resolve_shaping(cfg, &tracker, h_star, &shaping)?;

    let mut records: Vec<LogRecord> = Vec::new();
    let push_params = |records: &mut Vec<LogRecord>, s: &ShapingState, steps: u64, tr: &RewardRangeTracker| {
        records.push(LogRecord::Params(ParamsRecord {
            total_steps: steps,
            lambda: s.lambda,
            penalty_c: s.penalty_c,
            delta_achieved: s.delta_achieved,
            delta_attainable: s.delta_attainable,
            worst_length: s.worst_length,
            r_min_emp: tr.r_min(),
            r_max_emp: tr.r_max(),
        }));
    };
    if algo == AlgoKind::Sorl {
        push_params(&mut records, &shaping, 0, &tracker);
    }

    let mut mu_dual = 0.0f64;
    let mut total_steps: u64 = 0;
    let mut episodes: u64 = 0;
    let mut cumulative_violations: u64 = 0;

    let mut state = env.reset();
    let mut ep_return_raw = 0.0;
    let mut ep_return_disc = 0.0;
    let mut ep_discount = 1.0;
    let mut ep_len: u32 = 0;
    let mut ep_violations: u32 = 0;

    let max_episodes = cfg.max_episodes.unwrap_or(u64::MAX);

    let loop_result = (|| -> Result<()> {
    while total_steps < cfg.total_steps && episodes < max_episodes {
        let action = if total_steps < cfg.warmup_steps {
            warmup_action(env.action_space(), &mut actor_rng)
        } else {
            bundle.act(&state, &mut actor_rng)
        };
        let c_hat = match algo {
            AlgoKind::Sorl => bundle.safety_estimate(&state, &action),
            _ => 0.0,
        };
        let out = env.step(&action);
        total_steps += 1;

        let range_grew = tracker.observe(out.reward)?;
        if algo != AlgoKind::Lagrangian
            && (range_grew || (algo == AlgoKind::Sorl && total_steps % cfg.resolve_every == 0))
        {
            shaping = resolve_shaping(cfg, &tracker, h_star, &shaping)?;
            if algo == AlgoKind::Sorl {
                push_params(&mut records, &shaping, total_steps, &tracker);
            }
        }

        let reward_shaped = match algo {
            AlgoKind::Sorl => {
                let params = safety_params(cfg, h_star, &shaping, &tracker);
                shape_reward(out.reward, c_hat, &params, out.safety_signal, cfg.clamp_weight)?
            }
            AlgoKind::SacC => {
                if out.safety_signal {
                    -shaping.penalty_c
                } else {
                    out.reward
                }
            }
            AlgoKind::Lagrangian => {
                out.reward - mu_dual * if out.safety_signal { 1.0 } else { 0.0 }
            }
        };

        let transition = Transition {
            state: state.clone(),
            action,
            reward_raw: out.reward,
            reward_shaped,
            safety_signal: out.safety_signal,
            next_state: out.next_state.clone(),
            done: out.done,
            truncated: out.truncated,
        };
        if algo == AlgoKind::Sorl && transition.safety_signal {
            d_safe.push(transition.clone());
        }
        d.push(transition);

        if total_steps >= cfg.warmup_steps && d.len() >= cfg.batch_size {
            for _ in 0..cfg.updates_per_step {
                let mut batch = d.sample_with(cfg.batch_size, &mut reward_batch_rng);
                if algo == AlgoKind::Sorl {
                    // The shaping weight follows the safety critics, so a
                    // replayed transition is re-shaped with the live estimate.
                    // Keeping the collection-time value would replay whatever
                    // the critics believed thousands of updates ago.
                    let params = safety_params(cfg, h_star, &shaping, &tracker);
                    for tr in batch.iter_mut() {
                        let c = bundle.safety_estimate(&tr.state, &tr.action);
                        tr.reward_shaped = shape_reward(
                            tr.reward_raw,
                            c,
                            &params,
                            tr.safety_signal,
                            cfg.clamp_weight,
                        )
                        .map_err(|e| fill_fault(e, total_steps, episodes))?;
                    }
                }
                let noise = if act_dim > 0 {
                    UpdateNoise::sample(cfg.batch_size, act_dim, &mut update_noise_rng)
                } else {
                    UpdateNoise::empty()
                };
                bundle
                    .update_reward_critics(&batch, cfg.gamma, &noise)
                    .map_err(|e| fill_fault(e, total_steps, episodes))?;
                bundle
                    .update_actor(&batch, &noise)
                    .map_err(|e| fill_fault(e, total_steps, episodes))?;
                if algo == AlgoKind::Sorl {
                    let sbatch = mixed_batch(
                        &d,
                        &d_safe,
                        cfg.batch_size,
                        cfg.safe_mix,
                        &mut safety_batch_rng,
                    );
                    let snoise = if act_dim > 0 {
                        UpdateNoise::sample(cfg.batch_size, act_dim, &mut safety_noise_rng)
                    } else {
                        UpdateNoise::empty()
                    };
                    bundle
                        .update_safety_critics(&sbatch, cfg.gamma_safe, &snoise)
                        .map_err(|e| fill_fault(e, total_steps, episodes))?;
                }
                bundle.soft_update_targets();
            }
        }

        ep_return_raw += out.reward;
        ep_return_disc += ep_discount * out.reward;
        ep_discount *= cfg.gamma;
        ep_len += 1;
        if out.safety_signal {
            ep_violations += 1;
        }
        state = out.next_state;

        if out.done || out.truncated {
            let violated = ep_violations > 0;
            cumulative_violations += ep_violations as u64;
            if algo == AlgoKind::Lagrangian {
                let step = cfg.dual_lr * (ep_violations as f64 - cfg.constraint_threshold);
                mu_dual = (mu_dual + step).max(0.0);
            }
            records.push(LogRecord::Episode(EpisodeRecord {
                episode: episodes,
                algo: algo.name().to_string(),
                seed,
                undiscounted_return: ep_return_raw,
                discounted_return: ep_return_disc,
                episode_length: ep_len,
                violated,
                cumulative_violations,
                total_steps,
                lambda: if algo == AlgoKind::Sorl { shaping.lambda } else { 0.0 },
                penalty_c: if algo == AlgoKind::Lagrangian { 0.0 } else { shaping.penalty_c },
                delta_achieved: if algo == AlgoKind::Sorl { shaping.delta_achieved } else { 0.0 },
                delta_attainable: if algo == AlgoKind::Sorl {
                    shaping.delta_attainable
                } else {
                    true
                },
                mu_dual,
                r_min_emp: tracker.r_min(),
                r_max_emp: tracker.r_max(),
                wall_clock_s: start.elapsed().as_secs_f64(),
            }));
            if violated && cfg.eval_on_violation {
                let mut eval_env = env.clone();
                let (eval_return, eval_rate) =
                    evaluate(&bundle, &mut eval_env, cfg.eval_episodes, seed);
                records.push(LogRecord::ViolationEval(ViolationEvalRecord {
                    total_steps,
                    episode: episodes,
                    cumulative_violations,
                    eval_return,
                    eval_violation_rate: eval_rate,
                }));
            }
            episodes += 1;
            state = env.reset();
            ep_return_raw = 0.0;
            ep_return_disc = 0.0;
            ep_discount = 1.0;
            ep_len = 0;
            ep_violations = 0;
        }
    }
    Ok(())
    })();

    // Persist the networks even when the run faulted, so the state that
    // produced the fault can be inspected.
    if let Some(path) = checkpoint_path {
        let saved = save_checkpoint(&bundle, path);
        if loop_result.is_ok() {
            saved?;
        }
    }
    loop_result?;
    Ok(TrainOutput { bundle, records, episodes, total_steps })
}
