//! Shared MDP vocabulary: states are flat `f64` vectors, actions are either a
//! discrete index or a bounded continuous vector, and every transition carries
//! both the raw environment reward and the shaped reward that was actually
//! stored for training.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Action taken in an environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Action {
    pub fn as_discrete(&self) -> usize {
        match self {
            Action::Discrete(i) => *i,
            Action::Continuous(_) => panic!("expected a discrete action"),
        }
    }

    pub fn as_continuous(&self) -> &[f64] {
        match self {
            Action::Continuous(v) => v,
            Action::Discrete(_) => panic!("expected a continuous action"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ActionSpace {
    Discrete(usize),
    /// Symmetric box `[-bound, bound]^dim`.
    Continuous { dim: usize, bound: f64 },
}

impl ActionSpace {
    pub fn n_discrete(&self) -> usize {
        match self {
            ActionSpace::Discrete(n) => *n,
            ActionSpace::Continuous { .. } => panic!("continuous action space"),
        }
    }
}

/// Discount factors, shaping strength and penalty bookkeeping shared by the
/// shaping, tuning and verification layers.
///
/// `lambda` scales how hard estimated failure probability bends the reward;
/// `penalty_c` is the terminal violation penalty; `r_min_emp`/`r_max_emp`
/// track the empirical reward range the penalty bound was derived from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyParams {
    pub gamma: f64,
    pub gamma_safe: f64,
    pub horizon_h_star: u32,
    pub lambda: f64,
    pub penalty_c: f64,
    pub r_min_emp: f64,
    pub r_max_emp: f64,
}

impl SafetyParams {
    /// Checks every structural invariant. Call after construction or mutation;
    /// the hot shaping path assumes these hold.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("gamma", self.gamma), ("gamma_safe", self.gamma_safe)] {
            if !(0.0..1.0).contains(&v) || !v.is_finite() {
                return Err(CoreError::InvalidParameter(format!(
                    "{name} must lie in [0, 1), got {v}"
                )));
            }
        }
        if self.horizon_h_star < 1 {
            return Err(CoreError::InvalidParameter(
                "horizon_h_star must be at least 1".into(),
            ));
        }
        if !(self.lambda >= 0.0) {
            return Err(CoreError::InvalidParameter(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        if !(self.r_min_emp < 0.0 && self.r_max_emp > 0.0) {
            return Err(CoreError::InvalidParameter(format!(
                "empirical reward range must straddle zero, got [{}, {}]",
                self.r_min_emp, self.r_max_emp
            )));
        }
        if !self.penalty_c.is_finite() {
            return Err(CoreError::InvalidParameter("penalty_c must be finite".into()));
        }
        Ok(())
    }
}

/// One stored environment step.
///
/// `reward_shaped` holds the shaping as of collection time; learners whose
/// shaping weight moves during training refresh it when the transition is
/// replayed, so the stored value is only a snapshot.
/// `safety_signal` reports whether the successor state is a violation; when it
/// is set the episode is over and the shaped reward is the penalty `-C`.
/// `truncated` marks a time-limit stop, which is *not* a violation and keeps
/// bootstrapping through the final state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Action,
    pub reward_raw: f64,
    pub reward_shaped: f64,
    pub safety_signal: bool,
    pub next_state: Vec<f64>,
    pub done: bool,
    pub truncated: bool,
}

/// What `Env::step` hands back.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub safety_signal: bool,
    /// Terminal by the environment's own rules (goal or violation).
    pub done: bool,
    /// Stopped by the episode cap. Mutually exclusive with `done`.
    pub truncated: bool,
}

/// A resettable, steppable environment with deterministic safety labels and
/// bounded rewards. `horizon_h_star` is the declared irrecoverability
/// horizon: once a state admits no violation-avoiding action sequence, a
/// violation occurs within that many steps no matter what the agent does.
pub trait Env {
    fn reset(&mut self) -> Vec<f64>;
    fn step(&mut self, action: &Action) -> StepOutcome;
    fn state_dim(&self) -> usize;
    fn action_space(&self) -> ActionSpace;
    fn horizon_h_star(&self) -> u32;
    fn episode_cap(&self) -> u32;
    fn name(&self) -> &'static str;
    /// Violation predicate on raw state vectors.
    fn safety_signal(&self, state: &[f64]) -> bool;
}

/// Discounted return of a reward sequence; empty sequences return 0.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    let mut acc = 0.0;
    for &r in rewards.iter().rev() {
        acc = r + gamma * acc;
    }
    acc
}
