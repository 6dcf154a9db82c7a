//! Exact dynamic programming on enumerable MDPs: safety critics, shaped
//! optimal values, irrecoverability labeling, and machine checks of the
//! two shaping guarantees (the critic floor along doomed trajectories and
//! safe-action dominance under a positive margin).
//!
//! Terminal states are stored as absorbing self-loops with zero raw reward.
//! An unsafe absorbing state therefore keeps paying the shaped penalty on
//! every virtual step, which is exactly the infinite penalty tail the
//! closed-form unsafe-return bound assumes.

use crate::error::{CoreError, Result};
use crate::mdp::SafetyParams;
use crate::shaping::{shape_reward, DEFAULT_EPSILON_CLAMP};
use crate::tuning::{delta_margin, ConditionInputs};

const VI_RESIDUAL: f64 = 1e-12;
const VI_MAX_SWEEPS: usize = 10_000_000;
const ALTERNATION_TOL: f64 = 1e-9;
const ALTERNATION_MAX: usize = 1_000;
const TRAJECTORY_CAP: usize = 1_000_000;

/// Finite MDP with exact tables. `transitions[s][a]` lists `(successor,
/// probability)` pairs; rows must sum to 1. Unsafe states are terminal and
/// absorbing (self-loop, zero raw reward), as are goal states.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMDP {
    pub n_states: usize,
    pub n_actions: usize,
    pub transitions: Vec<Vec<Vec<(usize, f64)>>>,
    pub reward: Vec<Vec<f64>>,
    pub unsafe_state: Vec<bool>,
    pub terminal: Vec<bool>,
    pub h_star: u32,
    pub start_state: usize,
    /// Feature encoding of each state as the paired environment emits it.
    pub features: Vec<Vec<f64>>,
}

impl TabularMDP {
    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 || self.n_actions == 0 {
            return Err(CoreError::InvalidParameter(
                "tabular MDP needs at least one state and one action".into(),
            ));
        }
        let shape_ok = self.transitions.len() == self.n_states
            && self.reward.len() == self.n_states
            && self.unsafe_state.len() == self.n_states
            && self.terminal.len() == self.n_states
            && self.features.len() == self.n_states
            && self.start_state < self.n_states;
        if !shape_ok {
            return Err(CoreError::InvalidParameter("tabular MDP table shapes disagree".into()));
        }
        for s in 0..self.n_states {
            if self.transitions[s].len() != self.n_actions || self.reward[s].len() != self.n_actions
            {
                return Err(CoreError::InvalidParameter(format!(
                    "state {s} has a malformed action row"
                )));
            }
            if self.unsafe_state[s] && !self.terminal[s] {
                return Err(CoreError::ContractViolation(format!(
                    "unsafe state {s} must be terminal"
                )));
            }
            for a in 0..self.n_actions {
                let row = &self.transitions[s][a];
                if row.is_empty() {
                    return Err(CoreError::InvalidParameter(format!(
                        "empty transition row at ({s},{a})"
                    )));
                }
                let mut total = 0.0;
                for &(succ, p) in row {
                    if succ >= self.n_states || !(p > 0.0) {
                        return Err(CoreError::InvalidParameter(format!(
                            "bad transition entry at ({s},{a}): ({succ},{p})"
                        )));
                    }
                    total += p;
                }
                if (total - 1.0).abs() > 1e-12 {
                    return Err(CoreError::ContractViolation(format!(
                        "transition row ({s},{a}) sums to {total}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Raw reward range over the whole table, widened to straddle zero by
    /// the same epsilon clamp the online range tracker applies.
    pub fn clamped_reward_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for row in &self.reward {
            for &r in row {
                lo = lo.min(r);
                hi = hi.max(r);
            }
        }
        (lo.min(-DEFAULT_EPSILON_CLAMP), hi.max(DEFAULT_EPSILON_CLAMP))
    }
}

/// Per-state safety classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateLabel {
    /// Some action sequence avoids violation forever.
    Safe,
    /// Not yet violating, but every action sequence violates.
    Irrecoverable,
    /// Currently violating.
    Unsafe,
}

#[derive(Debug, Clone)]
pub struct IrrecoverableLabeling {
    pub labels: Vec<StateLabel>,
    /// Worst-case steps until violation, defined for irrecoverable states
    /// (unsafe states carry 0).
    pub steps_to_violation: Vec<Option<u32>>,
    /// Max over irrecoverable states; 0 when none exist.
    pub max_steps: u32,
}

impl IrrecoverableLabeling {
    pub fn count(&self, label: StateLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

/// Labels every state and verifies the declared horizon: each irrecoverable
/// state must violate within `h_star` steps under every policy. The safe set
/// is the greatest fixed point of "some action keeps all successors safe".
pub fn label_irrecoverable(mdp: &TabularMDP) -> Result<IrrecoverableLabeling> {
    mdp.validate()?;
    let n = mdp.n_states;
    let mut escapes = vec![false; n];
    for s in 0..n {
        escapes[s] = !mdp.unsafe_state[s];
    }
    loop {
        let mut changed = false;
        for s in 0..n {
            if !escapes[s] {
                continue;
            }
            let has_escape_action = (0..mdp.n_actions).any(|a| {
                mdp.transitions[s][a].iter().all(|&(succ, _)| escapes[succ])
            });
            if !has_escape_action {
                escapes[s] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let labels: Vec<StateLabel> = (0..n)
        .map(|s| {
            if mdp.unsafe_state[s] {
                StateLabel::Unsafe
            } else if escapes[s] {
                StateLabel::Safe
            } else {
                StateLabel::Irrecoverable
            }
        })
        .collect();

    // Worst-case hitting time of the unsafe set inside the doomed region:
    // every successor of a doomed state is doomed or unsafe, and doomed
    // cycles are impossible (a cycle would be an escape), so relaxation
    // settles within n sweeps.
    let mut steps: Vec<Option<u32>> = (0..n)
        .map(|s| if mdp.unsafe_state[s] { Some(0) } else { None })
        .collect();
    for _ in 0..n {
        let mut changed = false;
        for s in 0..n {
            if labels[s] != StateLabel::Irrecoverable {
                continue;
            }
            let mut worst: Option<u32> = Some(0);
            'actions: for a in 0..mdp.n_actions {
                for &(succ, _) in &mdp.transitions[s][a] {
                    match steps[succ] {
                        Some(t) => {
                            worst = worst.map(|w| w.max(t + 1));
                        }
                        None => {
                            worst = None;
                            break 'actions;
                        }
                    }
                }
            }
            if worst.is_some() && steps[s] != worst {
                steps[s] = worst;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut max_steps = 0;
    for s in 0..n {
        if labels[s] == StateLabel::Irrecoverable {
            match steps[s] {
                Some(t) if t <= mdp.h_star => max_steps = max_steps.max(t),
                Some(t) => {
                    return Err(CoreError::ContractViolation(format!(
                        "state {s} is irrecoverable but takes {t} steps to violate, \
                         beyond the declared horizon {}",
                        mdp.h_star
                    )))
                }
                None => {
                    return Err(CoreError::ContractViolation(format!(
                        "state {s} is irrecoverable but its violation time never settled"
                    )))
                }
            }
        }
    }

    Ok(IrrecoverableLabeling { labels, steps_to_violation: steps, max_steps })
}

/// Uniform-random policy table.
pub fn uniform_policy(mdp: &TabularMDP) -> Vec<Vec<f64>> {
    vec![vec![1.0 / mdp.n_actions as f64; mdp.n_actions]; mdp.n_states]
}

/// Deterministic greedy policy from a Q table; ties break to the lowest
/// action index so repeated runs agree.
pub fn greedy_policy(q: &[Vec<f64>]) -> Vec<Vec<f64>> {
    q.iter()
        .map(|row| {
            let mut best = 0;
            for (a, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = a;
                }
            }
            let mut p = vec![0.0; row.len()];
            p[best] = 1.0;
            p
        })
        .collect()
}

/// Exact discounted violation-probability critic of `policy`:
///   V(s) = c(s) + (1 - c(s)) * gamma_safe * E_pi E_P V(s')
///   Q(s,a) = c(s) + (1 - c(s)) * gamma_safe * E_P V(s')
/// Iterated to a 1e-12 sup-norm residual. Values always land in [0,1].
pub fn tabular_safety_critic(
    mdp: &TabularMDP,
    policy: &[Vec<f64>],
    gamma_safe: f64,
) -> Result<Vec<Vec<f64>>> {
    if !(gamma_safe > 0.0 && gamma_safe < 1.0) {
        return Err(CoreError::InvalidParameter(format!(
            "gamma_safe must be in (0,1), got {gamma_safe}"
        )));
    }
    if policy.len() != mdp.n_states {
        return Err(CoreError::InvalidParameter("policy table shape mismatch".into()));
    }
    let n = mdp.n_states;
    let mut v = vec![0.0; n];
    for _ in 0..VI_MAX_SWEEPS {
        let mut next = vec![0.0; n];
        let mut residual = 0.0_f64;
        for s in 0..n {
            next[s] = if mdp.unsafe_state[s] {
                1.0
            } else {
                let mut exp = 0.0;
                for a in 0..mdp.n_actions {
                    if policy[s][a] == 0.0 {
                        continue;
                    }
                    let mut succ_v = 0.0;
                    for &(succ, p) in &mdp.transitions[s][a] {
                        succ_v += p * v[succ];
                    }
                    exp += policy[s][a] * succ_v;
                }
                gamma_safe * exp
            };
            residual = residual.max((next[s] - v[s]).abs());
        }
        v = next;
        if residual <= VI_RESIDUAL {
            let q = (0..n)
                .map(|s| {
                    (0..mdp.n_actions)
                        .map(|a| {
                            if mdp.unsafe_state[s] {
                                1.0
                            } else {
                                let mut succ_v = 0.0;
                                for &(succ, p) in &mdp.transitions[s][a] {
                                    succ_v += p * v[succ];
                                }
                                gamma_safe * succ_v
                            }
                        })
                        .collect()
                })
                .collect();
            return Ok(q);
        }
    }
    Err(CoreError::Domain("safety-critic iteration failed to converge".into()))
}

/// Optimal Q of the shaped MDP: value iteration where each transition's
/// reward is `shape_reward(r(s,a), q_safe[s][a], params, successor-unsafe)`,
/// run to a 1e-12 residual. Also returns the per-sweep residual history.
pub fn exact_shaped_q_with_residuals(
    mdp: &TabularMDP,
    params: &SafetyParams,
    q_safe: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    if q_safe.len() != mdp.n_states {
        return Err(CoreError::InvalidParameter("q_safe table shape mismatch".into()));
    }
    // Shaped rewards are fixed across sweeps; precompute per transition.
    let mut shaped: Vec<Vec<Vec<f64>>> = Vec::with_capacity(mdp.n_states);
    for s in 0..mdp.n_states {
        let mut per_action = Vec::with_capacity(mdp.n_actions);
        for a in 0..mdp.n_actions {
            let mut per_succ = Vec::with_capacity(mdp.transitions[s][a].len());
            for &(succ, _) in &mdp.transitions[s][a] {
                per_succ.push(shape_reward(
                    mdp.reward[s][a],
                    q_safe[s][a],
                    params,
                    mdp.unsafe_state[succ],
                    false,
                )?);
            }
            per_action.push(per_succ);
        }
        shaped.push(per_action);
    }

    let n = mdp.n_states;
    let gamma = params.gamma;
    let mut q = vec![vec![0.0; mdp.n_actions]; n];
    let mut residuals = Vec::new();
    for _ in 0..VI_MAX_SWEEPS {
        let mut next = vec![vec![0.0; mdp.n_actions]; n];
        let mut residual = 0.0_f64;
        for s in 0..n {
            for a in 0..mdp.n_actions {
                let mut total = 0.0;
                for (k, &(succ, p)) in mdp.transitions[s][a].iter().enumerate() {
                    let v_succ = q[succ].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    total += p * (shaped[s][a][k] + gamma * v_succ);
                }
                next[s][a] = total;
                residual = residual.max((next[s][a] - q[s][a]).abs());
            }
        }
        q = next;
        residuals.push(residual);
        if residual <= VI_RESIDUAL {
            return Ok((q, residuals));
        }
    }
    Err(CoreError::Domain("shaped value iteration failed to converge".into()))
}

pub fn exact_shaped_q(
    mdp: &TabularMDP,
    params: &SafetyParams,
    q_safe: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    exact_shaped_q_with_residuals(mdp, params, q_safe).map(|(q, _)| q)
}

/// Greedy-policy / safety-critic alternation to joint convergence: compute
/// the exact safety critic of the current policy, re-solve the shaped MDP,
/// re-derive the greedy policy, and repeat until successive Q tables agree
/// to 1e-9. Returns (q_hat, q_safe, policy, sweeps).
pub fn solve_shaped_fixed_point(
    mdp: &TabularMDP,
    params: &SafetyParams,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>, usize)> {
    let mut policy = uniform_policy(mdp);
    let mut prev_q: Option<Vec<Vec<f64>>> = None;
    for sweep in 1..=ALTERNATION_MAX {
        let q_safe = tabular_safety_critic(mdp, &policy, params.gamma_safe)?;
        let q_hat = exact_shaped_q(mdp, params, &q_safe)?;
        let next_policy = greedy_policy(&q_hat);
        if let Some(prev) = &prev_q {
            let mut dist = 0.0_f64;
            for s in 0..mdp.n_states {
                for a in 0..mdp.n_actions {
                    dist = dist.max((q_hat[s][a] - prev[s][a]).abs());
                }
            }
            if dist <= ALTERNATION_TOL {
                return Ok((q_hat, q_safe, next_policy, sweep));
            }
        }
        prev_q = Some(q_hat);
        policy = next_policy;
    }
    Err(CoreError::Domain(
        "shaped fixed-point alternation failed to settle".into(),
    ))
}

/// One doomed trajectory that broke the critic floor.
#[derive(Debug, Clone)]
pub struct CriticFloorFailure {
    pub trajectory: Vec<(usize, usize)>,
    pub step: usize,
    pub q_safe: f64,
    pub floor: f64,
}

#[derive(Debug, Clone)]
pub struct CriticFloorReport {
    pub trajectories: usize,
    /// Smallest Q_safe - floor over every checked step; tight fixtures
    /// drive this to zero.
    pub min_slack: f64,
    /// Steps where the floor is met with equality (within 1e-12).
    pub equality_cases: usize,
    pub holds: bool,
    pub failure: Option<CriticFloorFailure>,
}

/// Enumerates every action sequence from every irrecoverable state (their
/// lengths are bounded by the declared horizon, which `label_irrecoverable`
/// has already verified) and checks the exact safety critic along each:
/// Q_safe(s_t, a_t) >= gamma_safe^(h_star - t). Deterministic MDPs only;
/// the enumeration cap guards desk-scale fixtures.
pub fn check_critic_floor(mdp: &TabularMDP, gamma_safe: f64) -> Result<CriticFloorReport> {
    if !(gamma_safe > 0.0 && gamma_safe < 1.0) {
        return Err(CoreError::InvalidParameter(format!(
            "gamma_safe must be in (0,1), got {gamma_safe}"
        )));
    }
    let labeling = label_irrecoverable(mdp)?;
    let mut report = CriticFloorReport {
        trajectories: 0,
        min_slack: f64::INFINITY,
        equality_cases: 0,
        holds: true,
        failure: None,
    };

    // Depth-first over action choices; deterministic rows keep each prefix
    // a single path, so the critic recursion along it is exact.
    fn descend(
        mdp: &TabularMDP,
        gamma_safe: f64,
        path: &mut Vec<(usize, usize)>,
        state: usize,
        report: &mut CriticFloorReport,
    ) -> Result<()> {
        if mdp.unsafe_state[state] {
            report.trajectories += 1;
            if report.trajectories > TRAJECTORY_CAP {
                return Err(CoreError::Domain(
                    "doomed-trajectory enumeration exceeded its cap".into(),
                ));
            }
            // Backward critic recursion: V(unsafe) = 1, Q = gamma_safe * V(next).
            let mut v = 1.0;
            let mut q_values = vec![0.0; path.len()];
            for (idx, &(s, _a)) in path.iter().enumerate().rev() {
                debug_assert!(!mdp.unsafe_state[s]);
                let q = gamma_safe * v;
                q_values[idx] = q;
                v = q;
            }
            for (t, &q) in q_values.iter().enumerate() {
                let floor = gamma_safe.powi(mdp.h_star as i32 - t as i32);
                let slack = q - floor;
                if slack < report.min_slack {
                    report.min_slack = slack;
                }
                if slack.abs() <= 1e-12 {
                    report.equality_cases += 1;
                }
                if slack < -1e-12 && report.holds {
                    report.holds = false;
                    report.failure = Some(CriticFloorFailure {
                        trajectory: path.clone(),
                        step: t,
                        q_safe: q,
                        floor,
                    });
                }
            }
            return Ok(());
        }
        if path.len() as u32 >= mdp.h_star {
            return Err(CoreError::ContractViolation(
                "doomed trajectory outlived the declared horizon".into(),
            ));
        }
        for a in 0..mdp.n_actions {
            let row = &mdp.transitions[state][a];
            if row.len() != 1 {
                return Err(CoreError::InvalidParameter(
                    "trajectory enumeration requires deterministic transitions".into(),
                ));
            }
            let (succ, _) = row[0];
            path.push((state, a));
            descend(mdp, gamma_safe, path, succ, report)?;
            path.pop();
        }
        Ok(())
    }

    for s in 0..mdp.n_states {
        if labeling.labels[s] == StateLabel::Irrecoverable {
            let mut path = Vec::new();
            descend(mdp, gamma_safe, &mut path, s, &mut report)?;
        }
    }
    if report.trajectories == 0 {
        report.min_slack = 0.0;
    }
    Ok(report)
}

/// One ordered action pair that broke safe-action dominance.
#[derive(Debug, Clone, Copy)]
pub struct SafeDominanceFailure {
    pub state: usize,
    pub safe_action: usize,
    pub unsafe_action: usize,
    pub gap: f64,
}

#[derive(Debug, Clone)]
pub struct SafeDominanceReport {
    /// Margin of the condition at the exact table reward range.
    pub delta: f64,
    pub lambda: f64,
    /// Safe states where both a safe-leading and an unsafe-leading action
    /// exist, i.e. where the dominance claim is non-vacuous.
    pub states_compared: usize,
    /// States outside the claim: irrecoverable or already unsafe.
    pub states_skipped: usize,
    /// min over compared states of (worst safe action - best unsafe action).
    pub tightest_margin: Option<f64>,
    pub alternation_sweeps: usize,
    pub holds: bool,
    pub failure: Option<SafeDominanceFailure>,
}

/// Verifies safe-action dominance at the shaped optimum: at every safe state
/// offering both kinds of action, the worst safe-leading action must beat
/// the best unsafe-leading action. "Unsafe-leading" means some successor is
/// unsafe or irrecoverable. The safety critic is the exact critic of the
/// greedy policy, alternated with the shaped solve to joint convergence.
///
/// The margin `delta` is evaluated at the table's exact reward range
/// (widened to straddle zero the same way the online tracker does) and
/// reported; callers asserting the guarantee should require it positive.
pub fn check_safe_dominance(mdp: &TabularMDP, params: &SafetyParams) -> Result<SafeDominanceReport> {
    let labeling = label_irrecoverable(mdp)?;
    let (r_min, r_max) = mdp.clamped_reward_range();
    let mut cond = ConditionInputs::from_params(params);
    cond.r_min = r_min;
    cond.r_max = r_max;
    let delta = delta_margin(&cond)?;

    let (q_hat, _q_safe, _policy, sweeps) = solve_shaped_fixed_point(mdp, params)?;

    let mut report = SafeDominanceReport {
        delta,
        lambda: params.lambda,
        states_compared: 0,
        states_skipped: 0,
        tightest_margin: None,
        alternation_sweeps: sweeps,
        holds: true,
        failure: None,
    };

    for s in 0..mdp.n_states {
        if labeling.labels[s] != StateLabel::Safe {
            report.states_skipped += 1;
            continue;
        }
        let mut worst_safe: Option<(usize, f64)> = None;
        let mut best_unsafe: Option<(usize, f64)> = None;
        for a in 0..mdp.n_actions {
            let leads_to_doom = mdp.transitions[s][a]
                .iter()
                .any(|&(succ, _)| labeling.labels[succ] != StateLabel::Safe);
            let v = q_hat[s][a];
            if leads_to_doom {
                if best_unsafe.map_or(true, |(_, b)| v > b) {
                    best_unsafe = Some((a, v));
                }
            } else if worst_safe.map_or(true, |(_, w)| v < w) {
                worst_safe = Some((a, v));
            }
        }
        if let (Some((sa, sv)), Some((ua, uv))) = (worst_safe, best_unsafe) {
            report.states_compared += 1;
            let gap = sv - uv;
            if report.tightest_margin.map_or(true, |m| gap < m) {
                report.tightest_margin = Some(gap);
            }
            if gap <= 0.0 && report.holds {
                report.holds = false;
                report.failure = Some(SafeDominanceFailure {
                    state: s,
                    safe_action: sa,
                    unsafe_action: ua,
                    gap,
                });
            }
        }
    }
    Ok(report)
}
