//! Actor and critic networks behind the training loop: a stochastic actor,
//! twin reward critics, and twin safety critics with sigmoid heads, each
//! with a target copy and its own Adam state.
//!
//! Every update is deterministic given the batch and an explicit noise
//! block, so gradients can be audited against finite differences and runs
//! replayed bit for bit. Discrete actors use exact expectations over the
//! action set; continuous actors use one reparameterized tanh-Gaussian
//! sample per item.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, FaultSnapshot, Result};
use crate::mdp::{Action, ActionSpace, Transition};
use crate::nn::{Adam, Grads, Mlp, Squash};

const LOG_STD_MIN: f64 = -20.0;
const LOG_STD_MAX: f64 = 2.0;
/// Keeps the tanh-Gaussian log-density finite at saturation.
const SQUASH_EPS: f64 = 1e-6;
/// Output bias of fresh safety critics: sigmoid(-3) ~ 0.047, i.e. a new
/// critic assumes states are safe until violations teach it otherwise.
const SAFETY_OPTIMISM_BIAS: f64 = -3.0;

/// One standard normal draw via the Box-Muller transform.
pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Frozen per-item noise for one update call. Discrete updates take the
/// empty block; continuous updates need one standard normal vector per
/// batch item for the current state and one for the successor state.
#[derive(Debug, Clone, Default)]
pub struct UpdateNoise {
    pub curr_eps: Vec<Vec<f64>>,
    pub next_eps: Vec<Vec<f64>>,
}

impl UpdateNoise {
    pub fn empty() -> Self {
        UpdateNoise::default()
    }

    pub fn sample(batch: usize, act_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let draw = |rng: &mut ChaCha8Rng| {
            (0..batch)
                .map(|_| (0..act_dim).map(|_| standard_normal(rng)).collect())
                .collect()
        };
        UpdateNoise { curr_eps: draw(rng), next_eps: draw(rng) }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BundleConfig {
    pub state_dim: usize,
    pub action_space: ActionSpace,
    pub hidden: usize,
    pub lr: f64,
    /// Fixed entropy temperature.
    pub alpha: f64,
    /// Soft-update coefficient for all target networks.
    pub rho: f64,
}

impl BundleConfig {
    pub fn new(state_dim: usize, action_space: ActionSpace) -> Self {
        BundleConfig { state_dim, action_space, hidden: 64, lr: 3e-4, alpha: 0.1, rho: 0.005 }
    }

    fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.hidden == 0 {
            return Err(CoreError::InvalidParameter("zero network width".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(CoreError::InvalidParameter(format!("bad lr {}", self.lr)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(CoreError::InvalidParameter(format!("bad alpha {}", self.alpha)));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(CoreError::InvalidParameter(format!("bad rho {}", self.rho)));
        }
        match self.action_space {
            ActionSpace::Discrete(n) if n < 1 => {
                Err(CoreError::InvalidParameter("empty action set".into()))
            }
            ActionSpace::Continuous { dim, bound } if dim < 1 || !(bound > 0.0) => {
                Err(CoreError::InvalidParameter("bad continuous action space".into()))
            }
            _ => Ok(()),
        }
    }
}

/// The full set of networks and optimizers owned by one training run.
#[derive(Debug, Clone)]
pub struct ApproximatorBundle {
    pub cfg: BundleConfig,
    pub actor: Mlp,
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    pub qs1: Mlp,
    pub qs2: Mlp,
    pub qs1_target: Mlp,
    pub qs2_target: Mlp,
    opt_actor: Adam,
    opt_q1: Adam,
    opt_q2: Adam,
    opt_qs1: Adam,
    opt_qs2: Adam,
}

fn concat(state: &[f64], action: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(state.len() + action.len());
    v.extend_from_slice(state);
    v.extend_from_slice(action);
    v
}

/// Numerically safe softmax with log-probabilities.
fn softmax_logp(logits: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let lse = m + sum.ln();
    let logp: Vec<f64> = logits.iter().map(|&z| z - lse).collect();
    let p: Vec<f64> = logp.iter().map(|&l| l.exp()).collect();
    (p, logp)
}

/// Recursive-form bootstrap target for the safety critics: current signal
/// plus the discounted successor failure estimate, cut at terminals and
/// clamped into the probability range.
pub(crate) fn safety_target(c: f64, done: bool, gamma_safe: f64, v_next: f64) -> f64 {
    let boot = if done { 0.0 } else { gamma_safe * v_next };
    (c + (1.0 - c) * boot).clamp(0.0, 1.0)
}

/// Outcome of the continuous actor head at one state.
struct TanhGaussian {
    mean: Vec<f64>,
    log_std: Vec<f64>,
    clamped: Vec<bool>,
    u: Vec<f64>,
    tanh_u: Vec<f64>,
    action: Vec<f64>,
    log_prob: f64,
}

impl ApproximatorBundle {
    /// Builds all networks. Draw order is fixed (actor, reward critics,
    /// safety critics) so that learners ignoring the safety critics still
    /// initialize the shared networks identically from the same stream.
    pub fn new(cfg: BundleConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let (actor_out, critic_in, critic_out) = match cfg.action_space {
            ActionSpace::Discrete(n) => (n, cfg.state_dim, n),
            ActionSpace::Continuous { dim, .. } => (2 * dim, cfg.state_dim + dim, 1),
        };
        let h = cfg.hidden;
        let actor = Mlp::new(&[cfg.state_dim, h, h, actor_out], Squash::Linear, rng);
        let q1 = Mlp::new(&[critic_in, h, h, critic_out], Squash::Linear, rng);
        let q2 = Mlp::new(&[critic_in, h, h, critic_out], Squash::Linear, rng);
        let mut qs1 = Mlp::new(&[critic_in, h, h, critic_out], Squash::Sigmoid, rng);
        let mut qs2 = Mlp::new(&[critic_in, h, h, critic_out], Squash::Sigmoid, rng);
        // Fresh safety critics must report "probably safe", not 0.5: the
        // shaping weight multiplies the estimate, and a half-doomed prior on
        // every state poisons all positive rewards collected before the
        // critics converge (they sit frozen in the replay buffer).
        qs1.set_output_bias(SAFETY_OPTIMISM_BIAS);
        qs2.set_output_bias(SAFETY_OPTIMISM_BIAS);
        let lr = cfg.lr;
        Ok(ApproximatorBundle {
            cfg,
            opt_actor: Adam::new(&actor, lr),
            opt_q1: Adam::new(&q1, lr),
            opt_q2: Adam::new(&q2, lr),
            opt_qs1: Adam::new(&qs1, lr),
            opt_qs2: Adam::new(&qs2, lr),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            qs1_target: qs1.clone(),
            qs2_target: qs2.clone(),
            actor,
            q1,
            q2,
            qs1,
            qs2,
        })
    }

    fn act_dim(&self) -> usize {
        match self.cfg.action_space {
            ActionSpace::Discrete(_) => 0,
            ActionSpace::Continuous { dim, .. } => dim,
        }
    }

    fn bound(&self) -> f64 {
        match self.cfg.action_space {
            ActionSpace::Discrete(_) => 1.0,
            ActionSpace::Continuous { bound, .. } => bound,
        }
    }

    fn tanh_gaussian(&self, state: &[f64], eps: &[f64]) -> TanhGaussian {
        let dim = self.act_dim();
        let out = self.actor.forward(state);
        let bound = self.bound();
        let mut g = TanhGaussian {
            mean: out[..dim].to_vec(),
            log_std: Vec::with_capacity(dim),
            clamped: Vec::with_capacity(dim),
            u: Vec::with_capacity(dim),
            tanh_u: Vec::with_capacity(dim),
            action: Vec::with_capacity(dim),
            log_prob: 0.0,
        };
        for i in 0..dim {
            let raw = out[dim + i];
            let ls = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
            g.clamped.push(raw != ls);
            let std = ls.exp();
            let u = g.mean[i] + std * eps[i];
            let t = u.tanh();
            g.log_std.push(ls);
            g.u.push(u);
            g.tanh_u.push(t);
            g.action.push(bound * t);
            g.log_prob += -0.5 * (2.0 * std::f64::consts::PI).ln()
                - ls
                - 0.5 * eps[i] * eps[i]
                - (bound * (1.0 - t * t) + SQUASH_EPS).ln();
        }
        g
    }

    /// Stochastic action for data collection.
    pub fn act(&self, state: &[f64], rng: &mut ChaCha8Rng) -> Action {
        match self.cfg.action_space {
            ActionSpace::Discrete(_) => {
                let (p, _) = softmax_logp(&self.actor.forward(state));
                let draw: f64 = rng.gen();
                let mut acc = 0.0;
                let mut pick = p.len() - 1;
                for (a, &pa) in p.iter().enumerate() {
                    acc += pa;
                    if draw < acc {
                        pick = a;
                        break;
                    }
                }
                Action::Discrete(pick)
            }
            ActionSpace::Continuous { dim, .. } => {
                let eps: Vec<f64> = (0..dim).map(|_| standard_normal(rng)).collect();
                Action::Continuous(self.tanh_gaussian(state, &eps).action)
            }
        }
    }

    /// Deterministic mode-of-policy action for evaluation.
    pub fn act_greedy(&self, state: &[f64]) -> Action {
        match self.cfg.action_space {
            ActionSpace::Discrete(_) => {
                let logits = self.actor.forward(state);
                let mut best = 0;
                for (a, &z) in logits.iter().enumerate() {
                    if z > logits[best] {
                        best = a;
                    }
                }
                Action::Discrete(best)
            }
            ActionSpace::Continuous { dim, bound } => {
                let out = self.actor.forward(state);
                Action::Continuous((0..dim).map(|i| bound * out[i].tanh()).collect())
            }
        }
    }

    /// Failure-probability estimate used for shaping: the more pessimistic
    /// of the two online safety critics, clamped into [0,1].
    pub fn safety_estimate(&self, state: &[f64], action: &Action) -> f64 {
        let (a, b) = match (&self.cfg.action_space, action) {
            (ActionSpace::Discrete(_), Action::Discrete(i)) => {
                (self.qs1.forward(state)[*i], self.qs2.forward(state)[*i])
            }
            (ActionSpace::Continuous { .. }, Action::Continuous(av)) => {
                let x = concat(state, av);
                (self.qs1.forward(&x)[0], self.qs2.forward(&x)[0])
            }
            _ => panic!("action kind does not match the bundle's action space"),
        };
        a.max(b).clamp(0.0, 1.0)
    }

    /// Entropy-regularized bootstrap value of a successor state under the
    /// target reward critics.
    fn next_state_value(&self, next_state: &[f64], eps: &[f64]) -> f64 {
        match self.cfg.action_space {
            ActionSpace::Discrete(_) => {
                let (p, logp) = softmax_logp(&self.actor.forward(next_state));
                let t1 = self.q1_target.forward(next_state);
                let t2 = self.q2_target.forward(next_state);
                p.iter()
                    .enumerate()
                    .map(|(a, &pa)| pa * (t1[a].min(t2[a]) - self.cfg.alpha * logp[a]))
                    .sum()
            }
            ActionSpace::Continuous { .. } => {
                let g = self.tanh_gaussian(next_state, eps);
                let x = concat(next_state, &g.action);
                let q = self.q1_target.forward(&x)[0].min(self.q2_target.forward(&x)[0]);
                q - self.cfg.alpha * g.log_prob
            }
        }
    }

    /// Failure-probability bootstrap of a successor state: expectation (or
    /// one sample) over the actor of the more pessimistic target safety
    /// critic.
    fn next_state_safety(&self, next_state: &[f64], eps: &[f64]) -> f64 {
        match self.cfg.action_space {
            ActionSpace::Discrete(_) => {
                let (p, _) = softmax_logp(&self.actor.forward(next_state));
                let t1 = self.qs1_target.forward(next_state);
                let t2 = self.qs2_target.forward(next_state);
                p.iter().enumerate().map(|(a, &pa)| pa * t1[a].max(t2[a])).sum::<f64>()
            }
            ActionSpace::Continuous { .. } => {
                let g = self.tanh_gaussian(next_state, eps);
                let x = concat(next_state, &g.action);
                self.qs1_target.forward(&x)[0].max(self.qs2_target.forward(&x)[0])
            }
        }
        .clamp(0.0, 1.0)
    }

    fn reward_targets(&self, batch: &[Transition], gamma: f64, noise: &UpdateNoise) -> Vec<f64> {
        batch
            .iter()
            .enumerate()
            .map(|(i, tr)| {
                let boot = if tr.done {
                    0.0
                } else {
                    let eps: &[f64] =
                        noise.next_eps.get(i).map_or(&[], |e| e.as_slice());
                    gamma * self.next_state_value(&tr.next_state, eps)
                };
                tr.reward_shaped + boot
            })
            .collect()
    }

    fn critic_loss_given_targets(
        net: &Mlp,
        space: &ActionSpace,
        batch: &[Transition],
        targets: &[f64],
        mut grads: Option<&mut Grads>,
    ) -> f64 {
        let n = batch.len() as f64;
        let mut loss = 0.0;
        for (tr, &y) in batch.iter().zip(targets) {
            match (space, &tr.action) {
                (ActionSpace::Discrete(_), Action::Discrete(a)) => {
                    let (out, tape) = net.forward_tape(&tr.state);
                    let err = out[*a] - y;
                    loss += 0.5 * err * err / n;
                    if let Some(g) = grads.as_deref_mut() {
                        let mut dl = vec![0.0; out.len()];
                        dl[*a] = err / n;
                        net.backward(&tape, &dl, g);
                    }
                }
                (ActionSpace::Continuous { .. }, Action::Continuous(av)) => {
                    let x = concat(&tr.state, av);
                    let (out, tape) = net.forward_tape(&x);
                    let err = out[0] - y;
                    loss += 0.5 * err * err / n;
                    if let Some(g) = grads.as_deref_mut() {
                        net.backward(&tape, &[err / n], g);
                    }
                }
                _ => panic!("action kind does not match the bundle's action space"),
            }
        }
        loss
    }

    /// One gradient step on both reward critics toward the shared
    /// entropy-regularized bootstrap target. Returns the two losses.
    pub fn update_reward_critics(
        &mut self,
        batch: &[Transition],
        gamma: f64,
        noise: &UpdateNoise,
    ) -> Result<(f64, f64)> {
        let targets = self.reward_targets(batch, gamma, noise);
        let mut g1 = self.q1.zero_grads();
        let mut g2 = self.q2.zero_grads();
        let space = self.cfg.action_space;
        let l1 =
            Self::critic_loss_given_targets(&self.q1, &space, batch, &targets, Some(&mut g1));
        let l2 =
            Self::critic_loss_given_targets(&self.q2, &space, batch, &targets, Some(&mut g2));
        if !(l1.is_finite() && l2.is_finite()) {
            return Err(self.fault(l1.min(l2), f64::NAN, f64::NAN));
        }
        self.opt_q1.step(&mut self.q1, &g1);
        self.opt_q2.step(&mut self.q2, &g2);
        Ok((l1, l2))
    }

    /// Loss-only evaluation of one reward critic (1 or 2) for gradient
    /// audits; identical math to the update path, no step taken.
    pub fn reward_critic_loss(
        &self,
        which: usize,
        batch: &[Transition],
        gamma: f64,
        noise: &UpdateNoise,
    ) -> f64 {
        let targets = self.reward_targets(batch, gamma, noise);
        let net = if which == 1 { &self.q1 } else { &self.q2 };
        Self::critic_loss_given_targets(net, &self.cfg.action_space, batch, &targets, None)
    }

    fn actor_loss_and_grads(
        &self,
        batch: &[Transition],
        noise: &UpdateNoise,
        mut grads: Option<&mut Grads>,
    ) -> f64 {
        let n = batch.len() as f64;
        let alpha = self.cfg.alpha;
        let mut loss = 0.0;
        for (i, tr) in batch.iter().enumerate() {
            match self.cfg.action_space {
                ActionSpace::Discrete(_) => {
                    let (logits, tape) = self.actor.forward_tape(&tr.state);
                    let (p, logp) = softmax_logp(&logits);
                    let q1 = self.q1.forward(&tr.state);
                    let q2 = self.q2.forward(&tr.state);
                    let g_a: Vec<f64> = (0..p.len())
                        .map(|a| alpha * logp[a] - q1[a].min(q2[a]))
                        .collect();
                    let f: f64 = p.iter().zip(&g_a).map(|(&pa, &ga)| pa * ga).sum();
                    loss += f / n;
                    if let Some(g) = grads.as_deref_mut() {
                        let dl: Vec<f64> =
                            (0..p.len()).map(|b| p[b] * (g_a[b] - f) / n).collect();
                        self.actor.backward(&tape, &dl, g);
                    }
                }
                ActionSpace::Continuous { dim, bound } => {
                    let eps = &noise.curr_eps[i];
                    let (out, tape) = self.actor.forward_tape(&tr.state);
                    // Recompute the head locally so the tape lines up.
                    let mut u = vec![0.0; dim];
                    let mut t = vec![0.0; dim];
                    let mut ls = vec![0.0; dim];
                    let mut clamped = vec![false; dim];
                    let mut logp = 0.0;
                    for k in 0..dim {
                        ls[k] = out[dim + k].clamp(LOG_STD_MIN, LOG_STD_MAX);
                        clamped[k] = out[dim + k] != ls[k];
                        u[k] = out[k] + ls[k].exp() * eps[k];
                        t[k] = u[k].tanh();
                        logp += -0.5 * (2.0 * std::f64::consts::PI).ln()
                            - ls[k]
                            - 0.5 * eps[k] * eps[k]
                            - (bound * (1.0 - t[k] * t[k]) + SQUASH_EPS).ln();
                    }
                    let action: Vec<f64> = t.iter().map(|&tk| bound * tk).collect();
                    let x = concat(&tr.state, &action);
                    let (o1, tape1) = self.q1.forward_tape(&x);
                    let (o2, tape2) = self.q2.forward_tape(&x);
                    let qmin = o1[0].min(o2[0]);
                    loss += (alpha * logp - qmin) / n;
                    if let Some(g) = grads.as_deref_mut() {
                        // d loss / d action via the smaller critic.
                        let (net, tp) = if o1[0] <= o2[0] {
                            (&self.q1, &tape1)
                        } else {
                            (&self.q2, &tape2)
                        };
                        let mut sink = net.zero_grads();
                        let dx = net.backward(tp, &[-1.0 / n], &mut sink);
                        let dq_da = &dx[tr.state.len()..];
                        let mut dl = vec![0.0; 2 * dim];
                        for k in 0..dim {
                            let sech2 = 1.0 - t[k] * t[k];
                            let dlogp_du = 2.0 * bound * t[k] * sech2
                                / (bound * sech2 + SQUASH_EPS);
                            let du = (alpha * dlogp_du / n) + dq_da[k] * bound * sech2;
                            dl[k] = du;
                            dl[dim + k] = if clamped[k] {
                                0.0
                            } else {
                                du * ls[k].exp() * eps[k] - alpha / n
                            };
                        }
                        self.actor.backward(&tape, &dl, g);
                    }
                }
            }
        }
        loss
    }

    /// One gradient step on the actor toward entropy-regularized value
    /// ascent under the online reward critics.
    pub fn update_actor(&mut self, batch: &[Transition], noise: &UpdateNoise) -> Result<f64> {
        let mut grads = self.actor.zero_grads();
        let loss = self.actor_loss_and_grads(batch, noise, Some(&mut grads));
        if !loss.is_finite() {
            return Err(self.fault(f64::NAN, f64::NAN, loss));
        }
        self.opt_actor.step(&mut self.actor, &grads);
        Ok(loss)
    }

    /// Loss-only actor objective for gradient audits.
    pub fn actor_loss(&self, batch: &[Transition], noise: &UpdateNoise) -> f64 {
        self.actor_loss_and_grads(batch, noise, None)
    }

    fn safety_targets(
        &self,
        batch: &[Transition],
        gamma_safe: f64,
        noise: &UpdateNoise,
    ) -> Vec<f64> {
        batch
            .iter()
            .enumerate()
            .map(|(i, tr)| {
                let c = if tr.safety_signal { 1.0 } else { 0.0 };
                let eps: &[f64] = noise.next_eps.get(i).map_or(&[], |e| e.as_slice());
                let v = if tr.done { 0.0 } else { self.next_state_safety(&tr.next_state, eps) };
                safety_target(c, tr.done, gamma_safe, v)
            })
            .collect()
    }

    /// One gradient step on both safety critics toward the recursive
    /// failure-probability target. Returns the two losses.
    pub fn update_safety_critics(
        &mut self,
        batch: &[Transition],
        gamma_safe: f64,
        noise: &UpdateNoise,
    ) -> Result<(f64, f64)> {
        let targets = self.safety_targets(batch, gamma_safe, noise);
        let mut g1 = self.qs1.zero_grads();
        let mut g2 = self.qs2.zero_grads();
        let space = self.cfg.action_space;
        let l1 =
            Self::critic_loss_given_targets(&self.qs1, &space, batch, &targets, Some(&mut g1));
        let l2 =
            Self::critic_loss_given_targets(&self.qs2, &space, batch, &targets, Some(&mut g2));
        if !(l1.is_finite() && l2.is_finite()) {
            return Err(self.fault(f64::NAN, l1.min(l2), f64::NAN));
        }
        self.opt_qs1.step(&mut self.qs1, &g1);
        self.opt_qs2.step(&mut self.qs2, &g2);
        Ok((l1, l2))
    }

    /// Loss-only evaluation of one safety critic (1 or 2) for gradient
    /// audits.
    pub fn safety_critic_loss(
        &self,
        which: usize,
        batch: &[Transition],
        gamma_safe: f64,
        noise: &UpdateNoise,
    ) -> f64 {
        let targets = self.safety_targets(batch, gamma_safe, noise);
        let net = if which == 1 { &self.qs1 } else { &self.qs2 };
        Self::critic_loss_given_targets(net, &self.cfg.action_space, batch, &targets, None)
    }

    /// Flat analytic gradients of the three losses on `batch`, in the same
    /// coordinate order as `Mlp::flat_params`: (reward critic 1, safety
    /// critic 1, actor). Pairs with the loss-only evaluators for numerical
    /// cross-checks; no step is taken.
    pub fn loss_gradients(
        &self,
        batch: &[Transition],
        gamma: f64,
        gamma_safe: f64,
        noise: &UpdateNoise,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let flatten = |g: &Grads| {
            let mut v = Vec::new();
            for l in 0..g.w.len() {
                v.extend_from_slice(&g.w[l]);
                v.extend_from_slice(&g.b[l]);
            }
            v
        };
        let space = self.cfg.action_space;
        let targets = self.reward_targets(batch, gamma, noise);
        let mut gq = self.q1.zero_grads();
        Self::critic_loss_given_targets(&self.q1, &space, batch, &targets, Some(&mut gq));
        let targets = self.safety_targets(batch, gamma_safe, noise);
        let mut gs = self.qs1.zero_grads();
        Self::critic_loss_given_targets(&self.qs1, &space, batch, &targets, Some(&mut gs));
        let mut ga = self.actor.zero_grads();
        self.actor_loss_and_grads(batch, noise, Some(&mut ga));
        (flatten(&gq), flatten(&gs), flatten(&ga))
    }

    /// Soft-updates every target network toward its online twin.
    pub fn soft_update_targets(&mut self) {
        let rho = self.cfg.rho;
        self.q1_target.soft_update_from(&self.q1, rho);
        self.q2_target.soft_update_from(&self.q2, rho);
        self.qs1_target.soft_update_from(&self.qs1, rho);
        self.qs2_target.soft_update_from(&self.qs2, rho);
    }

    fn fault(&self, critic_loss: f64, safety_loss: f64, actor_loss: f64) -> CoreError {
        let max_param = [&self.actor, &self.q1, &self.q2, &self.qs1, &self.qs2]
            .iter()
            .flat_map(|n| n.flat_params())
            .fold(0.0f64, |m, p| m.max(p.abs()));
        CoreError::TrainingFault(Box::new(FaultSnapshot {
            step: 0,
            episode: 0,
            critic_loss,
            safety_loss,
            actor_loss,
            max_param_abs: max_param,
        }))
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const CKPT_MAGIC: &[u8; 8] = b"SORLCKPT";
const CKPT_VERSION: u32 = 1;

/// Serializes the bundle as shape-tagged named arrays:
/// magic, version u32, array count u32, then per array a u32 name length,
/// the utf8 name, a u32 dim count, the u32 dims, and the f64 payload, all
/// little-endian. Optimizer state is not included; checkpoints capture the
/// networks only.
pub fn save_checkpoint(bundle: &ApproximatorBundle, path: &std::path::Path) -> Result<()> {
    let nets: [(&str, &Mlp); 9] = [
        ("actor", &bundle.actor),
        ("q1", &bundle.q1),
        ("q2", &bundle.q2),
        ("q1_target", &bundle.q1_target),
        ("q2_target", &bundle.q2_target),
        ("qs1", &bundle.qs1),
        ("qs2", &bundle.qs2),
        ("qs1_target", &bundle.qs1_target),
        ("qs2_target", &bundle.qs2_target),
    ];
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CKPT_MAGIC);
    buf.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(nets.len() as u32).to_le_bytes());
    for (name, net) in nets {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        let dims = net.dims();
        buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for &d in dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for p in net.flat_params() {
            buf.extend_from_slice(&p.to_le_bytes());
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

struct CkptReader<'a> {
    data: &'a [u8],
    at: usize,
}

impl<'a> CkptReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.data.len() {
            return Err(CoreError::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.data[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Restores network parameters saved by `save_checkpoint` into a bundle of
/// identical architecture.
pub fn load_checkpoint(bundle: &mut ApproximatorBundle, path: &std::path::Path) -> Result<()> {
    let data = std::fs::read(path)?;
    let mut r = CkptReader { data: &data, at: 0 };
    if r.take(8)? != CKPT_MAGIC {
        return Err(CoreError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CKPT_VERSION {
        return Err(CoreError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32()?;
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| CoreError::Checkpoint("bad array name".into()))?
            .to_string();
        let ndims = r.u32()? as usize;
        let mut dims = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            dims.push(r.u32()? as usize);
        }
        let net: &mut Mlp = match name.as_str() {
            "actor" => &mut bundle.actor,
            "q1" => &mut bundle.q1,
            "q2" => &mut bundle.q2,
            "q1_target" => &mut bundle.q1_target,
            "q2_target" => &mut bundle.q2_target,
            "qs1" => &mut bundle.qs1,
            "qs2" => &mut bundle.qs2,
            "qs1_target" => &mut bundle.qs1_target,
            "qs2_target" => &mut bundle.qs2_target,
            other => {
                return Err(CoreError::Checkpoint(format!("unknown array \"{other}\"")));
            }
        };
        if net.dims() != dims.as_slice() {
            return Err(CoreError::Checkpoint(format!(
                "array \"{name}\" has dims {dims:?}, expected {:?}",
                net.dims()
            )));
        }
        let mut flat = Vec::with_capacity(net.param_count());
        for _ in 0..net.param_count() {
            flat.push(r.f64()?);
        }
        net.set_flat_params(&flat);
    }
    if r.at != data.len() {
        return Err(CoreError::Checkpoint("trailing bytes".into()));
    }
    Ok(())
}
