//! Baseline learners sharing the full backbone (networks, buffers,
//! optimizers, exploration) with the shaped learner, so comparisons
//! isolate the shaping itself.
//!
//! Penalty-only: the raw reward, replaced by -C on violating steps. The
//! safety critics are never updated and no violation buffer is kept.
//!
//! Lagrangian: the raw reward minus a dual multiplier times the safety
//! indicator, with projected dual ascent on the multiplier after each
//! episode against a violations-per-episode budget.

use std::path::Path;

use crate::agent::{train, AgentConfig, AlgoKind, TrainOutput};
use crate::envs::EnvKind;
use crate::error::Result;

/// Penalty-only learner. Respects `cfg.penalty` for how C is chosen.
pub fn train_sac_c(
    env: &mut EnvKind,
    cfg: &AgentConfig,
    seed: u64,
    checkpoint_path: Option<&Path>,
) -> Result<TrainOutput> {
    train(env, AlgoKind::SacC, cfg, seed, checkpoint_path)
}

/// Lagrangian learner with per-episode dual ascent.
pub fn train_lagrangian(
    env: &mut EnvKind,
    cfg: &AgentConfig,
    seed: u64,
    checkpoint_path: Option<&Path>,
) -> Result<TrainOutput> {
    train(env, AlgoKind::Lagrangian, cfg, seed, checkpoint_path)
}
