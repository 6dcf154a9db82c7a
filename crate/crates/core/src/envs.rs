//! Deterministic desk-scale environments with analytically known
//! irrecoverable regions, plus exact tabular mirrors for the oracle.
//!
//! All three environments are seed-free: dynamics, rewards and safety
//! labels are pure functions of state and action. `make_env` still accepts
//! a seed so callers can treat every environment uniformly.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::collections::VecDeque;

use crate::error::{CoreError, Result};
use crate::mdp::{Action, ActionSpace, Env, StepOutcome};
use crate::oracle::TabularMDP;

const GRID_STEP_REWARD: f64 = -0.01;
const GRID_GOAL_BONUS: f64 = 1.0;
const GRID_EPISODE_CAP: u32 = 200;
const CORRIDOR_EPISODE_CAP: u32 = 200;
const POINT_EPISODE_CAP: u32 = 400;

/// Movement directions: N grows y, S shrinks it.
const DIRS: [(i64, i64); 4] = [(0, 1), (1, 0), (0, -1), (-1, 0)];

// ---------------------------------------------------------------------------
// DoomCorridor
// ---------------------------------------------------------------------------

/// A single tempting decision: action 0 stays at the start forever for a
/// small reward, action 1 commits to a forced chain paying a larger reward
/// each step and ending in a hazard after exactly `length` steps. Chain
/// states are irrecoverable with steps-to-violation `length .. 1`, which
/// makes the safety-critic floor tight when `h_star == length`.
#[derive(Debug, Clone)]
pub struct DoomCorridor {
    length: u32,
    h_star: u32,
    doom_reward: f64,
    safe_reward: f64,
    pos: CorridorPos,
    steps: u32,
    finished: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum CorridorPos {
    Start,
    Chain(u32),
    Hazard,
}

impl DoomCorridor {
    pub fn new(length: u32, h_star: u32, doom_reward: f64, safe_reward: f64) -> Result<Self> {
        if length < 1 {
            return Err(CoreError::Config("doom_corridor length must be >= 1".into()));
        }
        if h_star < length {
            return Err(CoreError::Config(format!(
                "doom_corridor h_star ({h_star}) must cover the chain length ({length})"
            )));
        }
        for (k, v) in [("doom_reward", doom_reward), ("safe_reward", safe_reward)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(CoreError::Config(format!(
                    "doom_corridor {k} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(DoomCorridor {
            length,
            h_star,
            doom_reward,
            safe_reward,
            pos: CorridorPos::Start,
            steps: 0,
            finished: false,
        })
    }

    pub(crate) fn transition(&self, pos: CorridorPos, action: usize) -> (CorridorPos, f64, bool) {
        match pos {
            CorridorPos::Start => {
                if action == 0 {
                    (CorridorPos::Start, self.safe_reward, false)
                } else {
                    (CorridorPos::Chain(1), self.doom_reward, false)
                }
            }
            CorridorPos::Chain(i) => {
                if i == self.length {
                    (CorridorPos::Hazard, self.doom_reward, true)
                } else {
                    (CorridorPos::Chain(i + 1), self.doom_reward, false)
                }
            }
            CorridorPos::Hazard => (CorridorPos::Hazard, 0.0, false),
        }
    }

    pub(crate) fn features_of(&self, pos: CorridorPos) -> Vec<f64> {
        let l = self.length as f64;
        match pos {
            CorridorPos::Start => vec![0.0, 0.0],
            CorridorPos::Chain(i) => vec![i as f64 / l, 1.0],
            CorridorPos::Hazard => vec![(self.length + 1) as f64 / l, 1.0],
        }
    }
}

impl Env for DoomCorridor {
    fn reset(&mut self) -> Vec<f64> {
        self.pos = CorridorPos::Start;
        self.steps = 0;
        self.finished = false;
        self.features_of(self.pos)
    }

    fn step(&mut self, action: &Action) -> StepOutcome {
        assert!(!self.finished, "step called after the episode ended");
        let a = action.as_discrete();
        assert!(a < 2, "doom_corridor has 2 actions, got {a}");
        let (next, reward, violated) = self.transition(self.pos, a);
        self.pos = next;
        self.steps += 1;
        let done = violated;
        let truncated = !done && self.steps >= CORRIDOR_EPISODE_CAP;
        self.finished = done || truncated;
        StepOutcome {
            next_state: self.features_of(next),
            reward,
            safety_signal: violated,
            done,
            truncated,
        }
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete(2)
    }

    fn horizon_h_star(&self) -> u32 {
        self.h_star
    }

    fn episode_cap(&self) -> u32 {
        CORRIDOR_EPISODE_CAP
    }

    fn name(&self) -> &'static str {
        "doom_corridor"
    }

    fn safety_signal(&self, state: &[f64]) -> bool {
        state[1] > 0.5 && state[0] * self.length as f64 > self.length as f64 + 0.5
    }
}

// ---------------------------------------------------------------------------
// HazardGrid
// ---------------------------------------------------------------------------

/// Gridworld with terminal hazard cells and slip cells that commit the
/// agent to its entry direction until it leaves the slip region. A slip
/// chain pointing into a hazard makes every state on it irrecoverable.
///
/// The default layout is a 9x7 bridge: the only start-to-goal route runs
/// along the middle row, the rows to either side are slip cells, and the
/// outer rows are hazards, so any sideways deviation on the bridge commits
/// the agent to a violation in 3 steps (2 once the slip has begun).
#[derive(Debug, Clone)]
pub struct HazardGrid {
    width: i64,
    height: i64,
    start: (i64, i64),
    goal: (i64, i64),
    hazards: BTreeSet<(i64, i64)>,
    slips: BTreeSet<(i64, i64)>,
    h_star: u32,
    pos: GridPos,
    steps: u32,
    finished: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) struct GridPos {
    pub x: i64,
    pub y: i64,
    /// Direction index into DIRS while sliding, None otherwise. Set exactly
    /// when the occupied cell is a slip cell entered with that direction.
    pub slide: Option<usize>,
}

impl HazardGrid {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        width: i64,
        height: i64,
        start: (i64, i64),
        goal: (i64, i64),
        hazards: BTreeSet<(i64, i64)>,
        slips: BTreeSet<(i64, i64)>,
        h_star: u32,
    ) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(CoreError::Config(format!(
                "hazard_grid needs at least a 2x2 board, got {width}x{height}"
            )));
        }
        if h_star < 1 {
            return Err(CoreError::Config("hazard_grid h_star must be >= 1".into()));
        }
        let in_bounds = |&(x, y): &(i64, i64)| x >= 0 && x < width && y >= 0 && y < height;
        for (label, cell) in [("start", &start), ("goal", &goal)] {
            if !in_bounds(cell) {
                return Err(CoreError::Config(format!(
                    "hazard_grid {label} {cell:?} is out of bounds"
                )));
            }
        }
        for (label, set) in [("hazards", &hazards), ("slips", &slips)] {
            if let Some(cell) = set.iter().find(|c| !in_bounds(c)) {
                return Err(CoreError::Config(format!(
                    "hazard_grid {label} cell {cell:?} is out of bounds"
                )));
            }
        }
        if start == goal {
            return Err(CoreError::Config("hazard_grid start and goal coincide".into()));
        }
        if !hazards.is_disjoint(&slips) {
            return Err(CoreError::Config(
                "hazard_grid hazards and slips must be disjoint".into(),
            ));
        }
        for (label, cell) in [("start", start), ("goal", goal)] {
            if hazards.contains(&cell) || slips.contains(&cell) {
                return Err(CoreError::Config(format!(
                    "hazard_grid {label} may not sit on a hazard or slip cell"
                )));
            }
        }
        Ok(HazardGrid {
            width,
            height,
            start,
            goal,
            hazards,
            slips,
            h_star,
            pos: GridPos { x: start.0, y: start.1, slide: None },
            steps: 0,
            finished: false,
        })
    }

    /// The 9x7 bridge layout used by the experiments.
    pub fn bridge_default() -> Self {
        let mut hazards = BTreeSet::new();
        let mut slips = BTreeSet::new();
        for x in 2..=6 {
            hazards.insert((x, 0));
            hazards.insert((x, 6));
            for y in [1, 2, 4, 5] {
                slips.insert((x, y));
            }
        }
        HazardGrid::new(9, 7, (0, 3), (8, 3), hazards, slips, 2)
            .expect("the built-in layout is valid")
    }

    fn is_terminal_cell(&self, cell: (i64, i64)) -> bool {
        cell == self.goal || self.hazards.contains(&cell)
    }

    pub(crate) fn transition(&self, pos: GridPos, action: usize) -> (GridPos, f64, bool) {
        let dir = pos.slide.unwrap_or(action);
        let (dx, dy) = DIRS[dir];
        let (mut nx, mut ny) = (pos.x + dx, pos.y + dy);
        let blocked = nx < 0 || nx >= self.width || ny < 0 || ny >= self.height;
        if blocked {
            nx = pos.x;
            ny = pos.y;
        }
        let violated = self.hazards.contains(&(nx, ny));
        let entered_goal = (nx, ny) == self.goal;
        // Momentum persists only while moving through slip cells; walls and
        // terminal cells absorb it.
        let slide = if !blocked && !violated && !entered_goal && self.slips.contains(&(nx, ny)) {
            Some(dir)
        } else {
            None
        };
        let reward = GRID_STEP_REWARD + if entered_goal { GRID_GOAL_BONUS } else { 0.0 };
        (GridPos { x: nx, y: ny, slide }, reward, violated)
    }

    pub(crate) fn features_of(&self, pos: GridPos) -> Vec<f64> {
        let (dx, dy) = pos.slide.map_or((0, 0), |d| DIRS[d]);
        vec![
            pos.x as f64 / (self.width - 1) as f64,
            pos.y as f64 / (self.height - 1) as f64,
            dx as f64,
            dy as f64,
        ]
    }

    fn decode_cell(&self, state: &[f64]) -> (i64, i64) {
        (
            (state[0] * (self.width - 1) as f64).round() as i64,
            (state[1] * (self.height - 1) as f64).round() as i64,
        )
    }
}

impl Env for HazardGrid {
    fn reset(&mut self) -> Vec<f64> {
        self.pos = GridPos { x: self.start.0, y: self.start.1, slide: None };
        self.steps = 0;
        self.finished = false;
        self.features_of(self.pos)
    }

    fn step(&mut self, action: &Action) -> StepOutcome {
        assert!(!self.finished, "step called after the episode ended");
        let a = action.as_discrete();
        assert!(a < 4, "hazard_grid has 4 actions, got {a}");
        let (next, reward, violated) = self.transition(self.pos, a);
        self.pos = next;
        self.steps += 1;
        let done = violated || (next.x, next.y) == self.goal;
        let truncated = !done && self.steps >= GRID_EPISODE_CAP;
        self.finished = done || truncated;
        StepOutcome {
            next_state: self.features_of(next),
            reward,
            safety_signal: violated,
            done,
            truncated,
        }
    }

    fn state_dim(&self) -> usize {
        4
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete(4)
    }

    fn horizon_h_star(&self) -> u32 {
        self.h_star
    }

    fn episode_cap(&self) -> u32 {
        GRID_EPISODE_CAP
    }

    fn name(&self) -> &'static str {
        "hazard_grid"
    }

    fn safety_signal(&self, state: &[f64]) -> bool {
        self.hazards.contains(&self.decode_cell(state))
    }
}

// ---------------------------------------------------------------------------
// PointVelocity
// ---------------------------------------------------------------------------

/// One-dimensional point mass with explicit-Euler dynamics: position first,
/// then velocity. Reward is the actual displacement, so speed toward the
/// wall pays. Violation when position reaches the wall or |velocity|
/// exceeds the limit; a soft wall at -wall stops backward drift harmlessly.
/// States whose braking distance exceeds the wall distance are
/// irrecoverable, and full braking crosses within v_max/(a_max*dt) steps,
/// which the declared horizon must cover.
#[derive(Debug, Clone)]
pub struct PointVelocity {
    v_max: f64,
    a_max: f64,
    wall: f64,
    dt: f64,
    h_star: u32,
    disc_p: Option<usize>,
    disc_v: Option<usize>,
    pos: PointPos,
    steps: u32,
    finished: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct PointPos {
    pub p: f64,
    pub v: f64,
}

impl PointVelocity {
    pub fn new(
        v_max: f64,
        a_max: f64,
        wall: f64,
        dt: f64,
        h_star: u32,
        disc_p: Option<usize>,
        disc_v: Option<usize>,
    ) -> Result<Self> {
        for (k, v) in [("v_max", v_max), ("a_max", a_max), ("wall", wall), ("dt", dt)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(CoreError::Config(format!(
                    "point_velocity {k} must be positive and finite, got {v}"
                )));
            }
        }
        let braking_steps = (v_max / (a_max * dt)).ceil() as u32;
        if h_star < braking_steps {
            return Err(CoreError::Config(format!(
                "point_velocity h_star ({h_star}) must cover the braking horizon \
                 ({braking_steps} steps)"
            )));
        }
        for (k, d) in [("disc_p", disc_p), ("disc_v", disc_v)] {
            if let Some(n) = d {
                if n < 2 {
                    return Err(CoreError::Config(format!(
                        "point_velocity {k} must be >= 2, got {n}"
                    )));
                }
            }
        }
        Ok(PointVelocity {
            v_max,
            a_max,
            wall,
            dt,
            h_star,
            disc_p,
            disc_v,
            pos: PointPos { p: 0.0, v: 0.0 },
            steps: 0,
            finished: false,
        })
    }

    pub(crate) fn transition(&self, pos: PointPos, accel: f64) -> (PointPos, f64, bool) {
        let a = accel.clamp(-self.a_max, self.a_max);
        let p_raw = pos.p + pos.v * self.dt;
        let v_raw = pos.v + a * self.dt;
        let violated = p_raw >= self.wall || v_raw.abs() > self.v_max;
        if violated {
            return (PointPos { p: p_raw, v: v_raw }, p_raw - pos.p, true);
        }
        let mut p = p_raw;
        let mut v = v_raw;
        if p < -self.wall {
            p = -self.wall;
            if v < 0.0 {
                v = 0.0;
            }
        }
        (PointPos { p, v }, p - pos.p, false)
    }

    pub(crate) fn features_of(&self, pos: PointPos) -> Vec<f64> {
        vec![pos.p / self.wall, pos.v / self.v_max]
    }
}

impl Env for PointVelocity {
    fn reset(&mut self) -> Vec<f64> {
        self.pos = PointPos { p: 0.0, v: 0.0 };
        self.steps = 0;
        self.finished = false;
        self.features_of(self.pos)
    }

    fn step(&mut self, action: &Action) -> StepOutcome {
        assert!(!self.finished, "step called after the episode ended");
        let a = action.as_continuous();
        assert_eq!(a.len(), 1, "point_velocity takes a 1-dim acceleration");
        let (next, reward, violated) = self.transition(self.pos, a[0]);
        self.pos = next;
        self.steps += 1;
        let done = violated;
        let truncated = !done && self.steps >= POINT_EPISODE_CAP;
        self.finished = done || truncated;
        StepOutcome {
            next_state: self.features_of(next),
            reward,
            safety_signal: violated,
            done,
            truncated,
        }
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Continuous { dim: 1, bound: self.a_max }
    }

    fn horizon_h_star(&self) -> u32 {
        self.h_star
    }

    fn episode_cap(&self) -> u32 {
        POINT_EPISODE_CAP
    }

    fn name(&self) -> &'static str {
        "point_velocity"
    }

    fn safety_signal(&self, state: &[f64]) -> bool {
        let p = state[0] * self.wall;
        let v = state[1] * self.v_max;
        p >= self.wall - 1e-9 || v.abs() > self.v_max + 1e-9
    }
}

// ---------------------------------------------------------------------------
// make_env + enumeration
// ---------------------------------------------------------------------------

/// Concrete environment behind a single dispatchable type, so tabular
/// enumeration can reach the exact dynamics.
#[derive(Debug, Clone)]
pub enum EnvKind {
    Corridor(DoomCorridor),
    Grid(HazardGrid),
    Point(PointVelocity),
}

macro_rules! dispatch {
    ($self:ident, $inner:ident => $body:expr) => {
        match $self {
            EnvKind::Corridor($inner) => $body,
            EnvKind::Grid($inner) => $body,
            EnvKind::Point($inner) => $body,
        }
    };
}

impl Env for EnvKind {
    fn reset(&mut self) -> Vec<f64> {
        dispatch!(self, e => e.reset())
    }
    fn step(&mut self, action: &Action) -> StepOutcome {
        dispatch!(self, e => e.step(action))
    }
    fn state_dim(&self) -> usize {
        dispatch!(self, e => e.state_dim())
    }
    fn action_space(&self) -> ActionSpace {
        dispatch!(self, e => e.action_space())
    }
    fn horizon_h_star(&self) -> u32 {
        dispatch!(self, e => e.horizon_h_star())
    }
    fn episode_cap(&self) -> u32 {
        dispatch!(self, e => e.episode_cap())
    }
    fn name(&self) -> &'static str {
        dispatch!(self, e => e.name())
    }
    fn safety_signal(&self, state: &[f64]) -> bool {
        dispatch!(self, e => e.safety_signal(state))
    }
}

fn check_keys(table: &toml::value::Table, allowed: &[&str], env: &str) -> Result<()> {
    for key in table.keys() {
        if !allowed.contains(&key.as_str()) {
            return Err(CoreError::Config(format!(
                "unknown {env} config key \"{key}\" (allowed: {})",
                allowed.join(", ")
            )));
        }
    }
    Ok(())
}

fn cfg_int(table: &toml::value::Table, key: &str, default: i64) -> Result<i64> {
    match table.get(key) {
        None => Ok(default),
        Some(toml::Value::Integer(i)) => Ok(*i),
        Some(other) => Err(CoreError::Config(format!(
            "config key \"{key}\" must be an integer, got {other}"
        ))),
    }
}

fn cfg_float(table: &toml::value::Table, key: &str, default: f64) -> Result<f64> {
    match table.get(key) {
        None => Ok(default),
        Some(toml::Value::Float(f)) => Ok(*f),
        Some(toml::Value::Integer(i)) => Ok(*i as f64),
        Some(other) => Err(CoreError::Config(format!(
            "config key \"{key}\" must be a number, got {other}"
        ))),
    }
}

fn cfg_cell(value: &toml::Value, key: &str) -> Result<(i64, i64)> {
    let arr = value.as_array().ok_or_else(|| {
        CoreError::Config(format!("config key \"{key}\" must hold [x, y] pairs"))
    })?;
    if arr.len() != 2 {
        return Err(CoreError::Config(format!(
            "config key \"{key}\" holds a cell with {} coordinates",
            arr.len()
        )));
    }
    let mut out = [0i64; 2];
    for (slot, v) in out.iter_mut().zip(arr) {
        *slot = v.as_integer().ok_or_else(|| {
            CoreError::Config(format!("config key \"{key}\" cell coordinates must be integers"))
        })?;
    }
    Ok((out[0], out[1]))
}

fn cfg_cells(table: &toml::value::Table, key: &str) -> Result<Option<Vec<(i64, i64)>>> {
    match table.get(key) {
        None => Ok(None),
        Some(toml::Value::Array(items)) => {
            let mut cells = Vec::with_capacity(items.len());
            for item in items {
                cells.push(cfg_cell(item, key)?);
            }
            Ok(Some(cells))
        }
        Some(other) => Err(CoreError::Config(format!(
            "config key \"{key}\" must be an array of cells, got {other}"
        ))),
    }
}

/// Builds a named environment from its config table. Unknown names and
/// unknown or ill-typed keys are configuration errors. Environments are
/// deterministic; the seed is accepted for interface uniformity.
pub fn make_env(name: &str, _seed: u64, config: &toml::value::Table) -> Result<EnvKind> {
    match name {
        "doom_corridor" => {
            check_keys(config, &["length", "h_star", "doom_reward", "safe_reward"], name)?;
            let length = cfg_int(config, "length", 10)?;
            if length < 1 {
                return Err(CoreError::Config("doom_corridor length must be >= 1".into()));
            }
            let h_star = cfg_int(config, "h_star", length)?;
            let doom_reward = cfg_float(config, "doom_reward", 0.2)?;
            let safe_reward = cfg_float(config, "safe_reward", 0.05)?;
            if h_star < 1 || h_star > u32::MAX as i64 || length > u32::MAX as i64 {
                return Err(CoreError::Config("doom_corridor horizon out of range".into()));
            }
            Ok(EnvKind::Corridor(DoomCorridor::new(
                length as u32,
                h_star as u32,
                doom_reward,
                safe_reward,
            )?))
        }
        "hazard_grid" => {
            check_keys(
                config,
                &["width", "height", "start", "goal", "hazards", "slips", "h_star"],
                name,
            )?;
            let custom_board = config.contains_key("width") || config.contains_key("height");
            if !custom_board
                && !config.contains_key("start")
                && !config.contains_key("goal")
                && !config.contains_key("hazards")
                && !config.contains_key("slips")
            {
                let h_star = cfg_int(config, "h_star", 2)?;
                let mut grid = HazardGrid::bridge_default();
                if h_star < 1 || h_star > u32::MAX as i64 {
                    return Err(CoreError::Config("hazard_grid h_star out of range".into()));
                }
                grid.h_star = h_star as u32;
                return Ok(EnvKind::Grid(grid));
            }
            let width = cfg_int(config, "width", 9)?;
            let height = cfg_int(config, "height", 7)?;
            let start = match config.get("start") {
                Some(v) => cfg_cell(v, "start")?,
                None => (0, 0),
            };
            let goal = match config.get("goal") {
                Some(v) => cfg_cell(v, "goal")?,
                None => (width - 1, height - 1),
            };
            let hazards: BTreeSet<_> =
                cfg_cells(config, "hazards")?.unwrap_or_default().into_iter().collect();
            let slips: BTreeSet<_> =
                cfg_cells(config, "slips")?.unwrap_or_default().into_iter().collect();
            let h_star = cfg_int(config, "h_star", 2)?;
            if h_star < 1 || h_star > u32::MAX as i64 {
                return Err(CoreError::Config("hazard_grid h_star out of range".into()));
            }
            Ok(EnvKind::Grid(HazardGrid::new(
                width,
                height,
                start,
                goal,
                hazards,
                slips,
                h_star as u32,
            )?))
        }
        "point_velocity" => {
            check_keys(
                config,
                &["v_max", "a_max", "wall", "dt", "h_star", "disc_p", "disc_v"],
                name,
            )?;
            let v_max = cfg_float(config, "v_max", 1.0)?;
            let a_max = cfg_float(config, "a_max", 1.0)?;
            let wall = cfg_float(config, "wall", 2.0)?;
            let dt = cfg_float(config, "dt", 0.1)?;
            let h_star = cfg_int(config, "h_star", 10)?;
            if h_star < 1 || h_star > u32::MAX as i64 {
                return Err(CoreError::Config("point_velocity h_star out of range".into()));
            }
            let disc = |key: &str| -> Result<Option<usize>> {
                Ok(match config.get(key) {
                    None => None,
                    Some(_) => Some(cfg_int(config, key, 0)? as usize),
                })
            };
            Ok(EnvKind::Point(PointVelocity::new(
                v_max,
                a_max,
                wall,
                dt,
                h_star as u32,
                disc("disc_p")?,
                disc("disc_v")?,
            )?))
        }
        other => Err(CoreError::Config(format!(
            "unknown environment \"{other}\" (expected doom_corridor, hazard_grid or \
             point_velocity)"
        ))),
    }
}

/// Exact tabular mirror of a finite environment. Terminal states become
/// absorbing zero-reward self-loops; every other row reproduces the
/// environment's own transition function on its reachable state set.
/// PointVelocity requires `disc_p`/`disc_v` in its config and snaps
/// successors to the declared grid, with one extra absorbing state
/// standing in for every violating configuration.
pub fn enumerate_tabular(env: &EnvKind) -> Result<TabularMDP> {
    let mdp = match env {
        EnvKind::Corridor(c) => {
            let l = c.length as usize;
            let n = l + 2;
            let hazard = n - 1;
            let idx = |pos: CorridorPos| -> usize {
                match pos {
                    CorridorPos::Start => 0,
                    CorridorPos::Chain(i) => i as usize,
                    CorridorPos::Hazard => hazard,
                }
            };
            let mut transitions = vec![vec![Vec::new(); 2]; n];
            let mut reward = vec![vec![0.0; 2]; n];
            let mut features = Vec::with_capacity(n);
            let all_pos = std::iter::once(CorridorPos::Start)
                .chain((1..=c.length).map(CorridorPos::Chain))
                .chain(std::iter::once(CorridorPos::Hazard));
            for pos in all_pos {
                let s = idx(pos);
                features.push(c.features_of(pos));
                for a in 0..2 {
                    if pos == CorridorPos::Hazard {
                        transitions[s][a] = vec![(hazard, 1.0)];
                    } else {
                        let (next, r, _v) = c.transition(pos, a);
                        transitions[s][a] = vec![(idx(next), 1.0)];
                        reward[s][a] = r;
                    }
                }
            }
            let mut unsafe_state = vec![false; n];
            unsafe_state[hazard] = true;
            let mut terminal = vec![false; n];
            terminal[hazard] = true;
            TabularMDP {
                n_states: n,
                n_actions: 2,
                transitions,
                reward,
                unsafe_state,
                terminal,
                h_star: c.h_star,
                start_state: 0,
                features,
            }
        }
        EnvKind::Grid(g) => {
            let start = GridPos { x: g.start.0, y: g.start.1, slide: None };
            let mut index: BTreeMap<GridPos, usize> = BTreeMap::new();
            let mut order: Vec<GridPos> = Vec::new();
            let mut queue = VecDeque::new();
            index.insert(start, 0);
            order.push(start);
            queue.push_back(start);
            let mut rows: Vec<Vec<Vec<(usize, f64)>>> = Vec::new();
            let mut rewards: Vec<Vec<f64>> = Vec::new();
            while let Some(pos) = queue.pop_front() {
                let s = index[&pos];
                if g.is_terminal_cell((pos.x, pos.y)) {
                    rows.push(vec![vec![(s, 1.0)]; 4]);
                    rewards.push(vec![0.0; 4]);
                    continue;
                }
                let mut row = Vec::with_capacity(4);
                let mut rrow = Vec::with_capacity(4);
                for a in 0..4 {
                    let (next, r, _v) = g.transition(pos, a);
                    let next_idx = *index.entry(next).or_insert_with(|| {
                        order.push(next);
                        queue.push_back(next);
                        order.len() - 1
                    });
                    row.push(vec![(next_idx, 1.0)]);
                    rrow.push(r);
                }
                rows.push(row);
                rewards.push(rrow);
            }
            let n = order.len();
            // BFS pushes rows in index order because indices are assigned
            // in discovery order.
            let unsafe_state: Vec<bool> =
                order.iter().map(|p| g.hazards.contains(&(p.x, p.y))).collect();
            let terminal: Vec<bool> =
                order.iter().map(|p| g.is_terminal_cell((p.x, p.y))).collect();
            let features: Vec<Vec<f64>> = order.iter().map(|p| g.features_of(*p)).collect();
            TabularMDP {
                n_states: n,
                n_actions: 4,
                transitions: rows,
                reward: rewards,
                unsafe_state,
                terminal,
                h_star: g.h_star,
                start_state: 0,
                features,
            }
        }
        EnvKind::Point(p) => {
            let (disc_p, disc_v) = match (p.disc_p, p.disc_v) {
                (Some(a), Some(b)) => (a, b),
                _ => {
                    return Err(CoreError::Config(
                        "point_velocity enumeration needs disc_p and disc_v".into(),
                    ))
                }
            };
            let p_lo = -p.wall;
            let dp = (p.wall - p_lo) / (disc_p - 1) as f64;
            let dv = 2.0 * p.v_max / (disc_v - 1) as f64;
            let decode = |i: usize, j: usize| PointPos {
                p: p_lo + i as f64 * dp,
                v: -p.v_max + j as f64 * dv,
            };
            let snap = |pos: PointPos| -> (usize, usize) {
                let i = (((pos.p - p_lo) / dp).round() as i64).clamp(0, disc_p as i64 - 1);
                let j = (((pos.v + p.v_max) / dv).round() as i64).clamp(0, disc_v as i64 - 1);
                (i as usize, j as usize)
            };
            let n = disc_p * disc_v + 1;
            let sink = n - 1; // absorbing stand-in for violating configs
            let accels = [-p.a_max, 0.0, p.a_max];
            let mut transitions = vec![vec![Vec::new(); 3]; n];
            let mut reward = vec![vec![0.0; 3]; n];
            let mut unsafe_state = vec![false; n];
            let mut features = Vec::with_capacity(n);
            for i in 0..disc_p {
                for j in 0..disc_v {
                    let s = i * disc_v + j;
                    let pos = decode(i, j);
                    features.push(p.features_of(pos));
                    let already_violating = pos.p >= p.wall;
                    if already_violating {
                        unsafe_state[s] = true;
                        for a in 0..3 {
                            transitions[s][a] = vec![(s, 1.0)];
                        }
                        continue;
                    }
                    for (a, &acc) in accels.iter().enumerate() {
                        let (next, r, violated) = p.transition(pos, acc);
                        let succ = if violated {
                            sink
                        } else {
                            let (ni, nj) = snap(next);
                            ni * disc_v + nj
                        };
                        transitions[s][a] = vec![(succ, 1.0)];
                        reward[s][a] = r;
                    }
                }
            }
            unsafe_state[sink] = true;
            for a in 0..3 {
                transitions[sink][a] = vec![(sink, 1.0)];
            }
            features.push(vec![(p.wall + p.v_max * p.dt) / p.wall, 0.0]);
            let terminal = unsafe_state.clone();
            let start_state = {
                let (i, j) = snap(PointPos { p: 0.0, v: 0.0 });
                i * disc_v + j
            };
            TabularMDP {
                n_states: n,
                n_actions: 3,
                transitions,
                reward,
                unsafe_state,
                terminal,
                h_star: p.h_star,
                start_state,
                features,
            }
        }
    };
    mdp.validate()?;
    Ok(mdp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{check_critic_floor, label_irrecoverable, StateLabel};

    fn table(toml_src: &str) -> toml::value::Table {
        toml_src.parse::<toml::Table>().unwrap()
    }

    #[test]
    fn make_env_rejects_unknown_names_and_keys() {
        assert!(matches!(
            make_env("lava_world", 0, &table("")),
            Err(CoreError::Config(_))
        ));
        assert!(matches!(
            make_env("doom_corridor", 0, &table("lenght = 3")),
            Err(CoreError::Config(_))
        ));
        assert!(matches!(
            make_env("point_velocity", 0, &table("v_max = \"fast\"")),
            Err(CoreError::Config(_))
        ));
    }

    #[test]
    fn corridor_chain_violates_in_exactly_l_steps() {
        let mut env = match make_env("doom_corridor", 0, &table("length = 3")).unwrap() {
            e @ EnvKind::Corridor(_) => e,
            _ => unreachable!(),
        };
        env.reset();
        // Commit to the doomed branch, then count forced steps.
        let first = env.step(&Action::Discrete(1));
        assert!(!first.safety_signal);
        let mut steps_after_entry = 0;
        let mut out = first;
        while !out.safety_signal {
            out = env.step(&Action::Discrete(0));
            steps_after_entry += 1;
        }
        assert_eq!(steps_after_entry, 3);
        assert!(out.done);
        assert!(env.safety_signal(&out.next_state));
    }

    #[test]
    fn corridor_safe_branch_survives_to_the_cap() {
        let mut env = make_env("doom_corridor", 0, &table("length = 3")).unwrap();
        env.reset();
        let mut last = env.step(&Action::Discrete(0));
        let mut steps = 1;
        while !last.truncated {
            last = env.step(&Action::Discrete(0));
            steps += 1;
        }
        assert_eq!(steps, CORRIDOR_EPISODE_CAP);
        assert!(!last.safety_signal && !last.done);
    }

    #[test]
    fn corridor_tabular_has_l_plus_2_states_with_known_doom_steps() {
        let env = make_env("doom_corridor", 0, &table("length = 3")).unwrap();
        let mdp = enumerate_tabular(&env).unwrap();
        assert_eq!(mdp.n_states, 5);
        let lab = label_irrecoverable(&mdp).unwrap();
        let mut steps: Vec<u32> = (0..mdp.n_states)
            .filter(|&s| lab.labels[s] == StateLabel::Irrecoverable)
            .map(|s| lab.steps_to_violation[s].unwrap())
            .collect();
        steps.sort_unstable();
        assert_eq!(steps, vec![1, 2, 3]);
        assert_eq!(lab.labels[mdp.start_state], StateLabel::Safe);
    }

    #[test]
    fn corridor_critic_floor_is_tight_at_matching_horizon() {
        let env = make_env("doom_corridor", 0, &table("length = 4")).unwrap();
        let mdp = enumerate_tabular(&env).unwrap();
        let rep = check_critic_floor(&mdp, 0.85).unwrap();
        assert!(rep.holds);
        assert!(rep.min_slack.abs() <= 1e-12);
        assert!(rep.equality_cases > 0);
    }

    #[test]
    fn plain_grid_has_no_irrecoverable_states() {
        let cfg = table(
            "width = 5\nheight = 5\nstart = [0, 0]\ngoal = [4, 4]\n\
             hazards = [[1, 1], [2, 3], [3, 1]]",
        );
        let env = make_env("hazard_grid", 0, &cfg).unwrap();
        let mdp = enumerate_tabular(&env).unwrap();
        assert_eq!(mdp.n_states, 25);
        let lab = label_irrecoverable(&mdp).unwrap();
        assert_eq!(lab.count(StateLabel::Irrecoverable), 0);
        assert_eq!(lab.count(StateLabel::Unsafe), 3);
    }

    #[test]
    fn bridge_grid_commits_sideways_deviations() {
        let env = make_env("hazard_grid", 0, &table("")).unwrap();
        let mdp = enumerate_tabular(&env).unwrap();
        let lab = label_irrecoverable(&mdp).unwrap();
        // Five bridge columns, two sides, two slip rows deep.
        assert_eq!(lab.count(StateLabel::Irrecoverable), 20);
        assert_eq!(lab.max_steps, 2);

        // Walking the bridge straight east reaches the goal safely.
        let mut env = env;
        env.reset();
        let mut out = env.step(&Action::Discrete(1));
        for _ in 0..7 {
            assert!(!out.done);
            out = env.step(&Action::Discrete(1));
        }
        assert!(out.done && !out.safety_signal);
        assert!((out.reward - 0.99).abs() < 1e-12);

        // Deviating north on the bridge violates in exactly 3 steps.
        env.reset();
        env.step(&Action::Discrete(1));
        env.step(&Action::Discrete(1)); // now at (2,3)
        let d1 = env.step(&Action::Discrete(0));
        assert!(!d1.safety_signal);
        // Momentum overrides contrary actions.
        let d2 = env.step(&Action::Discrete(2));
        assert!(!d2.safety_signal);
        let d3 = env.step(&Action::Discrete(2));
        assert!(d3.safety_signal && d3.done);
    }

    #[test]
    fn slip_rows_crossed_sideways_release_safely() {
        let env = make_env("hazard_grid", 0, &table("")).unwrap();
        let mut env = env;
        env.reset();
        // North to row 4 in the open column, then east into the slip row.
        env.step(&Action::Discrete(0));
        env.step(&Action::Discrete(1));
        let mut out = env.step(&Action::Discrete(1)); // enters (2,4), sliding east
        for _ in 0..4 {
            assert!(!out.done, "slide east should stay safe");
            out = env.step(&Action::Discrete(3)); // contrary action, overridden
        }
        // Released at (7,4): movement obeys actions again.
        assert!(!out.done);
        let back = env.step(&Action::Discrete(2));
        assert!(!back.safety_signal);
        assert!(env.safety_signal(&back.next_state) == false);
    }

    #[test]
    fn grid_config_errors_are_loud() {
        for bad in [
            "width = 1",
            "start = [9, 3]",
            "hazards = [[0, 0]]\nstart = [0, 0]",
            "slips = [[0, 0]]\nhazards = [[0, 0]]\nwidth = 3\nheight = 3",
            "start = [1, 1]\ngoal = [1, 1]\nwidth = 3\nheight = 3",
        ] {
            assert!(
                matches!(make_env("hazard_grid", 0, &table(bad)), Err(CoreError::Config(_))),
                "accepted: {bad}"
            );
        }
    }

    #[test]
    fn point_flags_speed_and_wall_violations() {
        let mut env = make_env("point_velocity", 0, &table("")).unwrap();
        env.reset();
        // Full throttle: velocity 0.1, 0.2, ... exceeds 1.0 on step 11.
        let mut out = env.step(&Action::Continuous(vec![1.0]));
        let mut steps = 1;
        while !out.done {
            out = env.step(&Action::Continuous(vec![1.0]));
            steps += 1;
        }
        assert_eq!(steps, 11);
        assert!(out.safety_signal);
        assert!(env.safety_signal(&out.next_state));

        // Cruise at the limit instead: the wall at 2.0 ends it.
        env.reset();
        let mut v = 0.0;
        let mut out = None;
        for _ in 0..50 {
            let a = if v < 0.999 { 1.0 } else { 0.0 };
            let o = env.step(&Action::Continuous(vec![a]));
            v = o.next_state[1];
            let done = o.done;
            out = Some(o);
            if done {
                break;
            }
        }
        let out = out.unwrap();
        assert!(out.safety_signal, "wall crossing must violate");
        assert!(out.next_state[0] >= 1.0 - 1e-12);
    }

    #[test]
    fn point_enumeration_requires_discretization() {
        let env = make_env("point_velocity", 0, &table("")).unwrap();
        assert!(matches!(enumerate_tabular(&env), Err(CoreError::Config(_))));
    }

    #[test]
    fn point_tabular_rows_reproduce_the_continuous_step() {
        let env = make_env("point_velocity", 0, &table("disc_p = 21\ndisc_v = 21")).unwrap();
        let mdp = enumerate_tabular(&env).unwrap();
        assert_eq!(mdp.n_states, 21 * 21 + 1);
        let p = match &env {
            EnvKind::Point(p) => p,
            _ => unreachable!(),
        };
        let accels = [-1.0, 0.0, 1.0];
        for (i, j) in [(0usize, 0usize), (10, 10), (20, 5), (5, 20), (19, 19)] {
            let s = i * 21 + j;
            if mdp.unsafe_state[s] {
                continue;
            }
            let pos = PointPos {
                p: -2.0 + i as f64 * (4.0 / 20.0),
                v: -1.0 + j as f64 * (2.0 / 20.0),
            };
            for (a, &acc) in accels.iter().enumerate() {
                let (next, r, violated) = p.transition(pos, acc);
                assert!((mdp.reward[s][a] - r).abs() < 1e-15);
                let (succ, _) = mdp.transitions[s][a][0];
                if violated {
                    assert!(mdp.unsafe_state[succ]);
                } else {
                    let f = &mdp.features[succ];
                    // successor features match the snapped continuous step
                    assert!((f[0] * 2.0 - next.p).abs() <= 4.0 / 20.0 / 2.0 + 1e-12);
                    assert!((f[1] - next.v).abs() <= 2.0 / 20.0 / 2.0 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn fine_point_grid_rolls_out_identically_to_the_continuous_env() {
        // p-spacing 0.01 equals v*dt resolution and v-spacing 0.1 equals
        // a*dt, so grid dynamics are exact and snapping is the identity.
        let cfg = table("disc_p = 401\ndisc_v = 21");
        let env = make_env("point_velocity", 0, &cfg).unwrap();
        let mdp = enumerate_tabular(&env).unwrap();
        let p = match &env {
            EnvKind::Point(p) => p,
            _ => unreachable!(),
        };
        let accels = [-1.0, 0.0, 1.0];
        // A scripted action sequence that accelerates, cruises and brakes.
        let script: Vec<usize> =
            (0..100).map(|t| if t < 8 { 2 } else if t % 3 == 0 { 0 } else { 1 }).collect();
        let mut s = mdp.start_state;
        let mut pos = PointPos { p: 0.0, v: 0.0 };
        for &a in &script {
            if mdp.unsafe_state[s] {
                break;
            }
            let (succ, _) = mdp.transitions[s][a][0];
            let (next, _, violated) = p.transition(pos, accels[a]);
            if violated {
                assert!(mdp.unsafe_state[succ]);
                break;
            }
            let f = &mdp.features[succ];
            assert!(
                (f[0] * 2.0 - next.p).abs() < 1e-9 && (f[1] - next.v).abs() < 1e-9,
                "tabular ({}, {}) vs continuous ({}, {})",
                f[0] * 2.0,
                f[1],
                next.p,
                next.v
            );
            s = succ;
            pos = next;
        }
    }

    #[test]
    fn fine_point_grid_has_irrecoverable_momentum_states() {
        let cfg = table("disc_p = 401\ndisc_v = 21");
        let env = make_env("point_velocity", 0, &cfg).unwrap();
        let mdp = enumerate_tabular(&env).unwrap();
        let lab = label_irrecoverable(&mdp).unwrap();
        let doomed = lab.count(StateLabel::Irrecoverable);
        assert!(doomed > 0, "braking-limited states must exist");
        assert!(lab.max_steps <= 10);
        // Spot check: full speed right at the wall cannot brake in time.
        let i = 400usize; // p = 2.0 is already unsafe; take p = 1.99
        let _ = i;
        let near_wall = ((1.99f64 - -2.0) / 0.01).round() as usize * 21 + 20; // v = 1.0
        assert_eq!(lab.labels[near_wall], StateLabel::Irrecoverable);
    }

    #[test]
    fn declared_horizons_reject_understatement() {
        assert!(matches!(
            make_env("doom_corridor", 0, &table("length = 5\nh_star = 3")),
            Err(CoreError::Config(_))
        ));
        assert!(matches!(
            make_env("point_velocity", 0, &table("h_star = 4")),
            Err(CoreError::Config(_))
        ));
    }

    #[test]
    fn step_rewards_do_not_pay_for_survival() {
        // Standing still in the grid costs the step penalty; coasting in
        // the point mass pays exactly the displacement.
        let mut grid = make_env("hazard_grid", 0, &table("")).unwrap();
        grid.reset();
        let out = grid.step(&Action::Discrete(3)); // into the wall: stays put
        assert!(out.reward < 0.0);

        let mut point = make_env("point_velocity", 0, &table("")).unwrap();
        point.reset();
        let out = point.step(&Action::Continuous(vec![0.0]));
        assert_eq!(out.reward, 0.0);
    }
}
