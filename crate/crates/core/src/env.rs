//! `CommunicatingGoalEnv`: an 8×8 grid with a stationary speaker that sees
//! the goal and a mobile listener that sees only its own position.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DdclError, Result};

pub const GRID_SIZE: i32 = 8;
pub const MAX_STEPS: u32 = 32;
pub const SUCCESS_REWARD: f64 = 1.0;
pub const STEP_PENALTY: f64 = -0.01;

pub type Cell = (i32, i32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Stay,
}

impl Action {
    pub const ALL: [Action; 5] = [
        Action::Up,
        Action::Down,
        Action::Left,
        Action::Right,
        Action::Stay,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Displacement; `Up` increases `y`.
    pub fn delta(self) -> Cell {
        match self {
            Action::Up => (0, 1),
            Action::Down => (0, -1),
            Action::Left => (-1, 0),
            Action::Right => (1, 0),
            Action::Stay => (0, 0),
        }
    }
}

/// A categorical distribution over goal cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DistributionFile", into = "DistributionFile")]
pub struct GoalDistribution {
    support: Vec<(Cell, f64)>,
    entropy_bits: f64,
}

#[derive(Serialize, Deserialize)]
struct DistributionFile {
    support: Vec<Cell>,
    probabilities: Vec<f64>,
}

impl TryFrom<DistributionFile> for GoalDistribution {
    type Error = DdclError;

    fn try_from(file: DistributionFile) -> Result<Self> {
        if file.support.len() != file.probabilities.len() {
            return Err(DdclError::InvalidDistribution(format!(
                "{} cells but {} probabilities",
                file.support.len(),
                file.probabilities.len()
            )));
        }
        Self::new(file.support.into_iter().zip(file.probabilities).collect())
    }
}

impl From<GoalDistribution> for DistributionFile {
    fn from(d: GoalDistribution) -> Self {
        let (support, probabilities) = d.support.into_iter().unzip();
        Self {
            support,
            probabilities,
        }
    }
}

impl GoalDistribution {
    pub fn new(support: Vec<(Cell, f64)>) -> Result<Self> {
        if support.is_empty() {
            return Err(DdclError::InvalidDistribution("empty support".into()));
        }
        for &((x, y), p) in &support {
            if !in_grid((x, y)) {
                return Err(DdclError::InvalidDistribution(format!(
                    "cell ({x},{y}) outside the grid"
                )));
            }
            if !(p.is_finite() && p > 0.0) {
                return Err(DdclError::InvalidDistribution(format!(
                    "probability {p} for ({x},{y})"
                )));
            }
        }
        for (i, a) in support.iter().enumerate() {
            if support[..i].iter().any(|b| b.0 == a.0) {
                return Err(DdclError::InvalidDistribution(format!(
                    "duplicate cell {:?}",
                    a.0
                )));
            }
        }
        let total: f64 = support.iter().map(|s| s.1).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(DdclError::InvalidDistribution(format!(
                "probabilities sum to {total}"
            )));
        }
        let entropy_bits = -support.iter().map(|&(_, p)| p * p.log2()).sum::<f64>();
        Ok(Self {
            support,
            entropy_bits,
        })
    }

    /// The six-goal skewed distribution of the reference task.
    pub fn default_distribution() -> Self {
        Self::new(vec![
            ((0, 0), 0.515),
            ((7, 7), 0.258),
            ((3, 4), 0.129),
            ((4, 3), 0.064),
            ((1, 6), 0.031),
            ((6, 1), 0.003),
        ])
        .expect("reference distribution is valid")
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn support(&self) -> &[(Cell, f64)] {
        &self.support
    }

    pub fn entropy_bits(&self) -> f64 {
        self.entropy_bits
    }

    pub fn probability(&self, cell: Cell) -> f64 {
        self.support
            .iter()
            .find(|s| s.0 == cell)
            .map_or(0.0, |s| s.1)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Cell {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for &(cell, p) in &self.support {
            acc += p;
            if u < acc {
                return cell;
            }
        }
        self.support.last().unwrap().0
    }
}

impl Default for GoalDistribution {
    fn default() -> Self {
        Self::default_distribution()
    }
}

pub fn in_grid((x, y): Cell) -> bool {
    (0..GRID_SIZE).contains(&x) && (0..GRID_SIZE).contains(&y)
}

/// Coordinates scaled to `[0, 1]`.
pub fn normalize((x, y): Cell) -> [f64; 2] {
    let s = f64::from(GRID_SIZE - 1);
    [f64::from(x) / s, f64::from(y) / s]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub goal: Cell,
    pub listener_pos: Cell,
    pub t: u32,
    pub done: bool,
    pub success: bool,
}

impl EnvState {
    pub fn speaker_obs(&self) -> [f64; 2] {
        normalize(self.goal)
    }

    pub fn listener_obs(&self) -> [f64; 2] {
        normalize(self.listener_pos)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
}

#[derive(Clone, Debug)]
pub struct GoalEnv {
    distribution: GoalDistribution,
}

impl GoalEnv {
    pub fn new(distribution: GoalDistribution) -> Self {
        Self { distribution }
    }

    pub fn distribution(&self) -> &GoalDistribution {
        &self.distribution
    }

    /// Samples a goal and a listener start cell distinct from it.
    pub fn reset(&self, seed: u64) -> EnvState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let goal = self.distribution.sample(&mut rng);
        let listener_pos = loop {
            let cell = (rng.gen_range(0..GRID_SIZE), rng.gen_range(0..GRID_SIZE));
            if cell != goal {
                break cell;
            }
        };
        self.reset_to(goal, listener_pos)
    }

    /// Starts an episode from explicit cells.
    pub fn reset_to(&self, goal: Cell, listener_pos: Cell) -> EnvState {
        debug_assert!(in_grid(goal) && in_grid(listener_pos));
        EnvState {
            goal,
            listener_pos,
            t: 0,
            done: false,
            success: false,
        }
    }

    pub fn step(&self, state: &mut EnvState, action: Action) -> Result<StepOutcome> {
        if state.done {
            return Err(DdclError::EpisodeDone);
        }
        let (dx, dy) = action.delta();
        state.listener_pos = (
            (state.listener_pos.0 + dx).clamp(0, GRID_SIZE - 1),
            (state.listener_pos.1 + dy).clamp(0, GRID_SIZE - 1),
        );
        state.t += 1;
        let reward = if state.listener_pos == state.goal {
            state.done = true;
            state.success = true;
            SUCCESS_REWARD
        } else {
            if state.t >= MAX_STEPS {
                state.done = true;
            }
            STEP_PENALTY
        };
        Ok(StepOutcome {
            reward,
            done: state.done,
        })
    }
}

impl Default for GoalEnv {
    fn default() -> Self {
        Self::new(GoalDistribution::default_distribution())
    }
}

/// Greedy Manhattan walk toward a known goal: close `x` first, then `y`.
pub fn oracle_action(pos: Cell, goal: Cell) -> Action {
    if pos.0 < goal.0 {
        Action::Right
    } else if pos.0 > goal.0 {
        Action::Left
    } else if pos.1 < goal.1 {
        Action::Up
    } else if pos.1 > goal.1 {
        Action::Down
    } else {
        Action::Stay
    }
}
