//! Deterministic continuous-control environments.
//!
//! | name           | state                         | action        | horizon |
//! |----------------|-------------------------------|---------------|---------|
//! | `pendulum`     | `[cos θ, sin θ, θ̇]`          | torque ∈ [-2, 2] | 200  |
//! | `mountain-car` | `[position, velocity]`        | force ∈ [-1, 1]  | 500  |
//! | `point-mass`   | `[x, y, vx, vy]`              | force ∈ [-1, 1]² | 200  |
//!
//! Reward formulas, units and step sizes are documented on each type. All
//! environments integrate with fixed-step semi-implicit Euler, clamp actions into
//! bounds, and truncate at the horizon. A finished episode must be `reset`
//! before stepping again.

mod mountain_car;
mod pendulum;
mod point_mass;

pub use mountain_car::MountainCar;
pub use pendulum::Pendulum;
pub use point_mass::PointMass;

use crate::error::{Error, Result};
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub max_steps: usize,
}

impl EnvSpec {
    pub fn new(state_dim: usize, action_low: Vec<f64>, action_high: Vec<f64>, max_steps: usize) -> Result<Self> {
        if state_dim == 0 || action_low.is_empty() || action_low.len() != action_high.len() {
            return Err(Error::Config("environment dimensions must be positive and bounds paired".into()));
        }
        if action_low.iter().zip(&action_high).any(|(l, h)| !(l < h)) {
            return Err(Error::Config("action bounds need low < high in every dimension".into()));
        }
        if max_steps == 0 {
            return Err(Error::Config("max episode length must be positive".into()));
        }
        Ok(Self {
            state_dim,
            action_dim: action_low.len(),
            action_low,
            action_high,
            max_steps,
        })
    }

    pub fn clamp_action(&self, action: &[f64]) -> Vec<f64> {
        action
            .iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(&a, (&lo, &hi))| a.clamp(lo, hi))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub reward: f64,
    /// Absorbing state reached; no bootstrapping past it.
    pub terminal: bool,
    /// Time limit reached; the state is not absorbing.
    pub truncated: bool,
}

impl StepResult {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

pub trait Environment: Send {
    fn name(&self) -> &'static str;

    fn spec(&self) -> &EnvSpec;

    /// Starts a new episode; the initial state is a function of `seed` only.
    fn reset(&mut self, seed: u64) -> Vec<f64>;

    /// Advances one step with the action clamped into bounds.
    fn step(&mut self, action: &[f64]) -> Result<StepResult>;
}

/// Step bookkeeping shared by the environments.
#[derive(Debug, Clone, Default)]
pub(crate) struct EpisodeClock {
    steps: usize,
    active: bool,
}

impl EpisodeClock {
    pub(crate) fn start(&mut self) {
        self.steps = 0;
        self.active = true;
    }

    pub(crate) fn check_active(&self, env: &str) -> Result<()> {
        if self.active {
            Ok(())
        } else {
            Err(Error::Usage(format!("{env}: step called on a finished or unstarted episode; call reset")))
        }
    }

    /// Records one step and returns whether the horizon was hit.
    pub(crate) fn tick(&mut self, terminal: bool, max_steps: usize) -> bool {
        self.steps += 1;
        let truncated = !terminal && self.steps >= max_steps;
        if terminal || truncated {
            self.active = false;
        }
        truncated
    }
}

pub const ENV_NAMES: [&str; 3] = ["pendulum", "mountain-car", "point-mass"];

pub fn make_env(name: &str) -> Result<Box<dyn Environment>> {
    match name {
        "pendulum" => Ok(Box::new(Pendulum::new())),
        "mountain-car" => Ok(Box::new(MountainCar::new())),
        "point-mass" => Ok(Box::new(PointMass::new())),
        other => Err(Error::Config(format!(
            "unknown environment `{other}` (expected one of {})",
            ENV_NAMES.join(", ")
        ))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub mean: f64,
    /// Population variance of the episode returns.
    pub variance: f64,
    pub returns: Vec<f64>,
}

/// Runs `episodes` full episodes with `policy` and reports the undiscounted return
/// mean and population variance. Episode `j` resets with
/// `derive_seed(seed, "eval-episode", j)`.
pub fn evaluate_policy<F>(env: &mut dyn Environment, mut policy: F, episodes: usize, seed: u64) -> Result<EvalResult>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let mut returns = Vec::with_capacity(episodes);
    for j in 0..episodes {
        let mut state = env.reset(derive_seed(seed, "eval-episode", j as u64));
        let mut total = 0.0;
        loop {
            let action = policy(&state)?;
            let step = env.step(&action)?;
            total += step.reward;
            if step.done() {
                break;
            }
            state = step.next_state;
        }
        returns.push(total);
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let variance = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    Ok(EvalResult {
        mean,
        variance,
        returns,
    })
}
