use rand::Rng as _;

use super::{EnvSpec, Environment, EpisodeClock, StepResult};
use crate::error::Result;
use crate::rng::rng_from_seed;

/// Continuous mountain car with a dense forward-progress reward.
///
/// Position in `[-1.2, 0.6]`, velocity in `[-0.07, 0.07]`, one step per tick:
///
/// ```text
/// v' = clip(v + 0.0015 f - 0.0025 cos(3 x), ±0.07)
/// x' = clip(x + v', [-1.2, 0.6])     (v' = 0 when pinned at the left wall moving left)
/// r  = 100 (x' - x) - 0.1 f² + 10 [x' ≥ 0.45]
/// ```
///
/// Reaching `x ≥ 0.45` is terminal. Initial x ~ U[-0.6, -0.4], v = 0.
/// Truncates at 500 steps.
#[derive(Debug, Clone)]
pub struct MountainCar {
    spec: EnvSpec,
    position: f64,
    velocity: f64,
    clock: EpisodeClock,
}

impl MountainCar {
    pub const MIN_POSITION: f64 = -1.2;
    pub const MAX_POSITION: f64 = 0.6;
    pub const MAX_SPEED: f64 = 0.07;
    pub const GOAL_POSITION: f64 = 0.45;
    pub const POWER: f64 = 0.0015;
    pub const GOAL_BONUS: f64 = 10.0;
    pub const PROGRESS_SCALE: f64 = 100.0;

    pub fn new() -> Self {
        Self {
            spec: EnvSpec::new(2, vec![-1.0], vec![1.0], 500).expect("static spec"),
            position: -0.5,
            velocity: 0.0,
            clock: EpisodeClock::default(),
        }
    }

    pub fn set_state(&mut self, position: f64, velocity: f64) -> Vec<f64> {
        self.position = position;
        self.velocity = velocity;
        self.clock.start();
        vec![self.position, self.velocity]
    }
}

impl Default for MountainCar {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for MountainCar {
    fn name(&self) -> &'static str {
        "mountain-car"
    }

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        let x = rng.random_range(-0.6..-0.4);
        self.set_state(x, 0.0)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        self.clock.check_active("mountain-car")?;
        let force = self.spec.clamp_action(action)[0];
        let x = self.position;
        let mut v = self.velocity + force * Self::POWER - 0.0025 * (3.0 * x).cos();
        v = v.clamp(-Self::MAX_SPEED, Self::MAX_SPEED);
        let mut x_next = (x + v).clamp(Self::MIN_POSITION, Self::MAX_POSITION);
        if x_next <= Self::MIN_POSITION && v < 0.0 {
            x_next = Self::MIN_POSITION;
            v = 0.0;
        }
        let terminal = x_next >= Self::GOAL_POSITION;
        let mut reward = Self::PROGRESS_SCALE * (x_next - x) - 0.1 * force * force;
        if terminal {
            reward += Self::GOAL_BONUS;
        }
        self.position = x_next;
        self.velocity = v;
        let truncated = self.clock.tick(terminal, self.spec.max_steps);
        Ok(StepResult {
            next_state: vec![x_next, v],
            reward,
            terminal,
            truncated,
        })
    }
}
