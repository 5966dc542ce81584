use rand::Rng as _;

use super::{EnvSpec, Environment, EpisodeClock, StepResult};
use crate::error::Result;
use crate::rng::rng_from_seed;

/// Planar point mass pushed toward a fixed goal.
///
/// State `[x, y, vx, vy]`, action `[fx, fy] ∈ [-1, 1]²`, dt = 0.1:
///
/// ```text
/// v' = clip(v + (f - 0.5 v) dt, ±2)      per axis
/// p' = clip(p + v' dt, ±3)               velocity component zeroed on wall contact
/// r  = 10 (|p - g| - |p' - g|) - 0.01 |f|²
/// ```
///
/// Goal `g = (2, 2)`. Spawn position ~ U[-2, -1]², velocity 0. Never terminates;
/// truncates at 200 steps.
#[derive(Debug, Clone)]
pub struct PointMass {
    spec: EnvSpec,
    state: [f64; 4],
    clock: EpisodeClock,
}

impl PointMass {
    pub const DT: f64 = 0.1;
    pub const DAMPING: f64 = 0.5;
    pub const MAX_SPEED: f64 = 2.0;
    pub const ARENA: f64 = 3.0;
    pub const GOAL: [f64; 2] = [2.0, 2.0];
    pub const SPAWN_LOW: f64 = -2.0;
    pub const SPAWN_HIGH: f64 = -1.0;
    pub const PROGRESS_SCALE: f64 = 10.0;

    pub fn new() -> Self {
        Self {
            spec: EnvSpec::new(4, vec![-1.0, -1.0], vec![1.0, 1.0], 200).expect("static spec"),
            state: [0.0; 4],
            clock: EpisodeClock::default(),
        }
    }

    pub fn set_state(&mut self, state: [f64; 4]) -> Vec<f64> {
        self.state = state;
        self.clock.start();
        state.to_vec()
    }

    pub fn goal_distance(position: &[f64]) -> f64 {
        let dx = position[0] - Self::GOAL[0];
        let dy = position[1] - Self::GOAL[1];
        (dx * dx + dy * dy).sqrt()
    }
}

impl Default for PointMass {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for PointMass {
    fn name(&self) -> &'static str {
        "point-mass"
    }

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        let x = rng.random_range(Self::SPAWN_LOW..Self::SPAWN_HIGH);
        let y = rng.random_range(Self::SPAWN_LOW..Self::SPAWN_HIGH);
        self.set_state([x, y, 0.0, 0.0])
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        self.clock.check_active("point-mass")?;
        let force = self.spec.clamp_action(action);
        let before = Self::goal_distance(&self.state[..2]);
        let mut next = self.state;
        for axis in 0..2 {
            let v = self.state[2 + axis];
            let mut v_next = (v + (force[axis] - Self::DAMPING * v) * Self::DT).clamp(-Self::MAX_SPEED, Self::MAX_SPEED);
            let p = self.state[axis] + v_next * Self::DT;
            let p_next = p.clamp(-Self::ARENA, Self::ARENA);
            if p_next != p {
                v_next = 0.0;
            }
            next[axis] = p_next;
            next[2 + axis] = v_next;
        }
        let after = Self::goal_distance(&next[..2]);
        let effort = force.iter().map(|f| f * f).sum::<f64>();
        let reward = Self::PROGRESS_SCALE * (before - after) - 0.01 * effort;
        self.state = next;
        let truncated = self.clock.tick(false, self.spec.max_steps);
        Ok(StepResult {
            next_state: next.to_vec(),
            reward,
            terminal: false,
            truncated,
        })
    }
}
