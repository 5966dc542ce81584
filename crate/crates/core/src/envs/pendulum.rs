use std::f64::consts::PI;

use rand::Rng as _;

use super::{EnvSpec, Environment, EpisodeClock, StepResult};
use crate::error::Result;
use crate::rng::rng_from_seed;

/// Torque-limited pendulum swing-up.
///
/// Angle `θ` is measured from upright (θ = 0 is the unstable equilibrium).
/// Dynamics, with g = 10, m = 1, l = 1, dt = 0.05 s:
///
/// ```text
/// θ̇' = clip(θ̇ + (3g/(2l) sin θ + 3/(m l²) u) dt, ±8)
/// θ'  = θ + θ̇' dt
/// r   = -(wrap(θ)² + 0.1 θ̇² + 0.001 u²)
/// ```
///
/// Observation `[cos θ, sin θ, θ̇]`. Initial θ ~ U[-π, π], θ̇ ~ U[-1, 1].
/// Reward lies in `[-(π² + 6.4 + 0.004), 0]`. Never terminates; truncates at 200 steps.
#[derive(Debug, Clone)]
pub struct Pendulum {
    spec: EnvSpec,
    theta: f64,
    theta_dot: f64,
    clock: EpisodeClock,
}

impl Pendulum {
    pub const GRAVITY: f64 = 10.0;
    pub const MASS: f64 = 1.0;
    pub const LENGTH: f64 = 1.0;
    pub const DT: f64 = 0.05;
    pub const MAX_SPEED: f64 = 8.0;
    pub const MAX_TORQUE: f64 = 2.0;

    pub fn new() -> Self {
        Self {
            spec: EnvSpec::new(3, vec![-Self::MAX_TORQUE], vec![Self::MAX_TORQUE], 200).expect("static spec"),
            theta: 0.0,
            theta_dot: 0.0,
            clock: EpisodeClock::default(),
        }
    }

    /// Overrides the physical state and starts a fresh episode from it.
    pub fn set_state(&mut self, theta: f64, theta_dot: f64) -> Vec<f64> {
        self.theta = theta;
        self.theta_dot = theta_dot;
        self.clock.start();
        self.observe()
    }

    pub fn angle(&self) -> f64 {
        self.theta
    }

    pub fn angular_velocity(&self) -> f64 {
        self.theta_dot
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }
}

impl Default for Pendulum {
    fn default() -> Self {
        Self::new()
    }
}

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

impl Environment for Pendulum {
    fn name(&self) -> &'static str {
        "pendulum"
    }

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        let theta = rng.random_range(-PI..PI);
        let theta_dot = rng.random_range(-1.0..1.0);
        self.set_state(theta, theta_dot)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        self.clock.check_active("pendulum")?;
        let u = self.spec.clamp_action(action)[0];
        let (g, m, l, dt) = (Self::GRAVITY, Self::MASS, Self::LENGTH, Self::DT);
        let th = wrap_angle(self.theta);
        let reward = -(th * th + 0.1 * self.theta_dot * self.theta_dot + 0.001 * u * u);
        let accel = 3.0 * g / (2.0 * l) * self.theta.sin() + 3.0 / (m * l * l) * u;
        self.theta_dot = (self.theta_dot + accel * dt).clamp(-Self::MAX_SPEED, Self::MAX_SPEED);
        self.theta += self.theta_dot * dt;
        let truncated = self.clock.tick(false, self.spec.max_steps);
        Ok(StepResult {
            next_state: self.observe(),
            reward,
            terminal: false,
            truncated,
        })
    }
}
