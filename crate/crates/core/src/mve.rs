//! Model-based value expansion targets.
//!
//! From each non-terminal next state the current policy is rolled through
//! randomly chosen ensemble members for H steps; imagined rewards are summed
//! with discounting and the tail is bootstrapped with the soft target critic:
//!
//! `y = r + Σ_{k=1..H} γ^k r̂_k + γ^{H+1} (min(Q'1, Q'2)(s_H, a_H) - α log π(a_H|s_H))`
//!
//! Rollouts assume the episode does not end inside the horizon. With H = 0,
//! no model, or a model that is not ready yet, targets are the model-free ones.

use crate::approximator::Matrix;
use crate::error::{Error, Result};
use crate::replay::Batch;
use crate::rng::Rng;
use crate::sac::SacAgent;
use crate::worldmodel::DynamicsModel;

#[derive(Debug, Clone, PartialEq)]
pub struct MveConfig {
    pub horizon: usize,
    pub gamma: f64,
}

impl Default for MveConfig {
    fn default() -> Self {
        Self {
            horizon: 2,
            gamma: 0.99,
        }
    }
}

impl MveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MveTargets {
    pub targets: Vec<f64>,
    /// Rows whose target came from an imagined rollout.
    pub expanded: usize,
    /// The model was missing or not ready, so every row used the model-free target.
    pub fell_back: bool,
}

/// Critic targets for `batch`. Terminal rows always take the model-free value
/// `r`; they never trigger a rollout.
pub fn mve_targets<M: DynamicsModel + ?Sized>(
    agent: &SacAgent,
    model: Option<&M>,
    batch: &Batch,
    cfg: &MveConfig,
    rng: &mut Rng,
) -> Result<MveTargets> {
    cfg.validate()?;
    let model = match model {
        Some(m) if cfg.horizon > 0 && m.is_ready() => m,
        _ => {
            return Ok(MveTargets {
                targets: agent.critic_targets_with_gamma(batch, cfg.gamma, rng)?,
                expanded: 0,
                fell_back: cfg.horizon > 0,
            });
        }
    };

    let mut targets = batch.rewards.clone();
    let live: Vec<usize> = (0..batch.len()).filter(|&i| !batch.terminals[i]).collect();
    if live.is_empty() {
        return Ok(MveTargets {
            targets,
            expanded: 0,
            fell_back: false,
        });
    }

    let mut states = batch.next_states.select_rows(&live);
    let mut imagined = vec![0.0; live.len()];
    let mut discount = 1.0;
    for _ in 0..cfg.horizon {
        discount *= cfg.gamma;
        let (actions, _) = agent.policy.sample_batch(&states, rng)?;
        let (next, rewards) = model.predict_random_batch(&states, &actions, rng)?;
        for (acc, r) in imagined.iter_mut().zip(&rewards) {
            *acc += discount * r;
        }
        states = next;
    }
    discount *= cfg.gamma;
    let tail = soft_tail(agent, &states, rng)?;

    for (k, &i) in live.iter().enumerate() {
        targets[i] += imagined[k] + discount * tail[k];
    }
    if targets.iter().any(|y| !y.is_finite()) {
        return Err(Error::NonFinite("value-expansion target".into()));
    }
    Ok(MveTargets {
        targets,
        expanded: live.len(),
        fell_back: false,
    })
}

fn soft_tail(agent: &SacAgent, states: &Matrix, rng: &mut Rng) -> Result<Vec<f64>> {
    let (actions, log_probs) = agent.policy.sample_batch(states, rng)?;
    let q = agent.critics.target_min_values(states, &actions)?;
    let alpha = agent.temperature.alpha();
    Ok(q.iter().zip(&log_probs).map(|(q, lp)| q - alpha * lp).collect())
}

/// Critic regression onto value-expansion targets; actor and temperature
/// updates are untouched.
pub fn update_critics_mve<M: DynamicsModel + ?Sized>(
    agent: &mut SacAgent,
    model: Option<&M>,
    batch: &Batch,
    cfg: &MveConfig,
    rng: &mut Rng,
) -> Result<(f64, MveTargets)> {
    let targets = mve_targets(agent, model, batch, cfg, rng)?;
    let loss = agent.update_critics_toward(batch, &targets.targets)?;
    Ok((loss, targets))
}
