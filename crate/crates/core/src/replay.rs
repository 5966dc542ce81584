//! Bounded FIFO transition store with running normalization statistics.
//!
//! The SAC agent and the world-model ensemble train from the same buffer.

use std::path::Path;

use rand::Rng as _;

use crate::approximator::Matrix;
use crate::container::Container;
use crate::error::{ensure_finite, Error, Result};
use crate::rng::Rng;

/// Lower bound applied to variances before dividing by the standard deviation.
pub const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

/// Welford accumulator with population variance.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningStats {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.mean.len());
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance(&self) -> Vec<f64> {
        if self.count == 0 {
            return vec![0.0; self.mean.len()];
        }
        self.m2.iter().map(|s| (s / self.count as f64).max(0.0)).collect()
    }

    fn std_floored(&self) -> Vec<f64> {
        self.variance()
            .into_iter()
            .map(|v| v.max(VARIANCE_FLOOR).sqrt())
            .collect()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(self.std_floored())
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.mean)
            .zip(self.std_floored())
            .map(|((v, m), s)| v * s + m)
            .collect()
    }

    fn write_entries(&self, prefix: &str, c: &mut Container) {
        c.push_u64(format!("{prefix}.count"), &[self.count]);
        c.push_f64(format!("{prefix}.mean"), &self.mean);
        c.push_f64(format!("{prefix}.m2"), &self.m2);
    }

    fn read_entries(prefix: &str, c: &Container) -> Result<Self> {
        let count = c.u64s(&format!("{prefix}.count"))?;
        let mean = c.f64s(&format!("{prefix}.mean"))?.to_vec();
        let m2 = c.f64s(&format!("{prefix}.m2"))?.to_vec();
        if count.len() != 1 || mean.len() != m2.len() {
            return Err(Error::Format {
                what: "running stats",
                reason: format!("inconsistent entries under `{prefix}`"),
            });
        }
        Ok(Self {
            count: count[0],
            mean,
            m2,
        })
    }
}

/// Running statistics of states, state differences `Δ = s' - s` and rewards over
/// every transition ever pushed (evictions do not remove contributions).
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub state: RunningStats,
    pub delta: RunningStats,
    pub reward: RunningStats,
}

impl NormStats {
    pub fn new(state_dim: usize) -> Self {
        Self {
            state: RunningStats::new(state_dim),
            delta: RunningStats::new(state_dim),
            reward: RunningStats::new(1),
        }
    }

    pub fn observe(&mut self, t: &Transition) {
        self.state.push(&t.state);
        let delta: Vec<f64> = t.next_state.iter().zip(&t.state).map(|(n, s)| n - s).collect();
        self.delta.push(&delta);
        self.reward.push(&[t.reward]);
    }

    pub fn count(&self) -> u64 {
        self.state.count()
    }

    pub fn is_ready(&self) -> bool {
        self.count() >= 2
    }

    fn ensure_ready(&self) -> Result<()> {
        if self.is_ready() {
            Ok(())
        } else {
            Err(Error::InsufficientData(format!(
                "normalization needs at least 2 transitions, have {}; keep collecting warmup data",
                self.count()
            )))
        }
    }

    pub fn normalize_delta(&self, delta: &[f64]) -> Result<Vec<f64>> {
        self.ensure_ready()?;
        Ok(self.delta.normalize(delta))
    }

    pub fn denormalize_delta(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.ensure_ready()?;
        Ok(self.delta.denormalize(z))
    }

    pub fn normalize_state(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.ensure_ready()?;
        Ok(self.state.normalize(state))
    }

    pub fn normalize_reward(&self, reward: f64) -> Result<f64> {
        self.ensure_ready()?;
        Ok(self.reward.normalize(&[reward])[0])
    }

    pub fn denormalize_reward(&self, z: f64) -> Result<f64> {
        self.ensure_ready()?;
        Ok(self.reward.denormalize(&[z])[0])
    }

    pub fn write_entries(&self, prefix: &str, c: &mut Container) {
        self.state.write_entries(&format!("{prefix}.state"), c);
        self.delta.write_entries(&format!("{prefix}.delta"), c);
        self.reward.write_entries(&format!("{prefix}.reward"), c);
    }

    pub fn read_entries(prefix: &str, c: &Container) -> Result<Self> {
        Ok(Self {
            state: RunningStats::read_entries(&format!("{prefix}.state"), c)?,
            delta: RunningStats::read_entries(&format!("{prefix}.delta"), c)?,
            reward: RunningStats::read_entries(&format!("{prefix}.reward"), c)?,
        })
    }
}

/// Column-stacked minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Matrix,
    pub actions: Matrix,
    pub rewards: Vec<f64>,
    pub next_states: Matrix,
    pub terminals: Vec<bool>,
}

impl Batch {
    pub fn from_transitions<'a, I>(items: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Transition>,
    {
        let items: Vec<&Transition> = items.into_iter().collect();
        if items.is_empty() {
            return Err(Error::InsufficientData("empty batch".into()));
        }
        let states = Matrix::from_rows(&items.iter().map(|t| t.state.as_slice()).collect::<Vec<_>>())?;
        let actions = Matrix::from_rows(&items.iter().map(|t| t.action.as_slice()).collect::<Vec<_>>())?;
        let next_states = Matrix::from_rows(&items.iter().map(|t| t.next_state.as_slice()).collect::<Vec<_>>())?;
        Ok(Self {
            states,
            actions,
            rewards: items.iter().map(|t| t.reward).collect(),
            next_states,
            terminals: items.iter().map(|t| t.terminal).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    state_dim: usize,
    action_dim: usize,
    items: Vec<Transition>,
    /// Slot overwritten by the next push once the ring is full.
    next: usize,
    pushes: u64,
    stats: NormStats,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, state_dim: usize, action_dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            state_dim,
            action_dim,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
            pushes: 0,
            stats: NormStats::new(state_dim),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Total number of accepted pushes.
    pub fn pushes(&self) -> u64 {
        self.pushes
    }

    pub fn stats(&self) -> &NormStats {
        &self.stats
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if t.state.len() != self.state_dim || t.next_state.len() != self.state_dim {
            return Err(Error::shape("ReplayBuffer::push state", self.state_dim, t.state.len()));
        }
        if t.action.len() != self.action_dim {
            return Err(Error::shape("ReplayBuffer::push action", self.action_dim, t.action.len()));
        }
        ensure_finite(&t.state, "transition state")?;
        ensure_finite(&t.action, "transition action")?;
        ensure_finite(&t.next_state, "transition next state")?;
        ensure_finite(&[t.reward], "transition reward")?;

        self.stats.observe(&t);
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
        self.pushes += 1;
        Ok(())
    }

    /// The most recently stored transition.
    pub fn latest(&self) -> Option<&Transition> {
        if self.items.is_empty() {
            None
        } else {
            Some(&self.items[(self.next + self.capacity - 1) % self.capacity])
        }
    }

    /// Stored transitions from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(self.items[..split].iter())
    }

    /// Uniform indices with replacement into the stored items.
    pub fn sample_indices(&self, batch: usize, rng: &mut Rng) -> Result<Vec<usize>> {
        if self.items.is_empty() {
            return Err(Error::InsufficientData("cannot sample from an empty replay buffer".into()));
        }
        Ok((0..batch).map(|_| rng.random_range(0..self.items.len())).collect())
    }

    pub fn sample_transitions(&self, batch: usize, rng: &mut Rng) -> Result<Vec<&Transition>> {
        Ok(self
            .sample_indices(batch, rng)?
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }

    pub fn sample(&self, batch: usize, rng: &mut Rng) -> Result<Batch> {
        Batch::from_transitions(self.sample_transitions(batch, rng)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut c = Container::new("replay");
        c.push_u64(
            "meta",
            &[
                self.capacity as u64,
                self.state_dim as u64,
                self.action_dim as u64,
                self.pushes,
            ],
        );
        let ordered: Vec<&Transition> = self.iter().collect();
        let flat = |f: &dyn Fn(&Transition) -> Vec<f64>| ordered.iter().flat_map(|t| f(t)).collect::<Vec<f64>>();
        c.push_f64("states", &flat(&|t| t.state.clone()));
        c.push_f64("actions", &flat(&|t| t.action.clone()));
        c.push_f64("rewards", &flat(&|t| vec![t.reward]));
        c.push_f64("next_states", &flat(&|t| t.next_state.clone()));
        c.push_u64("terminals", &ordered.iter().map(|t| u64::from(t.terminal)).collect::<Vec<_>>());
        self.stats.write_entries("stats", &mut c);
        c.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::read(path)?;
        c.expect_kind("replay")?;
        let bad = |reason: &str| Error::Format {
            what: "replay snapshot",
            reason: reason.to_string(),
        };
        let meta = c.u64s("meta")?;
        let [capacity, state_dim, action_dim, pushes] = meta else {
            return Err(bad("meta entry must hold 4 values"));
        };
        let (capacity, sd, ad) = (*capacity as usize, *state_dim as usize, *action_dim as usize);
        let rewards = c.f64s("rewards")?;
        let n = rewards.len();
        let states = c.f64s("states")?;
        let actions = c.f64s("actions")?;
        let next_states = c.f64s("next_states")?;
        let terminals = c.u64s("terminals")?;
        if states.len() != n * sd || next_states.len() != n * sd || actions.len() != n * ad || terminals.len() != n || n > capacity {
            return Err(bad("array lengths disagree"));
        }
        let items = (0..n)
            .map(|i| Transition {
                state: states[i * sd..(i + 1) * sd].to_vec(),
                action: actions[i * ad..(i + 1) * ad].to_vec(),
                reward: rewards[i],
                next_state: next_states[i * sd..(i + 1) * sd].to_vec(),
                terminal: terminals[i] != 0,
            })
            .collect();
        Ok(Self {
            capacity,
            state_dim: sd,
            action_dim: ad,
            items,
            next: n % capacity,
            pushes: *pushes,
            stats: NormStats::read_entries("stats", &c)?,
        })
    }
}
