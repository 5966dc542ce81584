//! Ensemble of dynamics models and its disagreement-based uncertainty.
//!
//! Each member maps `[normalized state, action]` to `[normalized Δ, normalized
//! reward]` where `Δ = s' - s`. Normalization statistics come from the replay
//! buffer the members train on and are snapshotted at every training call so
//! that predictions use the same scaling the members were fitted with.
//!
//! The uncertainty of a state-action pair is the per-dimension population
//! variance (divide by M) of the members' denormalized next-state predictions,
//! summed over state dimensions.

use std::path::Path;

use rand::Rng as _;

use crate::approximator::{optimizer_step, Activation, Adam, Matrix, Mlp};
use crate::container::Container;
use crate::error::{Error, Result};
use crate::replay::{NormStats, ReplayBuffer};
use crate::rng::{derive_seed, rng_from_seed, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct WorldModelConfig {
    /// Ensemble size M (at least 2).
    pub members: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub lr: f64,
    /// Also add the variance of predicted rewards to the uncertainty.
    pub reward_in_uncertainty: bool,
}

impl Default for WorldModelConfig {
    fn default() -> Self {
        Self {
            members: 5,
            hidden: vec![64, 64],
            activation: Activation::Relu,
            lr: 1e-3,
            reward_in_uncertainty: false,
        }
    }
}

/// Predictions of every member for one state-action pair.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsemblePrediction {
    pub next_states: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    /// Per-dimension population variance of `next_states`.
    pub variance: Vec<f64>,
    /// Sum of `variance` (plus reward variance when configured).
    pub uncertainty: f64,
}

/// Per-dimension population variance across `points` and its sum.
pub fn disagreement<P: AsRef<[f64]>>(points: &[P]) -> (Vec<f64>, f64) {
    let m = points.len() as f64;
    let dim = points.first().map_or(0, |p| p.as_ref().len());
    let variance: Vec<f64> = (0..dim)
        .map(|d| {
            // shifted by the first member so identical predictions give exactly zero
            let origin = points[0].as_ref()[d];
            let shift = |p: &P| p.as_ref()[d] - origin;
            let mean = points.iter().map(shift).sum::<f64>() / m;
            points.iter().map(|p| (shift(p) - mean).powi(2)).sum::<f64>() / m
        })
        .collect();
    let total = variance.iter().sum();
    (variance, total)
}

/// Anything that can predict next states and rewards with several members.
pub trait DynamicsModel {
    fn member_count(&self) -> usize;

    /// Denormalized next states and rewards of member `m` for a batch.
    fn predict_member(&self, m: usize, states: &Matrix, actions: &Matrix) -> Result<(Matrix, Vec<f64>)>;

    fn is_ready(&self) -> bool {
        true
    }

    /// Picks a member uniformly at random per row and returns its predictions.
    fn predict_random_batch(&self, states: &Matrix, actions: &Matrix, rng: &mut Rng) -> Result<(Matrix, Vec<f64>)> {
        let members = self.member_count();
        let choice: Vec<usize> = (0..states.rows()).map(|_| rng.random_range(0..members)).collect();
        let mut next = Matrix::zeros(states.rows(), states.cols());
        let mut rewards = vec![0.0; states.rows()];
        for m in 0..members {
            let rows: Vec<usize> = (0..choice.len()).filter(|&i| choice[i] == m).collect();
            if rows.is_empty() {
                continue;
            }
            let (pred, rew) = self.predict_member(m, &states.select_rows(&rows), &actions.select_rows(&rows))?;
            for (k, &i) in rows.iter().enumerate() {
                next.row_mut(i).copy_from_slice(pred.row(k));
                rewards[i] = rew[k];
            }
        }
        Ok((next, rewards))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    cfg: WorldModelConfig,
    state_dim: usize,
    action_dim: usize,
    members: Vec<Mlp>,
    opts: Vec<Adam>,
    batch_rngs: Vec<Rng>,
    stats: Option<NormStats>,
    train_steps: u64,
}

impl Ensemble {
    /// Member `m` is initialized from `derive_seed(seed, "model-init", m)` and
    /// draws its training batches from `derive_seed(seed, "model-batch", m)`.
    pub fn new(state_dim: usize, action_dim: usize, cfg: WorldModelConfig, seed: u64) -> Result<Self> {
        let init: Vec<u64> = (0..cfg.members as u64).map(|m| derive_seed(seed, "model-init", m)).collect();
        let batch: Vec<u64> = (0..cfg.members as u64).map(|m| derive_seed(seed, "model-batch", m)).collect();
        Self::with_seeds(state_dim, action_dim, cfg, &init, &batch)
    }

    /// Explicit per-member initialization and batch-sampling seeds.
    pub fn with_seeds(
        state_dim: usize,
        action_dim: usize,
        cfg: WorldModelConfig,
        init_seeds: &[u64],
        batch_seeds: &[u64],
    ) -> Result<Self> {
        if cfg.members < 2 {
            return Err(Error::Config(format!(
                "an ensemble needs at least 2 members for a variance, got {}",
                cfg.members
            )));
        }
        if init_seeds.len() != cfg.members || batch_seeds.len() != cfg.members {
            return Err(Error::shape("Ensemble seeds", cfg.members, init_seeds.len().min(batch_seeds.len())));
        }
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend(&cfg.hidden);
        sizes.push(state_dim + 1);
        let members = init_seeds
            .iter()
            .map(|&s| Mlp::new(&sizes, cfg.activation, Activation::Identity, &mut rng_from_seed(s)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            opts: members.iter().map(|m| Adam::for_net(cfg.lr, m)).collect(),
            batch_rngs: batch_seeds.iter().map(|&s| rng_from_seed(s)).collect(),
            members,
            cfg,
            state_dim,
            action_dim,
            stats: None,
            train_steps: 0,
        })
    }

    pub fn config(&self) -> &WorldModelConfig {
        &self.cfg
    }

    pub fn members(&self) -> &[Mlp] {
        &self.members
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    pub fn stats(&self) -> Option<&NormStats> {
        self.stats.as_ref()
    }

    /// Normalization statistics are available.
    pub fn ready(&self) -> bool {
        self.stats.as_ref().is_some_and(|s| s.is_ready())
    }

    fn ready_stats(&self) -> Result<&NormStats> {
        match &self.stats {
            Some(s) if s.is_ready() => Ok(s),
            _ => Err(Error::InsufficientData(
                "ensemble has no normalization statistics yet; train it after the warmup phase".into(),
            )),
        }
    }

    fn inputs(&self, stats: &NormStats, states: &Matrix, actions: &Matrix) -> Result<Matrix> {
        if states.cols() != self.state_dim || actions.cols() != self.action_dim {
            return Err(Error::shape(
                "Ensemble inputs",
                format!("{}+{}", self.state_dim, self.action_dim),
                format!("{}+{}", states.cols(), actions.cols()),
            ));
        }
        let mut x = Matrix::zeros(states.rows(), self.state_dim + self.action_dim);
        for i in 0..states.rows() {
            let row = x.row_mut(i);
            row[..self.state_dim].copy_from_slice(&stats.state.normalize(states.row(i)));
            row[self.state_dim..].copy_from_slice(actions.row(i));
        }
        Ok(x)
    }

    /// `steps` gradient steps per member on `[normalized Δ, normalized r]`
    /// targets, each member drawing its own batches from `buffer`. Returns the
    /// last step's loss per member, or `None` (nothing trained) when the buffer
    /// holds fewer than `batch` transitions.
    pub fn train_ensemble(&mut self, buffer: &ReplayBuffer, steps: usize, batch: usize) -> Result<Option<Vec<f64>>> {
        if batch == 0 || buffer.len() < batch.max(2) {
            return Ok(None);
        }
        let stats = buffer.stats().clone();
        let mut losses = vec![0.0; self.members.len()];
        for _ in 0..steps {
            for m in 0..self.members.len() {
                let sample = buffer.sample_transitions(batch, &mut self.batch_rngs[m])?;
                let states = Matrix::from_rows(&sample.iter().map(|t| t.state.as_slice()).collect::<Vec<_>>())?;
                let actions = Matrix::from_rows(&sample.iter().map(|t| t.action.as_slice()).collect::<Vec<_>>())?;
                let x = self.inputs(&stats, &states, &actions)?;
                let (out, trace) = self.members[m].forward_trace(&x)?;
                let width = self.state_dim + 1;
                let scale = 1.0 / (batch * width) as f64;
                let mut up = Matrix::zeros(batch, width);
                let mut loss = 0.0;
                for (i, t) in sample.iter().enumerate() {
                    let delta: Vec<f64> = t.next_state.iter().zip(&t.state).map(|(n, s)| n - s).collect();
                    let mut target = stats.delta.normalize(&delta);
                    target.push(stats.reward.normalize(&[t.reward])[0]);
                    for (j, y) in target.iter().enumerate() {
                        let e = out.get(i, j) - y;
                        loss += e * e * scale;
                        up.row_mut(i)[j] = 2.0 * e * scale;
                    }
                }
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!("world model member {m} loss is {loss}")));
                }
                let bp = self.members[m].backward(&trace, &up)?;
                optimizer_step(&mut self.members[m], &bp.tape, &mut self.opts[m])?;
                losses[m] = loss;
            }
            self.train_steps += 1;
        }
        self.stats = Some(stats);
        Ok(Some(losses))
    }

    fn decode(&self, stats: &NormStats, states: &Matrix, out: &Matrix) -> (Matrix, Vec<f64>) {
        let mut next = Matrix::zeros(states.rows(), self.state_dim);
        let mut rewards = Vec::with_capacity(states.rows());
        for i in 0..states.rows() {
            let row = out.row(i);
            let delta = stats.delta.denormalize(&row[..self.state_dim]);
            for ((n, s), d) in next.row_mut(i).iter_mut().zip(states.row(i)).zip(&delta) {
                *n = s + d;
            }
            rewards.push(stats.reward.denormalize(&row[self.state_dim..])[0]);
        }
        (next, rewards)
    }

    /// Predictions of every member plus the disagreement, one entry per row.
    pub fn predict_all_batch(&self, states: &Matrix, actions: &Matrix) -> Result<Vec<EnsemblePrediction>> {
        let stats = self.ready_stats()?;
        let x = self.inputs(stats, states, actions)?;
        let per_member: Vec<(Matrix, Vec<f64>)> = self
            .members
            .iter()
            .map(|net| net.forward(&x).map(|out| self.decode(stats, states, &out)))
            .collect::<Result<_>>()?;
        Ok((0..states.rows())
            .map(|i| {
                let next_states: Vec<Vec<f64>> = per_member.iter().map(|(n, _)| n.row(i).to_vec()).collect();
                let rewards: Vec<f64> = per_member.iter().map(|(_, r)| r[i]).collect();
                let (variance, mut uncertainty) = disagreement(&next_states);
                if self.cfg.reward_in_uncertainty {
                    let r: Vec<[f64; 1]> = rewards.iter().map(|&r| [r]).collect();
                    uncertainty += disagreement(&r).1;
                }
                EnsemblePrediction {
                    next_states,
                    rewards,
                    variance,
                    uncertainty,
                }
            })
            .collect())
    }

    pub fn predict_all(&self, state: &[f64], action: &[f64]) -> Result<EnsemblePrediction> {
        let mut v = self.predict_all_batch(&Matrix::row_vector(state), &Matrix::row_vector(action))?;
        Ok(v.remove(0))
    }

    /// Prediction of one uniformly chosen member; also returns the member index.
    pub fn predict_random(&self, state: &[f64], action: &[f64], rng: &mut Rng) -> Result<(Vec<f64>, f64, usize)> {
        let m = rng.random_range(0..self.members.len());
        let (next, reward) = self.predict_member(m, &Matrix::row_vector(state), &Matrix::row_vector(action))?;
        Ok((next.row(0).to_vec(), reward[0], m))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut c = Container::new("ensemble");
        c.push_u64("dims", &[self.state_dim as u64, self.action_dim as u64, self.members.len() as u64]);
        for (m, net) in self.members.iter().enumerate() {
            net.write_entries(&format!("member{m}"), &mut c);
        }
        if let Some(stats) = &self.stats {
            stats.write_entries("stats", &mut c);
        }
        c.push_u64("train_steps", &[self.train_steps]);
        c.write(path)
    }

    /// Restores members and statistics; optimizer moments and batch streams are
    /// re-created from `cfg` and `seed` as in [`Ensemble::new`].
    pub fn load(path: &Path, cfg: WorldModelConfig, seed: u64) -> Result<Self> {
        let c = Container::read(path)?;
        c.expect_kind("ensemble")?;
        let dims = c.u64s("dims")?;
        let [sd, ad, m] = dims else {
            return Err(Error::Format {
                what: "ensemble checkpoint",
                reason: "dims entry must hold 3 values".into(),
            });
        };
        let cfg = WorldModelConfig {
            members: *m as usize,
            ..cfg
        };
        let mut e = Self::new(*sd as usize, *ad as usize, cfg, seed)?;
        for (i, net) in e.members.iter_mut().enumerate() {
            *net = Mlp::read_entries(&format!("member{i}"), &c)?;
        }
        e.opts = e.members.iter().map(|n| Adam::for_net(e.cfg.lr, n)).collect();
        e.stats = NormStats::read_entries("stats", &c).ok();
        e.train_steps = c.u64s("train_steps")?.first().copied().unwrap_or(0);
        Ok(e)
    }
}

impl DynamicsModel for Ensemble {
    fn member_count(&self) -> usize {
        self.members.len()
    }

    fn predict_member(&self, m: usize, states: &Matrix, actions: &Matrix) -> Result<(Matrix, Vec<f64>)> {
        let stats = self.ready_stats()?;
        let net = self
            .members
            .get(m)
            .ok_or_else(|| Error::Usage(format!("member {m} out of range")))?;
        let out = net.forward(&self.inputs(stats, states, actions)?)?;
        Ok(self.decode(stats, states, &out))
    }

    fn is_ready(&self) -> bool {
        self.ready()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::replay::Transition;

    fn small_cfg(members: usize) -> WorldModelConfig {
        WorldModelConfig {
            members,
            hidden: vec![16],
            ..WorldModelConfig::default()
        }
    }

    fn filled_buffer(n: usize) -> ReplayBuffer {
        let mut b = ReplayBuffer::new(1000, 1, 1).unwrap();
        for i in 0..n {
            let s = (i as f64 * 0.37).sin();
            let a = (i as f64 * 0.91).cos();
            b.push(Transition {
                state: vec![s],
                action: vec![a],
                reward: -s * s,
                next_state: vec![s + 0.1 * a],
                terminal: false,
            })
            .unwrap();
        }
        b
    }

    #[test]
    fn disagreement_examples() {
        let (v, u) = disagreement(&[[0.0], [2.0]]);
        assert_eq!((v, u), (vec![1.0], 1.0));
        let (v, u) = disagreement(&[[0.0, 0.0], [2.0, 2.0]]);
        assert_eq!((v, u), (vec![1.0, 1.0], 2.0));
        let (v, u) = disagreement(&[[3.0, -1.0]; 4]);
        assert_eq!((v, u), (vec![0.0, 0.0], 0.0));
    }

    #[test]
    fn single_member_is_rejected() {
        assert!(matches!(Ensemble::new(2, 1, small_cfg(1), 0), Err(Error::Config(_))));
    }

    #[test]
    fn prediction_before_training_is_an_error() {
        let e = Ensemble::new(1, 1, small_cfg(3), 0).unwrap();
        assert!(matches!(e.predict_all(&[0.0], &[0.0]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn training_skips_without_enough_data() {
        let mut e = Ensemble::new(1, 1, small_cfg(2), 0).unwrap();
        assert_eq!(e.train_ensemble(&filled_buffer(10), 1, 32).unwrap(), None);
        assert_eq!(e.train_steps(), 0);
    }

    #[test]
    fn identical_members_never_disagree() {
        let mut e = Ensemble::with_seeds(1, 1, small_cfg(3), &[4, 4, 4], &[9, 9, 9]).unwrap();
        let buffer = filled_buffer(200);
        for _ in 0..20 {
            e.train_ensemble(&buffer, 1, 32).unwrap().unwrap();
            for probe in [-2.0, 0.0, 0.5] {
                let p = e.predict_all(&[probe], &[probe * 0.3]).unwrap();
                assert_eq!(p.uncertainty, 0.0);
            }
        }
    }

    #[test]
    fn forced_member_matches_predict_all_entry() {
        let mut e = Ensemble::new(1, 1, small_cfg(4), 1).unwrap();
        e.train_ensemble(&filled_buffer(100), 5, 16).unwrap();
        let all = e.predict_all(&[0.2], &[-0.4]).unwrap();
        for m in 0..4 {
            let (next, rew) = e
                .predict_member(m, &Matrix::row_vector(&[0.2]), &Matrix::row_vector(&[-0.4]))
                .unwrap();
            assert_eq!(next.row(0), all.next_states[m].as_slice());
            assert_eq!(rew[0], all.rewards[m]);
        }
    }

    #[test]
    fn random_member_choice_is_seeded() {
        let mut e = Ensemble::new(1, 1, small_cfg(5), 2).unwrap();
        e.train_ensemble(&filled_buffer(50), 1, 16).unwrap();
        let a = e.predict_random(&[0.1], &[0.1], &mut rng_from_seed(8)).unwrap();
        let b = e.predict_random(&[0.1], &[0.1], &mut rng_from_seed(8)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut e = Ensemble::new(1, 1, small_cfg(3), 5).unwrap();
        e.train_ensemble(&filled_buffer(60), 3, 16).unwrap();
        let path = dir.path().join("ensemble.bin");
        e.save(&path).unwrap();
        let back = Ensemble::load(&path, small_cfg(3), 5).unwrap();
        assert_eq!(back.members(), e.members());
        assert_eq!(back.stats(), e.stats());
        assert_eq!(
            back.predict_all(&[0.3], &[0.2]).unwrap(),
            e.predict_all(&[0.3], &[0.2]).unwrap()
        );
    }
}
