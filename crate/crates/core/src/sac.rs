//! Soft Actor-Critic: squashed-Gaussian actor, twin critics with Polyak-averaged
//! targets, and an automatically tuned entropy temperature.
//!
//! Log-densities are computed for the tanh-squashed action in `[-1, 1]^A`; the
//! affine rescale into the environment's bounds is a constant shift of the
//! log-density and is left out, which is the usual SAC convention and keeps the
//! default target entropy `-A` meaningful for any bounds.

use std::f64::consts::LN_2;

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::approximator::{optimizer_step, soft_update, Activation, Adam, GradientTape, Matrix, Mlp};
use crate::container::Container;
use crate::error::{Error, Result};
use crate::replay::Batch;
use crate::rng::Rng;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `ln(1 - tanh²(u))` in the overflow-free form `2 (ln 2 - u - softplus(-2u))`.
pub fn log1m_tanh_sq(u: f64) -> f64 {
    2.0 * (LN_2 - u - softplus(-2.0 * u))
}

/// Log-density of `tanh(u)` where `u ~ N(mean, exp(log_std)²)`, summed over dimensions.
pub fn squashed_log_density(mean: &[f64], log_std: &[f64], u: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(u)
        .map(|((&m, &ls), &x)| {
            let z = (x - m) / ls.exp();
            -0.5 * z * z - ls - HALF_LN_2PI - log1m_tanh_sq(x)
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub init_alpha: f64,
    /// `None` selects `-action_dim`.
    pub target_entropy: Option<f64>,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::Relu,
            gamma: 0.99,
            tau: 0.005,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            alpha_lr: 1e-3,
            init_alpha: 1.0,
            target_entropy: None,
            log_std_min: -20.0,
            log_std_max: 2.0,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        for (name, lr) in [("actor_lr", self.actor_lr), ("critic_lr", self.critic_lr), ("alpha_lr", self.alpha_lr)] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return bad(format!("{name} must be a non-negative number, got {lr}"));
            }
        }
        if !(self.init_alpha > 0.0 && self.init_alpha.is_finite()) {
            return bad(format!("init_alpha must be positive, got {}", self.init_alpha));
        }
        if !(self.log_std_min < self.log_std_max) {
            return bad("log_std_min must be below log_std_max".into());
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive".into());
        }
        Ok(())
    }
}

/// Actions drawn for one state.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySample {
    /// Squashed, rescaled actions.
    pub actions: Vec<Vec<f64>>,
    /// Pre-squash Gaussian draws `u`.
    pub pre_squash: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    /// `tanh(μ)` rescaled into bounds.
    pub mean_action: Vec<f64>,
}

/// Gaussian policy over pre-squash actions; the network emits `[μ, log σ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    pub net: Mlp,
    pub log_std_min: f64,
    pub log_std_max: f64,
    center: Vec<f64>,
    half_range: Vec<f64>,
}

/// Reparameterized batch sample with everything needed for the actor gradient.
struct Reparam {
    trace: crate::approximator::Trace,
    eps: Vec<f64>,
    tanh_u: Vec<f64>,
    std: Vec<f64>,
    clamped: Vec<bool>,
    actions: Matrix,
    log_probs: Vec<f64>,
}

impl GaussianPolicy {
    pub fn new(state_dim: usize, low: &[f64], high: &[f64], cfg: &SacConfig, rng: &mut Rng) -> Result<Self> {
        let mut sizes = vec![state_dim];
        sizes.extend(&cfg.hidden);
        sizes.push(2 * low.len());
        let net = Mlp::new(&sizes, cfg.activation, Activation::Identity, rng)?;
        Self::from_net(net, low, high, cfg.log_std_min, cfg.log_std_max)
    }

    pub fn from_net(net: Mlp, low: &[f64], high: &[f64], log_std_min: f64, log_std_max: f64) -> Result<Self> {
        if low.len() != high.len() || net.output_dim() != 2 * low.len() {
            return Err(Error::shape("GaussianPolicy", 2 * low.len(), net.output_dim()));
        }
        Ok(Self {
            net,
            log_std_min,
            log_std_max,
            center: low.iter().zip(high).map(|(l, h)| 0.5 * (l + h)).collect(),
            half_range: low.iter().zip(high).map(|(l, h)| 0.5 * (h - l)).collect(),
        })
    }

    pub fn action_dim(&self) -> usize {
        self.center.len()
    }

    pub fn state_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// Midpoint and half-width of the action bounds per dimension.
    pub fn bounds(&self) -> (&[f64], &[f64]) {
        (&self.center, &self.half_range)
    }

    /// Rescales a point of `[-1, 1]^A` into the action bounds.
    pub fn rescale(&self, unit: &[f64]) -> Vec<f64> {
        unit.iter()
            .zip(self.center.iter().zip(&self.half_range))
            .map(|(t, (c, h))| c + h * t)
            .collect()
    }

    pub fn squash(&self, u: &[f64]) -> Vec<f64> {
        self.rescale(&u.iter().map(|x| x.tanh()).collect::<Vec<_>>())
    }

    /// Per-row `(μ, clamped log σ)` for a batch of states.
    pub fn distribution(&self, states: &Matrix) -> Result<(Matrix, Matrix)> {
        let out = self.net.forward(states)?;
        let a = self.action_dim();
        let mean = out.columns(0, a);
        let mut log_std = out.columns(a, 2 * a);
        for v in log_std.data_mut() {
            *v = v.clamp(self.log_std_min, self.log_std_max);
        }
        Ok((mean, log_std))
    }

    /// Deterministic action: the squashed distribution mean.
    pub fn mean_action(&self, state: &[f64]) -> Result<Vec<f64>> {
        let (mean, _) = self.distribution(&Matrix::row_vector(state))?;
        Ok(self.squash(mean.row(0)))
    }

    /// `n` independent actions for one state, with log-densities and the mean action.
    pub fn policy_sample(&self, state: &[f64], n: usize, rng: &mut Rng) -> Result<PolicySample> {
        if n == 0 {
            return Err(Error::Config("policy_sample needs n >= 1".into()));
        }
        let (mean, log_std) = self.distribution(&Matrix::row_vector(state))?;
        let (mean, log_std) = (mean.row(0), log_std.row(0));
        let mut out = PolicySample {
            actions: Vec::with_capacity(n),
            pre_squash: Vec::with_capacity(n),
            log_probs: Vec::with_capacity(n),
            mean_action: self.squash(mean),
        };
        for _ in 0..n {
            let mut logp = 0.0;
            let u: Vec<f64> = mean
                .iter()
                .zip(log_std)
                .map(|(&m, &ls)| {
                    let e: f64 = rng.sample(StandardNormal);
                    let u = m + ls.exp() * e;
                    logp += -0.5 * e * e - ls - HALF_LN_2PI - log1m_tanh_sq(u);
                    u
                })
                .collect();
            out.actions.push(self.squash(&u));
            out.pre_squash.push(u);
            out.log_probs.push(logp);
        }
        Ok(out)
    }

    /// One action per row of `states`, without gradient bookkeeping.
    pub fn sample_batch(&self, states: &Matrix, rng: &mut Rng) -> Result<(Matrix, Vec<f64>)> {
        let (mean, log_std) = self.distribution(states)?;
        let a = self.action_dim();
        let mut actions = Matrix::zeros(states.rows(), a);
        let mut log_probs = Vec::with_capacity(states.rows());
        for i in 0..states.rows() {
            let mut logp = 0.0;
            for d in 0..a {
                let (m, ls) = (mean.get(i, d), log_std.get(i, d));
                let e: f64 = rng.sample(StandardNormal);
                let u = m + ls.exp() * e;
                logp += -0.5 * e * e - ls - HALF_LN_2PI - log1m_tanh_sq(u);
                actions.row_mut(i)[d] = self.center[d] + self.half_range[d] * u.tanh();
            }
            log_probs.push(logp);
        }
        Ok((actions, log_probs))
    }

    fn rsample(&self, states: &Matrix, rng: &mut Rng) -> Result<Reparam> {
        let (out, trace) = self.net.forward_trace(states)?;
        let a = self.action_dim();
        let n = states.rows() * a;
        let mut r = Reparam {
            trace,
            eps: Vec::with_capacity(n),
            tanh_u: Vec::with_capacity(n),
            std: Vec::with_capacity(n),
            clamped: Vec::with_capacity(n),
            actions: Matrix::zeros(states.rows(), a),
            log_probs: Vec::with_capacity(states.rows()),
        };
        for i in 0..states.rows() {
            let row = out.row(i);
            let mut logp = 0.0;
            for d in 0..a {
                let m = row[d];
                let raw = row[a + d];
                let ls = raw.clamp(self.log_std_min, self.log_std_max);
                let e: f64 = rng.sample(StandardNormal);
                let s = ls.exp();
                let u = m + s * e;
                let t = u.tanh();
                logp += -0.5 * e * e - ls - HALF_LN_2PI - log1m_tanh_sq(u);
                r.actions.row_mut(i)[d] = self.center[d] + self.half_range[d] * t;
                r.eps.push(e);
                r.tanh_u.push(t);
                r.std.push(s);
                r.clamped.push(raw != ls);
            }
            r.log_probs.push(logp);
        }
        Ok(r)
    }
}

/// Something that scores actions and can differentiate the score with respect
/// to the action.
pub trait ActionValue {
    /// Values and `∂value/∂action` per row.
    fn value_and_action_grad(&self, states: &Matrix, actions: &Matrix) -> Result<(Vec<f64>, Matrix)>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwinCritics {
    pub q1: Mlp,
    pub q2: Mlp,
    pub target1: Mlp,
    pub target2: Mlp,
}

fn column(m: &Matrix) -> Vec<f64> {
    m.data().to_vec()
}

impl TwinCritics {
    pub fn new(state_dim: usize, action_dim: usize, cfg: &SacConfig, rng: &mut Rng) -> Result<Self> {
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend(&cfg.hidden);
        sizes.push(1);
        let q1 = Mlp::new(&sizes, cfg.activation, Activation::Identity, rng)?;
        let q2 = Mlp::new(&sizes, cfg.activation, Activation::Identity, rng)?;
        Ok(Self {
            target1: q1.clone(),
            target2: q2.clone(),
            q1,
            q2,
        })
    }

    pub fn from_nets(q1: Mlp, q2: Mlp) -> Result<Self> {
        if !q1.same_shape(&q2) || q1.output_dim() != 1 {
            return Err(Error::Config("twin critics need identical single-output networks".into()));
        }
        Ok(Self {
            target1: q1.clone(),
            target2: q2.clone(),
            q1,
            q2,
        })
    }

    /// Online critic values `(Q1, Q2)`.
    pub fn values(&self, states: &Matrix, actions: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
        let x = Matrix::hcat(states, actions)?;
        Ok((column(&self.q1.forward(&x)?), column(&self.q2.forward(&x)?)))
    }

    pub fn min_values(&self, states: &Matrix, actions: &Matrix) -> Result<Vec<f64>> {
        let (a, b) = self.values(states, actions)?;
        Ok(a.iter().zip(&b).map(|(x, y)| x.min(*y)).collect())
    }

    pub fn target_min_values(&self, states: &Matrix, actions: &Matrix) -> Result<Vec<f64>> {
        let x = Matrix::hcat(states, actions)?;
        let a = self.target1.forward(&x)?;
        let b = self.target2.forward(&x)?;
        Ok(a.data().iter().zip(b.data()).map(|(x, y)| x.min(*y)).collect())
    }

    pub fn soft_update_targets(&mut self, tau: f64) -> Result<()> {
        soft_update(&mut self.target1, &self.q1, tau)?;
        soft_update(&mut self.target2, &self.q2, tau)
    }
}

impl ActionValue for TwinCritics {
    /// `min(Q1, Q2)` and the action gradient of whichever critic attains the minimum.
    fn value_and_action_grad(&self, states: &Matrix, actions: &Matrix) -> Result<(Vec<f64>, Matrix)> {
        let x = Matrix::hcat(states, actions)?;
        let (o1, t1) = self.q1.forward_trace(&x)?;
        let (o2, t2) = self.q2.forward_trace(&x)?;
        let rows = x.rows();
        let mut up1 = Matrix::zeros(rows, 1);
        let mut up2 = Matrix::zeros(rows, 1);
        let mut values = Vec::with_capacity(rows);
        for i in 0..rows {
            let (a, b) = (o1.get(i, 0), o2.get(i, 0));
            if a <= b {
                up1.data_mut()[i] = 1.0;
                values.push(a);
            } else {
                up2.data_mut()[i] = 1.0;
                values.push(b);
            }
        }
        let g1 = self.q1.input_gradient(&t1, &up1)?;
        let g2 = self.q2.input_gradient(&t2, &up2)?;
        let s = states.cols();
        let mut grad = g1.columns(s, x.cols());
        for (g, h) in grad.data_mut().iter_mut().zip(g2.columns(s, x.cols()).data()) {
            *g += h;
        }
        Ok((values, grad))
    }
}

/// Learned entropy temperature `α = exp(log α)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Temperature {
    pub log_alpha: f64,
    pub target_entropy: f64,
    opt: Adam,
}

impl Temperature {
    pub fn new(init_alpha: f64, target_entropy: f64, lr: f64) -> Self {
        Self {
            log_alpha: init_alpha.ln(),
            target_entropy,
            opt: Adam::new(lr, 1),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    /// Gradient of `-log α · mean(log π + H_target)` with respect to `log α`.
    pub fn gradient(&self, log_probs: &[f64]) -> f64 {
        let n = log_probs.len() as f64;
        -log_probs.iter().map(|lp| lp + self.target_entropy).sum::<f64>() / n
    }

    /// Takes one optimizer step from externally supplied log-densities; returns the loss.
    pub fn step(&mut self, log_probs: &[f64]) -> Result<f64> {
        if log_probs.is_empty() {
            return Err(Error::InsufficientData("temperature update on an empty batch".into()));
        }
        let grad = self.gradient(log_probs);
        let loss = self.log_alpha * grad;
        let mut p = [self.log_alpha];
        self.opt.update(&mut p, &[grad])?;
        self.log_alpha = p[0];
        Ok(loss)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha_loss: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SacAgent {
    pub cfg: SacConfig,
    pub policy: GaussianPolicy,
    pub critics: TwinCritics,
    pub temperature: Temperature,
    actor_opt: Adam,
    q1_opt: Adam,
    q2_opt: Adam,
    updates: u64,
}

fn ensure_finite_loss(loss: f64, what: &str) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFinite(format!("{what} loss is {loss}")))
    }
}

impl SacAgent {
    /// Fresh agent; actor and critics are initialized from `rng` in that order.
    pub fn new(state_dim: usize, low: &[f64], high: &[f64], cfg: SacConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let policy = GaussianPolicy::new(state_dim, low, high, &cfg, rng)?;
        let critics = TwinCritics::new(state_dim, low.len(), &cfg, rng)?;
        Self::from_parts(cfg, policy, critics)
    }

    pub fn from_parts(cfg: SacConfig, policy: GaussianPolicy, critics: TwinCritics) -> Result<Self> {
        cfg.validate()?;
        if critics.q1.input_dim() != policy.state_dim() + policy.action_dim() {
            return Err(Error::shape(
                "SacAgent critics input",
                policy.state_dim() + policy.action_dim(),
                critics.q1.input_dim(),
            ));
        }
        let target_entropy = cfg.target_entropy.unwrap_or(-(policy.action_dim() as f64));
        Ok(Self {
            temperature: Temperature::new(cfg.init_alpha, target_entropy, cfg.alpha_lr),
            actor_opt: Adam::for_net(cfg.actor_lr, &policy.net),
            q1_opt: Adam::for_net(cfg.critic_lr, &critics.q1),
            q2_opt: Adam::for_net(cfg.critic_lr, &critics.q2),
            cfg,
            policy,
            critics,
            updates: 0,
        })
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// `y = r + γ (1 - d) (min(Q'1, Q'2)(s', a') - α log π(a'|s'))`, `a' ~ π(·|s')`.
    pub fn critic_targets(&self, batch: &Batch, rng: &mut Rng) -> Result<Vec<f64>> {
        self.critic_targets_with_gamma(batch, self.cfg.gamma, rng)
    }

    pub fn critic_targets_with_gamma(&self, batch: &Batch, gamma: f64, rng: &mut Rng) -> Result<Vec<f64>> {
        let (next_actions, log_probs) = self.policy.sample_batch(&batch.next_states, rng)?;
        let q_next = self.critics.target_min_values(&batch.next_states, &next_actions)?;
        let alpha = self.temperature.alpha();
        Ok((0..batch.len())
            .map(|i| {
                let cont = if batch.terminals[i] { 0.0 } else { 1.0 };
                batch.rewards[i] + gamma * cont * (q_next[i] - alpha * log_probs[i])
            })
            .collect())
    }

    /// Per-row `(Q1 - y, Q2 - y)`.
    pub fn td_errors(&self, batch: &Batch, targets: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (q1, q2) = self.critics.values(&batch.states, &batch.actions)?;
        Ok((
            q1.iter().zip(targets).map(|(q, y)| q - y).collect(),
            q2.iter().zip(targets).map(|(q, y)| q - y).collect(),
        ))
    }

    /// Regresses both critics onto `targets`, then moves the target copies.
    /// Returns the mean of the two critics' mean squared TD errors.
    pub fn update_critics_toward(&mut self, batch: &Batch, targets: &[f64]) -> Result<f64> {
        if batch.is_empty() || targets.len() != batch.len() {
            return Err(Error::shape("update_critics targets", batch.len(), targets.len()));
        }
        let x = Matrix::hcat(&batch.states, &batch.actions)?;
        let n = batch.len() as f64;
        let mut total = 0.0;
        for (net, opt) in [(&mut self.critics.q1, &mut self.q1_opt), (&mut self.critics.q2, &mut self.q2_opt)] {
            let (out, trace) = net.forward_trace(&x)?;
            let mut up = Matrix::zeros(batch.len(), 1);
            let mut loss = 0.0;
            for (i, (&q, &y)) in out.data().iter().zip(targets).enumerate() {
                let e = q - y;
                loss += e * e / n;
                up.data_mut()[i] = 2.0 * e / n;
            }
            ensure_finite_loss(loss, "critic")?;
            let bp = net.backward(&trace, &up)?;
            optimizer_step(net, &bp.tape, opt)?;
            total += 0.5 * loss;
        }
        self.critics.soft_update_targets(self.cfg.tau)?;
        Ok(total)
    }

    pub fn update_critics(&mut self, batch: &Batch, rng: &mut Rng) -> Result<f64> {
        let targets = self.critic_targets(batch, rng)?;
        self.update_critics_toward(batch, &targets)
    }

    /// One step on `mean(α log π(a|s) - min Q(s, a))` with reparameterized actions.
    pub fn update_actor(&mut self, batch: &Batch, rng: &mut Rng) -> Result<f64> {
        let alpha = self.temperature.alpha();
        actor_step(&mut self.policy, &mut self.actor_opt, &self.critics, alpha, &batch.states, rng)
    }

    /// One step on `-log α · mean(log π(a|s) + H_target)` with fresh policy samples.
    pub fn update_temperature(&mut self, batch: &Batch, rng: &mut Rng) -> Result<f64> {
        let (_, log_probs) = self.policy.sample_batch(&batch.states, rng)?;
        self.temperature.step(&log_probs)
    }

    /// Full update round: critics, then actor, then temperature.
    pub fn update(&mut self, batch: &Batch, rng: &mut Rng) -> Result<UpdateStats> {
        let critic_loss = self.update_critics(batch, rng)?;
        self.finish_update(batch, critic_loss, rng)
    }

    /// Actor and temperature half of an update round, after the critics moved.
    pub fn finish_update(&mut self, batch: &Batch, critic_loss: f64, rng: &mut Rng) -> Result<UpdateStats> {
        let actor_loss = self.update_actor(batch, rng)?;
        let alpha_loss = self.update_temperature(batch, rng)?;
        self.updates += 1;
        Ok(UpdateStats {
            critic_loss,
            actor_loss,
            alpha_loss,
            alpha: self.temperature.alpha(),
        })
    }

    pub fn write_entries(&self, c: &mut Container) {
        self.policy.net.write_entries("actor", c);
        c.push_f64("actor.log_std_range", &[self.policy.log_std_min, self.policy.log_std_max]);
        c.push_f64("actor.center", &self.policy.center);
        c.push_f64("actor.half_range", &self.policy.half_range);
        self.critics.q1.write_entries("q1", c);
        self.critics.q2.write_entries("q2", c);
        self.critics.target1.write_entries("q1_target", c);
        self.critics.target2.write_entries("q2_target", c);
        c.push_f64("temperature", &[self.temperature.log_alpha, self.temperature.target_entropy]);
        self.temperature.opt.write_entries("alpha_opt", c);
        self.actor_opt.write_entries("actor_opt", c);
        self.q1_opt.write_entries("q1_opt", c);
        self.q2_opt.write_entries("q2_opt", c);
        c.push_u64("updates", &[self.updates]);
    }

    /// Restores networks, temperature, optimizer moments and counters; `cfg`
    /// supplies the hyperparameters.
    pub fn read_entries(cfg: SacConfig, c: &Container) -> Result<Self> {
        let range = c.f64s("actor.log_std_range")?;
        let center = c.f64s("actor.center")?;
        let half = c.f64s("actor.half_range")?;
        if range.len() != 2 || center.len() != half.len() {
            return Err(Error::Format {
                what: "agent checkpoint",
                reason: "bad actor metadata".into(),
            });
        }
        let low: Vec<f64> = center.iter().zip(half).map(|(c, h)| c - h).collect();
        let high: Vec<f64> = center.iter().zip(half).map(|(c, h)| c + h).collect();
        let policy = GaussianPolicy::from_net(Mlp::read_entries("actor", c)?, &low, &high, range[0], range[1])?;
        let critics = TwinCritics {
            q1: Mlp::read_entries("q1", c)?,
            q2: Mlp::read_entries("q2", c)?,
            target1: Mlp::read_entries("q1_target", c)?,
            target2: Mlp::read_entries("q2_target", c)?,
        };
        let mut agent = Self::from_parts(cfg, policy, critics)?;
        // restore the exact bound arithmetic rather than the recomputed midpoint
        agent.policy.center = center.to_vec();
        agent.policy.half_range = half.to_vec();
        let temp = c.f64s("temperature")?;
        if temp.len() != 2 {
            return Err(Error::Format {
                what: "agent checkpoint",
                reason: "bad temperature entry".into(),
            });
        }
        agent.temperature.log_alpha = temp[0];
        agent.temperature.target_entropy = temp[1];
        agent.temperature.opt = Adam::read_entries("alpha_opt", c)?;
        agent.actor_opt = Adam::read_entries("actor_opt", c)?;
        agent.q1_opt = Adam::read_entries("q1_opt", c)?;
        agent.q2_opt = Adam::read_entries("q2_opt", c)?;
        agent.updates = c.u64s("updates")?.first().copied().unwrap_or(0);
        Ok(agent)
    }
}

/// Reparameterized actor step against an arbitrary action-value function.
/// Returns the loss `mean(α log π - Q)` evaluated before the step.
pub fn actor_step<Q: ActionValue + ?Sized>(
    policy: &mut GaussianPolicy,
    opt: &mut Adam,
    critic: &Q,
    alpha: f64,
    states: &Matrix,
    rng: &mut Rng,
) -> Result<f64> {
    let (loss, tape) = actor_gradient(policy, critic, alpha, states, rng)?;
    optimizer_step(&mut policy.net, &tape, opt)?;
    Ok(loss)
}

/// Actor loss `mean(α log π(a|s) - Q(s, a))` and its gradient with respect to
/// the policy parameters, holding the Gaussian noise drawn from `rng` fixed.
pub fn actor_gradient<Q: ActionValue + ?Sized>(
    policy: &GaussianPolicy,
    critic: &Q,
    alpha: f64,
    states: &Matrix,
    rng: &mut Rng,
) -> Result<(f64, GradientTape)> {
    let rows = states.rows();
    if rows == 0 {
        return Err(Error::InsufficientData("actor update on an empty batch".into()));
    }
    let r = policy.rsample(states, rng)?;
    let (q, dq_da) = critic.value_and_action_grad(states, &r.actions)?;
    let n = rows as f64;
    let loss = ensure_finite_loss(
        r.log_probs.iter().zip(&q).map(|(lp, q)| alpha * lp - q).sum::<f64>() / n,
        "actor",
    )?;

    let a = policy.action_dim();
    let mut up = Matrix::zeros(rows, 2 * a);
    for i in 0..rows {
        for d in 0..a {
            let k = i * a + d;
            let t = r.tanh_u[k];
            let du_dls = r.std[k] * r.eps[k];
            let dq_du = dq_da.get(i, d) * policy.half_range[d] * (1.0 - t * t);
            // d log π / dμ = 2 tanh(u); d log π / d log σ = -1 + 2 tanh(u) σ ε
            let g_mean = (alpha * 2.0 * t - dq_du) / n;
            let g_log_std = if r.clamped[k] {
                0.0
            } else {
                (alpha * (-1.0 + 2.0 * t * du_dls) - dq_du * du_dls) / n
            };
            let row = up.row_mut(i);
            row[d] = g_mean;
            row[a + d] = g_log_std;
        }
    }
    let bp = policy.net.backward(&r.trace, &up)?;
    Ok((loss, bp.tape))
}

