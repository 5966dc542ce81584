//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key has a
//! default, unknown keys are errors, and [`RunConfig::to_text`] writes the fully
//! resolved configuration back out in the same syntax so that a run directory's
//! `config.resolved` can be fed straight back to `train --config`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::approximator::Activation;
use crate::envs::ENV_NAMES;
use crate::error::{Error, Result};
use crate::explore::{SelectorConfig, SelectorKind};
use crate::mve::MveConfig;
use crate::sac::SacConfig;
use crate::worldmodel::WorldModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Algorithm {
    pub selector: SelectorKind,
    pub mve: bool,
}

impl Algorithm {
    pub const ALL: [&'static str; 6] = ["sac", "sac+be", "sac+qu", "sac+mve", "sac+mve+be", "sac+mve+qu"];
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("sac")?;
        if self.mve {
            f.write_str("+mve")?;
        }
        match self.selector {
            SelectorKind::Vanilla => Ok(()),
            SelectorKind::Bounded => f.write_str("+be"),
            SelectorKind::Qu => f.write_str("+qu"),
        }
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (selector, mve) = match s {
            "sac" => (SelectorKind::Vanilla, false),
            "sac+be" => (SelectorKind::Bounded, false),
            "sac+qu" => (SelectorKind::Qu, false),
            "sac+mve" => (SelectorKind::Vanilla, true),
            "sac+mve+be" => (SelectorKind::Bounded, true),
            "sac+mve+qu" => (SelectorKind::Qu, true),
            other => {
                return Err(Error::Config(format!(
                    "unknown algorithm `{other}` (expected one of {})",
                    Self::ALL.join(", ")
                )))
            }
        };
        Ok(Self { selector, mve })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env: String,
    pub algo: Algorithm,
    pub steps: u64,
    pub seeds: Vec<u64>,
    /// Update rounds per environment step (G).
    pub updates_per_step: usize,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Update rounds are skipped (and counted) until the buffer holds this many transitions.
    pub update_after: usize,
    pub sac: SacConfig,
    pub selector: SelectorConfig,
    pub model: WorldModelConfig,
    pub model_batch: usize,
    /// Transitions required before the ensemble trains or is consulted.
    pub model_warmup: usize,
    pub horizon: usize,
    /// Write per-step selector diagnostics to `selections.csv`.
    pub log_selection: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: "pendulum".into(),
            algo: Algorithm {
                selector: SelectorKind::Vanilla,
                mve: false,
            },
            steps: 30_000,
            seeds: vec![0],
            updates_per_step: 10,
            eval_interval: 1_000,
            eval_episodes: 10,
            batch_size: 256,
            buffer_capacity: 100_000,
            update_after: 256,
            sac: SacConfig::default(),
            selector: SelectorConfig::default(),
            model: WorldModelConfig::default(),
            model_batch: 256,
            model_warmup: 1_000,
            horizon: 2,
            log_selection: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", n + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Sets one key; the config is not revalidated.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "env" => self.env = value.to_string(),
            "algo" => self.algo = value.parse()?,
            "steps" => self.steps = parse(key, value)?,
            "seeds" => self.seeds = parse_list(key, value)?,
            "updates_per_step" => self.updates_per_step = parse(key, value)?,
            "eval_interval" => self.eval_interval = parse(key, value)?,
            "eval_episodes" => self.eval_episodes = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "buffer_capacity" => self.buffer_capacity = parse(key, value)?,
            "update_after" => self.update_after = parse(key, value)?,
            "hidden" => self.sac.hidden = parse_list(key, value)?,
            "activation" => self.sac.activation = Activation::from_tag(value)?,
            "gamma" => self.sac.gamma = parse(key, value)?,
            "tau" => self.sac.tau = parse(key, value)?,
            "actor_lr" => self.sac.actor_lr = parse(key, value)?,
            "critic_lr" => self.sac.critic_lr = parse(key, value)?,
            "alpha_lr" => self.sac.alpha_lr = parse(key, value)?,
            "init_alpha" => self.sac.init_alpha = parse(key, value)?,
            "target_entropy" => {
                self.sac.target_entropy = if value == "auto" { None } else { Some(parse(key, value)?) }
            }
            "log_std_min" => self.sac.log_std_min = parse(key, value)?,
            "log_std_max" => self.sac.log_std_max = parse(key, value)?,
            "candidates" => self.selector.candidates = parse(key, value)?,
            "reductions" => self.selector.reductions = parse(key, value)?,
            "selector_temperature" => self.selector.temperature = parse(key, value)?,
            "members" => self.model.members = parse(key, value)?,
            "model_hidden" => self.model.hidden = parse_list(key, value)?,
            "model_activation" => self.model.activation = Activation::from_tag(value)?,
            "model_lr" => self.model.lr = parse(key, value)?,
            "reward_in_uncertainty" => self.model.reward_in_uncertainty = parse(key, value)?,
            "model_batch" => self.model_batch = parse(key, value)?,
            "model_warmup" => self.model_warmup = parse(key, value)?,
            "horizon" => self.horizon = parse(key, value)?,
            "log_selection" => self.log_selection = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        if key == "algo" {
            self.selector.kind = self.algo.selector;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !ENV_NAMES.contains(&self.env.as_str()) {
            return Err(Error::Config(format!(
                "unknown environment `{}` (expected one of {})",
                self.env,
                ENV_NAMES.join(", ")
            )));
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if self.updates_per_step == 0 {
            return bad("updates_per_step must be at least 1");
        }
        if self.eval_interval == 0 || self.eval_episodes == 0 {
            return bad("eval_interval and eval_episodes must be positive");
        }
        if self.batch_size == 0 || self.model_batch == 0 {
            return bad("batch sizes must be positive");
        }
        if self.buffer_capacity == 0 {
            return bad("buffer_capacity must be positive");
        }
        if self.update_after == 0 {
            return bad("update_after must be at least 1");
        }
        if self.model_warmup < 2 {
            return bad("model_warmup must be at least 2");
        }
        if self.hidden_is_empty() {
            return bad("hidden layer lists must not be empty");
        }
        if !(self.sac.gamma < 1.0) {
            return bad("gamma must be below 1 for training runs");
        }
        self.sac.validate()?;
        self.selector.validate()?;
        if self.selector.kind != self.algo.selector {
            return bad("selector kind disagrees with the algorithm");
        }
        if self.model.members < 2 {
            return bad("members must be at least 2");
        }
        if !(self.model.lr >= 0.0 && self.model.lr.is_finite()) {
            return bad("model_lr must be a non-negative number");
        }
        self.mve().validate()
    }

    fn hidden_is_empty(&self) -> bool {
        self.sac.hidden.is_empty() || self.model.hidden.is_empty()
    }

    pub fn mve(&self) -> MveConfig {
        MveConfig {
            horizon: self.effective_horizon(),
            gamma: self.sac.gamma,
        }
    }

    /// The horizon the run actually uses: zero unless the algorithm expands values.
    pub fn effective_horizon(&self) -> usize {
        if self.algo.mve {
            self.horizon
        } else {
            0
        }
    }

    /// The ensemble is built and trained only when a selector or a value
    /// expansion consumes it.
    pub fn uses_ensemble(&self) -> bool {
        self.algo.selector != SelectorKind::Vanilla || self.effective_horizon() > 0
    }

    pub fn to_text(&self) -> String {
        let target_entropy = self.sac.target_entropy.map_or("auto".to_string(), |v| v.to_string());
        let entries: Vec<(&str, String)> = vec![
            ("env", self.env.clone()),
            ("algo", self.algo.to_string()),
            ("steps", self.steps.to_string()),
            ("seeds", join(&self.seeds)),
            ("updates_per_step", self.updates_per_step.to_string()),
            ("eval_interval", self.eval_interval.to_string()),
            ("eval_episodes", self.eval_episodes.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("buffer_capacity", self.buffer_capacity.to_string()),
            ("update_after", self.update_after.to_string()),
            ("hidden", join(&self.sac.hidden)),
            ("activation", self.sac.activation.tag().to_string()),
            ("gamma", self.sac.gamma.to_string()),
            ("tau", self.sac.tau.to_string()),
            ("actor_lr", self.sac.actor_lr.to_string()),
            ("critic_lr", self.sac.critic_lr.to_string()),
            ("alpha_lr", self.sac.alpha_lr.to_string()),
            ("init_alpha", self.sac.init_alpha.to_string()),
            ("target_entropy", target_entropy),
            ("log_std_min", self.sac.log_std_min.to_string()),
            ("log_std_max", self.sac.log_std_max.to_string()),
            ("candidates", self.selector.candidates.to_string()),
            ("reductions", self.selector.reductions.to_string()),
            ("selector_temperature", self.selector.temperature.to_string()),
            ("members", self.model.members.to_string()),
            ("model_hidden", join(&self.model.hidden)),
            ("model_activation", self.model.activation.tag().to_string()),
            ("model_lr", self.model.lr.to_string()),
            ("reward_in_uncertainty", self.model.reward_in_uncertainty.to_string()),
            ("model_batch", self.model_batch.to_string()),
            ("model_warmup", self.model_warmup.to_string()),
            ("horizon", self.horizon.to_string()),
            ("log_selection", self.log_selection.to_string()),
        ];
        entries.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(RunConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn every_algorithm_name_round_trips() {
        for name in Algorithm::ALL {
            assert_eq!(name.parse::<Algorithm>().unwrap().to_string(), name);
        }
    }

    #[test]
    fn overrides_and_comments() {
        let text = "# pendulum sweep\nenv = point-mass\nalgo = sac+mve+be\n\nseeds = 1, 2,3\ncandidates = 7\ntarget_entropy = -0.5\n";
        let cfg = RunConfig::from_text(text).unwrap();
        assert_eq!(cfg.env, "point-mass");
        assert_eq!(cfg.selector.kind, SelectorKind::Bounded);
        assert!(cfg.algo.mve);
        assert_eq!(cfg.seeds, vec![1, 2, 3]);
        assert_eq!(cfg.selector.candidates, 7);
        assert_eq!(cfg.sac.target_entropy, Some(-0.5));
        assert_eq!(RunConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        for text in [
            "colour = blue",
            "steps = -3",
            "env = cartpole",
            "algo = ppo",
            "gamma = 1.0",
            "members = 1",
            "reductions = 0",
            "selector_temperature = 0",
            "no equals sign",
        ] {
            assert!(matches!(RunConfig::from_text(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn horizon_only_counts_for_value_expansion() {
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.effective_horizon(), 0);
        assert!(!cfg.uses_ensemble());
        cfg.set("algo", "sac+mve").unwrap();
        assert_eq!(cfg.effective_horizon(), 2);
        assert!(cfg.uses_ensemble());
        cfg.set("horizon", "0").unwrap();
        assert!(!cfg.uses_ensemble());
        cfg.set("algo", "sac+be").unwrap();
        assert!(cfg.uses_ensemble());
    }
}
