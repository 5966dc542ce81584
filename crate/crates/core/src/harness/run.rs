//! The train / evaluate loop.
//!
//! Random streams, all derived from the run seed:
//!
//! | label     | used for                                             |
//! |-----------|------------------------------------------------------|
//! | `init`    | actor and critic initialization                      |
//! | `episode` | reset seed of training episode k (index k)           |
//! | `act`     | policy samples and selector draws while acting       |
//! | `replay`  | minibatch indices                                    |
//! | `update`  | policy samples inside updates and model rollouts     |
//! | `models`  | ensemble master seed (members fan out from it)       |
//! | `eval`    | evaluation seed at step t (index t)                  |

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::container::Container;
use crate::envs::{evaluate_policy, make_env, Environment, StepResult};
use crate::error::{Error, Result};
use crate::explore::{act, Decision, SelectorKind};
use crate::harness::config::RunConfig;
use crate::harness::metrics::{metrics_csv, MetricRow, SELECTIONS_HEADER};
use crate::mve::update_critics_mve;
use crate::replay::{ReplayBuffer, Transition};
use crate::rng::{derive_seed, stream};
use crate::sac::{SacAgent, UpdateStats};
use crate::worldmodel::Ensemble;

/// What the loop did at one environment step, after the transition was stored.
pub struct StepEvent<'a> {
    pub step: u64,
    pub state: &'a [f64],
    pub decision: &'a Decision,
    pub result: &'a StepResult,
    /// The transition as it sits in the replay buffer.
    pub stored: &'a Transition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub rows: Vec<MetricRow>,
    pub update_rounds: u64,
    pub warmup_skips: u64,
    pub model_train_rounds: u64,
    pub selector_fallbacks: u64,
    pub mve_fallbacks: u64,
    pub episodes: u64,
}

#[derive(Default)]
struct Interval {
    chosen_u: Vec<f64>,
    distance: Vec<f64>,
    last_update: Option<UpdateStats>,
    last_model_loss: Option<f64>,
}

fn mean_or_nan(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Runs one seed of `cfg` into `dir` (created if needed) with no observer.
pub fn run(cfg: &RunConfig, seed: u64, dir: &Path) -> Result<RunSummary> {
    run_observed(cfg, seed, dir, &mut |_| {})
}

/// Runs one seed and calls `observer` after every environment step.
///
/// Writes `config.resolved`, `metrics.csv`, `timing.csv`, `events.log` and the
/// final `agent.bexc` (plus `ensemble.bexc` when an ensemble is used, and
/// `selections.csv` when `log_selection` is set). A
/// non-finite loss or parameter stops the run after writing `abort.bexc`.
pub fn run_observed(
    cfg: &RunConfig,
    seed: u64,
    dir: &Path,
    observer: &mut dyn FnMut(&StepEvent<'_>),
) -> Result<RunSummary> {
    cfg.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut resolved = cfg.clone();
    resolved.seeds = vec![seed];
    write_file(&dir.join("config.resolved"), &resolved.to_text())?;

    let mut state = RunState::new(cfg, seed)?;
    let started = Instant::now();
    let mut timing = String::from("step,seconds\n");
    let outcome = state.train(cfg, seed, observer, &mut |row: &MetricRow| {
        timing.push_str(&format!("{},{:.3}\n", row.step, started.elapsed().as_secs_f64()));
    });

    write_file(&dir.join("metrics.csv"), &metrics_csv(&state.rows))?;
    write_file(&dir.join("timing.csv"), &timing)?;
    write_file(&dir.join("events.log"), &state.events.join("\n"))?;
    if cfg.log_selection {
        write_file(&dir.join("selections.csv"), &state.selections)?;
    }
    match outcome {
        Ok(()) => {
            state.checkpoint(&dir.join("agent.bexc"))?;
            if let Some(e) = &state.ensemble {
                e.save(&dir.join("ensemble.bexc"))?;
            }
        }
        Err(err) => {
            if matches!(err, Error::NonFinite(_)) {
                state.checkpoint(&dir.join("abort.bexc"))?;
            }
            return Err(err);
        }
    }
    Ok(RunSummary {
        dir: dir.to_path_buf(),
        rows: state.rows,
        update_rounds: state.update_rounds,
        warmup_skips: state.warmup_skips,
        model_train_rounds: state.model_train_rounds,
        selector_fallbacks: state.selector_fallbacks,
        mve_fallbacks: state.mve_fallbacks,
        episodes: state.episodes,
    })
}

struct RunState {
    env: Box<dyn Environment>,
    eval_env: Box<dyn Environment>,
    agent: SacAgent,
    buffer: ReplayBuffer,
    ensemble: Option<Ensemble>,
    rows: Vec<MetricRow>,
    events: Vec<String>,
    selections: String,
    update_rounds: u64,
    warmup_skips: u64,
    model_train_rounds: u64,
    selector_fallbacks: u64,
    mve_fallbacks: u64,
    episodes: u64,
}

impl RunState {
    fn new(cfg: &RunConfig, seed: u64) -> Result<Self> {
        let env = make_env(&cfg.env)?;
        let eval_env = make_env(&cfg.env)?;
        let spec = env.spec().clone();
        let agent = SacAgent::new(
            spec.state_dim,
            &spec.action_low,
            &spec.action_high,
            cfg.sac.clone(),
            &mut stream(seed, "init", 0),
        )?;
        let ensemble = if cfg.uses_ensemble() {
            Some(Ensemble::new(
                spec.state_dim,
                spec.action_dim,
                cfg.model.clone(),
                derive_seed(seed, "models", 0),
            )?)
        } else {
            None
        };
        Ok(Self {
            buffer: ReplayBuffer::new(cfg.buffer_capacity, spec.state_dim, spec.action_dim)?,
            env,
            eval_env,
            agent,
            ensemble,
            rows: Vec::new(),
            events: Vec::new(),
            selections: format!("{SELECTIONS_HEADER}\n"),
            update_rounds: 0,
            warmup_skips: 0,
            model_train_rounds: 0,
            selector_fallbacks: 0,
            mve_fallbacks: 0,
            episodes: 0,
        })
    }

    fn checkpoint(&self, path: &Path) -> Result<()> {
        let mut c = Container::new("agent");
        self.agent.write_entries(&mut c);
        c.write(path)
    }

    /// The ensemble once it has trained at least once.
    fn trained_ensemble(&self) -> Option<&Ensemble> {
        self.ensemble.as_ref().filter(|e| e.train_steps() > 0)
    }

    fn note(&mut self, step: u64, msg: &str) {
        self.events.push(format!("step {step}: {msg}"));
    }

    fn train(
        &mut self,
        cfg: &RunConfig,
        seed: u64,
        observer: &mut dyn FnMut(&StepEvent<'_>),
        on_row: &mut dyn FnMut(&MetricRow),
    ) -> Result<()> {
        let mut act_rng = stream(seed, "act", 0);
        let mut replay_rng = stream(seed, "replay", 0);
        let mut update_rng = stream(seed, "update", 0);
        let mve_cfg = cfg.mve();
        let mut interval = Interval::default();
        let mut state = self.env.reset(derive_seed(seed, "episode", 0));
        self.episodes = 1;
        let mut warned_selector = false;
        let mut warned_mve = false;
        let mut announced_model = false;

        for step in 1..=cfg.steps {
            let decision = act(
                &cfg.selector,
                &self.agent.policy,
                self.trained_ensemble(),
                &self.agent.critics,
                &state,
                &mut act_rng,
            )?;
            if decision.fallback {
                self.selector_fallbacks += 1;
                if !warned_selector {
                    warned_selector = true;
                    self.note(step, "ensemble warming up, selector falls back to policy sampling");
                }
            }
            match &decision.diagnostics {
                Some(d) => {
                    interval.chosen_u.push(d.chosen_uncertainty);
                    interval.distance.push(d.distance_to_mean);
                    if cfg.log_selection {
                        self.selections.push_str(&format!(
                            "{step},{},{},{},{}\n",
                            d.chosen_index, d.chosen_uncertainty, d.max_uncertainty, d.distance_to_mean
                        ));
                    }
                }
                None => interval.distance.push(decision.candidates.distance_to_mean(0)),
            }

            let result = self.env.step(&decision.action)?;
            self.buffer.push(Transition {
                state: state.clone(),
                action: decision.action.clone(),
                reward: result.reward,
                next_state: result.next_state.clone(),
                terminal: result.terminal,
            })?;
            observer(&StepEvent {
                step,
                state: &state,
                decision: &decision,
                result: &result,
                stored: self.buffer.latest().expect("just pushed"),
            });
            state = if result.done() {
                let s = self.env.reset(derive_seed(seed, "episode", self.episodes));
                self.episodes += 1;
                s
            } else {
                result.next_state.clone()
            };

            if self.buffer.len() < cfg.update_after {
                self.warmup_skips += cfg.updates_per_step as u64;
            } else {
                // one ensemble step per block of G agent updates
                if self.buffer.len() >= cfg.model_warmup {
                    if let Some(ens) = self.ensemble.as_mut() {
                        if let Some(losses) = ens.train_ensemble(&self.buffer, 1, cfg.model_batch)? {
                            self.model_train_rounds += 1;
                            interval.last_model_loss = Some(losses.iter().sum::<f64>() / losses.len() as f64);
                            if !announced_model {
                                announced_model = true;
                                self.events.push(format!("step {step}: ensemble training started"));
                            }
                        }
                    }
                }
                for _ in 0..cfg.updates_per_step {
                    let batch = self.buffer.sample(cfg.batch_size, &mut replay_rng)?;
                    let stats = if cfg.algo.mve {
                        let (loss, targets) = update_critics_mve(
                            &mut self.agent,
                            self.ensemble.as_ref().filter(|e| e.train_steps() > 0),
                            &batch,
                            &mve_cfg,
                            &mut update_rng,
                        )?;
                        if targets.fell_back {
                            self.mve_fallbacks += 1;
                            if !warned_mve {
                                warned_mve = true;
                                self.events.push(format!(
                                    "step {step}: ensemble warming up, value expansion falls back to model-free targets"
                                ));
                            }
                        }
                        self.agent.finish_update(&batch, loss, &mut update_rng)?
                    } else {
                        self.agent.update(&batch, &mut update_rng)?
                    };
                    interval.last_update = Some(stats);
                    self.update_rounds += 1;
                }
            }

            if step % cfg.eval_interval == 0 {
                let row = self.evaluate(cfg, seed, step, &interval)?;
                on_row(&row);
                self.rows.push(row);
                interval = Interval::default();
            }
        }
        let tail = format!(
            "done: {} update rounds, {} warmup skips, {} model rounds, {} selector fallbacks, {} value-expansion fallbacks, {} episodes",
            self.update_rounds,
            self.warmup_skips,
            self.model_train_rounds,
            self.selector_fallbacks,
            self.mve_fallbacks,
            self.episodes
        );
        self.events.push(tail);
        Ok(())
    }

    fn evaluate(&mut self, cfg: &RunConfig, seed: u64, step: u64, interval: &Interval) -> Result<MetricRow> {
        let policy = &self.agent.policy;
        let eval = evaluate_policy(
            self.eval_env.as_mut(),
            |s| policy.mean_action(s),
            cfg.eval_episodes,
            derive_seed(seed, "eval", step),
        )?;
        let nan = f64::NAN;
        let u = interval.last_update.as_ref();
        Ok(MetricRow {
            step,
            eval_mean: eval.mean,
            eval_variance: eval.variance,
            horizon: cfg.effective_horizon(),
            mean_chosen_u: if cfg.selector.kind == SelectorKind::Vanilla {
                nan
            } else {
                mean_or_nan(&interval.chosen_u)
            },
            mean_distance: mean_or_nan(&interval.distance),
            critic_loss: u.map_or(nan, |s| s.critic_loss),
            actor_loss: u.map_or(nan, |s| s.actor_loss),
            alpha_loss: u.map_or(nan, |s| s.alpha_loss),
            alpha: self.agent.temperature.alpha(),
            model_loss: interval.last_model_loss.unwrap_or(nan),
            update_rounds: self.update_rounds,
            warmup_skips: self.warmup_skips,
            selector_fallbacks: self.selector_fallbacks,
        })
    }
}
