//! Action selection: plain policy sampling, bounded exploration, and the
//! Q-plus-uncertainty comparator.
//!
//! Bounded exploration draws N candidates from the current policy, scores each
//! with the ensemble's disagreement u, turns the min-max normalized scores into a
//! Gibbs distribution, draws S indices from it, and executes the drawn candidate
//! closest (Euclidean, in the executed action space) to the policy's squashed
//! mean. The executed action is therefore always one of the policy's own samples
//! and the environment reward is never modified.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;

use crate::approximator::Matrix;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::sac::{GaussianPolicy, TwinCritics};
use crate::worldmodel::Ensemble;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectorKind {
    Vanilla,
    Bounded,
    Qu,
}

impl SelectorKind {
    pub fn name(self) -> &'static str {
        match self {
            SelectorKind::Vanilla => "vanilla",
            SelectorKind::Bounded => "bounded",
            SelectorKind::Qu => "qu",
        }
    }
}

impl fmt::Display for SelectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SelectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(SelectorKind::Vanilla),
            "bounded" => Ok(SelectorKind::Bounded),
            "qu" => Ok(SelectorKind::Qu),
            other => Err(Error::Config(format!("unknown selector `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectorConfig {
    pub kind: SelectorKind,
    /// Candidates drawn per step (N).
    pub candidates: usize,
    /// Draws from the Gibbs distribution (S).
    pub reductions: usize,
    /// Divisor applied to the normalized scores before the softmax.
    pub temperature: f64,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            kind: SelectorKind::Vanilla,
            candidates: 100,
            reductions: 10,
            temperature: 1.0,
        }
    }
}

impl SelectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.candidates == 0 || self.reductions == 0 {
            return Err(Error::Config("selector needs N >= 1 and S >= 1".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "selector temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub state: Vec<f64>,
    pub actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub mean_action: Vec<f64>,
    /// Ensemble disagreement per candidate; empty until scored.
    pub uncertainties: Vec<f64>,
    /// Min-max normalized uncertainties.
    pub scores: Vec<f64>,
    pub probs: Vec<f64>,
}

impl CandidateSet {
    pub fn propose(policy: &GaussianPolicy, state: &[f64], n: usize, rng: &mut Rng) -> Result<Self> {
        let sample = policy.policy_sample(state, n, rng)?;
        Ok(Self {
            state: state.to_vec(),
            actions: sample.actions,
            log_probs: sample.log_probs,
            mean_action: sample.mean_action,
            uncertainties: Vec::new(),
            scores: Vec::new(),
            probs: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn contains(&self, action: &[f64]) -> bool {
        self.actions.iter().any(|a| a.as_slice() == action)
    }

    fn action_matrix(&self) -> Result<Matrix> {
        Matrix::from_rows(&self.actions)
    }

    fn state_matrix(&self) -> Result<Matrix> {
        Matrix::from_rows(&vec![self.state.as_slice(); self.len()])
    }

    pub fn distance_to_mean(&self, i: usize) -> f64 {
        euclidean(&self.actions[i], &self.mean_action)
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Fills `u_n` for every candidate from the ensemble, preserving order.
pub fn score_candidates(set: &mut CandidateSet, ensemble: &Ensemble) -> Result<()> {
    let preds = ensemble.predict_all_batch(&set.state_matrix()?, &set.action_matrix()?)?;
    set.uncertainties = preds.into_iter().map(|p| p.uncertainty).collect();
    Ok(())
}

/// Min-max normalization into `[0, 1]`; a constant vector maps to zeros.
pub fn normalize_scores(u: &[f64]) -> Vec<f64> {
    let lo = u.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if range > 0.0 {
        u.iter().map(|v| (v - lo) / range).collect()
    } else {
        vec![0.0; u.len()]
    }
}

/// Softmax with the maximum subtracted first.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - hi).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Gibbs probabilities over candidates: `softmax(normalize(u) / temperature)`.
pub fn gibbs_probs(u: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if u.is_empty() {
        return Err(Error::InsufficientData("no candidates to weigh".into()));
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("candidate uncertainty".into()));
    }
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
    }
    let scaled: Vec<f64> = normalize_scores(u).into_iter().map(|s| s / temperature).collect();
    Ok(softmax(&scaled))
}

/// Inverse-CDF draw: the first index whose cumulative probability exceeds `r`
/// (`r` in `[0, 1)`), falling back to the last index against rounding.
pub fn draw_index(probs: &[f64], r: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if r < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Per-step record of what a selector did.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionDiagnostics {
    pub chosen_index: usize,
    pub chosen_uncertainty: f64,
    pub max_uncertainty: f64,
    pub distance_to_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub action: Vec<f64>,
}

/// Draws `s` indices from `set.probs` (with replacement, one uniform variate per
/// draw) and returns the drawn candidate nearest the policy mean; ties go to the
/// lowest index.
pub fn bounded_select(set: &CandidateSet, s: usize, rng: &mut Rng) -> Result<Selection> {
    if s == 0 {
        return Err(Error::Config("S must be at least 1".into()));
    }
    if set.probs.len() != set.len() || set.is_empty() {
        return Err(Error::Usage("bounded_select needs probabilities for every candidate".into()));
    }
    let mut drawn: Vec<usize> = (0..s).map(|_| draw_index(&set.probs, rng.random::<f64>())).collect();
    drawn.sort_unstable();
    drawn.dedup();
    let mut best = drawn[0];
    let mut best_d = set.distance_to_mean(best);
    for &i in &drawn[1..] {
        let d = set.distance_to_mean(i);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    Ok(Selection {
        index: best,
        action: set.actions[best].clone(),
    })
}

/// `argmax_n min(Q1, Q2)(s, a_n) + u_n`, lowest index on ties.
pub fn qu_select(set: &CandidateSet, critics: &TwinCritics) -> Result<Selection> {
    if set.uncertainties.len() != set.len() || set.is_empty() {
        return Err(Error::Usage("qu_select needs an uncertainty for every candidate".into()));
    }
    let q = critics.min_values(&set.state_matrix()?, &set.action_matrix()?)?;
    let index = argmax_sum(&q, &set.uncertainties);
    Ok(Selection {
        index,
        action: set.actions[index].clone(),
    })
}

/// Index maximizing `q[i] + u[i]`, lowest index on ties.
pub fn argmax_sum(q: &[f64], u: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, (a, b)) in q.iter().zip(u).enumerate() {
        let v = a + b;
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Outcome of one call to [`act`].
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub action: Vec<f64>,
    /// The candidates the action was chosen from (a single policy draw for vanilla).
    pub candidates: CandidateSet,
    /// The configured selector could not run (ensemble not ready) and fell back to vanilla.
    pub fallback: bool,
    pub diagnostics: Option<SelectionDiagnostics>,
}

/// Chooses the action to execute. `ensemble` is `None` while the world models
/// are still warming up, in which case every selector samples like vanilla SAC.
pub fn act(
    cfg: &SelectorConfig,
    policy: &GaussianPolicy,
    ensemble: Option<&Ensemble>,
    critics: &TwinCritics,
    state: &[f64],
    rng: &mut Rng,
) -> Result<Decision> {
    let ensemble = ensemble.filter(|e| e.ready());
    let (kind, fallback) = match (cfg.kind, ensemble) {
        (SelectorKind::Vanilla, _) => (SelectorKind::Vanilla, false),
        (k, Some(_)) => (k, false),
        (_, None) => (SelectorKind::Vanilla, true),
    };
    if kind == SelectorKind::Vanilla {
        let candidates = CandidateSet::propose(policy, state, 1, rng)?;
        return Ok(Decision {
            action: candidates.actions[0].clone(),
            candidates,
            fallback,
            diagnostics: None,
        });
    }
    let ensemble = ensemble.expect("matched above");
    let mut set = CandidateSet::propose(policy, state, cfg.candidates, rng)?;
    score_candidates(&mut set, ensemble)?;
    let choice = if kind == SelectorKind::Bounded {
        set.scores = normalize_scores(&set.uncertainties);
        set.probs = gibbs_probs(&set.uncertainties, cfg.temperature)?;
        bounded_select(&set, cfg.reductions, rng)?
    } else {
        qu_select(&set, critics)?
    };
    let diagnostics = SelectionDiagnostics {
        chosen_index: choice.index,
        chosen_uncertainty: set.uncertainties[choice.index],
        max_uncertainty: set.uncertainties.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        distance_to_mean: set.distance_to_mean(choice.index),
    };
    Ok(Decision {
        action: choice.action,
        candidates: set,
        fallback: false,
        diagnostics: Some(diagnostics),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;

    fn set_with(actions: Vec<Vec<f64>>, mean: Vec<f64>, probs: Vec<f64>) -> CandidateSet {
        CandidateSet {
            state: vec![0.0],
            log_probs: vec![0.0; actions.len()],
            uncertainties: vec![0.0; actions.len()],
            scores: vec![0.0; actions.len()],
            actions,
            mean_action: mean,
            probs,
        }
    }

    #[test]
    fn constant_uncertainty_is_uniform() {
        assert_eq!(gibbs_probs(&[3.0; 4], 1.0).unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn ln2_scores_give_one_third_two_thirds() {
        let p = softmax(&[0.0, std::f64::consts::LN_2]);
        assert!((p[0] - 1.0 / 3.0).abs() < 1e-15 && (p[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn raw_scores_are_normalized_first() {
        let p = gibbs_probs(&[5.0, 10.0], 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((p[0] - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((p[1] - e / (1.0 + e)).abs() < 1e-15);
        assert!((p[0] - 0.2689).abs() < 1e-4 && (p[1] - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn gibbs_rejects_bad_input() {
        assert!(gibbs_probs(&[], 1.0).is_err());
        assert!(gibbs_probs(&[1.0, f64::NAN], 1.0).is_err());
        assert!(gibbs_probs(&[1.0, 2.0], 0.0).is_err());
    }

    #[test]
    fn draw_index_follows_cdf() {
        let p = [0.2, 0.5, 0.3];
        assert_eq!(draw_index(&p, 0.0), 0);
        assert_eq!(draw_index(&p, 0.19), 0);
        assert_eq!(draw_index(&p, 0.2), 1);
        assert_eq!(draw_index(&p, 0.69), 1);
        assert_eq!(draw_index(&p, 0.7), 2);
        assert_eq!(draw_index(&p, 0.999_999_999_999), 2);
    }

    #[test]
    fn single_candidate_is_returned() {
        let set = set_with(vec![vec![0.7]], vec![0.0], vec![1.0]);
        let sel = bounded_select(&set, 5, &mut rng_from_seed(0)).unwrap();
        assert_eq!((sel.index, sel.action), (0, vec![0.7]));
    }

    #[test]
    fn draws_concentrated_on_one_index_win_regardless_of_distance() {
        let set = set_with(vec![vec![0.0], vec![5.0], vec![0.1]], vec![0.0], vec![0.0, 1.0, 0.0]);
        let sel = bounded_select(&set, 10, &mut rng_from_seed(3)).unwrap();
        assert_eq!(sel.index, 1);
    }

    #[test]
    fn seeded_reduction_matches_replayed_draws() {
        // candidate 0 is 0.1 from the mean, candidate 1 is 0.9 away
        let set = set_with(vec![vec![0.1], vec![0.9]], vec![0.0], vec![0.5, 0.5]);
        for seed in 0..20 {
            let sel = bounded_select(&set, 10, &mut rng_from_seed(seed)).unwrap();
            let mut replay = rng_from_seed(seed);
            let draws: Vec<usize> = (0..10)
                .map(|_| if replay.random::<f64>() < 0.5 { 0 } else { 1 })
                .collect();
            let expected = if draws.contains(&0) { 0 } else { 1 };
            assert_eq!(sel.index, expected, "seed {seed}: {draws:?}");
        }
    }

    #[test]
    fn distance_ties_go_to_lowest_index() {
        let set = set_with(vec![vec![1.0], vec![-1.0]], vec![0.0], vec![0.5, 0.5]);
        for seed in 0..20 {
            let sel = bounded_select(&set, 50, &mut rng_from_seed(seed)).unwrap();
            assert_eq!(sel.index, 0);
        }
    }

    #[test]
    fn qu_argmax_cases() {
        assert_eq!(argmax_sum(&[1.0, 2.0], &[0.0, 0.0]), 1);
        assert_eq!(argmax_sum(&[1.0, 0.0], &[0.0, 2.0]), 1);
        assert_eq!(argmax_sum(&[101.0, 100.0], &[0.0, 2.0]), 1);
        assert_eq!(argmax_sum(&[1.0, 1.0], &[0.5, 0.5]), 0);
    }

    proptest! {
        #[test]
        fn gibbs_properties(
            u in proptest::collection::vec(-1e3f64..1e3, 1..64),
            temperature in 0.05f64..20.0,
        ) {
            let p = gibbs_probs(&u, temperature).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|&x| x > 0.0));
            for i in 0..u.len() {
                for j in 0..u.len() {
                    if u[i] > u[j] {
                        prop_assert!(p[i] > p[j]);
                    }
                }
            }
        }

        #[test]
        fn softmax_shift_invariance(
            s in proptest::collection::vec(-5.0f64..5.0, 1..32),
            c in -50.0f64..50.0,
        ) {
            let a = softmax(&s);
            let b = softmax(&s.iter().map(|x| x + c).collect::<Vec<_>>());
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn qu_is_shift_invariant(
            q in proptest::collection::vec(-10.0f64..10.0, 1..20),
            c in -100.0f64..100.0,
            seed in 0u64..1000,
        ) {
            let mut rng = rng_from_seed(seed);
            let u: Vec<f64> = q.iter().map(|_| rng.random_range(0.0..3.0)).collect();
            let shifted: Vec<f64> = q.iter().map(|x| x + c).collect();
            // exact ties may break differently after rounding; only assert on clear winners
            let best = argmax_sum(&q, &u);
            let margin = q.iter().zip(&u).enumerate()
                .filter(|(i, _)| *i != best)
                .map(|(_, (a, b))| q[best] + u[best] - a - b)
                .fold(f64::INFINITY, f64::min);
            if margin > 1e-9 {
                prop_assert_eq!(argmax_sum(&shifted, &u), best);
            }
        }
    }
}
