mod common;

use bex::approximator::{Activation, Matrix};
use bex::explore::{
    act, bounded_select, draw_index, gibbs_probs, normalize_scores, qu_select, score_candidates, CandidateSet,
    SelectorConfig, SelectorKind,
};
use bex::replay::{ReplayBuffer, Transition};
use bex::rng::{rng_from_seed, Rng};
use bex::sac::{GaussianPolicy, SacConfig, TwinCritics};
use bex::worldmodel::{Ensemble, WorldModelConfig};
use proptest::prelude::*;
use rand::Rng as _;
use rand_distr::StandardNormal;

const LOW: [f64; 1] = [-2.0];
const HIGH: [f64; 1] = [2.0];

fn small_sac() -> SacConfig {
    SacConfig {
        hidden: vec![16, 16],
        ..SacConfig::default()
    }
}

fn pieces(seed: u64) -> (GaussianPolicy, TwinCritics, Ensemble) {
    let mut rng = rng_from_seed(seed);
    let policy = GaussianPolicy::new(3, &LOW, &HIGH, &small_sac(), &mut rng).unwrap();
    let critics = TwinCritics::new(3, 1, &small_sac(), &mut rng).unwrap();
    let mut buffer = ReplayBuffer::new(256, 3, 1).unwrap();
    for _ in 0..256 {
        let s: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = rng.random_range(-2.0..2.0);
        let next = vec![s[0], s[1] + 0.05 * a, s[2] + 0.1 * a];
        buffer
            .push(Transition {
                state: s,
                action: vec![a],
                reward: -a * a,
                next_state: next,
                terminal: false,
            })
            .unwrap();
    }
    let cfg = WorldModelConfig {
        members: 5,
        hidden: vec![16, 16],
        activation: Activation::Relu,
        lr: 1e-3,
        reward_in_uncertainty: false,
    };
    let mut ensemble = Ensemble::new(3, 1, cfg, seed + 1).unwrap();
    ensemble.train_ensemble(&buffer, 20, 64).unwrap();
    (policy, critics, ensemble)
}

fn selector(kind: SelectorKind, reductions: usize) -> SelectorConfig {
    SelectorConfig {
        kind,
        reductions,
        ..SelectorConfig::default()
    }
}

#[test]
fn scores_follow_candidate_order() {
    let (policy, _, ensemble) = pieces(1);
    let state = [0.3, -0.4, 1.0];
    let mut set = CandidateSet::propose(&policy, &state, 50, &mut rng_from_seed(2)).unwrap();
    score_candidates(&mut set, &ensemble).unwrap();
    for (a, u) in set.actions.iter().zip(&set.uncertainties) {
        let direct = ensemble.predict_all(&state, a).unwrap().uncertainty;
        assert!((direct - u).abs() <= 1e-12 * direct.abs().max(1.0), "{direct} vs {u}");
    }
}

#[test]
fn identical_candidates_share_uncertainty() {
    let (policy, _, ensemble) = pieces(3);
    let mut set = CandidateSet::propose(&policy, &[0.1, 0.2, 0.3], 4, &mut rng_from_seed(4)).unwrap();
    set.actions = vec![set.actions[0].clone(); 4];
    score_candidates(&mut set, &ensemble).unwrap();
    assert!(set.uncertainties.iter().all(|&u| u == set.uncertainties[0]));
    let probs = gibbs_probs(&set.uncertainties, 1.0).unwrap();
    assert_eq!(probs, vec![0.25; 4]);
}

/// Two-sample Kolmogorov-Smirnov statistic.
fn ks_statistic(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

#[test]
fn vanilla_act_matches_the_policy_distribution() {
    let (policy, critics, ensemble) = pieces(5);
    let state = [0.6, 0.8, -0.5];
    let cfg = selector(SelectorKind::Vanilla, 1);
    let mut rng = rng_from_seed(6);
    let acted: Vec<f64> = (0..4000)
        .map(|_| {
            let d = act(&cfg, &policy, Some(&ensemble), &critics, &state, &mut rng).unwrap();
            assert!(!d.fallback && d.diagnostics.is_none() && d.candidates.len() == 1);
            d.action[0]
        })
        .collect();
    // independent draws: tanh(μ + σ ε) rescaled into [-2, 2]
    let (mean, log_std) = policy.distribution(&Matrix::row_vector(&state)).unwrap();
    let (mu, sigma) = (mean.get(0, 0), log_std.get(0, 0).exp());
    let mut other = rng_from_seed(7);
    let direct: Vec<f64> = (0..4000)
        .map(|_| {
            let e: f64 = other.sample(StandardNormal);
            2.0 * (mu + sigma * e).tanh()
        })
        .collect();
    let n = 4000.0f64;
    let critical = 1.63 * (2.0 / n).sqrt();
    let d = ks_statistic(acted, direct);
    assert!(d < critical, "KS {d} >= {critical}");
}

#[test]
fn selectors_fall_back_without_a_trained_ensemble() {
    let (policy, critics, _) = pieces(8);
    let fresh = Ensemble::new(3, 1, WorldModelConfig::default(), 9).unwrap();
    for kind in [SelectorKind::Bounded, SelectorKind::Qu] {
        for ens in [None, Some(&fresh)] {
            let d = act(&selector(kind, 10), &policy, ens, &critics, &[0.0, 1.0, 0.0], &mut rng_from_seed(10)).unwrap();
            assert!(d.fallback);
            assert_eq!(d.candidates.len(), 1);
        }
    }
}

#[test]
fn chosen_actions_are_candidates_inside_bounds() {
    let (policy, critics, ensemble) = pieces(11);
    let mut rng = rng_from_seed(12);
    for kind in [SelectorKind::Bounded, SelectorKind::Qu] {
        for _ in 0..50 {
            let state: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let d = act(&selector(kind, 10), &policy, Some(&ensemble), &critics, &state, &mut rng).unwrap();
            assert_eq!(d.candidates.len(), 100);
            assert!(d.candidates.contains(&d.action));
            assert!(d.action[0] >= -2.0 && d.action[0] <= 2.0);
            let diag = d.diagnostics.unwrap();
            assert_eq!(d.candidates.actions[diag.chosen_index], d.action);
            assert!(diag.chosen_uncertainty <= diag.max_uncertainty);
        }
    }
}

#[test]
fn qu_picks_the_best_value_plus_uncertainty() {
    let (policy, critics, ensemble) = pieces(13);
    let state = [0.2, 0.2, 0.2];
    let mut set = CandidateSet::propose(&policy, &state, 30, &mut rng_from_seed(14)).unwrap();
    score_candidates(&mut set, &ensemble).unwrap();
    let choice = qu_select(&set, &critics).unwrap();
    let s = Matrix::row_vector(&state);
    let score = |i: usize| critics.min_values(&s, &Matrix::row_vector(&set.actions[i])).unwrap()[0] + set.uncertainties[i];
    let best = score(choice.index);
    for i in 0..set.len() {
        assert!(score(i) <= best + 1e-12);
    }
}

fn uniform_set(policy: &GaussianPolicy, n: usize, rng: &mut Rng) -> CandidateSet {
    let mut set = CandidateSet::propose(policy, &[0.5, -0.5, 0.0], n, rng).unwrap();
    set.uncertainties = vec![0.0; n];
    set.probs = gibbs_probs(&set.uncertainties, 1.0).unwrap();
    set
}

#[test]
fn flat_uncertainty_pulls_toward_the_mean() {
    let (policy, _, _) = pieces(15);
    let mut rng = rng_from_seed(16);
    let (mut near, mut single) = (0.0, 0.0);
    for _ in 0..500 {
        let set = uniform_set(&policy, 100, &mut rng);
        near += set.distance_to_mean(bounded_select(&set, 10, &mut rng).unwrap().index);
        single += set.distance_to_mean(bounded_select(&set, 1, &mut rng).unwrap().index);
    }
    assert!(near < 0.5 * single, "{near} vs {single}");
}

#[test]
fn single_draw_follows_the_gibbs_weights() {
    let (policy, _, _) = pieces(17);
    let mut rng = rng_from_seed(18);
    let mut set = uniform_set(&policy, 4, &mut rng);
    set.probs = gibbs_probs(&[0.0, 1.0, 2.0, 3.0], 0.5).unwrap();
    let draws = 20_000;
    let mut counts = [0usize; 4];
    for _ in 0..draws {
        counts[bounded_select(&set, 1, &mut rng).unwrap().index] += 1;
    }
    for (c, p) in counts.iter().zip(&set.probs) {
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        assert!((*c as f64 - draws as f64 * p).abs() < 4.0 * sd, "{counts:?} vs {:?}", set.probs);
    }
}

#[test]
fn larger_reductions_never_increase_the_distance_on_shared_draws() {
    // with S draws shared as a prefix, adding draws can only bring the pick closer
    let (policy, _, _) = pieces(19);
    let mut rng = rng_from_seed(20);
    let set = uniform_set(&policy, 50, &mut rng);
    for seed in 0..100 {
        let mut prev = f64::INFINITY;
        for s in 1..=12 {
            let d = set.distance_to_mean(bounded_select(&set, s, &mut rng_from_seed(seed)).unwrap().index);
            assert!(d <= prev);
            prev = d;
        }
    }
}

#[test]
fn invalid_selector_inputs_are_rejected() {
    let (policy, _, _) = pieces(21);
    let mut rng = rng_from_seed(22);
    let set = uniform_set(&policy, 5, &mut rng);
    assert!(bounded_select(&set, 0, &mut rng).is_err());
    assert!(gibbs_probs(&[], 1.0).is_err());
    assert!(gibbs_probs(&[1.0, f64::NAN], 1.0).is_err());
    assert!(gibbs_probs(&[1.0, 2.0], 0.0).is_err());
    assert!(SelectorConfig {
        candidates: 0,
        ..SelectorConfig::default()
    }
    .validate()
    .is_err());
}

proptest! {
    #[test]
    fn normalized_scores_span_the_unit_interval(u in prop::collection::vec(-1e3f64..1e3, 1..60)) {
        let s = normalize_scores(&u);
        prop_assert!(s.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let distinct = u.iter().any(|&v| v != u[0]);
        if distinct {
            prop_assert!(s.iter().any(|&v| v == 0.0) && s.iter().any(|&v| v == 1.0));
        } else {
            prop_assert!(s.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn draws_land_on_positive_weight(p in prop::collection::vec(0.0f64..1.0, 1..30), r in 0.0f64..1.0) {
        let total: f64 = p.iter().sum();
        prop_assume!(total > 1e-6);
        let probs: Vec<f64> = p.iter().map(|v| v / total).collect();
        let i = draw_index(&probs, r);
        prop_assert!(i < probs.len());
        prop_assert!(probs[i] > 0.0 || i == probs.len() - 1);
    }
}
