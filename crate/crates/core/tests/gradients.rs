mod common;

use bex::approximator::{Activation, Matrix, Mlp};
use bex::rng::rng_from_seed;
use bex::sac::{actor_gradient, ActionValue, GaussianPolicy, SacConfig, Temperature, TwinCritics};
use common::{central_difference, mlp_fd_error, random_matrix, rel_err};
use rand::Rng as _;

const EPS: f64 = 1e-5;

#[test]
fn mlp_backward_matches_central_differences() {
    let mut rng = rng_from_seed(1);
    for sizes in [vec![1, 1], vec![3, 5, 2], vec![4, 8, 8, 5], vec![6, 16, 1]] {
        for act in [Activation::Tanh, Activation::Relu, Activation::Identity] {
            let net = Mlp::new(&sizes, act, Activation::Identity, &mut rng).unwrap();
            let x = random_matrix(5, sizes[0], 2.0, &mut rng);
            let up = random_matrix(5, *sizes.last().unwrap(), 1.0, &mut rng);
            let err = mlp_fd_error(&net, &x, &up, 40, EPS, &mut rng);
            assert!(err < 1e-4, "{sizes:?} {act:?}: {err}");
        }
    }
}

#[test]
fn tanh_output_layer_gradients() {
    let mut rng = rng_from_seed(2);
    let net = Mlp::new(&[3, 6, 2], Activation::Relu, Activation::Tanh, &mut rng).unwrap();
    let x = random_matrix(4, 3, 1.5, &mut rng);
    let up = random_matrix(4, 2, 1.0, &mut rng);
    assert!(mlp_fd_error(&net, &x, &up, 40, EPS, &mut rng) < 1e-4);
}

#[test]
fn zero_upstream_gives_zero_tape() {
    let mut rng = rng_from_seed(3);
    let net = Mlp::new(&[3, 4, 2], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
    let x = random_matrix(2, 3, 1.0, &mut rng);
    let (_, trace) = net.forward_trace(&x).unwrap();
    let bp = net.backward(&trace, &Matrix::zeros(2, 2)).unwrap();
    assert!(bp.tape.as_slice().iter().all(|&g| g == 0.0));
}

fn small_cfg() -> SacConfig {
    SacConfig {
        hidden: vec![8, 8],
        activation: Activation::Tanh,
        ..SacConfig::default()
    }
}

#[test]
fn actor_gradient_matches_central_differences() {
    let mut rng = rng_from_seed(4);
    let cfg = small_cfg();
    for (state_dim, low, high) in [
        (3, vec![-2.0], vec![2.0]),
        (4, vec![-1.0, -1.0], vec![1.0, 1.0]),
        (2, vec![0.0, -3.0, 1.0], vec![1.0, 3.0, 5.0]),
    ] {
        let policy = GaussianPolicy::new(state_dim, &low, &high, &cfg, &mut rng).unwrap();
        let critics = TwinCritics::new(state_dim, low.len(), &cfg, &mut rng).unwrap();
        let states = random_matrix(6, state_dim, 1.0, &mut rng);
        let alpha = 0.3;
        let noise_seed = rng.random::<u64>();
        let (_, tape) = actor_gradient(&policy, &critics, alpha, &states, &mut rng_from_seed(noise_seed)).unwrap();

        let params = policy.net.params().to_vec();
        let mut loss_at = |p: &[f64]| {
            let mut probe = policy.clone();
            probe.net.params_mut().copy_from_slice(p);
            actor_gradient(&probe, &critics, alpha, &states, &mut rng_from_seed(noise_seed)).unwrap().0
        };
        for i in 0..params.len() {
            let numeric = central_difference(&mut loss_at, &params, i, EPS);
            let err = rel_err(tape.as_slice()[i], numeric);
            assert!(err < 1e-4, "param {i}: analytic {} numeric {numeric}", tape.as_slice()[i]);
        }
    }
}

#[test]
fn min_critic_action_gradient_matches_central_differences() {
    let mut rng = rng_from_seed(5);
    let critics = TwinCritics::new(3, 2, &small_cfg(), &mut rng).unwrap();
    let states = random_matrix(7, 3, 1.0, &mut rng);
    let actions = random_matrix(7, 2, 1.0, &mut rng);
    let (values, grad) = critics.value_and_action_grad(&states, &actions).unwrap();
    assert_eq!(values, critics.min_values(&states, &actions).unwrap());
    for row in 0..7 {
        let base = actions.row(row).to_vec();
        let mut q_at = |a: &[f64]| {
            let s = Matrix::row_vector(states.row(row));
            critics.min_values(&s, &Matrix::row_vector(a)).unwrap()[0]
        };
        for d in 0..2 {
            let numeric = central_difference(&mut q_at, &base, d, EPS);
            assert!(rel_err(grad.get(row, d), numeric) < 1e-4);
        }
    }
}

#[test]
fn temperature_gradient_matches_central_differences() {
    let temp = Temperature::new(0.7, -2.0, 1e-3);
    let log_probs = [0.3, -1.2, 2.5, 0.0];
    let mean = log_probs.iter().map(|lp| lp - 2.0).sum::<f64>() / 4.0;
    let mut loss = |x: &[f64]| -x[0] * mean;
    let numeric = central_difference(&mut loss, &[temp.log_alpha], 0, EPS);
    assert!(rel_err(temp.gradient(&log_probs), numeric) < 1e-8);
}
