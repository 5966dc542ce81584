#![allow(dead_code)]

use bex::approximator::{Activation, Matrix, Mlp};
use bex::envs::{evaluate_policy, make_env, EvalResult};
use bex::replay::{ReplayBuffer, Transition};
use bex::rng::{rng_from_seed, Rng};
use rand::Rng as _;

/// Central-difference derivative of `f` at `x` along coordinate `i`.
pub fn central_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize, eps: f64) -> f64 {
    let mut p = x.to_vec();
    p[i] = x[i] + eps;
    let plus = f(&p);
    p[i] = x[i] - eps;
    let minus = f(&p);
    (plus - minus) / (2.0 * eps)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Worst relative error between `backward` and central differences of the
/// scalar `Σ upstream ⊙ net(x)`, over `param_coords` random parameters and all
/// input coordinates.
pub fn mlp_fd_error(net: &Mlp, x: &Matrix, upstream: &Matrix, param_coords: usize, eps: f64, rng: &mut Rng) -> f64 {
    let (_, trace) = net.forward_trace(x).unwrap();
    let bp = net.backward(&trace, upstream).unwrap();
    let dot = |out: Matrix| out.data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum::<f64>();

    let mut worst = 0.0f64;
    let params = net.params().to_vec();
    let mut by_params = |p: &[f64]| {
        let n = Mlp::from_params(net.sizes(), net.hidden_activation(), net.output_activation(), p.to_vec()).unwrap();
        dot(n.forward(x).unwrap())
    };
    for _ in 0..param_coords {
        let i = rng.random_range(0..params.len());
        let numeric = central_difference(&mut by_params, &params, i, eps);
        worst = worst.max(rel_err(bp.tape.as_slice()[i], numeric));
    }
    let input = x.data().to_vec();
    let mut by_input = |v: &[f64]| dot(net.forward(&Matrix::new(x.rows(), x.cols(), v.to_vec()).unwrap()).unwrap());
    for i in 0..input.len() {
        let numeric = central_difference(&mut by_input, &input, i, eps);
        worst = worst.max(rel_err(bp.input_grad.data()[i], numeric));
    }
    worst
}

/// Signs of every hidden pre-activation, rebuilt from parameter prefixes
/// (parameters are stored layer after layer).
pub fn hidden_signs(sizes: &[usize], hidden: Activation, params: &[f64], x: &Matrix) -> Vec<bool> {
    let mut signs = Vec::new();
    let mut used = 0;
    for l in 1..sizes.len() - 1 {
        used += sizes[l - 1] * sizes[l] + sizes[l];
        let prefix = Mlp::from_params(&sizes[..=l], hidden, Activation::Identity, params[..used].to_vec()).unwrap();
        signs.extend(prefix.forward(x).unwrap().data().iter().map(|&v| v > 0.0));
    }
    signs
}

/// Like [`mlp_fd_error`], but for ReLU networks a coordinate whose ±eps stencil
/// changes any hidden unit's on/off state is redrawn (parameters) or skipped
/// (inputs): the function has a kink inside the stencil and the central
/// difference is not a derivative there. Returns the worst error and the number
/// of stencils discarded.
pub fn mlp_fd_error_smooth(
    net: &Mlp,
    x: &Matrix,
    upstream: &Matrix,
    param_coords: usize,
    eps: f64,
    rng: &mut Rng,
) -> (f64, usize) {
    let relu = net.hidden_activation() == Activation::Relu;
    let sizes = net.sizes().to_vec();
    let (_, trace) = net.forward_trace(x).unwrap();
    let bp = net.backward(&trace, upstream).unwrap();
    let dot = |out: Matrix| out.data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum::<f64>();
    let params = net.params().to_vec();
    let base = hidden_signs(&sizes, net.hidden_activation(), &params, x);
    let kinked_param = |i: usize| {
        relu && [eps, -eps].iter().any(|d| {
            let mut p = params.clone();
            p[i] += d;
            hidden_signs(&sizes, Activation::Relu, &p, x) != base
        })
    };
    let kinked_input = |i: usize| {
        relu && [eps, -eps].iter().any(|d| {
            let mut v = x.data().to_vec();
            v[i] += d;
            let xp = Matrix::new(x.rows(), x.cols(), v).unwrap();
            hidden_signs(&sizes, Activation::Relu, &params, &xp) != base
        })
    };

    let (mut worst, mut skipped, mut checked) = (0.0f64, 0, 0);
    let mut by_params = |p: &[f64]| {
        let n = Mlp::from_params(&sizes, net.hidden_activation(), net.output_activation(), p.to_vec()).unwrap();
        dot(n.forward(x).unwrap())
    };
    while checked < param_coords {
        let i = rng.random_range(0..params.len());
        if kinked_param(i) {
            skipped += 1;
            continue;
        }
        let numeric = central_difference(&mut by_params, &params, i, eps);
        worst = worst.max(rel_err(bp.tape.as_slice()[i], numeric));
        checked += 1;
    }
    let input = x.data().to_vec();
    let mut by_input = |v: &[f64]| dot(net.forward(&Matrix::new(x.rows(), x.cols(), v.to_vec()).unwrap()).unwrap());
    for i in 0..input.len() {
        if kinked_input(i) {
            skipped += 1;
            continue;
        }
        let numeric = central_difference(&mut by_input, &input, i, eps);
        worst = worst.max(rel_err(bp.input_grad.data()[i], numeric));
    }
    (worst, skipped)
}

pub fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Matrix {
    Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Pendulum controller that pumps energy toward the upright equilibrium and
/// switches to a PD law near the top. With θ = 0 upright the dynamics are
/// `θ̈ = 15 sin θ + 3u`, so `E = θ̇²/2 + 15 cos θ` obeys `dE/dt = 3uθ̇` and equals
/// 15 at upright rest.
pub fn energy_shaping_action(obs: &[f64]) -> Vec<f64> {
    let theta = obs[1].atan2(obs[0]);
    let omega = obs[2];
    let energy = 0.5 * omega * omega + 15.0 * theta.cos();
    let u = if theta.abs() < 0.5 && energy > 13.0 {
        -(10.0 * theta + 2.0 * omega)
    } else {
        let pump = 0.5 * (15.0 - energy) * omega;
        if pump == 0.0 && omega == 0.0 {
            1.0
        } else {
            pump
        }
    };
    vec![u.clamp(-2.0, 2.0)]
}

pub fn energy_shaping_baseline(episodes: usize, seed: u64) -> EvalResult {
    let mut env = make_env("pendulum").unwrap();
    evaluate_policy(env.as_mut(), |s| Ok(energy_shaping_action(s)), episodes, seed).unwrap()
}

/// Uniformly random actions inside the bounds.
pub fn random_baseline(env_name: &str, episodes: usize, seed: u64) -> EvalResult {
    let mut env = make_env(env_name).unwrap();
    let spec = env.spec().clone();
    let mut rng = rng_from_seed(seed ^ 0xabcdef);
    evaluate_policy(
        env.as_mut(),
        |_| {
            Ok(spec
                .action_low
                .iter()
                .zip(&spec.action_high)
                .map(|(&l, &h)| rng.random_range(l..h))
                .collect())
        },
        episodes,
        seed,
    )
    .unwrap()
}

/// Buffer filled from the linear system `s' = s + 0.1 a` with zero reward.
pub fn linear_system_buffer(n: usize, state_dim: usize, seed: u64) -> ReplayBuffer {
    let mut rng = rng_from_seed(seed);
    let mut buf = ReplayBuffer::new(n, state_dim, state_dim).unwrap();
    for _ in 0..n {
        let s: Vec<f64> = (0..state_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a: Vec<f64> = (0..state_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let next = s.iter().zip(&a).map(|(s, a)| s + 0.1 * a).collect();
        buf.push(Transition {
            state: s,
            action: a,
            reward: 0.0,
            next_state: next,
            terminal: false,
        })
        .unwrap();
    }
    buf
}

/// Fraction of consecutive pairs where the series went up.
pub fn non_monotone_fraction(series: &[f64]) -> f64 {
    let ups = series.windows(2).filter(|w| w[1] > w[0]).count();
    ups as f64 / (series.len() - 1) as f64
}
