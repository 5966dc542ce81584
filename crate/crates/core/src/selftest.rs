//! Quick invariant checks behind `bex selftest`.

use std::fmt;

use rand::Rng as _;

use crate::approximator::{Activation, Matrix, Mlp};
use crate::envs::{make_env, ENV_NAMES};
use crate::explore::{gibbs_probs, softmax};
use crate::rng::{rng_from_seed, Rng};
use crate::worldmodel::disagreement;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest relative error between backpropagated and central-difference
/// gradients of `Σ upstream ⊙ net(x)` over `coords` random parameters and every
/// input coordinate.
pub fn gradient_check(net: &Mlp, x: &Matrix, eps: f64, coords: usize, rng: &mut Rng) -> crate::Result<f64> {
    let out_dim = net.output_dim();
    let upstream = Matrix::new(
        x.rows(),
        out_dim,
        (0..x.rows() * out_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;
    let loss = |n: &Mlp, input: &Matrix| -> crate::Result<f64> {
        Ok(n.forward(input)?.data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum())
    };
    let (_, trace) = net.forward_trace(x)?;
    let bp = net.backward(&trace, &upstream)?;
    let mut worst = 0.0f64;
    let mut probe = net.clone();
    for _ in 0..coords {
        let i = rng.random_range(0..net.param_count());
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + eps;
        let plus = loss(&probe, x)?;
        probe.params_mut()[i] = orig - eps;
        let minus = loss(&probe, x)?;
        probe.params_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        worst = worst.max(relative_error(bp.tape.as_slice()[i], numeric, 1e-6));
    }
    let mut xp = x.clone();
    for i in 0..x.data().len() {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + eps;
        let plus = loss(net, &xp)?;
        xp.data_mut()[i] = orig - eps;
        let minus = loss(net, &xp)?;
        xp.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        worst = worst.max(relative_error(bp.input_grad.data()[i], numeric, 1e-6));
    }
    Ok(worst)
}

/// Network shapes used by the agents for one environment: actor, critic, world model.
pub fn agent_shapes(state_dim: usize, action_dim: usize, hidden: &[usize]) -> Vec<Vec<usize>> {
    let with = |input: usize, output: usize| {
        let mut s = vec![input];
        s.extend_from_slice(hidden);
        s.push(output);
        s
    };
    vec![
        with(state_dim, 2 * action_dim),
        with(state_dim + action_dim, 1),
        with(state_dim + action_dim, state_dim + 1),
    ]
}

fn check_gradients(rng: &mut Rng) -> Check {
    let mut worst = 0.0f64;
    let mut cases = 0;
    for name in ENV_NAMES {
        let env = make_env(name).expect("known env");
        let spec = env.spec();
        for sizes in agent_shapes(spec.state_dim, spec.action_dim, &[16, 16]) {
            for act in [Activation::Tanh, Activation::Relu] {
                let net = Mlp::new(&sizes, act, Activation::Identity, rng).expect("valid sizes");
                let x = Matrix::new(3, sizes[0], (0..3 * sizes[0]).map(|_| rng.random_range(-2.0..2.0)).collect())
                    .expect("shape");
                match gradient_check(&net, &x, 1e-5, 20, rng) {
                    Ok(e) => worst = worst.max(e),
                    Err(e) => {
                        return Check {
                            name: "gradients".into(),
                            passed: false,
                            detail: e.to_string(),
                        }
                    }
                }
                cases += 1;
            }
        }
    }
    Check {
        name: "gradients".into(),
        passed: worst < 1e-4,
        detail: format!("{cases} networks, worst relative error {worst:.2e}"),
    }
}

fn check_disagreement(rng: &mut Rng) -> Check {
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let m = rng.random_range(2..=7);
        let d = rng.random_range(1..=6);
        let points: Vec<Vec<f64>> = (0..m).map(|_| (0..d).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let (_, u) = disagreement(&points);
        // pairwise form of the population variance: Σ_{i<j} (x_i - x_j)² / M²
        let mut brute = 0.0;
        for k in 0..d {
            for i in 0..m {
                for j in i + 1..m {
                    brute += (points[i][k] - points[j][k]).powi(2);
                }
            }
        }
        brute /= (m * m) as f64;
        worst = worst.max((u - brute).abs());
    }
    Check {
        name: "ensemble variance".into(),
        passed: worst < 1e-10,
        detail: format!("worst absolute error {worst:.2e}"),
    }
}

fn check_gibbs(rng: &mut Rng) -> Check {
    let mut ok = true;
    for _ in 0..200 {
        let n = rng.random_range(1..50);
        let u: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
        let p = gibbs_probs(&u, 1.0).expect("finite scores");
        ok &= (p.iter().sum::<f64>() - 1.0).abs() < 1e-9;
        for i in 0..n {
            for j in 0..n {
                ok &= !(u[i] > u[j]) || p[i] > p[j];
            }
        }
    }
    let third = softmax(&[0.0, std::f64::consts::LN_2]);
    ok &= third == [1.0 / 3.0, 2.0 / 3.0];
    ok &= gibbs_probs(&[4.0; 5], 1.0).expect("finite") == vec![0.2; 5];
    Check {
        name: "gibbs selection".into(),
        passed: ok,
        detail: "normalization, rank order, fixed cases".into(),
    }
}

pub fn run_all() -> Vec<Check> {
    let mut rng = rng_from_seed(0x5e1f);
    vec![check_gradients(&mut rng), check_disagreement(&mut rng), check_gibbs(&mut rng)]
}
