//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

use gamp::nets::{Activation, MlpParams};
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;

/// `|a - b| / max(|a|, |b|)`; the `1e-8` floor only matters for entries that
/// are zero up to round-off.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Central difference of `f` with respect to every parameter.
pub fn fd_param_grads(params: &MlpParams, f: impl Fn(&MlpParams) -> f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut p = params.clone();
    let mut gw = Vec::new();
    let mut gb = Vec::new();
    for l in 0..params.weights.len() {
        let mut row = Vec::with_capacity(params.weights[l].len());
        for i in 0..params.weights[l].len() {
            let orig = p.weights[l][i];
            p.weights[l][i] = orig + FD_STEP;
            let up = f(&p);
            p.weights[l][i] = orig - FD_STEP;
            let dn = f(&p);
            p.weights[l][i] = orig;
            row.push((up - dn) / (2.0 * FD_STEP));
        }
        gw.push(row);
        let mut row = Vec::with_capacity(params.biases[l].len());
        for i in 0..params.biases[l].len() {
            let orig = p.biases[l][i];
            p.biases[l][i] = orig + FD_STEP;
            let up = f(&p);
            p.biases[l][i] = orig - FD_STEP;
            let dn = f(&p);
            p.biases[l][i] = orig;
            row.push((up - dn) / (2.0 * FD_STEP));
        }
        gb.push(row);
    }
    (gw, gb)
}

/// Central difference of `f` with respect to the input vector.
pub fn fd_input_grad(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xp[i];
            xp[i] = orig + FD_STEP;
            let up = f(&xp);
            xp[i] = orig - FD_STEP;
            let dn = f(&xp);
            xp[i] = orig;
            (up - dn) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Random smooth network: depth 1..=3 layers, widths 1..=16.
pub fn random_net<R: Rng>(rng: &mut R, output: Activation) -> MlpParams {
    let depth = rng.random_range(1..=3);
    let mut dims = vec![rng.random_range(1..=16)];
    for _ in 0..depth {
        dims.push(rng.random_range(1..=16));
    }
    if output == Activation::Sigmoid {
        *dims.last_mut().unwrap() = 1;
    }
    let hidden = [Activation::Tanh, Activation::Elu][rng.random_range(0..2)];
    let mut p = MlpParams::init(&dims, hidden, output, 1.0, rng);
    for b in p.biases.iter_mut().flatten() {
        *b = rng.random_range(-0.5..0.5);
    }
    p
}

pub fn random_vec<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()
}

/// Brute-force GAE: explicit discounted sums of TD errors, truncated at episode ends.
pub fn gae_bruteforce(rewards: &[f64], values: &[f64], dones: &[bool], bootstrap: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let next_v = |t: usize| if t + 1 < n { values[t + 1] } else { bootstrap };
    let delta: Vec<f64> = (0..n)
        .map(|t| rewards[t] + gamma * next_v(t) * if dones[t] { 0.0 } else { 1.0 } - values[t])
        .collect();
    (0..n)
        .map(|t| {
            let mut sum = 0.0;
            let mut weight = 1.0;
            for k in t..n {
                sum += weight * delta[k];
                if dones[k] {
                    break;
                }
                weight *= gamma * lambda;
            }
            sum
        })
        .collect()
}
