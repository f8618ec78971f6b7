#![allow(dead_code)]

use std::io::Write;

use rand::Rng;
use robust_lanchester::config::ScenarioConfig;

/// Prints one result line that survives output capture.
pub fn report(name: &str, pass: bool, detail: impl std::fmt::Display) {
    let mark = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "[acceptance] {mark} {name}: {detail}");
}

/// Outcome `o` of a 4-atom pmf as (z_blue, z_red) indicators.
pub fn indicators(o: usize) -> (f64, f64) {
    ((o & 1) as f64, ((o >> 1) & 1) as f64)
}

/// Terminal state of the linear recursion written out from scratch.
pub fn terminal(cfg: &ScenarioConfig, pi: f64, outcomes: &[usize], clamp: bool) -> (f64, f64) {
    let (r, b, dt) = (cfg.attrition.red_rate, cfg.attrition.blue_rate, cfg.grid.dt);
    let (mut blue, mut red) = (cfg.initial.blue, cfg.initial.red);
    for &o in outcomes {
        let (zb, zr) = indicators(o);
        let nb = blue - r * zr * red * dt;
        let nr = red - pi * b * zb * blue * dt;
        blue = nb;
        red = nr;
        if clamp {
            blue = blue.max(0.0);
            red = red.max(0.0);
        }
    }
    (blue, red)
}

pub fn phi(u: f64) -> f64 {
    if u >= 0.0 {
        u * u
    } else {
        -u * u
    }
}

/// Stochastic payoff `theta1 phi(B-R) + theta2 phi(B-Bmin)`.
pub fn payoff(cfg: &ScenarioConfig, pi: f64, outcomes: &[usize]) -> f64 {
    let (blue, red) = terminal(cfg, pi, outcomes, cfg.absorb_at_zero);
    let t = cfg.preferences.theta;
    t[0] * phi(blue - red) + t[1] * phi(blue - cfg.preferences.b_min)
}

pub fn reserve(cfg: &ScenarioConfig, pi: f64) -> f64 {
    let p = cfg.preferences;
    p.theta[2] * (p.zeta * cfg.grid.dt * cfg.grid.n_steps as f64).exp() * (1.0 - pi) * cfg.initial.blue
}

/// Path index to per-step outcomes, step k in bits 2k..2k+2.
pub fn outcomes(index: usize, n: usize) -> Vec<usize> {
    (0..n).map(|k| (index >> (2 * k)) & 3).collect()
}

/// Objective by brute force over explicit path probabilities.
pub fn brute_objective(cfg: &ScenarioConfig, pi: f64, probs: &[f64]) -> f64 {
    let n = cfg.grid.n_steps;
    let mut total = 0.0;
    for (idx, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            total += p * payoff(cfg, pi, &outcomes(idx, n));
        }
    }
    total + reserve(cfg, pi)
}

/// Product-measure path probabilities of a per-step pmf.
pub fn product_probs(pmf: &[f64; 4], n: usize) -> Vec<f64> {
    (0..1usize << (2 * n))
        .map(|idx| outcomes(idx, n).iter().map(|&o| pmf[o]).product())
        .collect()
}

/// `sum_i w_i KL(q || prior_i^N)` over explicit path probabilities.
pub fn path_weighted_kl(q: &[f64], priors: &[[f64; 4]], weights: &[f64], n: usize) -> f64 {
    let mut total = 0.0;
    for (prior, w) in priors.iter().zip(weights) {
        let p = product_probs(prior, n);
        let mut kl = 0.0;
        for (qi, pi) in q.iter().zip(&p) {
            if *qi > 0.0 {
                kl += qi * (qi / pi).ln();
            }
        }
        total += w * kl;
    }
    total
}

/// Uniform point on the probability simplex with `k` atoms.
pub fn random_simplex<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..k).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}
