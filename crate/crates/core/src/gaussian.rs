//! Two-moment Gaussian approximation of one-step transitions.
//!
//! Conditional on `(B, R)`, the next state is approximated by a bivariate
//! normal with the exact conditional mean and covariance of the Bernoulli
//! step. Paths are generated by repeatedly recomputing those moments from
//! the current state and drawing the next state.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::{AttritionParams, ForceState, TimeGrid, Trajectory};
use crate::error::{Error, Result};
use crate::shocks::StepShockModel;

/// Mean vector and covariance of `(B', R')` given the current state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianStepParams {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

impl GaussianStepParams {
    pub fn min_eigenvalue(&self) -> f64 {
        let [[a, b], [_, c]] = self.cov;
        let half_trace = 0.5 * (a + c);
        let radius = (0.25 * (a - c) * (a - c) + b * b).sqrt();
        half_trace - radius
    }

    /// Shifts the diagonal when rounding leaves a negative eigenvalue.
    pub fn regularized(&self) -> Self {
        let lambda_min = self.min_eigenvalue();
        if lambda_min >= 0.0 {
            return *self;
        }
        let shift = -lambda_min + 1e-12;
        let mut out = *self;
        out.cov[0][0] += shift;
        out.cov[1][1] += shift;
        out
    }

    /// Lower Cholesky factor of the regularized covariance.
    fn cholesky(&self) -> [[f64; 2]; 2] {
        let [[a, b], [_, c]] = self.regularized().cov;
        if a > 0.0 {
            let l11 = a.sqrt();
            let l21 = b / l11;
            [[l11, 0.0], [l21, (c - l21 * l21).max(0.0).sqrt()]]
        } else {
            [[0.0, 0.0], [0.0, c.max(0.0).sqrt()]]
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.cov[0][0] == 0.0 && self.cov[1][1] == 0.0 && self.cov[0][1] == 0.0
    }

    /// One draw from `N(mean, cov)`; the zero-covariance case returns the mean.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        if self.is_degenerate() {
            return self.mean;
        }
        let l = self.cholesky();
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        [self.mean[0] + l[0][0] * z1, self.mean[1] + l[1][0] * z1 + l[1][1] * z2]
    }
}

/// Exact conditional mean and covariance of one stochastic step.
pub fn conditional_moments(
    state: ForceState,
    params: &AttritionParams,
    pi: f64,
    shock_model: &StepShockModel,
    dt: f64,
) -> Result<GaussianStepParams> {
    params.validate()?;
    state.validate()?;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::param("dt", format!("must be finite and > 0, got {dt}")));
    }
    if !(0.0..=1.0).contains(&pi) {
        return Err(Error::param("pi", format!("allocation must lie in [0, 1], got {pi}")));
    }
    Ok(moments_unchecked(state, params, pi, shock_model, dt))
}

pub(crate) fn moments_unchecked(
    state: ForceState,
    params: &AttritionParams,
    pi: f64,
    shock_model: &StepShockModel,
    dt: f64,
) -> GaussianStepParams {
    let ForceState { blue, red } = state;
    let marg = shock_model.marginals();
    let (e_b, e_r) = (marg.p_blue, marg.p_red);
    let e_br = shock_model.cross_moment();
    let (r, b) = (params.red_rate, params.blue_rate);

    // Same association as the stochastic step so degenerate laws reproduce it.
    let mean_blue = blue - red * (r * e_r * dt);
    let mean_red = red - pi * blue * (b * e_b * dt);

    let blue_scale = r * red * dt;
    let red_scale = pi * b * blue * dt;
    let var_blue = blue_scale * blue_scale * (e_r - e_r * e_r);
    let var_red = red_scale * red_scale * (e_b - e_b * e_b);
    let cov = blue_scale * red_scale * (e_br - e_b * e_r);
    GaussianStepParams {
        mean: [mean_blue, mean_red],
        cov: [[var_blue, cov], [cov, var_red]],
    }
}

/// Gaussian-approximation path with a fixed per-step shock law.
pub fn simulate_gaussian_path<R: Rng + ?Sized>(
    x0: ForceState,
    params: &AttritionParams,
    pi: f64,
    shock_model: &StepShockModel,
    grid: &TimeGrid,
    rng: &mut R,
) -> Result<Trajectory> {
    simulate_gaussian_path_with(x0, params, pi, |_| *shock_model, grid, rng)
}

/// Gaussian-approximation path where step `k` (0-based) uses `step_model(k)`.
pub fn simulate_gaussian_path_with<R, F>(
    x0: ForceState,
    params: &AttritionParams,
    pi: f64,
    step_model: F,
    grid: &TimeGrid,
    rng: &mut R,
) -> Result<Trajectory>
where
    R: Rng + ?Sized,
    F: Fn(usize) -> StepShockModel,
{
    grid.validate()?;
    x0.validate()?;
    conditional_moments(x0, params, pi, &step_model(0), grid.dt)?;
    let mut states = Vec::with_capacity(grid.n_steps + 1);
    states.push(x0);
    let mut state = x0;
    let mut clamp_events = 0;
    for k in 0..grid.n_steps {
        let moments = moments_unchecked(state, params, pi, &step_model(k), grid.dt);
        let [blue, red] = moments.sample(rng);
        let next = ForceState {
            blue: blue.max(0.0),
            red: red.max(0.0),
        };
        clamp_events += (next.blue != blue || next.red != red) as usize;
        state = next;
        states.push(state);
    }
    Ok(Trajectory {
        states,
        times: grid.times(),
        allocation: pi,
        clamp_events,
    })
}
