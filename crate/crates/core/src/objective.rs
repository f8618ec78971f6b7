//! The multi-criteria payoff, its estimators and pathwise gradients.
//!
//! For an allocation `pi` and a shock path `z`, with terminal state `X_T`:
//!
//! ```text
//! psi1 = B_T - R_T
//! psi2 = B_T - B_min
//! payoff(pi, z) = theta1 phi(psi1) + theta2 phi(psi2)
//! objective(pi) = E[payoff(pi, Z)] + theta3 exp(zeta T) (1 - pi) B_0
//! ```
//!
//! where `phi(u) = u |u|` is the signed quadratic profit.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{check_enumerable, PathSpaceModel};
use crate::dynamics::{linear_step, terminal_state, AttritionParams, ForceState, ShockRealization, TimeGrid};
use crate::error::{Error, Result};
use crate::gaussian::simulate_gaussian_path_with;
use crate::rng::{label, substream};
use crate::shocks::StepShockModel;

/// Complex-step size used when none is configured.
pub const DEFAULT_COMPLEX_STEP: f64 = 1e-20;

/// Criteria weights and reserve preferences of the decision maker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecisionPreferences {
    /// Weights of (terminal advantage, strength above floor, reserve value).
    pub theta: [f64; 3],
    /// Reserve sensitivity.
    pub zeta: f64,
    /// Strength floor for the second criterion.
    pub b_min: f64,
}

impl Default for DecisionPreferences {
    fn default() -> Self {
        Self {
            theta: [0.5, 0.3, 0.2],
            zeta: 0.05,
            b_min: 60.0,
        }
    }
}

/// Signed quadratic profit `u^2 (1{u >= 0} - 1{u < 0})`.
pub fn profit_phi(u: f64) -> f64 {
    u * u.abs()
}

pub fn profit_phi_derivative(u: f64) -> f64 {
    2.0 * u.abs()
}

/// Value `exp(zeta T) u` of `u` units kept out of combat until `T`.
pub fn reserve_value(u: f64, zeta: f64, horizon: f64) -> f64 {
    (zeta * horizon).exp() * u
}

/// `(psi1, psi2) = (B_T - R_T, B_T - B_min)`.
pub fn terminal_functionals(x_t: ForceState, b_min: f64) -> (f64, f64) {
    (x_t.blue - x_t.red, x_t.blue - b_min)
}

/// A Monte Carlo (or exact, with zero error) estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { value, std_error: 0.0 }
    }

    /// Mean and standard error of the mean, summed in input order.
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = if samples.len() > 1 {
            samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            value: mean,
            std_error: (var / n).sqrt(),
        }
    }
}

/// Which path generator feeds Monte Carlo estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Simulator {
    /// Bernoulli shocks pushed through the exact recursion.
    #[default]
    Exact,
    /// Two-moment Gaussian approximation of each step.
    Gaussian,
}

/// The deterministic part of a scenario: dynamics, horizon and preferences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombatProblem {
    pub initial: ForceState,
    pub attrition: AttritionParams,
    pub grid: TimeGrid,
    pub preferences: DecisionPreferences,
    /// Clamp strengths at zero (zero is then absorbing).
    pub clamp: bool,
}

impl CombatProblem {
    pub fn validate(&self) -> Result<()> {
        self.initial.validate()?;
        self.attrition.validate()?;
        self.grid.validate()?;
        let theta = self.preferences.theta;
        if theta.iter().any(|&t| !(t.is_finite() && t >= 0.0)) || (theta.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::param("theta", "criteria weights must be >= 0 and sum to 1"));
        }
        if !(self.preferences.zeta.is_finite() && self.preferences.zeta >= 0.0) {
            return Err(Error::param("zeta", "reserve sensitivity must be finite and >= 0"));
        }
        if !(self.preferences.b_min.is_finite() && self.preferences.b_min <= self.initial.blue) {
            return Err(Error::param("b_min", "strength floor must not exceed the initial blue strength"));
        }
        Ok(())
    }

    pub fn horizon(&self) -> f64 {
        self.grid.horizon()
    }

    /// Stochastic part of the payoff for a terminal state.
    pub fn terminal_payoff(&self, x_t: ForceState) -> f64 {
        let (psi1, psi2) = terminal_functionals(x_t, self.preferences.b_min);
        let [t1, t2, _] = self.preferences.theta;
        t1 * profit_phi(psi1) + t2 * profit_phi(psi2)
    }

    /// Stochastic part of the payoff along one shock path.
    pub fn path_payoff(&self, pi: f64, shocks: &[ShockRealization]) -> f64 {
        let (x_t, _) = terminal_state(self.initial, &self.attrition, pi, shocks, self.grid.dt, self.clamp);
        self.terminal_payoff(x_t)
    }

    /// Deterministic reserve criterion `theta3 psi((1 - pi) B_0)`.
    pub fn reserve_term(&self, pi: f64) -> f64 {
        self.preferences.theta[2] * reserve_value((1.0 - pi) * self.initial.blue, self.preferences.zeta, self.horizon())
    }

    /// Derivative of the reserve criterion in `pi`.
    pub fn reserve_gradient(&self, pi: f64) -> f64 {
        let _ = pi;
        -self.preferences.theta[2] * self.initial.blue * (self.preferences.zeta * self.horizon()).exp()
    }
}

fn check_pi(pi: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&pi) {
        return Err(Error::param("pi", format!("allocation must lie in [0, 1], got {pi}")));
    }
    Ok(())
}

/// Exact objective by summing over all `4^N` shock paths.
pub fn objective_enumerate(pi: f64, model: &PathSpaceModel, problem: &CombatProblem) -> Result<f64> {
    check_pi(pi)?;
    let n = problem.grid.n_steps;
    check_enumerable(n)?;
    if let PathSpaceModel::Explicit { n_steps, .. } = model {
        if *n_steps != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: *n_steps,
            });
        }
    }
    let mut total = 0.0;
    enumerate_paths(problem, pi, model, 0, problem.initial, 0, 1.0, &mut total);
    Ok(total + problem.reserve_term(pi))
}

#[allow(clippy::too_many_arguments)]
fn enumerate_paths(
    problem: &CombatProblem,
    pi: f64,
    model: &PathSpaceModel,
    step: usize,
    state: ForceState,
    index: usize,
    prob: f64,
    total: &mut f64,
) {
    if step == problem.grid.n_steps {
        let p = match model {
            PathSpaceModel::Iid(_) => prob,
            PathSpaceModel::Explicit { probs, .. } => probs[index],
        };
        if p > 0.0 {
            *total += p * problem.terminal_payoff(state);
        }
        return;
    }
    for z in ShockRealization::ALL {
        let p = match model {
            PathSpaceModel::Iid(step_model) => prob * step_model.prob(z),
            PathSpaceModel::Explicit { .. } => prob,
        };
        if p == 0.0 {
            continue;
        }
        let (next, _) = crate::dynamics::step_unchecked(state, &problem.attrition, pi, z, problem.grid.dt, problem.clamp);
        enumerate_paths(problem, pi, model, step + 1, next, index | (z.index() << (2 * step)), p, total);
    }
}

fn step_laws(model: &PathSpaceModel, n_steps: usize) -> Vec<StepShockModel> {
    (0..n_steps).map(|k| model.step_marginal(k)).collect()
}

/// Monte Carlo estimate of the objective from `paths` simulated paths.
///
/// With the Gaussian simulator each step uses the model's per-step marginal.
pub fn objective_mc(
    pi: f64,
    model: &PathSpaceModel,
    problem: &CombatProblem,
    simulator: Simulator,
    paths: usize,
    seed: u64,
) -> Result<Estimate> {
    check_pi(pi)?;
    if paths == 0 {
        return Err(Error::param("paths", "at least one path is required"));
    }
    let n = problem.grid.n_steps;
    let samples: Vec<f64> = match simulator {
        Simulator::Exact => (0..paths)
            .into_par_iter()
            .map_init(
                || vec![ShockRealization::NONE; n],
                |buf, m| {
                    let mut rng = substream(seed, label::SHOCK_PATHS, m as u64);
                    model.sample_path(&mut rng, buf);
                    problem.path_payoff(pi, buf)
                },
            )
            .collect(),
        Simulator::Gaussian => {
            let laws = step_laws(model, n);
            (0..paths)
                .into_par_iter()
                .map(|m| {
                    let mut rng = substream(seed, label::GAUSSIAN_PATHS, m as u64);
                    let traj = simulate_gaussian_path_with(problem.initial, &problem.attrition, pi, |k| laws[k], &problem.grid, &mut rng)?;
                    Ok(problem.terminal_payoff(traj.terminal()))
                })
                .collect::<Result<Vec<f64>>>()?
        }
    };
    let est = Estimate::from_samples(&samples);
    Ok(Estimate {
        value: est.value + problem.reserve_term(pi),
        std_error: est.std_error,
    })
}

/// Pathwise derivative of the stochastic payoff for one fixed shock path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathGradient {
    pub value: f64,
    pub psi1: f64,
    pub psi2: f64,
    pub dpsi1: f64,
    pub dpsi2: f64,
    /// Clamping binds on this path at real `pi`; the value is the derivative
    /// of the unclamped surrogate.
    pub clamped: bool,
}

/// `d/dpi [theta1 phi(psi1) + theta2 phi(psi2)]` along a fixed path, with
/// `psi_i'` from the complex-step formula `Im(psi_i(pi + ih)) / h` on the
/// unclamped dynamics.
pub fn complex_step_grad(pi: f64, shocks: &[ShockRealization], problem: &CombatProblem, h: f64) -> Result<PathGradient> {
    check_pi(pi)?;
    if shocks.len() != problem.grid.n_steps {
        return Err(Error::LengthMismatch {
            expected: problem.grid.n_steps,
            actual: shocks.len(),
        });
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::param("complex_step", format!("must be > 0, got {h}")));
    }
    Ok(complex_step_unchecked(pi, shocks, problem, h))
}

pub(crate) fn complex_step_unchecked(pi: f64, shocks: &[ShockRealization], problem: &CombatProblem, h: f64) -> PathGradient {
    let pi_c = Complex64::new(pi, h);
    let mut blue = Complex64::from(problem.initial.blue);
    let mut red = Complex64::from(problem.initial.red);
    for &z in shocks {
        (blue, red) = linear_step(blue, red, &problem.attrition, pi_c, z, problem.grid.dt);
    }
    let b_min = problem.preferences.b_min;
    let psi1 = blue - red;
    let psi2 = blue - b_min;
    let (dpsi1, dpsi2) = (psi1.im / h, psi2.im / h);
    let [t1, t2, _] = problem.preferences.theta;
    let value = t1 * profit_phi_derivative(psi1.re) * dpsi1 + t2 * profit_phi_derivative(psi2.re) * dpsi2;
    let clamped = problem.clamp && terminal_state(problem.initial, &problem.attrition, pi, shocks, problem.grid.dt, true).1;
    PathGradient {
        value,
        psi1: psi1.re,
        psi2: psi2.re,
        dpsi1,
        dpsi2,
        clamped,
    }
}

/// Gradient estimate: mean pathwise derivative over `paths` sampled paths
/// plus the exact reserve derivative. Returns the estimate and the number
/// of paths on which clamping bound.
pub fn stochastic_grad(
    pi: f64,
    model: &PathSpaceModel,
    problem: &CombatProblem,
    paths: usize,
    h: f64,
    seed: u64,
) -> Result<(Estimate, usize)> {
    check_pi(pi)?;
    if paths == 0 {
        return Err(Error::param("paths", "at least one path is required"));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::param("complex_step", format!("must be > 0, got {h}")));
    }
    let n = problem.grid.n_steps;
    let grads: Vec<PathGradient> = (0..paths)
        .into_par_iter()
        .map_init(
            || vec![ShockRealization::NONE; n],
            |buf, m| {
                let mut rng = substream(seed, label::GRADIENT, m as u64);
                model.sample_path(&mut rng, buf);
                complex_step_unchecked(pi, buf, problem, h)
            },
        )
        .collect();
    let values: Vec<f64> = grads.iter().map(|g| g.value).collect();
    let clamped = grads.iter().filter(|g| g.clamped).count();
    let est = Estimate::from_samples(&values);
    Ok((
        Estimate {
            value: est.value + problem.reserve_gradient(pi),
            std_error: est.std_error,
        },
        clamped,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem() -> CombatProblem {
        CombatProblem {
            initial: ForceState::new(100.0, 80.0),
            attrition: AttritionParams::new(0.08, 0.1).unwrap(),
            grid: TimeGrid::new(1.0, 6).unwrap(),
            preferences: DecisionPreferences::default(),
            clamp: true,
        }
    }

    #[test]
    fn phi_values() {
        assert_eq!(profit_phi(0.0), 0.0);
        assert_eq!(profit_phi(3.0), 9.0);
        assert_eq!(profit_phi(-3.0), -9.0);
        assert_eq!(profit_phi_derivative(-2.0), 4.0);
        let h = 1e-6;
        let fd = (profit_phi(-2.0 + h) - profit_phi(-2.0 - h)) / (2.0 * h);
        assert!((fd - 4.0).abs() < 1e-8);
    }

    #[test]
    fn reserve_values() {
        assert_eq!(reserve_value(0.0, 0.3, 5.0), 0.0);
        assert_eq!(reserve_value(42.0, 0.0, 5.0), 42.0);
        assert!((reserve_value(50.0, 0.1, 10.0) - 50.0 * std::f64::consts::E).abs() < 1e-12);
        assert!((reserve_value(50.0, 0.1, 10.0) - 135.914).abs() < 1e-3);
    }

    #[test]
    fn terminal_functional_examples() {
        assert_eq!(terminal_functionals(ForceState::new(90.0, 90.0), 50.0), (0.0, 40.0));
        assert_eq!(terminal_functionals(ForceState::new(0.0, 30.0), 20.0), (-30.0, -20.0));
    }

    #[test]
    fn reserve_only_objective_is_deterministic() {
        let mut p = problem();
        p.preferences.theta = [0.0, 0.0, 1.0];
        let model = PathSpaceModel::Iid(StepShockModel::from_pmf([0.1, 0.2, 0.3, 0.4]).unwrap());
        let est = objective_mc(0.3, &model, &p, Simulator::Exact, 500, 1).unwrap();
        let want = (0.05f64 * 6.0).exp() * 0.7 * 100.0;
        assert!((est.value - want).abs() < 1e-9);
        assert_eq!(est.std_error, 0.0);
        let (g, _) = stochastic_grad(0.3, &model, &p, 100, DEFAULT_COMPLEX_STEP, 1).unwrap();
        assert!((g.value + 100.0 * (0.3f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn sure_shocks_match_single_path() {
        let p = problem();
        let model = PathSpaceModel::Iid(StepShockModel::point_mass(ShockRealization::BOTH));
        let path = [ShockRealization::BOTH; 6];
        let want = p.path_payoff(0.4, &path) + p.reserve_term(0.4);
        let mc = objective_mc(0.4, &model, &p, Simulator::Exact, 200, 3).unwrap();
        assert!((mc.value - want).abs() < 1e-9 && mc.std_error < 1e-9);
        assert!((objective_enumerate(0.4, &model, &p).unwrap() - want).abs() < 1e-9);
        let g = objective_mc(0.4, &model, &p, Simulator::Gaussian, 50, 3).unwrap();
        assert!((g.value - want).abs() < 1e-9);
    }

    #[test]
    fn one_step_enumeration_by_hand() {
        let mut p = problem();
        p.grid = TimeGrid::new(1.0, 1).unwrap();
        let q = [0.1, 0.2, 0.3, 0.4];
        let model = PathSpaceModel::Iid(StepShockModel::from_pmf(q).unwrap());
        let pi = 0.6;
        let [t1, t2, t3] = p.preferences.theta;
        let mut want = 0.0;
        for (o, &qo) in q.iter().enumerate() {
            let (zb, zr) = ((o & 1) as f64, ((o >> 1) & 1) as f64);
            let b = 100.0 - 0.08 * zr * 80.0;
            let r = 80.0 - pi * 0.1 * zb * 100.0;
            want += qo * (t1 * profit_phi(b - r) + t2 * profit_phi(b - 60.0));
        }
        want += t3 * (0.05f64).exp() * (1.0 - pi) * 100.0;
        assert!((objective_enumerate(pi, &model, &p).unwrap() - want).abs() < 1e-10);
    }

    #[test]
    fn enumeration_refuses_long_horizons() {
        let mut p = problem();
        p.grid = TimeGrid::new(0.1, 13).unwrap();
        let model = PathSpaceModel::Iid(StepShockModel::from_pmf([0.25; 4]).unwrap());
        assert!(matches!(objective_enumerate(0.5, &model, &p), Err(Error::EnumerationTooLarge { .. })));
    }

    #[test]
    fn enumeration_agrees_between_iid_and_table() {
        let p = problem();
        let step = StepShockModel::from_pmf([0.15, 0.25, 0.2, 0.4]).unwrap();
        let a = objective_enumerate(0.55, &PathSpaceModel::Iid(step), &p).unwrap();
        let b = objective_enumerate(0.55, &PathSpaceModel::iid_table(&step, 6).unwrap(), &p).unwrap();
        assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn no_blue_shock_means_no_stochastic_gradient() {
        let p = problem();
        let path = [ShockRealization::new(false, true); 6];
        let g = complex_step_grad(0.5, &path, &p, DEFAULT_COMPLEX_STEP).unwrap();
        assert_eq!(g.value, 0.0);
    }

    #[test]
    fn single_step_hand_derivative() {
        let mut p = problem();
        p.grid = TimeGrid::new(1.0, 1).unwrap();
        let g = complex_step_grad(0.3, &[ShockRealization::BOTH], &p, DEFAULT_COMPLEX_STEP).unwrap();
        assert!((g.dpsi1 - 0.1 * 100.0 * 1.0).abs() < 1e-15);
        assert_eq!(g.dpsi2, 0.0);
        let psi1 = (100.0 - 0.08 * 80.0) - (80.0 - 0.3 * 0.1 * 100.0);
        assert!((g.psi1 - psi1).abs() < 1e-12);
    }

    #[test]
    fn flat_problem_has_zero_gradient() {
        let mut p = problem();
        p.attrition = AttritionParams::new(0.0, 0.0).unwrap();
        p.preferences.theta = [0.6, 0.4, 0.0];
        let model = PathSpaceModel::Iid(StepShockModel::from_pmf([0.25; 4]).unwrap());
        let (g, _) = stochastic_grad(0.5, &model, &p, 300, DEFAULT_COMPLEX_STEP, 2).unwrap();
        assert_eq!(g.value, 0.0);
    }
}
