//! Worst-case model construction and the projected stochastic-gradient
//! allocation search.
//!
//! The search fixes the worst-case path law at the initial allocation, then
//! iterates
//!
//! ```text
//! pi <- clamp(pi + a0 / (1 + l / tau) * g / S, pi_floor, 1)
//! ```
//!
//! where `g` is a complex-step gradient estimate and `S` a gradient scale
//! measured once at the start (1 when normalization is off). The reported
//! allocation is the mean of the trailing window of iterates.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::aggregation::{
    barycenter, calibrate_aversion, iid_worstcase_model, Calibration, IidSearchSettings, PathSpaceModel, PathTilter,
    MAX_ENUMERATION_STEPS,
};
use crate::config::{AversionMode, ScenarioConfig, WorstCaseBackend};
use crate::error::{Error, Result};
use crate::objective::{
    complex_step_unchecked, objective_enumerate, objective_mc, stochastic_grad, CombatProblem, Estimate, Simulator,
};
use crate::rng::{label, substream};

/// Largest horizon the `auto` backend enumerates.
pub const AUTO_ENUMERATION_STEPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSettings {
    pub initial_pi: f64,
    pub pi_floor: f64,
    pub a0: f64,
    pub tau: f64,
    /// Paths per gradient estimate.
    pub mc_paths: usize,
    pub complex_step: f64,
    pub tolerance: f64,
    pub window: usize,
    pub max_iterations: usize,
    /// Divide gradients by the mean absolute pathwise gradient at the start.
    pub normalize_gradient: bool,
    /// Rebuild the worst-case model at the current iterate every k iterations.
    pub retilt_every: Option<usize>,
    /// Wall-clock budget; the search stops early with a partial result.
    pub budget_ms: Option<u64>,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            initial_pi: 0.5,
            pi_floor: 0.0,
            a0: 0.1,
            tau: 50.0,
            mc_paths: 256,
            complex_step: crate::objective::DEFAULT_COMPLEX_STEP,
            tolerance: 1e-4,
            window: 20,
            max_iterations: 2000,
            normalize_gradient: true,
            retilt_every: None,
            budget_ms: None,
        }
    }
}

impl OptimizerSettings {
    pub(crate) fn check(&self, report: &mut dyn FnMut(bool, &str, String)) {
        let pos = |x: f64| x.is_finite() && x > 0.0;
        report(
            self.initial_pi > 0.0 && self.initial_pi <= 1.0,
            "initial_pi",
            format!("must lie in (0, 1], got {}", self.initial_pi),
        );
        report(
            (0.0..1.0).contains(&self.pi_floor),
            "pi_floor",
            format!("must lie in [0, 1), got {}", self.pi_floor),
        );
        report(
            self.initial_pi >= self.pi_floor,
            "initial_pi",
            format!("must not be below pi_floor ({})", self.pi_floor),
        );
        report(pos(self.a0), "a0", format!("must be > 0, got {}", self.a0));
        report(pos(self.tau), "tau", format!("must be > 0, got {}", self.tau));
        report(self.mc_paths >= 1, "mc_paths", "must be at least 1".into());
        report(pos(self.complex_step), "complex_step", format!("must be > 0, got {}", self.complex_step));
        report(pos(self.tolerance), "tolerance", format!("must be > 0, got {}", self.tolerance));
        report(self.window >= 1, "window", "must be at least 1".into());
        report(self.max_iterations >= 1, "max_iterations", "must be at least 1".into());
        report(self.retilt_every != Some(0), "retilt_every", "must be at least 1".into());
    }

    pub fn step_size(&self, iteration: usize) -> f64 {
        self.a0 / (1.0 + iteration as f64 / self.tau)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolvedBackend {
    Enumerate,
    Iid,
}

/// What the worst-case step produced, in serializable form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseSummary {
    pub backend: ResolvedBackend,
    pub kappa: f64,
    /// Allocation whose payoff defined the tilt.
    pub evaluated_at: f64,
    pub barycenter_pmf: [f64; 4],
    /// Per-step law (averaged over steps for path-space models).
    pub step_pmf: [f64; 4],
    /// Weighted KL of the whole path law to the product priors.
    pub weighted_kl: f64,
    /// Expected stochastic payoff under the worst-case law.
    pub expected_payoff: f64,
    pub calibration: Option<Calibration>,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct WorstCase {
    pub model: PathSpaceModel,
    pub summary: WorstCaseSummary,
}

fn resolve_backend(config: &ScenarioConfig) -> Result<ResolvedBackend> {
    let n = config.grid.n_steps;
    match config.worst_case.backend {
        WorstCaseBackend::Auto if n <= AUTO_ENUMERATION_STEPS => Ok(ResolvedBackend::Enumerate),
        WorstCaseBackend::Auto | WorstCaseBackend::Iid => Ok(ResolvedBackend::Iid),
        WorstCaseBackend::Enumerate if n <= MAX_ENUMERATION_STEPS => Ok(ResolvedBackend::Enumerate),
        WorstCaseBackend::Enumerate => Err(Error::EnumerationTooLarge {
            n_steps: n,
            max_steps: MAX_ENUMERATION_STEPS,
        }),
    }
}

/// Builds the worst-case path law for the payoff at allocation `pi`.
pub fn resolve_worst_case(config: &ScenarioConfig, pi: f64) -> Result<WorstCase> {
    let priors = config.prior_set()?;
    let problem = config.problem();
    let n = config.grid.n_steps;
    let bary = barycenter(&priors)?;
    let payoff = |path: &[crate::dynamics::ShockRealization]| problem.path_payoff(pi, path);
    let backend = resolve_backend(config)?;
    match backend {
        ResolvedBackend::Enumerate => {
            let tilter = PathTilter::new(&priors, n, payoff)?;
            let (kappa, calibration) = match config.aversion.mode {
                AversionMode::Tilt => (config.aversion.value, None),
                AversionMode::Radius => {
                    let cal = calibrate_aversion(&tilter, config.aversion.value, config.aversion.kappa_max)?;
                    (cal.kappa, Some(cal))
                }
            };
            let model = tilter.model(kappa)?;
            let summary = WorstCaseSummary {
                backend,
                kappa,
                evaluated_at: pi,
                barycenter_pmf: *bary.pmf(),
                step_pmf: *model.average_step_pmf().pmf(),
                weighted_kl: tilter.weighted_kl(kappa),
                expected_payoff: tilter.expected_payoff(kappa),
                converged: calibration.is_none_or(|c| !c.saturated),
                calibration,
            };
            Ok(WorstCase { model, summary })
        }
        ResolvedBackend::Iid => {
            if config.aversion.mode == AversionMode::Radius {
                return Err(Error::Unsupported(format!(
                    "radius calibration needs path enumeration, which is limited to {MAX_ENUMERATION_STEPS} steps; \
                     use a tilt aversion for {n} steps"
                )));
            }
            let kappa = config.aversion.value;
            let found = iid_worstcase_model(
                &priors,
                kappa,
                n,
                payoff,
                config.worst_case.mc_paths,
                crate::rng::child_seed(config.seed, label::WORST_CASE, 0),
                IidSearchSettings::default(),
            )?;
            let summary = WorstCaseSummary {
                backend,
                kappa,
                evaluated_at: pi,
                barycenter_pmf: *bary.pmf(),
                step_pmf: *found.model.pmf(),
                weighted_kl: n as f64 * found.weighted_kl,
                expected_payoff: found.expected_payoff,
                calibration: None,
                converged: found.converged,
            };
            Ok(WorstCase {
                model: PathSpaceModel::Iid(found.model),
                summary,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveMethod {
    Enumeration,
    MonteCarlo,
    GaussianMonteCarlo,
}

/// Objective value with its standard error and how it was computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    pub value: f64,
    pub std_error: f64,
    pub method: ObjectiveMethod,
}

/// Exact when the exact simulator is selected and `N` is enumerable,
/// otherwise Monte Carlo with `paths` paths and the given seed.
pub fn evaluate_objective(
    pi: f64,
    model: &PathSpaceModel,
    problem: &CombatProblem,
    simulator: Simulator,
    paths: usize,
    seed: u64,
) -> Result<ObjectiveValue> {
    if simulator == Simulator::Exact && problem.grid.n_steps <= MAX_ENUMERATION_STEPS {
        return Ok(ObjectiveValue {
            value: objective_enumerate(pi, model, problem)?,
            std_error: 0.0,
            method: ObjectiveMethod::Enumeration,
        });
    }
    let est = objective_mc(pi, model, problem, simulator, paths, seed)?;
    Ok(ObjectiveValue {
        value: est.value,
        std_error: est.std_error,
        method: match simulator {
            Simulator::Exact => ObjectiveMethod::MonteCarlo,
            Simulator::Gaussian => ObjectiveMethod::GaussianMonteCarlo,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizationStatus {
    Converged,
    MaxIterations,
    BudgetExceeded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationReport {
    pub optimal_pi: f64,
    pub objective: ObjectiveValue,
    /// Iterates, starting with the initial allocation.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub status: OptimizationStatus,
    pub gradient_scale: f64,
    /// Gradient samples on which clamping bound, over all iterations.
    pub clamped_gradient_paths: usize,
    pub worst_case: WorstCaseSummary,
}

/// Mean absolute pathwise gradient at `pi`; 1 if that is zero.
fn gradient_scale(pi: f64, model: &PathSpaceModel, problem: &CombatProblem, settings: &OptimizerSettings, seed: u64) -> f64 {
    let n = problem.grid.n_steps;
    let m = settings.mc_paths.max(1024);
    let mut rng = substream(seed, label::GRADIENT, u64::MAX);
    let mut buf = vec![crate::dynamics::ShockRealization::NONE; n];
    let reserve = problem.reserve_gradient(pi);
    let mut total = 0.0;
    for _ in 0..m {
        model.sample_path(&mut rng, &mut buf);
        total += (complex_step_unchecked(pi, &buf, problem, settings.complex_step).value + reserve).abs();
    }
    let s = total / m as f64;
    if s > 0.0 && s.is_finite() {
        s
    } else {
        1.0
    }
}

/// Robust allocation search: worst-case model, then projected stochastic
/// gradient ascent on the objective under that model.
pub fn optimize_allocation(config: &ScenarioConfig) -> Result<OptimizationReport> {
    Ok(optimize_with_model(config)?.0)
}

/// As [`optimize_allocation`], also returning the final worst-case model.
pub fn optimize_with_model(config: &ScenarioConfig) -> Result<(OptimizationReport, WorstCase)> {
    config.validate()?;
    let settings = &config.optimizer;
    let problem = config.problem();
    let started = Instant::now();
    let budget = settings.budget_ms.map(Duration::from_millis);

    let mut pi = settings.initial_pi;
    let mut worst = resolve_worst_case(config, pi)?;
    let scale = if settings.normalize_gradient {
        gradient_scale(pi, &worst.model, &problem, settings, config.seed)
    } else {
        1.0
    };

    let mut history = vec![pi];
    let mut status = OptimizationStatus::MaxIterations;
    let mut clamped_paths = 0;
    for it in 0..settings.max_iterations {
        if budget.is_some_and(|b| started.elapsed() >= b) {
            status = OptimizationStatus::BudgetExceeded;
            break;
        }
        if let Some(k) = settings.retilt_every {
            if it > 0 && it % k == 0 {
                worst = resolve_worst_case(config, pi)?;
            }
        }
        let seed = crate::rng::child_seed(config.seed, label::GRADIENT, it as u64);
        let (grad, clamped) = stochastic_grad(pi, &worst.model, &problem, settings.mc_paths, settings.complex_step, seed)?;
        clamped_paths += clamped;
        pi = (pi + settings.step_size(it) * grad.value / scale).clamp(settings.pi_floor, 1.0);
        history.push(pi);
        if history.len() > settings.window {
            let tail = &history[history.len() - settings.window - 1..];
            let mean_change = tail.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / settings.window as f64;
            if mean_change < settings.tolerance {
                status = OptimizationStatus::Converged;
                break;
            }
        }
    }

    let tail = &history[history.len().saturating_sub(settings.window)..];
    let (lo, hi) = tail.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let optimal_pi = (tail.iter().sum::<f64>() / tail.len() as f64).clamp(lo, hi);
    let objective = evaluate_objective(
        optimal_pi,
        &worst.model,
        &problem,
        config.simulator,
        config.paths,
        crate::rng::child_seed(config.seed, label::OBJECTIVE, 0),
    )?;
    let report = OptimizationReport {
        optimal_pi,
        objective,
        iterations: history.len() - 1,
        history,
        status,
        gradient_scale: scale,
        clamped_gradient_paths: clamped_paths,
        worst_case: worst.summary.clone(),
    };
    Ok((report, worst))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub pi: f64,
    pub objective: f64,
    pub std_error: f64,
}

/// Objective on an even grid of `points` allocations over `[pi_floor, 1]`,
/// under the worst-case model built at the optimizer's initial allocation.
/// Monte Carlo evaluations share one seed across the grid.
pub fn grid_sweep(config: &ScenarioConfig, points: usize) -> Result<(Vec<SweepPoint>, WorstCaseSummary)> {
    config.validate()?;
    if points < 2 {
        return Err(Error::param("grid_points", format!("at least 2 points are required, got {points}")));
    }
    let worst = resolve_worst_case(config, config.optimizer.initial_pi)?;
    let problem = config.problem();
    let lo = config.optimizer.pi_floor;
    let seed = crate::rng::child_seed(config.seed, label::OBJECTIVE, 0);
    let values = (0..points)
        .map(|i| {
            let pi = if i + 1 == points {
                1.0
            } else {
                lo + (1.0 - lo) * i as f64 / (points - 1) as f64
            };
            let v = evaluate_objective(pi, &worst.model, &problem, config.simulator, config.paths, seed)?;
            Ok(SweepPoint {
                pi,
                objective: v.value,
                std_error: v.std_error,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((values, worst.summary))
}

/// Gradient estimate at `pi` under a given model, exposed for diagnostics.
pub fn gradient_at(config: &ScenarioConfig, model: &PathSpaceModel, pi: f64) -> Result<Estimate> {
    let s = &config.optimizer;
    Ok(stochastic_grad(pi, model, &config.problem(), s.mc_paths, s.complex_step, config.seed)?.0)
}
