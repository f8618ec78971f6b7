//! Command implementations shared by the CLI and the HTTP service.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{barycenter, weighted_kl, PathSpaceModel};
use crate::config::ScenarioConfig;
use crate::dynamics::{
    classic_closed_form, propagate_unchecked, simulate_bracken, simulate_classic_lanchester, ShockRealization,
    Trajectory,
};
use crate::error::Result;
use crate::gaussian::simulate_gaussian_path_with;
use crate::objective::Simulator;
use crate::optimizer::{
    evaluate_objective, grid_sweep, optimize_with_model, resolve_worst_case, ObjectiveValue, OptimizationReport,
    OptimizationStatus, SweepPoint, WorstCaseSummary,
};
use crate::rng::{child_seed, label, substream};

pub const QUANTILE_LEVELS: [f64; 4] = [0.05, 0.25, 0.75, 0.95];

/// Blue and red strength quantiles at one level, indexed by time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileBand {
    pub level: f64,
    pub blue: Vec<f64>,
    pub red: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStats {
    pub paths: usize,
    pub times: Vec<f64>,
    pub mean_blue: Vec<f64>,
    pub mean_red: Vec<f64>,
    pub quantiles: Vec<QuantileBand>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub status: Option<OptimizationStatus>,
    /// Fraction of simulated paths on which a strength hit zero.
    pub clamp_frequency: f64,
    /// Radius calibration ran into `kappa_max`.
    pub saturated: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    /// Allocation the objective and trajectories refer to.
    pub pi: f64,
    pub optimal_pi: Option<f64>,
    pub objective: ObjectiveValue,
    pub worst_case: WorstCaseSummary,
    pub trajectory: TrajectoryStats,
    pub diagnostics: Diagnostics,
    pub optimization: Option<OptimizationReport>,
}

/// Type-7 sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn trajectory_stats(paths: &[Trajectory]) -> TrajectoryStats {
    let n = paths.len();
    let times = paths[0].times.clone();
    let steps = times.len();
    let column = |k: usize, blue: bool| -> Vec<f64> {
        let mut v: Vec<f64> = paths
            .iter()
            .map(|p| if blue { p.states[k].blue } else { p.states[k].red })
            .collect();
        v.sort_by(f64::total_cmp);
        v
    };
    let columns: Vec<(Vec<f64>, Vec<f64>)> = (0..steps).map(|k| (column(k, true), column(k, false))).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    TrajectoryStats {
        paths: n,
        mean_blue: columns.iter().map(|(b, _)| mean(b)).collect(),
        mean_red: columns.iter().map(|(_, r)| mean(r)).collect(),
        quantiles: QUANTILE_LEVELS
            .iter()
            .map(|&level| QuantileBand {
                level,
                blue: columns.iter().map(|(b, _)| quantile_sorted(b, level)).collect(),
                red: columns.iter().map(|(_, r)| quantile_sorted(r, level)).collect(),
            })
            .collect(),
        times,
    }
}

/// Simulates `paths` trajectories at `pi` under a path law.
pub fn simulate_paths(
    config: &ScenarioConfig,
    model: &PathSpaceModel,
    pi: f64,
    paths: usize,
) -> Result<Vec<Trajectory>> {
    let n = config.grid.n_steps;
    match config.simulator {
        Simulator::Exact => Ok((0..paths)
            .into_par_iter()
            .map(|m| {
                let mut rng = substream(config.seed, label::SHOCK_PATHS, m as u64);
                let mut shocks = vec![ShockRealization::NONE; n];
                model.sample_path(&mut rng, &mut shocks);
                propagate_unchecked(config.initial, &config.attrition, pi, &shocks, &config.grid, config.absorb_at_zero)
            })
            .collect()),
        Simulator::Gaussian => {
            let laws: Vec<_> = (0..n).map(|k| model.step_marginal(k)).collect();
            (0..paths)
                .into_par_iter()
                .map(|m| {
                    let mut rng = substream(config.seed, label::GAUSSIAN_PATHS, m as u64);
                    simulate_gaussian_path_with(config.initial, &config.attrition, pi, |k| laws[k], &config.grid, &mut rng)
                })
                .collect()
        }
    }
}

fn objective_seed(config: &ScenarioConfig) -> u64 {
    child_seed(config.seed, label::OBJECTIVE, 0)
}

fn base_warnings(config: &ScenarioConfig, worst: &WorstCaseSummary) -> Vec<String> {
    let mut warnings = Vec::new();
    if !worst.converged {
        warnings.push("worst-case search did not converge; best iterate used".to_string());
    }
    if worst.calibration.is_some_and(|c| c.saturated) {
        warnings.push(format!("KL radius not reachable below kappa_max = {}", config.aversion.kappa_max));
    }
    if worst.calibration.is_some_and(|c| !c.monotone) {
        warnings.push("weighted KL was not monotone in kappa during calibration".to_string());
    }
    if config.simulator == Simulator::Gaussian && !config.absorb_at_zero {
        warnings.push("the Gaussian simulator always clamps strengths at zero".to_string());
    }
    warnings
}

fn clamp_frequency(paths: &[Trajectory]) -> f64 {
    paths.iter().filter(|p| p.clamp_events > 0).count() as f64 / paths.len() as f64
}

/// Simulates the worst-case law at `config.pi`. Returns the summary and
/// the simulated paths.
pub fn cmd_simulate(config: &ScenarioConfig) -> Result<(RunResult, Vec<Trajectory>)> {
    config.validate()?;
    let worst = resolve_worst_case(config, config.pi)?;
    let paths = simulate_paths(config, &worst.model, config.pi, config.paths)?;
    let objective = evaluate_objective(
        config.pi,
        &worst.model,
        &config.problem(),
        config.simulator,
        config.paths,
        objective_seed(config),
    )?;
    let result = RunResult {
        command: "simulate".to_string(),
        config_hash: config.hash(),
        seed: config.seed,
        pi: config.pi,
        optimal_pi: None,
        objective,
        diagnostics: Diagnostics {
            status: None,
            clamp_frequency: clamp_frequency(&paths),
            saturated: worst.summary.calibration.is_some_and(|c| c.saturated),
            warnings: base_warnings(config, &worst.summary),
        },
        worst_case: worst.summary,
        trajectory: trajectory_stats(&paths),
        optimization: None,
    };
    Ok((result, paths))
}

pub fn cmd_optimize(config: &ScenarioConfig) -> Result<RunResult> {
    let (report, worst) = optimize_with_model(config)?;
    let pi = report.optimal_pi;
    let paths = simulate_paths(config, &worst.model, pi, config.paths)?;
    let mut warnings = base_warnings(config, &report.worst_case);
    match report.status {
        OptimizationStatus::Converged => {}
        OptimizationStatus::MaxIterations => {
            warnings.push(format!("no convergence within {} iterations", config.optimizer.max_iterations))
        }
        OptimizationStatus::BudgetExceeded => {
            warnings.push("compute budget exceeded; partial result".to_string())
        }
    }
    if report.clamped_gradient_paths > 0 {
        warnings.push(format!(
            "{} gradient paths hit zero strength; their contribution uses the unclamped dynamics",
            report.clamped_gradient_paths
        ));
    }
    Ok(RunResult {
        command: "optimize".to_string(),
        config_hash: config.hash(),
        seed: config.seed,
        pi,
        optimal_pi: Some(pi),
        objective: report.objective,
        worst_case: report.worst_case.clone(),
        trajectory: trajectory_stats(&paths),
        diagnostics: Diagnostics {
            status: Some(report.status),
            clamp_frequency: clamp_frequency(&paths),
            saturated: report.worst_case.calibration.is_some_and(|c| c.saturated),
            warnings,
        },
        optimization: Some(report),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub config_hash: String,
    pub pi: f64,
    pub priors: Vec<[f64; 4]>,
    pub weights: Vec<f64>,
    pub barycenter: [f64; 4],
    /// Per-step weighted KL of the barycenter.
    pub barycenter_weighted_kl: f64,
    pub worst_case: WorstCaseSummary,
    /// Marginal law of each step under the worst-case path law.
    pub step_marginals: Vec<[f64; 4]>,
}

pub fn cmd_aggregate(config: &ScenarioConfig) -> Result<AggregateResult> {
    config.validate()?;
    let priors = config.prior_set()?;
    let bary = barycenter(&priors)?;
    let worst = resolve_worst_case(config, config.pi)?;
    Ok(AggregateResult {
        config_hash: config.hash(),
        pi: config.pi,
        priors: priors.models().iter().map(|m| *m.pmf()).collect(),
        weights: priors.weights().to_vec(),
        barycenter: *bary.pmf(),
        barycenter_weighted_kl: weighted_kl(bary.pmf(), &priors)?,
        step_marginals: (0..config.grid.n_steps).map(|k| *worst.model.step_marginal(k).pmf()).collect(),
        worst_case: worst.summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub config_hash: String,
    pub points: Vec<SweepPoint>,
    pub argmax_pi: f64,
    pub worst_case: WorstCaseSummary,
}

pub fn cmd_sweep(config: &ScenarioConfig, grid_points: usize) -> Result<SweepResult> {
    let (points, worst_case) = grid_sweep(config, grid_points)?;
    let argmax_pi = points
        .iter()
        .fold(None::<&SweepPoint>, |best, p| match best {
            Some(b) if b.objective >= p.objective => Some(b),
            _ => Some(p),
        })
        .map(|p| p.pi)
        .unwrap_or(config.optimizer.initial_pi);
    Ok(SweepResult {
        config_hash: config.hash(),
        points,
        argmax_pi,
        worst_case,
    })
}

/// Deterministic classic and Bracken trajectories plus the closed form.
pub fn cmd_classic(config: &ScenarioConfig) -> Result<Vec<(&'static str, Trajectory)>> {
    config.validate()?;
    let classic = simulate_classic_lanchester(config.initial, &config.attrition, &config.grid)?;
    let exact_states = classic
        .times
        .iter()
        .map(|&t| classic_closed_form(config.initial, &config.attrition, t))
        .collect::<Result<Vec<_>>>()?;
    let exact = Trajectory {
        states: exact_states,
        times: classic.times.clone(),
        allocation: 1.0,
        clamp_events: 0,
    };
    let bracken = simulate_bracken(config.initial, &config.bracken_params(), &config.grid)?;
    Ok(vec![("classic", classic), ("classic_exact", exact), ("bracken", bracken)])
}

/// 17 significant digits.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_paths_csv<W: Write>(out: &mut W, paths: &[Trajectory]) -> std::io::Result<()> {
    writeln!(out, "path_id,k,t,B,R")?;
    for (id, path) in paths.iter().enumerate() {
        for (k, (s, t)) in path.states.iter().zip(&path.times).enumerate() {
            writeln!(out, "{id},{k},{},{},{}", fmt_float(*t), fmt_float(s.blue), fmt_float(s.red))?;
        }
    }
    Ok(())
}

pub fn write_classic_csv<W: Write>(out: &mut W, runs: &[(&str, Trajectory)]) -> std::io::Result<()> {
    writeln!(out, "model,k,t,B,R")?;
    for (name, path) in runs {
        for (k, (s, t)) in path.states.iter().zip(&path.times).enumerate() {
            writeln!(out, "{name},{k},{},{},{}", fmt_float(*t), fmt_float(s.blue), fmt_float(s.red))?;
        }
    }
    Ok(())
}

pub fn write_sweep_csv<W: Write>(out: &mut W, points: &[SweepPoint]) -> std::io::Result<()> {
    writeln!(out, "pi,objective,stderr")?;
    for p in points {
        writeln!(out, "{},{},{}", fmt_float(p.pi), fmt_float(p.objective), fmt_float(p.std_error))?;
    }
    Ok(())
}
