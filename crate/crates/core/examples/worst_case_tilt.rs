//! Barycenter of the reference priors and the worst case as aversion grows.

use robust_lanchester::aggregation::{barycenter, calibrate_aversion, PathTilter};
use robust_lanchester::config::ScenarioConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = ScenarioConfig::default();
    let priors = config.prior_set()?;
    let bary = barycenter(&priors)?;
    println!("barycenter pmf {:?}", bary.pmf());

    let problem = config.problem();
    let n = config.grid.n_steps;
    let tilter = PathTilter::new(&priors, n, |path| problem.path_payoff(config.pi, path))?;
    println!("{:>10} {:>14} {:>12}", "kappa", "E[payoff]", "KL_w");
    for kappa in [0.0, 1e-4, 1e-3, 1e-2, 1e-1] {
        println!("{kappa:>10.0e} {:>14.2} {:>12.5}", tilter.expected_payoff(kappa), tilter.weighted_kl(kappa));
    }
    for eta in [0.5, 1.0, 2.0] {
        let c = calibrate_aversion(&tilter, eta, 1e3)?;
        println!("radius {eta}: kappa {:.4e}, achieved {:.6}, saturated {}", c.kappa, c.achieved, c.saturated);
    }
    Ok(())
}
