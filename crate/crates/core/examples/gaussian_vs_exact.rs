//! Compare terminal means of exact shock paths and the Gaussian approximation.

use robust_lanchester::aggregation::barycenter;
use robust_lanchester::config::ScenarioConfig;
use robust_lanchester::dynamics::{propagate_path, ShockRealization};
use robust_lanchester::gaussian::simulate_gaussian_path;
use robust_lanchester::rng::substream;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut config = ScenarioConfig::default();
    config.initial.blue = 500.0;
    config.initial.red = 420.0;
    let model = barycenter(&config.prior_set()?)?;
    let n = config.grid.n_steps;
    let paths = 20_000;
    let (mut exact, mut approx) = ([0.0; 2], [0.0; 2]);
    let mut rng = substream(config.seed, 1, 0);
    let mut shocks = vec![ShockRealization::NONE; n];
    for _ in 0..paths {
        for z in shocks.iter_mut() {
            *z = model.sample(&mut rng);
        }
        let t = propagate_path(config.initial, &config.attrition, config.pi, &shocks, &config.grid, true)?.terminal();
        exact[0] += t.blue / paths as f64;
        exact[1] += t.red / paths as f64;
        let g = simulate_gaussian_path(config.initial, &config.attrition, config.pi, &model, &config.grid, &mut rng)?
            .terminal();
        approx[0] += g.blue / paths as f64;
        approx[1] += g.red / paths as f64;
    }
    println!("exact    B {:.3}  R {:.3}", exact[0], exact[1]);
    println!("gaussian B {:.3}  R {:.3}", approx[0], approx[1]);
    Ok(())
}
