//! Optimize the allocation for a scenario file (or the reference scenario).
//!
//! `cargo run --release --example robust_allocation -- configs/interior_optimum.json`

use robust_lanchester::config::{parse_config, ScenarioConfig};
use robust_lanchester::optimizer::{grid_sweep, optimize_allocation};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = match std::env::args().nth(1) {
        Some(path) => parse_config(&std::fs::read_to_string(path)?)?,
        None => ScenarioConfig::default(),
    };
    let report = optimize_allocation(&config)?;
    println!(
        "pi* = {:.4} after {} iterations ({:?}), objective {:.3} +/- {:.3}",
        report.optimal_pi, report.iterations, report.status, report.objective.value, report.objective.std_error
    );
    let (points, _) = grid_sweep(&config, 11)?;
    for p in points {
        println!("{:>5.2} {:>12.3}", p.pi, p.objective);
    }
    Ok(())
}
