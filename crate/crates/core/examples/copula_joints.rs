//! Joint shock laws produced by each copula for the same marginals.

use robust_lanchester::copula::Copula;
use robust_lanchester::shocks::{Marginals, StepShockModel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let marginals = Marginals::new(0.7, 0.5)?;
    let copulas = [
        Copula::Independence,
        Copula::FrechetUpper,
        Copula::FrechetLower,
        Copula::Gaussian { rho: 0.5 },
        Copula::Clayton { alpha: 2.0 },
    ];
    println!("{:<14} {:>8} {:>8} {:>8} {:>8} {:>8}", "copula", "q00", "q10", "q01", "q11", "E[zBzR]");
    for copula in copulas {
        let joint = StepShockModel::build_joint(marginals, copula)?;
        let q = joint.pmf();
        println!(
            "{:<14} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            copula.name(),
            q[0],
            q[1],
            q[2],
            q[3],
            joint.cross_moment()
        );
    }
    Ok(())
}
