//! Per-step joint law of the Bernoulli shock pair.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::copula::Copula;
use crate::dynamics::ShockRealization;
use crate::error::{Error, Result};

const PMF_TOLERANCE: f64 = 1e-12;

/// Bernoulli success probabilities of the two shock components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Marginals {
    pub p_blue: f64,
    pub p_red: f64,
}

impl Marginals {
    pub fn new(p_blue: f64, p_red: f64) -> Result<Self> {
        let m = Self { p_blue, p_red };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_blue", self.p_blue), ("p_red", self.p_red)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::param(name, format!("probability must lie in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

/// Four-atom pmf over `(z_B, z_R)` in the order `(0,0), (1,0), (0,1), (1,1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct StepShockModel {
    pmf: [f64; 4],
}

impl TryFrom<[f64; 4]> for StepShockModel {
    type Error = Error;

    fn try_from(pmf: [f64; 4]) -> Result<Self> {
        Self::from_pmf(pmf)
    }
}

impl From<StepShockModel> for [f64; 4] {
    fn from(model: StepShockModel) -> Self {
        model.pmf
    }
}

impl StepShockModel {
    /// Accepts a pmf whose atoms are non-negative and sum to one within 1e-12.
    pub fn from_pmf(pmf: [f64; 4]) -> Result<Self> {
        if pmf.iter().any(|&q| !q.is_finite() || q < 0.0) {
            return Err(Error::param("pmf", format!("atoms must be finite and >= 0, got {pmf:?}")));
        }
        let total: f64 = pmf.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::param("pmf", format!("atoms must sum to 1, got {total}")));
        }
        Ok(Self { pmf })
    }

    /// Builds the joint law from marginals and a copula via
    /// `P(Z_B = 0, Z_R = 0) = C(1 - p_B, 1 - p_R)`.
    pub fn build_joint(marginals: Marginals, copula: Copula) -> Result<Self> {
        marginals.validate()?;
        copula.validate()?;
        let u = 1.0 - marginals.p_blue;
        let v = 1.0 - marginals.p_red;
        let q00 = copula.cdf(u, v).clamp((u + v - 1.0).max(0.0), u.min(v));
        let q10 = v - q00;
        let q01 = u - q00;
        let q11 = 1.0 - q00 - q10 - q01;
        let pmf = [q00, q10, q01, q11];
        debug_assert!(pmf.iter().all(|&q| (-PMF_TOLERANCE..=1.0 + PMF_TOLERANCE).contains(&q)));
        Ok(Self {
            pmf: pmf.map(|q| q.max(0.0)),
        })
    }

    pub fn point_mass(z: ShockRealization) -> Self {
        let mut pmf = [0.0; 4];
        pmf[z.index()] = 1.0;
        Self { pmf }
    }

    pub fn pmf(&self) -> &[f64; 4] {
        &self.pmf
    }

    pub fn prob(&self, z: ShockRealization) -> f64 {
        self.pmf[z.index()]
    }

    pub fn marginals(&self) -> Marginals {
        Marginals {
            p_blue: self.pmf[1] + self.pmf[3],
            p_red: self.pmf[2] + self.pmf[3],
        }
    }

    /// `E[Z_B Z_R]`, which for binary shocks is the `(1,1)` atom.
    pub fn cross_moment(&self) -> f64 {
        self.pmf[3]
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ShockRealization {
        sample_index(&self.pmf, rng.random::<f64>())
    }
}

/// Inverse-CDF lookup; zero-probability atoms are never returned.
fn sample_index(pmf: &[f64; 4], u: f64) -> ShockRealization {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &q) in pmf.iter().enumerate() {
        if q <= 0.0 {
            continue;
        }
        acc += q;
        last = i;
        if u < acc {
            return ShockRealization::from_index(i);
        }
    }
    ShockRealization::from_index(last)
}

pub fn build_joint(marginals: Marginals, copula: Copula) -> Result<StepShockModel> {
    StepShockModel::build_joint(marginals, copula)
}

pub fn cross_moment(model: &StepShockModel) -> f64 {
    model.cross_moment()
}

pub fn sample_shock<R: Rng + ?Sized>(model: &StepShockModel, rng: &mut R) -> ShockRealization {
    model.sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn close(a: &[f64; 4], b: &[f64; 4]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn independence_half_half() {
        let m = build_joint(Marginals::new(0.5, 0.5).unwrap(), Copula::Independence).unwrap();
        assert!(close(m.pmf(), &[0.25; 4]));
        assert_eq!(m.cross_moment(), 0.25);
    }

    #[test]
    fn frechet_bounds_worked_examples() {
        let marg = Marginals::new(0.3, 0.6).unwrap();
        let up = build_joint(marg, Copula::FrechetUpper).unwrap();
        assert!(close(up.pmf(), &[0.4, 0.0, 0.3, 0.3]));
        assert!((cross_moment(&up) - 0.3).abs() < 1e-12);
        let low = build_joint(marg, Copula::FrechetLower).unwrap();
        assert!(low.cross_moment().abs() < 1e-12);
    }

    #[test]
    fn degenerate_marginal_has_no_cross_moment() {
        for c in [Copula::FrechetUpper, Copula::Gaussian { rho: 0.8 }, Copula::Clayton { alpha: 3.0 }] {
            let m = build_joint(Marginals::new(0.0, 0.7).unwrap(), c).unwrap();
            assert_eq!(m.cross_moment(), 0.0);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(Marginals::new(1.2, 0.5).is_err());
        assert!(build_joint(Marginals { p_blue: 0.5, p_red: 0.5 }, Copula::Clayton { alpha: -1.0 }).is_err());
        assert!(StepShockModel::from_pmf([0.5, 0.5, 0.5, -0.5]).is_err());
        assert!(StepShockModel::from_pmf([0.5, 0.5, 0.5, 0.0]).is_err());
    }

    #[test]
    fn point_mass_always_samples_its_atom() {
        let m = StepShockModel::from_pmf([1.0, 0.0, 0.0, 0.0]).unwrap();
        let mut rng = substream(3, 0, 0);
        assert!((0..1000).all(|_| m.sample(&mut rng) == ShockRealization::NONE));
    }

    #[test]
    fn empirical_frequencies() {
        let m = StepShockModel::from_pmf([0.1, 0.2, 0.3, 0.4]).unwrap();
        let mut rng = substream(11, 0, 0);
        let mut counts = [0usize; 4];
        let n = 1_000_000;
        for _ in 0..n {
            counts[m.sample(&mut rng).index()] += 1;
        }
        for (c, q) in counts.iter().zip(m.pmf()) {
            assert!((*c as f64 / n as f64 - q).abs() < 0.003);
        }
    }

    #[test]
    fn same_seed_same_sequence() {
        let m = StepShockModel::from_pmf([0.25; 4]).unwrap();
        let draw = |seed| {
            let mut rng = substream(seed, 1, 9);
            (0..64).map(|_| m.sample(&mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
        assert_ne!(draw(5), draw(6));
    }

    #[test]
    fn serde_round_trip_validates() {
        let m = StepShockModel::from_pmf([0.1, 0.2, 0.3, 0.4]).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<StepShockModel>(&text).unwrap(), m);
        assert!(serde_json::from_str::<StepShockModel>("[0.9,0.9,0.0,0.0]").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn copula() -> impl Strategy<Value = Copula> {
            prop_oneof![
                Just(Copula::Independence),
                Just(Copula::FrechetUpper),
                Just(Copula::FrechetLower),
                (-0.99f64..0.99).prop_map(|rho| Copula::Gaussian { rho }),
                (0.01f64..20.0).prop_map(|alpha| Copula::Clayton { alpha }),
            ]
        }

        proptest! {
            #[test]
            fn joint_sums_to_one_and_keeps_marginals(pb in 0.0f64..=1.0, pr in 0.0f64..=1.0, c in copula()) {
                let m = build_joint(Marginals::new(pb, pr).unwrap(), c).unwrap();
                let total: f64 = m.pmf().iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
                let back = m.marginals();
                prop_assert!((back.p_blue - pb).abs() < 1e-12);
                prop_assert!((back.p_red - pr).abs() < 1e-12);
                prop_assert!(m.pmf().iter().all(|&q| (0.0..=1.0).contains(&q)));
            }

            #[test]
            fn frechet_ordering_of_cross_moment(pb in 0.0f64..=1.0, pr in 0.0f64..=1.0, c in copula()) {
                let marg = Marginals::new(pb, pr).unwrap();
                let lo = build_joint(marg, Copula::FrechetLower).unwrap().cross_moment();
                let hi = build_joint(marg, Copula::FrechetUpper).unwrap().cross_moment();
                let mid = build_joint(marg, c).unwrap().cross_moment();
                prop_assert!(lo <= mid + 1e-12 && mid <= hi + 1e-12);
            }

            #[test]
            fn independence_cross_moment_is_product(pb in 0.0f64..=1.0, pr in 0.0f64..=1.0) {
                let m = build_joint(Marginals::new(pb, pr).unwrap(), Copula::Independence).unwrap();
                prop_assert!((m.cross_moment() - pb * pr).abs() < 1e-15);
            }
        }
    }
}
