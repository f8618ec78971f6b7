//! Bivariate copulas coupling the two Bernoulli shock marginals.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Supported dependence structures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Copula {
    #[default]
    Independence,
    /// Comonotone bound `M(u, v) = min(u, v)`.
    FrechetUpper,
    /// Countermonotone bound `W(u, v) = max(u + v - 1, 0)`.
    FrechetLower,
    Gaussian { rho: f64 },
    Clayton { alpha: f64 },
}

impl Copula {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Copula::Gaussian { rho } if !(rho > -1.0 && rho < 1.0) => {
                Err(Error::param("rho", format!("gaussian correlation must lie in (-1, 1), got {rho}")))
            }
            Copula::Clayton { alpha } if !(alpha > 0.0 && alpha.is_finite()) => {
                Err(Error::param("alpha", format!("clayton parameter must be > 0, got {alpha}")))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Copula::Independence => "independence",
            Copula::FrechetUpper => "frechet_upper",
            Copula::FrechetLower => "frechet_lower",
            Copula::Gaussian { .. } => "gaussian",
            Copula::Clayton { .. } => "clayton",
        }
    }

    /// `C(u, v)` for `u, v` in `[0, 1]`.
    pub fn cdf(&self, u: f64, v: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let v = v.clamp(0.0, 1.0);
        if u == 0.0 || v == 0.0 {
            return 0.0;
        }
        if u == 1.0 {
            return v;
        }
        if v == 1.0 {
            return u;
        }
        let raw = match *self {
            Copula::Independence => u * v,
            Copula::FrechetUpper => u.min(v),
            Copula::FrechetLower => (u + v - 1.0).max(0.0),
            Copula::Gaussian { rho } => {
                if rho == 0.0 {
                    u * v
                } else {
                    let n = Normal::standard();
                    bivariate_normal_cdf(n.inverse_cdf(u), n.inverse_cdf(v), rho)
                }
            }
            Copula::Clayton { alpha } => (u.powf(-alpha) + v.powf(-alpha) - 1.0).powf(-1.0 / alpha),
        };
        raw.clamp((u + v - 1.0).max(0.0), u.min(v))
    }
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

// Gauss-Legendre half-rules (nodes in (0,1) mirrored around 1 below).
const GL6_W: [f64; 3] = [0.1713244923791705, 0.3607615730481384, 0.4679139345726904];
const GL6_X: [f64; 3] = [0.9324695142031522, 0.6612093864662647, 0.2386191860831970];
const GL12_W: [f64; 6] = [
    0.04717533638651177,
    0.1069393259953183,
    0.1600783285433464,
    0.2031674267230659,
    0.2334925365383547,
    0.2491470458134029,
];
const GL12_X: [f64; 6] = [
    0.9815606342467191,
    0.9041172563704750,
    0.7699026741943050,
    0.5873179542866171,
    0.3678314989981802,
    0.1252334085114692,
];
const GL20_W: [f64; 10] = [
    0.01761400713915212,
    0.04060142980038694,
    0.06267204833410906,
    0.08327674157670475,
    0.1019301198172404,
    0.1181945319615184,
    0.1316886384491766,
    0.1420961093183821,
    0.1491729864726037,
    0.1527533871307259,
];
const GL20_X: [f64; 10] = [
    0.9931285991850949,
    0.9639719272779138,
    0.9122344282513259,
    0.8391169718222188,
    0.7463319064601508,
    0.6360536807265150,
    0.5108670019508271,
    0.3737060887154196,
    0.2277858511416451,
    0.07652652113349733,
];

/// `P(X <= h, Y <= k)` for standard bivariate normal with correlation `rho`
/// (Genz's BVND algorithm, double-precision accuracy).
pub fn bivariate_normal_cdf(h: f64, k: f64, rho: f64) -> f64 {
    upper_orthant(-h, -k, rho)
}

/// `P(X > h, Y > k)`.
fn upper_orthant(h: f64, k: f64, r: f64) -> f64 {
    if h == f64::INFINITY || k == f64::INFINITY {
        return 0.0;
    }
    if h == f64::NEG_INFINITY {
        return if k == f64::NEG_INFINITY { 1.0 } else { std_normal_cdf(-k) };
    }
    if k == f64::NEG_INFINITY {
        return std_normal_cdf(-h);
    }
    if r == 0.0 {
        return std_normal_cdf(-h) * std_normal_cdf(-k);
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let (w, x): (&[f64], &[f64]) = if r.abs() < 0.3 {
        (&GL6_W, &GL6_X)
    } else if r.abs() < 0.75 {
        (&GL12_W, &GL12_X)
    } else {
        (&GL20_W, &GL20_X)
    };
    // Mirrored nodes 1 - x and 1 + x on [0, 2].
    let nodes = || x.iter().zip(w).flat_map(|(&xi, &wi)| [(1.0 - xi, wi), (1.0 + xi, wi)]);

    let mut hk = h * k;
    let mut bvn;
    if r.abs() < 0.925 {
        let hs = (h * h + k * k) / 2.0;
        let asr = r.asin() / 2.0;
        bvn = nodes()
            .map(|(xi, wi)| {
                let sn = (asr * xi).sin();
                wi * ((sn * hk - hs) / (1.0 - sn * sn)).exp()
            })
            .sum::<f64>();
        bvn = bvn * asr / two_pi + std_normal_cdf(-h) * std_normal_cdf(-k);
    } else {
        let mut k = k;
        if r < 0.0 {
            k = -k;
            hk = -hk;
        }
        bvn = 0.0;
        if r.abs() < 1.0 {
            let as_ = 1.0 - r * r;
            let mut a = as_.sqrt();
            let bs = (h - k) * (h - k);
            let c = (4.0 - hk) / 8.0;
            let d = (12.0 - hk) / 80.0;
            let asr = -(bs / as_ + hk) / 2.0;
            if asr > -100.0 {
                bvn = a * asr.exp() * (1.0 - c * (bs - as_) * (1.0 - d * bs) / 3.0 + c * d * as_ * as_);
            }
            if hk > -100.0 {
                let b = bs.sqrt();
                let sp = two_pi.sqrt() * std_normal_cdf(-b / a);
                bvn -= (-hk / 2.0).exp() * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0);
            }
            a /= 2.0;
            let sum: f64 = nodes()
                .filter_map(|(xi, wi)| {
                    let xs = (a * xi).powi(2);
                    let asr = -(bs / xs + hk) / 2.0;
                    (asr > -100.0).then(|| {
                        let sp = 1.0 + c * xs * (1.0 + 5.0 * d * xs);
                        let rs = (1.0 - xs).sqrt();
                        let ep = (-(hk / 2.0) * xs / (1.0 + rs).powi(2)).exp() / rs;
                        wi * asr.exp() * (sp - ep)
                    })
                })
                .sum();
            bvn = (a * sum - bvn) / two_pi;
        }
        if r > 0.0 {
            bvn += std_normal_cdf(-h.max(k));
        } else if h >= k {
            bvn = -bvn;
        } else {
            let l = if h < 0.0 {
                std_normal_cdf(k) - std_normal_cdf(h)
            } else {
                std_normal_cdf(-h) - std_normal_cdf(-k)
            };
            bvn = l - bvn;
        }
    }
    bvn.clamp(0.0, 1.0)
}
