//! Aggregation of expert shock models into a robust evaluation model.
//!
//! The weighted-KL barycenter of a prior set is the normalized geometric
//! mean `q*(z) ∝ Π q_i(z)^{w_i}`. Aversion from the priors is expressed with
//! a tilt parameter `kappa >= 0`: the worst-case model minimizes
//! `E_q[payoff] + (1/kappa) KL_w(q, priors)` and has the closed form
//! `q_kappa(z) ∝ exp(-kappa * payoff(z)) q*(z)`. `kappa = 0` is full trust in
//! the priors (the barycenter); large `kappa` concentrates mass on the
//! lowest-payoff paths.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::ShockRealization;
use crate::error::{Error, Result};
use crate::rng::{label, substream};
use crate::shocks::StepShockModel;

/// Largest horizon for which path-space enumeration (4^N atoms) is allowed.
pub const MAX_ENUMERATION_STEPS: usize = 12;

/// Default floor used by [`PriorSet::floored`].
pub const DEFAULT_PRIOR_FLOOR: f64 = 1e-9;

const WEIGHT_TOLERANCE: f64 = 1e-9;

/// `Σ q log(q / q0)` with `0 log 0 = 0`.
pub fn kl_divergence(q: &[f64], q0: &[f64]) -> Result<f64> {
    if q.len() != q0.len() {
        return Err(Error::LengthMismatch {
            expected: q0.len(),
            actual: q.len(),
        });
    }
    let mut total = 0.0;
    for (atom, (&a, &b)) in q.iter().zip(q0).enumerate() {
        if a <= 0.0 {
            continue;
        }
        if b <= 0.0 {
            return Err(Error::InfiniteDivergence { atom, mass: a });
        }
        total += a * (a / b).ln();
    }
    Ok(total.max(0.0))
}

/// Expert shock models with trust weights on the simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSet {
    models: Vec<StepShockModel>,
    weights: Vec<f64>,
}

impl PriorSet {
    pub fn new(models: Vec<StepShockModel>, weights: Vec<f64>) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::param("priors", "at least one prior model is required"));
        }
        if models.len() != weights.len() {
            return Err(Error::LengthMismatch {
                expected: models.len(),
                actual: weights.len(),
            });
        }
        if weights.iter().any(|&w| !(w.is_finite() && w >= 0.0)) {
            return Err(Error::param("weights", "weights must be finite and >= 0"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(Error::param("weights", format!("weights must sum to 1, got {total}")));
        }
        Ok(Self { models, weights })
    }

    pub fn single(model: StepShockModel) -> Self {
        Self {
            models: vec![model],
            weights: vec![1.0],
        }
    }

    /// Raises every atom to at least `eps` and renormalizes each model.
    pub fn floored(&self, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < 0.25) {
            return Err(Error::param("prior_floor", format!("must lie in (0, 0.25), got {eps}")));
        }
        let models = self
            .models
            .iter()
            .map(|m| {
                let raised = m.pmf().map(|q| q.max(eps));
                let total: f64 = raised.iter().sum();
                StepShockModel::from_pmf(raised.map(|q| q / total))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            models,
            weights: self.weights.clone(),
        })
    }

    pub fn models(&self) -> &[StepShockModel] {
        &self.models
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// `s(z) = Σ_i w_i ln q_i(z)` per atom; `-inf` where a weighted prior
    /// has no mass. Zero-weight priors are skipped.
    pub fn log_pool(&self) -> [f64; 4] {
        let mut out = [0.0; 4];
        for (model, &w) in self.models.iter().zip(&self.weights) {
            if w == 0.0 {
                continue;
            }
            for (o, &q) in model.pmf().iter().enumerate() {
                out[o] += if q > 0.0 { w * q.ln() } else { f64::NEG_INFINITY };
            }
        }
        out
    }
}

/// `Σ_i w_i KL(q ‖ q_i)`.
pub fn weighted_kl(q: &[f64; 4], priors: &PriorSet) -> Result<f64> {
    let mut total = 0.0;
    for (model, &w) in priors.models.iter().zip(&priors.weights) {
        if w == 0.0 {
            continue;
        }
        total += w * kl_divergence(q, model.pmf())?;
    }
    Ok(total)
}

/// Normalized weighted geometric mean of the priors. A zero atom in any
/// positively weighted prior stays zero in the result.
pub fn barycenter(priors: &PriorSet) -> Result<StepShockModel> {
    let log_pool = priors.log_pool();
    let max = log_pool.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::param("priors", "priors share no common support; the geometric mean is empty"));
    }
    let raw = log_pool.map(|s| (s - max).exp());
    let total: f64 = raw.iter().sum();
    StepShockModel::from_pmf(raw.map(|x| x / total))
}

/// A probability model over N-step shock paths.
#[derive(Debug, Clone, PartialEq)]
pub enum PathSpaceModel {
    /// Shocks i.i.d. across steps with the given per-step law.
    Iid(StepShockModel),
    /// Explicit probabilities for all `4^n_steps` paths. Path index encodes
    /// the outcome of step `k` (0-based) in bits `2k..2k+2`.
    Explicit {
        n_steps: usize,
        probs: Vec<f64>,
        cumulative: Vec<f64>,
    },
}

pub fn path_outcome(index: usize, step: usize) -> ShockRealization {
    ShockRealization::from_index((index >> (2 * step)) & 3)
}

pub fn decode_path(index: usize, out: &mut [ShockRealization]) {
    for (k, z) in out.iter_mut().enumerate() {
        *z = path_outcome(index, k);
    }
}

pub fn encode_path(path: &[ShockRealization]) -> usize {
    path.iter().enumerate().map(|(k, z)| z.index() << (2 * k)).sum()
}

pub(crate) fn check_enumerable(n_steps: usize) -> Result<()> {
    if n_steps > MAX_ENUMERATION_STEPS {
        return Err(Error::EnumerationTooLarge {
            n_steps,
            max_steps: MAX_ENUMERATION_STEPS,
        });
    }
    Ok(())
}

impl PathSpaceModel {
    pub fn explicit(n_steps: usize, probs: Vec<f64>) -> Result<Self> {
        check_enumerable(n_steps)?;
        if probs.len() != 1 << (2 * n_steps) {
            return Err(Error::LengthMismatch {
                expected: 1 << (2 * n_steps),
                actual: probs.len(),
            });
        }
        if probs.iter().any(|&p| !(p.is_finite() && p >= 0.0)) {
            return Err(Error::param("probs", "path probabilities must be finite and >= 0"));
        }
        let mut acc = 0.0;
        let cumulative: Vec<f64> = probs
            .iter()
            .map(|&p| {
                acc += p;
                acc
            })
            .collect();
        if (acc - 1.0).abs() > 1e-9 {
            return Err(Error::param("probs", format!("path probabilities must sum to 1, got {acc}")));
        }
        Ok(PathSpaceModel::Explicit {
            n_steps,
            probs,
            cumulative,
        })
    }

    /// Product measure as an explicit table.
    pub fn iid_table(step: &StepShockModel, n_steps: usize) -> Result<Self> {
        check_enumerable(n_steps)?;
        let pmf = step.pmf();
        let probs = (0..1usize << (2 * n_steps))
            .map(|idx| (0..n_steps).map(|k| pmf[(idx >> (2 * k)) & 3]).product())
            .collect();
        Self::explicit(n_steps, probs)
    }

    pub fn path_probability(&self, path: &[ShockRealization]) -> f64 {
        match self {
            PathSpaceModel::Iid(step) => path.iter().map(|&z| step.prob(z)).product(),
            PathSpaceModel::Explicit { n_steps, probs, .. } => {
                if path.len() != *n_steps {
                    return 0.0;
                }
                probs[encode_path(path)]
            }
        }
    }

    /// Fills `out` with one path drawn from the model.
    pub fn sample_path<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [ShockRealization]) {
        match self {
            PathSpaceModel::Iid(step) => {
                for z in out.iter_mut() {
                    *z = step.sample(rng);
                }
            }
            PathSpaceModel::Explicit { cumulative, probs, .. } => {
                let total = *cumulative.last().expect("non-empty table");
                let u = rng.random::<f64>() * total;
                let mut idx = cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1);
                while probs[idx] == 0.0 && idx > 0 {
                    idx -= 1;
                }
                decode_path(idx, out);
            }
        }
    }

    /// Marginal law of the shock at step `k`.
    pub fn step_marginal(&self, k: usize) -> StepShockModel {
        match self {
            PathSpaceModel::Iid(step) => *step,
            PathSpaceModel::Explicit { probs, .. } => {
                let mut pmf = [0.0; 4];
                for (idx, &p) in probs.iter().enumerate() {
                    pmf[(idx >> (2 * k)) & 3] += p;
                }
                normalized(pmf)
            }
        }
    }

    /// Step marginals averaged over the horizon (the law of the shock at a
    /// uniformly chosen step).
    pub fn average_step_pmf(&self) -> StepShockModel {
        match self {
            PathSpaceModel::Iid(step) => *step,
            PathSpaceModel::Explicit { n_steps, probs, .. } => {
                let mut pmf = [0.0; 4];
                for (idx, &p) in probs.iter().enumerate() {
                    for k in 0..*n_steps {
                        pmf[(idx >> (2 * k)) & 3] += p;
                    }
                }
                normalized(pmf)
            }
        }
    }

    /// Weighted KL on path space against the product extensions of the priors.
    pub fn weighted_kl(&self, priors: &PriorSet, n_steps: usize) -> Result<f64> {
        match self {
            PathSpaceModel::Iid(step) => Ok(n_steps as f64 * weighted_kl(step.pmf(), priors)?),
            PathSpaceModel::Explicit { n_steps: n, probs, .. } => {
                let log_pool = priors.log_pool();
                let mut total = 0.0;
                for (idx, &p) in probs.iter().enumerate() {
                    if p <= 0.0 {
                        continue;
                    }
                    let pooled: f64 = (0..*n).map(|k| log_pool[(idx >> (2 * k)) & 3]).sum();
                    if pooled == f64::NEG_INFINITY {
                        return Err(Error::InfiniteDivergence { atom: idx, mass: p });
                    }
                    total += p * (p.ln() - pooled);
                }
                Ok(total.max(0.0))
            }
        }
    }
}

fn normalized(pmf: [f64; 4]) -> StepShockModel {
    let total: f64 = pmf.iter().sum();
    StepShockModel::from_pmf(pmf.map(|q| q / total)).expect("normalized marginal is a valid pmf")
}

/// Cached enumeration of all paths: barycenter log-probabilities, pooled
/// prior log-densities and payoffs. Tilting for different `kappa` values
/// reuses the cache.
#[derive(Debug, Clone)]
pub struct PathTilter {
    n_steps: usize,
    log_base: Vec<f64>,
    log_pool: Vec<f64>,
    payoffs: Vec<f64>,
}

impl PathTilter {
    pub fn new<F>(priors: &PriorSet, n_steps: usize, payoff: F) -> Result<Self>
    where
        F: Fn(&[ShockRealization]) -> f64 + Sync,
    {
        check_enumerable(n_steps)?;
        let bary = barycenter(priors)?;
        let log_bary = bary.pmf().map(|q| if q > 0.0 { q.ln() } else { f64::NEG_INFINITY });
        let step_pool = priors.log_pool();
        let n_paths = 1usize << (2 * n_steps);
        let rows: Vec<(f64, f64, f64)> = (0..n_paths)
            .into_par_iter()
            .map_init(
                || vec![ShockRealization::NONE; n_steps],
                |buf, idx| {
                    decode_path(idx, buf);
                    let lb: f64 = buf.iter().map(|z| log_bary[z.index()]).sum();
                    let lp: f64 = buf.iter().map(|z| step_pool[z.index()]).sum();
                    let value = if lb == f64::NEG_INFINITY { 0.0 } else { payoff(buf) };
                    (lb, lp, value)
                },
            )
            .collect();
        let mut log_base = Vec::with_capacity(n_paths);
        let mut log_pool = Vec::with_capacity(n_paths);
        let mut payoffs = Vec::with_capacity(n_paths);
        for (lb, lp, v) in rows {
            if !v.is_finite() {
                return Err(Error::param("payoff", "payoff must be finite on every path"));
            }
            log_base.push(lb);
            log_pool.push(lp);
            payoffs.push(v);
        }
        Ok(Self {
            n_steps,
            log_base,
            log_pool,
            payoffs,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn payoffs(&self) -> &[f64] {
        &self.payoffs
    }

    /// Normalized tilted probabilities `∝ exp(-kappa payoff) q*`.
    pub fn probabilities(&self, kappa: f64) -> Vec<f64> {
        let logits: Vec<f64> = self
            .log_base
            .iter()
            .zip(&self.payoffs)
            .map(|(&lb, &v)| if lb == f64::NEG_INFINITY { lb } else { lb - kappa * v })
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        probs
    }

    pub fn model(&self, kappa: f64) -> Result<PathSpaceModel> {
        if !(kappa.is_finite() && kappa >= 0.0) {
            return Err(Error::param("kappa", format!("must be finite and >= 0, got {kappa}")));
        }
        PathSpaceModel::explicit(self.n_steps, self.probabilities(kappa))
    }

    pub fn expected_payoff(&self, kappa: f64) -> f64 {
        self.probabilities(kappa).iter().zip(&self.payoffs).map(|(p, v)| p * v).sum()
    }

    /// Path-space weighted KL of the tilted model.
    pub fn weighted_kl(&self, kappa: f64) -> f64 {
        let probs = self.probabilities(kappa);
        self.weighted_kl_of(&probs)
    }

    fn weighted_kl_of(&self, probs: &[f64]) -> f64 {
        probs
            .iter()
            .zip(&self.log_pool)
            .filter(|(&p, _)| p > 0.0)
            .map(|(&p, &lp)| p * (p.ln() - lp))
            .sum::<f64>()
            .max(0.0)
    }
}

/// Exact path-space worst-case model by enumeration (`n_steps <= 12`).
pub fn tilted_path_model<F>(priors: &PriorSet, kappa: f64, n_steps: usize, payoff: F) -> Result<PathSpaceModel>
where
    F: Fn(&[ShockRealization]) -> f64 + Sync,
{
    PathTilter::new(priors, n_steps, payoff)?.model(kappa)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub kappa: f64,
    /// Weighted KL of the tilted model at `kappa`.
    pub achieved: f64,
    /// `eta` could not be reached below `kappa_max`.
    pub saturated: bool,
    /// The KL values visited were non-decreasing in `kappa`.
    pub monotone: bool,
    pub iterations: usize,
}

pub const DEFAULT_KAPPA_MAX: f64 = 1e3;

/// Finds `kappa` whose tilted model has weighted KL equal to `eta`.
///
/// Radii at or below the barycenter's own divergence return `kappa = 0`.
pub fn calibrate_aversion(tilter: &PathTilter, eta: f64, kappa_max: f64) -> Result<Calibration> {
    if !(eta.is_finite() && eta >= 0.0) {
        return Err(Error::param("eta", format!("radius must be finite and >= 0, got {eta}")));
    }
    let mut visited: Vec<(f64, f64)> = Vec::new();
    let mut eval = |kappa: f64| {
        let v = tilter.weighted_kl(kappa);
        visited.push((kappa, v));
        v
    };
    let base = eval(0.0);
    let finish = |kappa: f64, achieved: f64, saturated: bool, mut visited: Vec<(f64, f64)>| {
        visited.sort_by(|a, b| a.0.total_cmp(&b.0));
        let monotone = visited.windows(2).all(|w| w[1].1 >= w[0].1 - 1e-12);
        let iterations = visited.len();
        Calibration {
            kappa,
            achieved,
            saturated,
            monotone,
            iterations,
        }
    };
    if eta <= base {
        return Ok(finish(0.0, base, false, visited));
    }

    let mut lo = 0.0;
    let mut hi = 1e-8_f64.min(kappa_max);
    let mut f_hi = eval(hi);
    while f_hi < eta {
        if hi >= kappa_max {
            return Ok(finish(kappa_max, f_hi, true, visited));
        }
        lo = hi;
        hi = (hi * 4.0).min(kappa_max);
        f_hi = eval(hi);
    }
    let mut best = (hi, f_hi);
    for _ in 0..200 {
        if (best.1 - eta).abs() <= 1e-10 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = eval(mid);
        if (f_mid - eta).abs() < (best.1 - eta).abs() {
            best = (mid, f_mid);
        }
        if f_mid < eta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(finish(best.0, best.1, false, visited))
}

/// Result of the i.i.d.-restricted inner minimization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IidWorstCase {
    pub model: StepShockModel,
    /// Monte Carlo estimate of `E_q[payoff] + (N/kappa) KL_w(q)` at the optimum.
    pub objective: f64,
    pub expected_payoff: f64,
    /// Per-step weighted KL of the returned model.
    pub weighted_kl: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct IidSearchSettings {
    pub random_starts: usize,
    pub max_iterations: usize,
    pub floor: f64,
}

impl Default for IidSearchSettings {
    fn default() -> Self {
        Self {
            random_starts: 8,
            max_iterations: 500,
            floor: 1e-12,
        }
    }
}

/// Minimizes `E_q[payoff] + (N/kappa) KL_w(q)` over per-step laws `q` whose
/// path law is the product `q^{⊗N}`.
///
/// The expectation is a self-normalized importance-sampling estimate built
/// from `mc_paths` paths drawn once from the barycenter, which makes the
/// objective a smooth deterministic function of `q`. The search runs
/// projected gradient descent with backtracking from the barycenter and
/// `random_starts` random points, restricted to the barycenter's support.
pub fn iid_worstcase_model<F>(
    priors: &PriorSet,
    kappa: f64,
    n_steps: usize,
    payoff: F,
    mc_paths: usize,
    seed: u64,
    settings: IidSearchSettings,
) -> Result<IidWorstCase>
where
    F: Fn(&[ShockRealization]) -> f64 + Sync,
{
    if !(kappa.is_finite() && kappa >= 0.0) {
        return Err(Error::param("kappa", format!("must be finite and >= 0, got {kappa}")));
    }
    if mc_paths < 1000 {
        return Err(Error::param("mc_paths", format!("at least 1000 paths are required, got {mc_paths}")));
    }
    if n_steps == 0 {
        return Err(Error::param("n_steps", "must be at least 1"));
    }
    let bary = barycenter(priors)?;
    let support: Vec<usize> = (0..4).filter(|&o| bary.pmf()[o] > 0.0).collect();

    let samples: Vec<([u32; 4], f64)> = (0..mc_paths)
        .into_par_iter()
        .map_init(
            || vec![ShockRealization::NONE; n_steps],
            |buf, m| {
                let mut rng = substream(seed, label::WORST_CASE, m as u64);
                let mut counts = [0u32; 4];
                for z in buf.iter_mut() {
                    *z = bary.sample(&mut rng);
                    counts[z.index()] += 1;
                }
                (counts, payoff(buf))
            },
        )
        .collect();

    let problem = IidProblem {
        bary: *bary.pmf(),
        log_pool: priors.log_pool(),
        support,
        samples,
        penalty: if kappa > 0.0 { n_steps as f64 / kappa } else { f64::INFINITY },
        floor: settings.floor,
    };

    if kappa == 0.0 || problem.support.len() == 1 {
        let (expected_payoff, _) = problem.expectation(bary.pmf());
        let kl = weighted_kl(bary.pmf(), priors)?;
        return Ok(IidWorstCase {
            model: bary,
            objective: expected_payoff + if kappa > 0.0 { problem.penalty * kl } else { 0.0 },
            expected_payoff,
            weighted_kl: kl,
            converged: true,
            iterations: 0,
        });
    }

    let mut starts = vec![*bary.pmf()];
    let mut rng = substream(seed, label::MULTISTART, 0);
    for _ in 0..settings.random_starts {
        let mut q = [0.0; 4];
        for &o in &problem.support {
            q[o] = -(1.0 - rng.random::<f64>()).ln();
        }
        let total: f64 = q.iter().sum();
        starts.push(problem.project(q.map(|x| x / total)));
    }

    let mut best: Option<(f64, [f64; 4], bool, usize)> = None;
    for start in starts {
        let (value, q, converged, iters) = problem.descend(start, settings.max_iterations);
        if best.as_ref().is_none_or(|b| value < b.0) {
            best = Some((value, q, converged, iters));
        }
    }
    let (value, q, converged, iterations) = best.expect("at least one start");
    let model = StepShockModel::from_pmf(q)?;
    let (expected_payoff, _) = problem.expectation(&q);
    Ok(IidWorstCase {
        model,
        objective: value,
        expected_payoff,
        weighted_kl: weighted_kl(&q, priors)?,
        converged,
        iterations,
    })
}

struct IidProblem {
    bary: [f64; 4],
    log_pool: [f64; 4],
    support: Vec<usize>,
    samples: Vec<([u32; 4], f64)>,
    penalty: f64,
    floor: f64,
}

impl IidProblem {
    /// Self-normalized IS estimate of `E_q[payoff]` and its gradient.
    fn expectation(&self, q: &[f64; 4]) -> (f64, [f64; 4]) {
        let mut log_ratio = [0.0; 4];
        for &o in &self.support {
            log_ratio[o] = q[o].ln() - self.bary[o].ln();
        }
        let logw: Vec<f64> = self
            .samples
            .iter()
            .map(|(c, _)| self.support.iter().map(|&o| c[o] as f64 * log_ratio[o]).sum())
            .collect();
        let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        let mean: f64 = w.iter().zip(&self.samples).map(|(wi, (_, v))| wi * v).sum::<f64>() / total;
        let mut grad = [0.0; 4];
        for (wi, (c, v)) in w.iter().zip(&self.samples) {
            let coef = wi / total * (v - mean);
            for &o in &self.support {
                grad[o] += coef * c[o] as f64;
            }
        }
        for &o in &self.support {
            grad[o] /= q[o];
        }
        (mean, grad)
    }

    fn value_and_grad(&self, q: &[f64; 4]) -> (f64, [f64; 4]) {
        let (mean, mut grad) = self.expectation(q);
        let mut kl = 0.0;
        for &o in &self.support {
            kl += q[o] * (q[o].ln() - self.log_pool[o]);
            grad[o] += self.penalty * (q[o].ln() + 1.0 - self.log_pool[o]);
        }
        (mean + self.penalty * kl, grad)
    }

    /// Euclidean projection onto `{q_o >= floor on the support, Σ q = 1}`.
    fn project(&self, q: [f64; 4]) -> [f64; 4] {
        let n = self.support.len();
        let mass = 1.0 - n as f64 * self.floor;
        let mut v: Vec<f64> = self.support.iter().map(|&o| q[o] - self.floor).collect();
        let mut sorted = v.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let mut cum = 0.0;
        let mut theta = 0.0;
        for (j, &u) in sorted.iter().enumerate() {
            cum += u;
            let t = (cum - mass) / (j + 1) as f64;
            if u - t > 0.0 {
                theta = t;
            }
        }
        v.iter_mut().for_each(|x| *x = (*x - theta).max(0.0) + self.floor);
        let mut out = [0.0; 4];
        for (&o, &x) in self.support.iter().zip(&v) {
            out[o] = x;
        }
        let total: f64 = out.iter().sum();
        out.map(|x| x / total)
    }

    fn descend(&self, start: [f64; 4], max_iterations: usize) -> (f64, [f64; 4], bool, usize) {
        let mut q = self.project(start);
        let (mut value, mut grad) = self.value_and_grad(&q);
        let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let mut step = if gmax > 0.0 { 0.1 / gmax } else { 1.0 };
        for it in 0..max_iterations {
            let mut accepted = None;
            for _ in 0..60 {
                let trial = self.project(std::array::from_fn(|o| q[o] - step * grad[o]));
                let (tv, tg) = self.value_and_grad(&trial);
                let decrease: f64 = (0..4).map(|o| grad[o] * (q[o] - trial[o])).sum();
                if tv <= value - 1e-4 * decrease {
                    accepted = Some((trial, tv, tg));
                    break;
                }
                step *= 0.5;
            }
            let Some((trial, tv, tg)) = accepted else {
                return (value, q, true, it);
            };
            let moved = (0..4).fold(0.0f64, |m, o| m.max((trial[o] - q[o]).abs()));
            q = trial;
            value = tv;
            grad = tg;
            if moved < 1e-10 {
                return (value, q, true, it + 1);
            }
            step *= 2.0;
        }
        (value, q, false, max_iterations)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::copula::Copula;
    use crate::shocks::{build_joint, Marginals};

    fn pmf(q: [f64; 4]) -> StepShockModel {
        StepShockModel::from_pmf(q).unwrap()
    }

    #[test]
    fn kl_of_self_is_zero() {
        let q = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(kl_divergence(&q, &q).unwrap(), 0.0);
    }

    #[test]
    fn kl_binary_example() {
        let got = kl_divergence(&[0.75, 0.25], &[0.5, 0.5]).unwrap();
        let want = 0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln();
        assert!((got - want).abs() < 1e-15);
        assert!((got - 0.130812).abs() < 1e-6);
    }

    #[test]
    fn kl_infinite_is_distinct_error() {
        let err = kl_divergence(&[0.5, 0.5], &[1.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::InfiniteDivergence { atom: 1, .. }));
        // zero mass under q where q0 is zero is fine
        assert!(kl_divergence(&[1.0, 0.0], &[1.0, 0.0]).unwrap().abs() < 1e-15);
    }

    #[test]
    fn prior_weights_validated() {
        let m = pmf([0.25; 4]);
        let err = PriorSet::new(vec![m, m], vec![0.5, 0.6]).unwrap_err();
        assert!(err.to_string().contains("weights must sum to 1"));
        assert!(PriorSet::new(vec![m], vec![-0.0 - 1.0]).is_err());
        assert!(PriorSet::new(vec![], vec![]).is_err());
    }

    #[test]
    fn weighted_kl_single_and_identical_priors() {
        let q = [0.1, 0.2, 0.3, 0.4];
        let a = pmf([0.4, 0.3, 0.2, 0.1]);
        let single = PriorSet::single(a);
        assert_eq!(weighted_kl(&q, &single).unwrap(), kl_divergence(&q, a.pmf()).unwrap());
        let twin = PriorSet::new(vec![a, a], vec![0.3, 0.7]).unwrap();
        assert!((weighted_kl(&q, &twin).unwrap() - kl_divergence(&q, a.pmf()).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn weighted_kl_hand_sum() {
        let q = [0.25; 4];
        let a = pmf([0.4, 0.1, 0.1, 0.4]);
        let b = pmf([0.1, 0.4, 0.4, 0.1]);
        let set = PriorSet::new(vec![a, b], vec![0.5, 0.5]).unwrap();
        // both KLs equal by symmetry: Σ 0.25 ln(0.25/q_i)
        let each = 0.25 * (2.0 * (0.25f64 / 0.4).ln() + 2.0 * (0.25f64 / 0.1).ln());
        assert!((weighted_kl(&q, &set).unwrap() - each).abs() < 1e-15);
    }

    #[test]
    fn barycenter_binary_example() {
        // Embed the binary example in the first two atoms.
        let set = PriorSet::new(vec![pmf([0.5, 0.5, 0.0, 0.0]), pmf([0.9, 0.1, 0.0, 0.0])], vec![0.5, 0.5]).unwrap();
        let bary = barycenter(&set).unwrap();
        assert!((bary.pmf()[0] - 0.75).abs() < 1e-12);
        assert!((bary.pmf()[1] - 0.25).abs() < 1e-12);
        assert_eq!(bary.pmf()[2], 0.0);
    }

    #[test]
    fn barycenter_of_equal_priors_is_fixed_point() {
        let a = pmf([0.1, 0.2, 0.3, 0.4]);
        let set = PriorSet::new(vec![a, a, a], vec![0.2, 0.3, 0.5]).unwrap();
        let b = barycenter(&set).unwrap();
        assert!(b.pmf().iter().zip(a.pmf()).all(|(x, y)| (x - y).abs() < 1e-15));
    }

    #[test]
    fn zero_atoms_propagate_and_floor_removes_them() {
        let a = build_joint(Marginals::new(0.5, 0.6).unwrap(), Copula::FrechetLower).unwrap();
        let b = build_joint(Marginals::new(0.7, 0.5).unwrap(), Copula::Independence).unwrap();
        let set = PriorSet::new(vec![b, a], vec![0.6, 0.4]).unwrap();
        assert_eq!(a.pmf()[0], 0.0);
        assert_eq!(barycenter(&set).unwrap().pmf()[0], 0.0);
        let floored = set.floored(DEFAULT_PRIOR_FLOOR).unwrap();
        assert!(barycenter(&floored).unwrap().pmf()[0] > 0.0);
    }

    #[test]
    fn path_encoding_round_trip() {
        let path = [ShockRealization::BOTH, ShockRealization::NONE, ShockRealization::new(false, true)];
        let idx = encode_path(&path);
        let mut out = [ShockRealization::NONE; 3];
        decode_path(idx, &mut out);
        assert_eq!(out, path);
    }

    #[test]
    fn zero_kappa_tilt_is_product_barycenter() {
        let set = PriorSet::new(vec![pmf([0.1, 0.2, 0.3, 0.4]), pmf([0.4, 0.3, 0.2, 0.1])], vec![0.3, 0.7]).unwrap();
        let bary = barycenter(&set).unwrap();
        let tilted = tilted_path_model(&set, 0.0, 3, |p| p.iter().filter(|z| z.red).count() as f64).unwrap();
        let product = PathSpaceModel::iid_table(&bary, 3).unwrap();
        let (PathSpaceModel::Explicit { probs: a, .. }, PathSpaceModel::Explicit { probs: b, .. }) = (tilted, product) else {
            unreachable!()
        };
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-15));
    }

    #[test]
    fn constant_payoff_tilt_has_no_effect() {
        let set = PriorSet::single(pmf([0.1, 0.2, 0.3, 0.4]));
        let flat = PathTilter::new(&set, 3, |_| 7.5).unwrap();
        let p0 = flat.probabilities(0.0);
        let p9 = flat.probabilities(50.0);
        assert!(p0.iter().zip(&p9).all(|(x, y)| (x - y).abs() < 1e-14));
    }

    #[test]
    fn enumeration_limit() {
        let set = PriorSet::single(pmf([0.25; 4]));
        let err = tilted_path_model(&set, 1.0, 13, |_| 0.0).unwrap_err();
        assert!(matches!(err, Error::EnumerationTooLarge { n_steps: 13, .. }));
    }

    #[test]
    fn step_marginals_of_product_table() {
        let step = pmf([0.1, 0.2, 0.3, 0.4]);
        let table = PathSpaceModel::iid_table(&step, 3).unwrap();
        for k in 0..3 {
            let m = table.step_marginal(k);
            assert!(m.pmf().iter().zip(step.pmf()).all(|(a, b)| (a - b).abs() < 1e-12));
        }
        let avg = table.average_step_pmf();
        assert!(avg.pmf().iter().zip(step.pmf()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn explicit_sampling_hits_only_support() {
        let mut probs = vec![0.0; 16];
        probs[5] = 0.5;
        probs[10] = 0.5;
        let model = PathSpaceModel::explicit(2, probs).unwrap();
        let mut rng = substream(1, 2, 3);
        let mut buf = [ShockRealization::NONE; 2];
        for _ in 0..500 {
            model.sample_path(&mut rng, &mut buf);
            let idx = encode_path(&buf);
            assert!(idx == 5 || idx == 10);
        }
    }

    #[test]
    fn iid_kappa_zero_and_flat_payoff_give_barycenter() {
        let set = PriorSet::new(vec![pmf([0.1, 0.2, 0.3, 0.4]), pmf([0.4, 0.3, 0.2, 0.1])], vec![0.5, 0.5]).unwrap();
        let bary = barycenter(&set).unwrap();
        let zero = iid_worstcase_model(&set, 0.0, 4, |p| p.len() as f64, 2000, 1, IidSearchSettings::default()).unwrap();
        assert_eq!(zero.model, bary);
        let flat = iid_worstcase_model(&set, 5.0, 4, |_| 3.0, 2000, 1, IidSearchSettings::default()).unwrap();
        assert!(flat.model.pmf().iter().zip(bary.pmf()).all(|(a, b)| (a - b).abs() < 1e-6));
        let tiny = iid_worstcase_model(&set, 1e-9, 4, |p| p.iter().filter(|z| z.red).count() as f64, 2000, 1, IidSearchSettings::default())
            .unwrap();
        assert!(tiny.model.pmf().iter().zip(bary.pmf()).all(|(a, b)| (a - b).abs() < 1e-6));
    }

    #[test]
    fn iid_worst_case_is_deterministic() {
        let set = PriorSet::single(pmf([0.1, 0.2, 0.3, 0.4]));
        let pay = |p: &[ShockRealization]| p.iter().filter(|z| z.red).count() as f64;
        let a = iid_worstcase_model(&set, 0.5, 4, pay, 1500, 9, IidSearchSettings::default()).unwrap();
        let b = iid_worstcase_model(&set, 0.5, 4, pay, 1500, 9, IidSearchSettings::default()).unwrap();
        assert_eq!(a, b);
        // Mass moves towards paths with fewer red hits.
        assert!(a.model.marginals().p_red < 0.7);
    }

    #[test]
    fn iid_rejects_too_few_paths() {
        let set = PriorSet::single(pmf([0.25; 4]));
        assert!(iid_worstcase_model(&set, 1.0, 2, |_| 0.0, 10, 0, IidSearchSettings::default()).is_err());
    }
}
