//! Discrete-time aimed-fire dynamics and the deterministic baselines.
//!
//! States are column vectors `(B, R)`; step matrices act on the left in
//! chronological order. One step of the stochastic model is
//!
//! ```text
//! B' = B - r * z_R * R * dt
//! R' = R - pi * b * z_B * B * dt
//! ```
//!
//! evaluated from the same pre-step state, followed by clamping at zero.

use std::ops::{Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Blue and red strengths at one time step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForceState {
    pub blue: f64,
    pub red: f64,
}

impl ForceState {
    pub const fn new(blue: f64, red: f64) -> Self {
        Self { blue, red }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.blue.is_finite() && self.blue >= 0.0) {
            return Err(Error::param("blue", format!("strength must be finite and >= 0, got {}", self.blue)));
        }
        if !(self.red.is_finite() && self.red >= 0.0) {
            return Err(Error::param("red", format!("strength must be finite and >= 0, got {}", self.red)));
        }
        Ok(())
    }

    fn clamped(self) -> (Self, bool) {
        let blue = self.blue.max(0.0);
        let red = self.red.max(0.0);
        let hit = blue != self.blue || red != self.red;
        (Self { blue, red }, hit)
    }
}

impl Default for ForceState {
    fn default() -> Self {
        Self::new(100.0, 80.0)
    }
}

/// Attrition coefficients: `red_rate` (r) is red's kill rate against blue,
/// `blue_rate` (b) is blue's kill rate against red.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttritionParams {
    pub red_rate: f64,
    pub blue_rate: f64,
}

impl AttritionParams {
    pub fn new(red_rate: f64, blue_rate: f64) -> Result<Self> {
        let params = Self { red_rate, blue_rate };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.red_rate.is_finite() && self.red_rate >= 0.0) {
            return Err(Error::param("red_rate", format!("must be finite and >= 0, got {}", self.red_rate)));
        }
        if !(self.blue_rate.is_finite() && self.blue_rate >= 0.0) {
            return Err(Error::param("blue_rate", format!("must be finite and >= 0, got {}", self.blue_rate)));
        }
        Ok(())
    }
}

impl Default for AttritionParams {
    fn default() -> Self {
        Self {
            red_rate: 0.08,
            blue_rate: 0.10,
        }
    }
}

/// Uniform time grid with `n_steps` steps of length `dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeGrid {
    pub dt: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(dt: f64, n_steps: usize) -> Result<Self> {
        let grid = Self { dt, n_steps };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::param("dt", format!("must be finite and > 0, got {}", self.dt)));
        }
        if self.n_steps == 0 {
            return Err(Error::param("n_steps", "must be at least 1"));
        }
        Ok(())
    }

    /// Horizon `T = n_steps * dt`.
    pub fn horizon(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|k| self.time(k)).collect()
    }
}

impl Default for TimeGrid {
    fn default() -> Self {
        Self { dt: 1.0, n_steps: 6 }
    }
}

/// One realization of the Bernoulli shock pair `(z_B, z_R)`.
///
/// `blue` is whether blue's attrition against red realizes in this step,
/// `red` whether red's attrition against blue does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ShockRealization {
    pub blue: bool,
    pub red: bool,
}

impl ShockRealization {
    pub const NONE: Self = Self { blue: false, red: false };
    pub const BOTH: Self = Self { blue: true, red: true };

    /// All four outcomes in pmf order `(0,0), (1,0), (0,1), (1,1)`.
    pub const ALL: [Self; 4] = [
        Self { blue: false, red: false },
        Self { blue: true, red: false },
        Self { blue: false, red: true },
        Self { blue: true, red: true },
    ];

    pub const fn new(blue: bool, red: bool) -> Self {
        Self { blue, red }
    }

    /// Position of this outcome in a four-atom pmf: `z_B + 2 z_R`.
    pub const fn index(self) -> usize {
        self.blue as usize + 2 * self.red as usize
    }

    pub const fn from_index(index: usize) -> Self {
        Self {
            blue: index & 1 == 1,
            red: index & 2 == 2,
        }
    }

    fn blue_indicator(self) -> f64 {
        if self.blue { 1.0 } else { 0.0 }
    }

    fn red_indicator(self) -> f64 {
        if self.red { 1.0 } else { 0.0 }
    }
}

/// A simulated path of force states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<ForceState>,
    pub times: Vec<f64>,
    pub allocation: f64,
    /// Number of steps in which clamping at zero changed the state.
    pub clamp_events: usize,
}

impl Trajectory {
    pub fn terminal(&self) -> ForceState {
        *self.states.last().expect("trajectory always holds the initial state")
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// 2x2 transition `M(z) = I + A(z)` acting on `(B, R)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMatrix(pub [[f64; 2]; 2]);

impl StepMatrix {
    pub const IDENTITY: Self = Self([[1.0, 0.0], [0.0, 1.0]]);

    pub fn apply(&self, state: ForceState) -> ForceState {
        let m = &self.0;
        ForceState {
            blue: m[0][0] * state.blue + m[0][1] * state.red,
            red: m[1][0] * state.blue + m[1][1] * state.red,
        }
    }

    /// `self * rhs`, i.e. apply `rhs` first.
    pub fn compose(&self, rhs: &StepMatrix) -> StepMatrix {
        let a = &self.0;
        let b = &rhs.0;
        let mut out = [[0.0; 2]; 2];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        StepMatrix(out)
    }
}

fn check_step_inputs(params: &AttritionParams, pi: f64, dt: f64) -> Result<()> {
    params.validate()?;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::param("dt", format!("must be finite and > 0, got {dt}")));
    }
    if !(0.0..=1.0).contains(&pi) {
        return Err(Error::param("pi", format!("allocation must lie in [0, 1], got {pi}")));
    }
    Ok(())
}

/// Linear (unclamped) step, generic so the same arithmetic serves real and
/// complex-step evaluation.
#[inline]
pub(crate) fn linear_step<T>(blue: T, red: T, params: &AttritionParams, pi: T, z: ShockRealization, dt: f64) -> (T, T)
where
    T: Copy + Sub<Output = T> + Mul<Output = T> + Mul<f64, Output = T>,
{
    let blue_next = blue - red * (params.red_rate * z.red_indicator() * dt);
    let red_next = red - pi * blue * (params.blue_rate * z.blue_indicator() * dt);
    (blue_next, red_next)
}

#[inline]
pub(crate) fn step_unchecked(
    state: ForceState,
    params: &AttritionParams,
    pi: f64,
    z: ShockRealization,
    dt: f64,
    clamp: bool,
) -> (ForceState, bool) {
    let (blue, red) = linear_step(state.blue, state.red, params, pi, z, dt);
    let next = ForceState { blue, red };
    if clamp {
        next.clamped()
    } else {
        (next, false)
    }
}

/// One step of the stochastic aimed-fire recursion, clamped at zero.
pub fn step_stochastic(
    state: ForceState,
    params: &AttritionParams,
    pi: f64,
    z: ShockRealization,
    dt: f64,
) -> Result<ForceState> {
    check_step_inputs(params, pi, dt)?;
    state.validate()?;
    Ok(step_unchecked(state, params, pi, z, dt, true).0)
}

/// The step transition matrix `I + A(z)`.
pub fn build_step_matrix(params: &AttritionParams, pi: f64, z: ShockRealization, dt: f64) -> Result<StepMatrix> {
    check_step_inputs(params, pi, dt)?;
    let off_blue = -(params.red_rate * z.red_indicator() * dt);
    let off_red = -(pi * (params.blue_rate * z.blue_indicator() * dt));
    Ok(StepMatrix([[1.0, off_blue], [off_red, 1.0]]))
}

/// Iterates [`step_stochastic`] over a shock sequence.
///
/// With `clamp = false` the raw linear recursion is used and strengths may go
/// negative; this equals the ordered matrix product of the step matrices.
pub fn propagate_path(
    x0: ForceState,
    params: &AttritionParams,
    pi: f64,
    shocks: &[ShockRealization],
    grid: &TimeGrid,
    clamp: bool,
) -> Result<Trajectory> {
    grid.validate()?;
    check_step_inputs(params, pi, grid.dt)?;
    x0.validate()?;
    if shocks.len() != grid.n_steps {
        return Err(Error::LengthMismatch {
            expected: grid.n_steps,
            actual: shocks.len(),
        });
    }
    Ok(propagate_unchecked(x0, params, pi, shocks, grid, clamp))
}

pub(crate) fn propagate_unchecked(
    x0: ForceState,
    params: &AttritionParams,
    pi: f64,
    shocks: &[ShockRealization],
    grid: &TimeGrid,
    clamp: bool,
) -> Trajectory {
    let mut states = Vec::with_capacity(shocks.len() + 1);
    states.push(x0);
    let mut state = x0;
    let mut clamp_events = 0;
    for &z in shocks {
        let (next, hit) = step_unchecked(state, params, pi, z, grid.dt, clamp);
        clamp_events += hit as usize;
        state = next;
        states.push(state);
    }
    Trajectory {
        states,
        times: grid.times(),
        allocation: pi,
        clamp_events,
    }
}

/// Terminal state only; avoids allocating the trajectory.
#[inline]
pub(crate) fn terminal_state(
    x0: ForceState,
    params: &AttritionParams,
    pi: f64,
    shocks: &[ShockRealization],
    dt: f64,
    clamp: bool,
) -> (ForceState, bool) {
    let mut state = x0;
    let mut any_clamp = false;
    for &z in shocks {
        let (next, hit) = step_unchecked(state, params, pi, z, dt, clamp);
        any_clamp |= hit;
        state = next;
    }
    (state, any_clamp)
}

/// Exponents of the Bracken generalization `dB = -r R^p B^q dt`,
/// `dR = -b B^p R^q dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BrackenExponents {
    pub p: f64,
    pub q: f64,
}

impl BrackenExponents {
    pub fn validate(&self) -> Result<()> {
        if !(self.p.is_finite() && self.p > 0.0) {
            return Err(Error::param("p", format!("exponent must be > 0, got {}", self.p)));
        }
        if !(self.q.is_finite() && self.q >= 0.0) {
            return Err(Error::param("q", format!("exponent must be >= 0, got {}", self.q)));
        }
        Ok(())
    }
}

impl Default for BrackenExponents {
    fn default() -> Self {
        Self { p: 0.5, q: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrackenParams {
    pub exponents: BrackenExponents,
    pub attrition: AttritionParams,
}

/// Forward-Euler trajectory of the deterministic aimed-fire model.
pub fn simulate_classic_lanchester(x0: ForceState, params: &AttritionParams, grid: &TimeGrid) -> Result<Trajectory> {
    params.validate()?;
    grid.validate()?;
    x0.validate()?;
    let mut states = Vec::with_capacity(grid.n_steps + 1);
    states.push(x0);
    let mut state = x0;
    let mut clamp_events = 0;
    for _ in 0..grid.n_steps {
        let next = ForceState {
            blue: state.blue - params.red_rate * state.red * grid.dt,
            red: state.red - params.blue_rate * state.blue * grid.dt,
        };
        let (next, hit) = next.clamped();
        clamp_events += hit as usize;
        state = next;
        states.push(state);
    }
    Ok(Trajectory {
        states,
        times: grid.times(),
        allocation: 1.0,
        clamp_events,
    })
}

/// Closed-form solution of the deterministic aimed-fire model, valid until
/// one side reaches zero. Requires both rates to be positive.
pub fn classic_closed_form(x0: ForceState, params: &AttritionParams, t: f64) -> Result<ForceState> {
    params.validate()?;
    if params.red_rate <= 0.0 || params.blue_rate <= 0.0 {
        return Err(Error::param("attrition", "closed form needs positive rates"));
    }
    let (r, b) = (params.red_rate, params.blue_rate);
    let gamma = (r * b).sqrt();
    let (c, s) = ((gamma * t).cosh(), (gamma * t).sinh());
    Ok(ForceState {
        blue: x0.blue * c - x0.red * (r / b).sqrt() * s,
        red: x0.red * c - x0.blue * (b / r).sqrt() * s,
    })
}

/// Square-law invariant `b B^2 - r R^2`, conserved by the exact solution.
pub fn square_law_invariant(state: ForceState, params: &AttritionParams) -> f64 {
    params.blue_rate * state.blue * state.blue - params.red_rate * state.red * state.red
}

/// Forward-Euler trajectory of the Bracken model.
pub fn simulate_bracken(x0: ForceState, bracken: &BrackenParams, grid: &TimeGrid) -> Result<Trajectory> {
    bracken.exponents.validate()?;
    bracken.attrition.validate()?;
    grid.validate()?;
    x0.validate()?;
    let BrackenExponents { p, q } = bracken.exponents;
    let AttritionParams { red_rate, blue_rate } = bracken.attrition;
    let mut states = Vec::with_capacity(grid.n_steps + 1);
    states.push(x0);
    let mut state = x0;
    let mut clamp_events = 0;
    for _ in 0..grid.n_steps {
        let next = ForceState {
            blue: state.blue - red_rate * state.red.powf(p) * state.blue.powf(q) * grid.dt,
            red: state.red - blue_rate * state.blue.powf(p) * state.red.powf(q) * grid.dt,
        };
        let (next, hit) = next.clamped();
        clamp_events += hit as usize;
        state = next;
        states.push(state);
    }
    Ok(Trajectory {
        states,
        times: grid.times(),
        allocation: 1.0,
        clamp_events,
    })
}
