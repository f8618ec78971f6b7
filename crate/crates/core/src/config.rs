//! Scenario configuration: a single JSON document shared by the CLI and the
//! HTTP API. Every field has a default; the defaults form the reference
//! scenario.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::aggregation::{PriorSet, DEFAULT_KAPPA_MAX, MAX_ENUMERATION_STEPS};
use crate::copula::Copula;
use crate::dynamics::{AttritionParams, BrackenExponents, BrackenParams, ForceState, TimeGrid};
use crate::error::{Error, FieldError, Result};
use crate::objective::{CombatProblem, DecisionPreferences, Simulator};
use crate::optimizer::OptimizerSettings;
use crate::shocks::{Marginals, StepShockModel};

const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Marginals and copula of one expert's per-step shock law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub p_blue: f64,
    pub p_red: f64,
    #[serde(default)]
    pub copula: Copula,
}

impl PriorSpec {
    pub fn model(&self) -> Result<StepShockModel> {
        StepShockModel::build_joint(Marginals::new(self.p_blue, self.p_red)?, self.copula)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AversionMode {
    /// `value` is the tilt `kappa`; 0 gives the barycenter.
    #[default]
    Tilt,
    /// `value` is the KL radius `eta`; `kappa` is calibrated to it.
    Radius,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Aversion {
    pub mode: AversionMode,
    pub value: f64,
    /// Upper end of the `kappa` search in radius mode.
    pub kappa_max: f64,
}

impl Default for Aversion {
    fn default() -> Self {
        Self {
            mode: AversionMode::Tilt,
            value: 1e-3,
            kappa_max: DEFAULT_KAPPA_MAX,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WorstCaseBackend {
    /// Enumerate when `n_steps <= 10`, otherwise i.i.d.
    #[default]
    Auto,
    /// Exact tilt over all `4^N` paths.
    Enumerate,
    /// Per-step law restricted to i.i.d. path measures.
    Iid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorstCaseSettings {
    pub backend: WorstCaseBackend,
    /// Paths used by the i.i.d. search.
    pub mc_paths: usize,
}

impl Default for WorstCaseSettings {
    fn default() -> Self {
        Self {
            backend: WorstCaseBackend::Auto,
            mc_paths: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub initial: ForceState,
    pub attrition: AttritionParams,
    pub grid: TimeGrid,
    pub priors: Vec<PriorSpec>,
    pub weights: Vec<f64>,
    /// Optional lower bound on every prior atom, applied before pooling.
    pub prior_floor: Option<f64>,
    pub aversion: Aversion,
    pub worst_case: WorstCaseSettings,
    pub preferences: DecisionPreferences,
    /// Allocation used by `simulate` and `aggregate`.
    pub pi: f64,
    /// Monte Carlo path count for simulation and non-enumerable objectives.
    pub paths: usize,
    pub simulator: Simulator,
    /// Clamp strengths at zero, making zero absorbing.
    pub absorb_at_zero: bool,
    pub bracken: BrackenExponents,
    pub optimizer: OptimizerSettings,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            initial: ForceState::default(),
            attrition: AttritionParams::default(),
            grid: TimeGrid::default(),
            priors: vec![
                PriorSpec {
                    p_blue: 0.7,
                    p_red: 0.5,
                    copula: Copula::Independence,
                },
                PriorSpec {
                    p_blue: 0.5,
                    p_red: 0.6,
                    copula: Copula::FrechetLower,
                },
            ],
            weights: vec![0.6, 0.4],
            prior_floor: None,
            aversion: Aversion::default(),
            worst_case: WorstCaseSettings::default(),
            preferences: DecisionPreferences::default(),
            pi: 0.5,
            paths: 10_000,
            simulator: Simulator::Exact,
            absorb_at_zero: true,
            bracken: BrackenExponents::default(),
            optimizer: OptimizerSettings::default(),
            seed: 42,
        }
    }
}

/// Parses and validates a scenario document. Missing fields take their
/// defaults; unknown or duplicate fields are rejected.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    if !text.trim_start().starts_with('{') {
        return Err(Error::Config(vec![FieldError::new("document", "must be a JSON object")]));
    }
    let config: ScenarioConfig = serde_json::from_str(text).map_err(schema_error)?;
    config.validate()?;
    Ok(config)
}

/// Applies a JSON object of overrides on top of `base`, then validates.
pub fn apply_overrides(base: &ScenarioConfig, overrides: &Value) -> Result<ScenarioConfig> {
    let mut merged = serde_json::to_value(base).map_err(|e| Error::Parse(e.to_string()))?;
    match overrides {
        Value::Null => {}
        Value::Object(_) => merge(&mut merged, overrides),
        _ => return Err(Error::Config(vec![FieldError::new("scenario", "must be a JSON object")])),
    }
    let config: ScenarioConfig = serde_json::from_value(merged).map_err(schema_error)?;
    config.validate()?;
    Ok(config)
}

fn merge(target: &mut Value, patch: &Value) {
    match (target, patch) {
        (Value::Object(t), Value::Object(p)) => {
            for (key, value) in p {
                match t.get_mut(key) {
                    Some(slot) if slot.is_object() && value.is_object() => merge(slot, value),
                    _ => {
                        t.insert(key.clone(), value.clone());
                    }
                }
            }
        }
        (t, p) => *t = p.clone(),
    }
}

fn schema_error(e: serde_json::Error) -> Error {
    let message = e.to_string();
    let field = field_from_message(&message).unwrap_or("document").to_string();
    Error::Config(vec![FieldError::new(field, message)])
}

fn field_from_message(message: &str) -> Option<&str> {
    let start = message.find('`')? + 1;
    let len = message[start..].find('`')?;
    Some(&message[start..start + len])
}

struct Checker(Vec<FieldError>);

impl Checker {
    fn check(&mut self, ok: bool, field: impl Into<String>, message: impl Into<String>) {
        if !ok {
            self.0.push(FieldError::new(field, message));
        }
    }

    fn non_negative(&mut self, field: &str, x: f64) {
        self.check(x.is_finite() && x >= 0.0, field, format!("must be finite and >= 0, got {x}"));
    }

    fn positive(&mut self, field: &str, x: f64) {
        self.check(x.is_finite() && x > 0.0, field, format!("must be finite and > 0, got {x}"));
    }

    fn unit(&mut self, field: &str, x: f64) {
        self.check((0.0..=1.0).contains(&x), field, format!("must lie in [0, 1], got {x}"));
    }

    fn simplex(&mut self, field: &str, xs: &[f64]) {
        for (i, &x) in xs.iter().enumerate() {
            self.non_negative(&format!("{field}[{i}]"), x);
        }
        let total: f64 = xs.iter().sum();
        self.check(
            (total - 1.0).abs() <= SIMPLEX_TOLERANCE,
            field,
            format!("{field} must sum to 1, got {total}"),
        );
    }
}

impl ScenarioConfig {
    /// Re-validates every component; reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut c = Checker(Vec::new());
        c.non_negative("initial.blue", self.initial.blue);
        c.non_negative("initial.red", self.initial.red);
        c.non_negative("attrition.red_rate", self.attrition.red_rate);
        c.non_negative("attrition.blue_rate", self.attrition.blue_rate);
        c.positive("grid.dt", self.grid.dt);
        c.check(self.grid.n_steps >= 1, "grid.n_steps", "must be at least 1");

        c.check(!self.priors.is_empty(), "priors", "at least one prior is required");
        for (i, prior) in self.priors.iter().enumerate() {
            c.unit(&format!("priors[{i}].p_blue"), prior.p_blue);
            c.unit(&format!("priors[{i}].p_red"), prior.p_red);
            if let Err(e) = prior.copula.validate() {
                c.check(false, format!("priors[{i}].copula"), e.to_string());
            }
        }
        c.check(
            self.weights.len() == self.priors.len(),
            "weights",
            format!("expected {} weights (one per prior), got {}", self.priors.len(), self.weights.len()),
        );
        c.simplex("weights", &self.weights);
        if let Some(eps) = self.prior_floor {
            c.check(eps > 0.0 && eps < 0.25, "prior_floor", format!("must lie in (0, 0.25), got {eps}"));
        }

        c.non_negative("aversion.value", self.aversion.value);
        c.positive("aversion.kappa_max", self.aversion.kappa_max);
        c.check(
            self.worst_case.mc_paths >= 1000,
            "worst_case.mc_paths",
            format!("at least 1000 paths are required, got {}", self.worst_case.mc_paths),
        );
        if self.worst_case.backend == WorstCaseBackend::Enumerate {
            c.check(
                self.grid.n_steps <= MAX_ENUMERATION_STEPS,
                "worst_case.backend",
                format!("enumeration supports at most {MAX_ENUMERATION_STEPS} steps"),
            );
        }

        c.simplex("preferences.theta", &self.preferences.theta);
        c.non_negative("preferences.zeta", self.preferences.zeta);
        c.check(
            self.preferences.b_min.is_finite() && self.preferences.b_min <= self.initial.blue,
            "preferences.b_min",
            format!("must not exceed initial.blue ({}), got {}", self.initial.blue, self.preferences.b_min),
        );

        c.unit("pi", self.pi);
        c.check(self.paths >= 1, "paths", "must be at least 1");
        c.positive("bracken.p", self.bracken.p);
        c.non_negative("bracken.q", self.bracken.q);
        self.optimizer.check(&mut |ok, field, message| c.check(ok, format!("optimizer.{field}"), message));

        if c.0.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(c.0))
        }
    }

    pub fn problem(&self) -> CombatProblem {
        CombatProblem {
            initial: self.initial,
            attrition: self.attrition,
            grid: self.grid,
            preferences: self.preferences,
            clamp: self.absorb_at_zero,
        }
    }

    pub fn bracken_params(&self) -> BrackenParams {
        BrackenParams {
            exponents: self.bracken,
            attrition: self.attrition,
        }
    }

    /// Prior set built from the expert specifications, floored if requested.
    pub fn prior_set(&self) -> Result<PriorSet> {
        let models = self.priors.iter().map(PriorSpec::model).collect::<Result<Vec<_>>>()?;
        let set = PriorSet::new(models, self.weights.clone())?;
        match self.prior_floor {
            Some(eps) => set.floored(eps),
            None => Ok(set),
        }
    }

    /// SHA-256 of the compact JSON serialization, as lowercase hex.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}
