//! Synthetic device categories and experiment settings.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::market::SyntheticMarket;
use crate::user_flex::{ContextKey, OfflineFit, RejectionTarget};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: f64,
    pub std: f64,
}

/// True flexibility rate, either shared by all contexts or one per context
/// in [`ContextKey::index`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaSpec {
    Constant(f64),
    PerContext(Vec<f64>),
}

impl LambdaSpec {
    pub fn get(&self, ctx: ContextKey) -> f64 {
        match self {
            LambdaSpec::Constant(l) => *l,
            LambdaSpec::PerContext(v) => v[ctx.index()],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let values: &[f64] = match self {
            LambdaSpec::Constant(l) => std::slice::from_ref(l),
            LambdaSpec::PerContext(v) if v.len() == 8 => v,
            LambdaSpec::PerContext(v) => {
                return Err(Error::Config(format!("lambda_true needs 8 per-context values, got {}", v.len())))
            }
        };
        if values.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return Err(Error::Config("lambda_true values must be > 0".into()));
        }
        Ok(())
    }
}

/// One synthetic household device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDeviceConfig {
    pub category: String,
    /// Probability of an operation on each weekday, Monday first.
    pub activation: [f64; 7],
    /// Ready-hour mixture over `[0, 23]`.
    pub ready_hours: Vec<MixtureComponent>,
    /// Optional mixture used on Saturdays and Sundays instead.
    #[serde(default)]
    pub weekend_ready_hours: Option<Vec<MixtureComponent>>,
    pub lambda_true: LambdaSpec,
    /// Hourly energy of one operation, kWh.
    pub signature: Vec<f64>,
    /// Probabilities of a duration change of -1, 0 and +1 hours.
    pub jitter: [f64; 3],
}

fn check_mixture(name: &str, mix: &[MixtureComponent]) -> Result<()> {
    if mix.is_empty() || mix.len() > 3 {
        return Err(Error::Config(format!("{name}: mixture needs 1 to 3 components")));
    }
    let total: f64 = mix.iter().map(|c| c.weight).sum();
    if (total - 1.0).abs() > 1e-9 || mix.iter().any(|c| c.weight < 0.0 || c.std < 0.0) {
        return Err(Error::Config(format!("{name}: mixture weights must be >= 0 and sum to 1")));
    }
    Ok(())
}

impl SyntheticDeviceConfig {
    pub fn validate(&self) -> Result<()> {
        let name = &self.category;
        if self.activation.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config(format!("{name}: activation probabilities must lie in [0, 1]")));
        }
        check_mixture(name, &self.ready_hours)?;
        if let Some(w) = &self.weekend_ready_hours {
            check_mixture(name, w)?;
        }
        self.lambda_true.validate()?;
        if self.signature.is_empty() || self.signature.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::Config(format!("{name}: signature must be non-empty and positive")));
        }
        if (self.jitter.iter().sum::<f64>() - 1.0).abs() > 1e-9 || self.jitter.iter().any(|p| *p < 0.0) {
            return Err(Error::Config(format!("{name}: jitter probabilities must sum to 1")));
        }
        Ok(())
    }
}

const BUILTIN: &str = include_str!("../../configs/categories.json");

/// The thirteen shipped household categories.
pub fn builtin_categories() -> Vec<SyntheticDeviceConfig> {
    let cats: Vec<SyntheticDeviceConfig> = serde_json::from_str(BUILTIN).expect("shipped categories parse");
    cats
}

pub fn builtin_category(name: &str) -> Option<SyntheticDeviceConfig> {
    builtin_categories().into_iter().find(|c| c.category == name)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    Deadline,
    Stochastic,
    #[default]
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReinitPolicy {
    Never,
    #[default]
    Season,
    Month,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AcceptanceKind {
    /// Every proposal is assumed accepted.
    Uniform,
    /// Exponential survival model learned online with base rate `mu0`.
    Adaptive { mu0: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OfferKind {
    #[default]
    Probabilistic,
    Standard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Activity and times come from the forecast models.
    #[default]
    Predicted,
    /// The actual operation day and ready hour are known.
    Ideal,
}

/// Everything that shapes one prequential run besides data and market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub acceptance: AcceptanceKind,
    pub offer: OfferKind,
    pub scenario: Scenario,
    /// Fixed offer flexibility in hours: every latest start becomes the
    /// earliest start plus this many hours, replacing the forecast latest end.
    pub manual_flex: Option<u32>,
    pub oracle: OracleMode,
    pub train_fraction: f64,
    pub alpha: f64,
    pub window_days: Option<u32>,
    pub offline: OfflineFit,
    pub rejection_target: RejectionTarget,
    pub reinit: ReinitPolicy,
    /// Seed of the simulated user's random choices.
    pub oracle_seed: u64,
    /// Keep the per-interval candidate tables in proposal records.
    pub detailed: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            acceptance: AcceptanceKind::Adaptive { mu0: 0.08 },
            offer: OfferKind::Probabilistic,
            scenario: Scenario::Predicted,
            manual_flex: None,
            oracle: OracleMode::Both,
            train_fraction: 0.8,
            alpha: 1.0,
            window_days: None,
            offline: OfflineFit::default(),
            rejection_target: RejectionTarget::default(),
            reinit: ReinitPolicy::Season,
            oracle_seed: 0,
            detailed: false,
        }
    }
}

/// Where device data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    /// Built-in categories, optionally restricted by name.
    Builtin {
        #[serde(default)]
        categories: Option<Vec<String>>,
    },
    /// Inline synthetic device configurations.
    Synthetic { devices: Vec<SyntheticDeviceConfig> },
    /// A measured load CSV (`timestamp,kwh`).
    Csv {
        path: String,
        device_id: String,
        #[serde(default)]
        lambda_true: Option<LambdaSpec>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MarketSource {
    Synthetic {
        #[serde(default)]
        params: Option<SyntheticMarket>,
    },
    /// Market CSV (`timestamp,spot,up_price,down_price,reg_volume`).
    Csv { path: String },
}

fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2017, 1, 1).expect("valid date")
}
fn default_days() -> u32 {
    365
}
fn default_shuffles() -> u32 {
    10
}
fn default_mu_grid() -> Vec<f64> {
    vec![0.04, 0.08, 0.16]
}
fn default_flex_grid() -> Vec<u32> {
    (0..=22).collect()
}
fn default_mu0() -> f64 {
    0.08
}
fn default_train_fraction() -> f64 {
    0.8
}
fn default_alpha() -> f64 {
    1.0
}
fn default_seed() -> u64 {
    42
}
fn default_acceptance() -> String {
    "adaptive".into()
}

/// Experiment configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_start")]
    pub start_date: NaiveDate,
    #[serde(default = "default_days")]
    pub n_days: u32,
    pub dataset: DatasetSource,
    pub market: MarketSource,
    #[serde(default)]
    pub oracle: OracleMode,
    /// `adaptive` or `uniform`, for `simulate`.
    #[serde(default = "default_acceptance")]
    pub acceptance: String,
    #[serde(default = "default_mu0")]
    pub mu0: f64,
    #[serde(default = "default_mu_grid")]
    pub mu_grid: Vec<f64>,
    #[serde(default = "default_flex_grid")]
    pub flex_grid: Vec<u32>,
    #[serde(default = "default_shuffles")]
    pub shuffles: u32,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub offer: OfferKind,
    #[serde(default)]
    pub scenario: Scenario,
    #[serde(default)]
    pub manual_flex: Option<u32>,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub window_days: Option<u32>,
    #[serde(default)]
    pub offline: OfflineFit,
    #[serde(default)]
    pub rejection_target: RejectionTarget,
    #[serde(default)]
    pub reinit: ReinitPolicy,
    #[serde(default)]
    pub reg_skip_first_hour: bool,
    #[serde(default)]
    pub on_threshold: Option<f64>,
    #[serde(default)]
    pub idle_gap: Option<u32>,
}

impl ExperimentConfig {
    /// Built-in suite on a synthetic market.
    pub fn builtin(seed: u64) -> Self {
        serde_json::from_value(serde_json::json!({
            "dataset": {"kind": "builtin"},
            "market": {"kind": "synthetic"},
            "seed": seed,
        }))
        .expect("default config parses")
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_days < 30 {
            return Err(Error::Config(format!("dataset must span >= 30 days, got {}", self.n_days)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config("train_fraction must lie in (0, 1)".into()));
        }
        if self.shuffles == 0 {
            return Err(Error::Config("shuffles must be >= 1".into()));
        }
        if !(self.mu0 > 0.0) || self.mu_grid.iter().any(|m| !(*m > 0.0)) {
            return Err(Error::Config("learning rates must be > 0".into()));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Config("alpha must be > 0".into()));
        }
        if self.acceptance != "adaptive" && self.acceptance != "uniform" {
            return Err(Error::Config(format!("acceptance must be `adaptive` or `uniform`, got `{}`", self.acceptance)));
        }
        match &self.dataset {
            DatasetSource::Synthetic { devices } => {
                for d in devices {
                    d.validate()?;
                }
            }
            DatasetSource::Builtin { categories: Some(names) } => {
                for n in names {
                    if builtin_category(n).is_none() {
                        return Err(Error::Config(format!("unknown built-in category `{n}`")));
                    }
                }
            }
            DatasetSource::Csv { lambda_true, .. } => {
                if let Some(l) = lambda_true {
                    l.validate()?;
                } else if self.oracle != OracleMode::Deadline {
                    return Err(Error::Config("stochastic oracle on measured data needs lambda_true".into()));
                }
            }
            DatasetSource::Builtin { categories: None } => {}
        }
        Ok(())
    }

    pub fn acceptance_kind(&self) -> AcceptanceKind {
        if self.acceptance == "uniform" {
            AcceptanceKind::Uniform
        } else {
            AcceptanceKind::Adaptive { mu0: self.mu0 }
        }
    }

    /// Run settings for this config with the given oracle seed.
    pub fn run_settings(&self, oracle_seed: u64) -> RunSettings {
        RunSettings {
            acceptance: self.acceptance_kind(),
            offer: self.offer,
            scenario: self.scenario,
            manual_flex: self.manual_flex,
            oracle: self.oracle,
            train_fraction: self.train_fraction,
            alpha: self.alpha,
            window_days: self.window_days,
            offline: self.offline,
            rejection_target: self.rejection_target,
            reinit: self.reinit,
            oracle_seed,
            detailed: false,
        }
    }
}
