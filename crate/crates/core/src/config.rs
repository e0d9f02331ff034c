//! Experiment configuration: the global config file schema, defaults and
//! validation.

use crate::bayes_linear::{FeatureMap, MonomialTerm};
use crate::causal_gp::LmcKernelParams;
use crate::data::{CsvSchema, DgpConfig, SiteParams};
use crate::mpc::EngineConfig;
use crate::privacy::{Accounting, DpStatistic};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Polynomial,
    CausalGp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    ClosedFull,
    ClosedCate,
    Nmc,
    Rb,
    NmcCate,
}

impl EstimatorKind {
    pub fn is_closed_form(self) -> bool {
        matches!(self, EstimatorKind::ClosedFull | EstimatorKind::ClosedCate)
    }

    pub fn targets_cate(self) -> bool {
        matches!(self, EstimatorKind::ClosedCate | EstimatorKind::NmcCate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrivacyMode {
    None,
    Mpc,
    Dp,
}

/// One feature-map term in the config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TermSpec {
    pub block: String,
    #[serde(default)]
    pub vars: Vec<usize>,
    #[serde(default)]
    pub powers: Vec<u32>,
}

/// Assemble a feature map from term specs, or the first-order default.
pub fn build_feature_map(terms: &[TermSpec], dim: usize) -> Result<FeatureMap, ConfigError> {
    if terms.is_empty() {
        return Ok(FeatureMap::first_order(dim));
    }
    let mut nc = Vec::new();
    let mut c = Vec::new();
    for spec in terms {
        if spec.vars.len() != spec.powers.len() {
            return Err(ConfigError::Invalid(format!(
                "term {spec:?}: vars and powers must have equal length"
            )));
        }
        if spec.vars.iter().any(|&v| v >= dim) {
            return Err(ConfigError::Invalid(format!(
                "term {spec:?}: covariate index out of range for dim {dim}"
            )));
        }
        let term = MonomialTerm { vars: spec.vars.clone(), powers: spec.powers.clone() };
        match spec.block.as_str() {
            "nc" => nc.push(term),
            "c" => c.push(term),
            other => {
                return Err(ConfigError::Invalid(format!("unknown block `{other}`")));
            }
        }
    }
    Ok(FeatureMap { nc_terms: nc, c_terms: c })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriorConfig {
    pub ridge_c: f64,
    pub sigma2: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig { ridge_c: 1.0, sigma2: 1.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpFitConfig {
    pub fit: bool,
    pub max_iters: usize,
    pub init: Option<LmcKernelParams>,
}

impl Default for GpFitConfig {
    fn default() -> Self {
        GpFitConfig { fit: true, max_iters: 1000, init: None }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NmcSamples {
    pub n_outer: usize,
    pub m1: usize,
    pub m2: Option<usize>,
}

impl Default for NmcSamples {
    fn default() -> Self {
        NmcSamples { n_outer: 400, m1: 800, m2: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanismKind {
    Laplace,
    Exponential,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrivacyConfig {
    pub epsilon: f64,
    pub m_clip: f64,
    pub accounting: Accounting,
    pub mechanism: MechanismKind,
    pub statistic: DpStatistic,
}

impl Default for PrivacyConfig {
    fn default() -> Self {
        PrivacyConfig {
            epsilon: 100.0,
            m_clip: 5.0,
            accounting: Accounting::PerRelease,
            mechanism: MechanismKind::Laplace,
            statistic: DpStatistic::CausalBlock,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceConfig {
    /// Synthetic source drawn from an explicit DGP.
    Synthetic { dgp: DgpConfig, n: usize },
    /// The bundled 747 x 24 surrogate.
    IhdpSurrogate,
    /// A user-supplied CSV in the documented schema.
    Csv { path: PathBuf, schema: Option<CsvSchema> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub k_values: Vec<usize>,
    /// Report root-PEHE instead of squared PEHE (labelled either way).
    pub root_pehe: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig { k_values: vec![1, 3, 5], root_pehe: false }
    }
}

fn default_holdout() -> usize {
    2000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub estimator: EstimatorKind,
    pub privacy: PrivacyMode,
    pub source: SourceConfig,
    pub sites: SiteParams,
    pub seed: u64,
    #[serde(default = "default_holdout")]
    pub holdout_size: usize,
    #[serde(default)]
    pub feature_map: Vec<TermSpec>,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub gp: GpFitConfig,
    #[serde(default)]
    pub nmc: NmcSamples,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub privacy_params: PrivacyConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

impl ExperimentConfig {
    /// The ranking experiment on the bundled surrogate, polynomial model.
    pub fn surrogate_default(seed: u64) -> Self {
        ExperimentConfig {
            model: ModelKind::Polynomial,
            estimator: EstimatorKind::ClosedCate,
            privacy: PrivacyMode::None,
            source: SourceConfig::IhdpSurrogate,
            sites: SiteParams {
                candidates: 10,
                host_size: 300,
                size_range: (300, 500),
                min_per_arm: 50,
            },
            seed,
            holdout_size: 2000,
            feature_map: vec![],
            prior: PriorConfig::default(),
            gp: GpFitConfig::default(),
            nmc: NmcSamples::default(),
            engine: EngineConfig::default(),
            privacy_params: PrivacyConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.model == ModelKind::CausalGp && !self.estimator.is_closed_form() {
            return Err(ConfigError::Invalid(
                "the GP model supports closed-form estimators only".into(),
            ));
        }
        if self.privacy == PrivacyMode::Mpc
            && (self.model != ModelKind::Polynomial || !self.estimator.is_closed_form())
        {
            return Err(ConfigError::Invalid(
                "the secure pipeline supports the polynomial closed forms only".into(),
            ));
        }
        if self.sites.size_range.0 > self.sites.size_range.1 {
            return Err(ConfigError::Invalid("empty candidate size range".into()));
        }
        if self.sites.candidates == 0 {
            return Err(ConfigError::Invalid("need at least one candidate site".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}
