//! On-disk run configuration and fit metadata.
//!
//! The configuration is TOML with every field optional; missing fields
//! fall back to the library defaults. Unknown keys are rejected so a typo
//! cannot silently configure nothing.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use pimix::dist::AftFamily;
use pimix::gibbs::SamplerConfig;
use pimix::model::{KappaPrior, ModelSpec, PriorConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Read(#[from] std::io::Error),
    #[error("config does not parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{0}")]
    Invalid(String),
}

fn invalid<S: Into<String>>(message: S) -> ConfigError {
    ConfigError::Invalid(message.into())
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// One of weibull, loglogistic, lognormal, exponential.
    pub family: Option<String>,
    /// Covariate columns of the incidence part; inferred from the header
    /// when absent. Set both column lists or neither.
    pub x_cols: Option<Vec<String>>,
    pub w_cols: Option<Vec<String>>,
    pub prior: PriorSection,
    pub sampler: SamplerSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorSection {
    /// Prior variance of each incidence coefficient.
    pub tau_x: Option<f64>,
    /// Prior variance of each prevalence coefficient.
    pub tau_w: Option<f64>,
    /// Variance of the half-normal prior on the scale.
    pub lambda: Option<f64>,
    pub kappa: Option<KappaSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KappaSection {
    /// One of uniform, beta, point.
    #[serde(rename = "type")]
    pub kind: String,
    pub alpha1: Option<f64>,
    pub alpha2: Option<f64>,
    pub kappa0: Option<f64>,
}

impl KappaSection {
    fn to_prior(&self) -> Result<KappaPrior, ConfigError> {
        let shapes = self.alpha1.is_some() || self.alpha2.is_some();
        match self.kind.as_str() {
            "uniform" => {
                if shapes || self.kappa0.is_some() {
                    return Err(invalid("the uniform kappa prior takes no extra fields"));
                }
                Ok(KappaPrior::Uniform)
            }
            "beta" => {
                if self.kappa0.is_some() {
                    return Err(invalid("kappa0 only applies to the point prior"));
                }
                let alpha1 =
                    self.alpha1.ok_or_else(|| invalid("the beta kappa prior needs alpha1"))?;
                let alpha2 =
                    self.alpha2.ok_or_else(|| invalid("the beta kappa prior needs alpha2"))?;
                Ok(KappaPrior::Beta { alpha1, alpha2 })
            }
            "point" => {
                if shapes {
                    return Err(invalid("alpha shapes only apply to the beta prior"));
                }
                let value =
                    self.kappa0.ok_or_else(|| invalid("the point kappa prior needs kappa0"))?;
                Ok(KappaPrior::Point { value })
            }
            other => Err(invalid(format!(
                "unknown kappa prior type {other:?}; use uniform, beta or point"
            ))),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    pub chains: Option<usize>,
    pub max_iters: Option<usize>,
    pub check_every: Option<usize>,
    pub thin: Option<usize>,
    pub seed: Option<u64>,
    pub rhat_threshold: Option<f64>,
    pub min_ess: Option<f64>,
    /// Update subjects within a sweep in parallel. Off by default so a
    /// fixed seed reproduces draws byte for byte.
    pub parallel_units: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: Option<String>,
    /// File stem of the fit artifacts.
    pub prefix: Option<String>,
}

/// A validated configuration turned into library types.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub spec: ModelSpec,
    pub sampler: SamplerConfig,
    pub x_cols: Option<Vec<String>>,
    pub w_cols: Option<Vec<String>>,
    pub out_dir: Option<String>,
    pub prefix: String,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Ok(toml::from_str(&text)?)
    }

    pub fn resolve(&self) -> Result<ResolvedConfig, ConfigError> {
        let family = match &self.family {
            Some(name) => AftFamily::parse(name).ok_or_else(|| {
                invalid(format!(
                    "unknown family {name:?}; use weibull, loglogistic, lognormal or exponential"
                ))
            })?,
            None => AftFamily::Weibull,
        };
        let mut prior = PriorConfig::default();
        if let Some(v) = self.prior.tau_x {
            prior.tau_x = v;
        }
        if let Some(v) = self.prior.tau_w {
            prior.tau_w = v;
        }
        if let Some(v) = self.prior.lambda {
            prior.lambda = v;
        }
        if let Some(kappa) = &self.prior.kappa {
            prior.kappa = kappa.to_prior()?;
        }
        let spec = ModelSpec::new(family, prior).map_err(|e| invalid(e.to_string()))?;

        let mut sampler = SamplerConfig::default();
        if let Some(v) = self.sampler.chains {
            sampler.n_chains = v;
        }
        if let Some(v) = self.sampler.max_iters {
            sampler.max_iters = v;
        }
        if let Some(v) = self.sampler.check_every {
            sampler.check_every = v;
        }
        if let Some(v) = self.sampler.thin {
            sampler.thin = v;
        }
        if let Some(v) = self.sampler.seed {
            sampler.seed = v;
        }
        if let Some(v) = self.sampler.rhat_threshold {
            sampler.rhat_threshold = v;
        }
        if let Some(v) = self.sampler.min_ess {
            sampler.min_ess = v;
        }
        if let Some(v) = self.sampler.parallel_units {
            sampler.parallel_units = v;
        }

        if self.x_cols.is_some() != self.w_cols.is_some() {
            return Err(invalid("set both x_cols and w_cols or neither"));
        }
        Ok(ResolvedConfig {
            spec,
            sampler,
            x_cols: self.x_cols.clone(),
            w_cols: self.w_cols.clone(),
            out_dir: self.output.dir.clone(),
            prefix: self.output.prefix.clone().unwrap_or_else(|| "fit".into()),
        })
    }
}

/// Description of a finished fit, stored next to the draws file. Holds
/// everything needed to reuse the draws without the original command line;
/// deliberately carries no timestamps so reruns stay byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunMeta {
    pub version: String,
    pub family: String,
    pub x_cols: Vec<String>,
    pub w_cols: Vec<String>,
    pub seed: u64,
    pub chains: usize,
    pub thin: usize,
    /// Sweeps actually run per chain.
    pub iterations: usize,
    /// Stored-draw index where retention starts.
    pub burn_in: usize,
    pub retained_per_chain: usize,
    pub kappa_prior: String,
    pub converged: bool,
}

impl RunMeta {
    pub fn load(path: &Path) -> Result<RunMeta, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Ok(toml::from_str(&text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("meta serializes to TOML")
    }
}

/// Report string for a kappa prior, also stored in the metadata file.
pub fn kappa_prior_label(prior: &KappaPrior) -> String {
    match *prior {
        KappaPrior::Uniform => "uniform".into(),
        KappaPrior::Beta { alpha1, alpha2 } => format!("beta({alpha1}, {alpha2})"),
        KappaPrior::Point { value } => format!("point({value})"),
    }
}
