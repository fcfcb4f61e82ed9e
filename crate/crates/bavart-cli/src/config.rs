//! Run configuration: a sectioned TOML file resolved into engine settings.
//! Unknown keys are rejected so typos fail loudly, and every default is
//! materialized before estimation so emitted manifests are unambiguous.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use bavart::data::{ns_extract_factors, NsCurveConfig, TimeSeriesMatrix};
use bavart::dgp::{FriedmanParams, SvPathParams, ThresholdVarParams, VarParams};
use bavart::sampler::ModelConfig;

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub data: Option<DataSection>,
    #[serde(default)]
    pub model: ModelSection,
    /// Presence of this section selects curve mode: the model runs on
    /// extracted level/slope/curvature factors.
    pub ns: Option<NsSection>,
    pub backtest: Option<BacktestSection>,
    pub girf: Option<GirfSection>,
    pub simulate: Option<SimulateSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub output_dir: PathBuf,
    #[serde(default)]
    pub threads: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub path: PathBuf,
    #[serde(default)]
    pub difference: bool,
    pub ordering: Option<Vec<String>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Defaults to 2 in curve mode and 1 in plain mode when omitted.
    pub lags: Option<usize>,
    pub num_trees: Option<usize>,
    pub sweeps: Option<usize>,
    pub burn_in: Option<usize>,
    pub thinning: Option<usize>,
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub s_tilde: Option<f64>,
    pub min_leaf: Option<usize>,
    pub max_depth: Option<usize>,
    pub leaf_scale_is_stddev: Option<bool>,
    pub stochastic_volatility: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NsSection {
    /// Maturities of the yield columns, in months, matching column order.
    pub maturities: Vec<f64>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

fn default_gamma() -> f64 {
    0.0609
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BacktestSection {
    #[serde(default = "default_holdout")]
    pub holdout: usize,
    #[serde(default = "default_horizons")]
    pub horizons: Vec<usize>,
    #[serde(default = "default_refit")]
    pub refit_every: usize,
}

fn default_holdout() -> usize {
    24
}

fn default_horizons() -> Vec<usize> {
    vec![1, 3]
}

fn default_refit() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GirfSection {
    /// Shocked variable, by model-space column name.
    pub shock: String,
    #[serde(default = "default_shock_size")]
    pub size: String,
    #[serde(default = "default_girf_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub restricted: Vec<String>,
    pub history: Option<usize>,
    /// Draws directory; defaults to `<output_dir>/draws`.
    pub draws_dir: Option<PathBuf>,
    /// Units the zero restriction applies to: must be stated explicitly
    /// (`"differenced"`) when the data are differenced.
    pub restriction_space: Option<String>,
}

fn default_shock_size() -> String {
    "one-sd".to_string()
}

fn default_girf_horizon() -> usize {
    24
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub kind: String,
    pub periods: usize,
    #[serde(default = "default_sim_seed")]
    pub seed: u64,
    pub var: Option<VarParams>,
    pub tvar: Option<ThresholdVarParams>,
    pub sv: Option<SvPathParams>,
    pub friedman: Option<FriedmanParams>,
}

fn default_sim_seed() -> u64 {
    42
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let raw = std::fs::read_to_string(path).map_err(|e| CliError::Config {
        field: "config".to_string(),
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    toml::from_str(&raw).map_err(|e| CliError::Config {
        field: "config".to_string(),
        message: e.to_string().replace('\n', " "),
    })
}

impl RunConfig {
    pub fn curve_mode(&self) -> bool {
        self.ns.is_some()
    }

    pub fn data_section(&self) -> Result<&DataSection, CliError> {
        self.data.as_ref().ok_or_else(|| CliError::Config {
            field: "data".to_string(),
            message: "this command needs a [data] section".to_string(),
        })
    }

    /// Materializes the engine configuration with all defaults resolved.
    pub fn resolve_model(&self) -> Result<ModelConfig, CliError> {
        let m = &self.model;
        let default_lags = if self.curve_mode() { 2 } else { 1 };
        let ordering = match &self.data {
            Some(d) => {
                if self.curve_mode() && d.ordering.is_some() {
                    return Err(CliError::Config {
                        field: "data.ordering".to_string(),
                        message: "curve mode models the factors in their natural \
                                  order; ordering does not apply"
                            .to_string(),
                    });
                }
                d.ordering.clone()
            }
            None => None,
        };
        let cfg = ModelConfig {
            lags: m.lags.unwrap_or(default_lags),
            num_trees: m.num_trees.unwrap_or(250),
            sweeps: m.sweeps.unwrap_or(5000),
            burn_in: m.burn_in.unwrap_or(2500),
            thinning: m.thinning.unwrap_or(1),
            seed: m.seed.unwrap_or(42),
            alpha: m.alpha.unwrap_or(0.95),
            beta: m.beta.unwrap_or(2.0),
            s_tilde: m.s_tilde.unwrap_or(2.0),
            min_leaf: m.min_leaf.unwrap_or(5),
            max_depth: m.max_depth,
            leaf_scale_is_stddev: m.leaf_scale_is_stddev.unwrap_or(true),
            stochastic_volatility: m.stochastic_volatility.unwrap_or(true),
            ordering,
            threads: self.run.threads,
        };
        cfg.validate().map_err(CliError::from)?;
        Ok(cfg)
    }

    pub fn curve_config(&self) -> Result<Option<NsCurveConfig>, CliError> {
        match &self.ns {
            None => Ok(None),
            Some(ns) => NsCurveConfig::new(ns.maturities.clone(), ns.gamma)
                .map(Some)
                .map_err(|e| CliError::Config {
                    field: "ns".to_string(),
                    message: e.to_string(),
                }),
        }
    }

    /// Loads the observed data and applies the configured transforms; the
    /// second element is the series the model actually runs on (factors in
    /// curve mode, the observations otherwise).
    pub fn load_series(&self) -> Result<(TimeSeriesMatrix, TimeSeriesMatrix), CliError> {
        let data = self.data_section()?;
        let observed = bavart::data::load_csv(&data.path).map_err(CliError::runtime)?;
        let observed = if data.difference {
            observed.difference().map_err(CliError::runtime)?
        } else {
            observed
        };
        let model_series = match self.curve_config()? {
            Some(curve) => {
                ns_extract_factors(&observed, &curve).map_err(CliError::runtime)?
            }
            None => observed.clone(),
        };
        Ok((observed, model_series))
    }
}
