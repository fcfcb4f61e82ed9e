//! The full Gibbs sampler: sum-of-trees conditional means per equation,
//! triangular contemporaneous loadings with horseshoe shrinkage, and
//! per-equation stochastic volatility, swept equation by equation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{build_lag_design, DataError, LagDesign, TimeSeriesMatrix};
use crate::rng::{self, domains};
use crate::shrinkage::{self, HorseshoeState, ShrinkageError};
use crate::sv::{self, SvError, SvPrior, SvState};
use crate::tree::{self, DecisionTree, TreeError, TreePriorConfig};

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("{field}: {message}")]
    Config { field: String, message: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Shrinkage(#[from] ShrinkageError),
    #[error(transparent)]
    Sv(#[from] SvError),
}

fn config_err(field: &str, message: impl Into<String>) -> SamplerError {
    SamplerError::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

/// Chain and prior settings for one estimation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub lags: usize,
    pub num_trees: usize,
    pub sweeps: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
    pub alpha: f64,
    pub beta: f64,
    pub s_tilde: f64,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
    /// Treat the range-based leaf scale as a standard deviation (squared
    /// before use) rather than as a variance.
    pub leaf_scale_is_stddev: bool,
    pub stochastic_volatility: bool,
    /// Variable ordering for the triangular decomposition; `None` keeps the
    /// column order of the data.
    pub ordering: Option<Vec<String>>,
    /// Worker threads for the per-equation stages; 0 uses the process
    /// default. Results are identical for any thread count, so this is an
    /// execution hint and deliberately excluded from the run's stored
    /// identity (serialization and configuration hash).
    #[serde(skip)]
    pub threads: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            lags: 1,
            num_trees: 250,
            sweeps: 5000,
            burn_in: 2500,
            thinning: 1,
            seed: 42,
            alpha: 0.95,
            beta: 2.0,
            s_tilde: 2.0,
            min_leaf: 5,
            max_depth: None,
            leaf_scale_is_stddev: true,
            stochastic_volatility: true,
            ordering: None,
            threads: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.lags < 1 {
            return Err(config_err("config.lags", "lag order must be at least 1"));
        }
        if self.num_trees < 1 {
            return Err(config_err("config.num_trees", "need at least one tree"));
        }
        if self.sweeps <= self.burn_in {
            return Err(config_err(
                "config.sweeps",
                format!(
                    "sweeps ({}) must exceed burn-in ({})",
                    self.sweeps, self.burn_in
                ),
            ));
        }
        if self.thinning < 1 {
            return Err(config_err("config.thinning", "thinning must be at least 1"));
        }
        if (self.sweeps - self.burn_in) % self.thinning != 0 {
            return Err(config_err(
                "config.thinning",
                format!(
                    "thinning ({}) must divide the retained span ({})",
                    self.thinning,
                    self.sweeps - self.burn_in
                ),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(config_err("config.alpha", "alpha must lie in (0, 1)"));
        }
        if !(self.beta >= 0.0) {
            return Err(config_err("config.beta", "beta must be nonnegative"));
        }
        if !(self.s_tilde > 0.0) {
            return Err(config_err("config.s_tilde", "s_tilde must be positive"));
        }
        if self.min_leaf < 1 {
            return Err(config_err("config.min_leaf", "min_leaf must be at least 1"));
        }
        Ok(())
    }

    pub fn retained_draws(&self) -> usize {
        (self.sweeps - self.burn_in) / self.thinning
    }
}

/// Per-equation error-variance state.
#[derive(Debug, Clone, PartialEq)]
pub enum Volatility {
    Stochastic(SvState),
    Constant { log_var: f64 },
}

impl Volatility {
    /// Observation variances `e^{h_t}`.
    pub fn weights(&self, t_len: usize) -> Vec<f64> {
        match self {
            Volatility::Stochastic(s) => s.h.iter().map(|h| h.exp()).collect(),
            Volatility::Constant { log_var } => vec![log_var.exp(); t_len],
        }
    }

    pub fn log_var(&self, t: usize) -> f64 {
        match self {
            Volatility::Stochastic(s) => s.h[t],
            Volatility::Constant { log_var } => *log_var,
        }
    }
}

/// One equation's block of the model state.
#[derive(Debug, Clone, PartialEq)]
pub struct EquationState {
    pub forest: Vec<DecisionTree>,
    /// Free contemporaneous loadings `a_{j,0..j}` on the previous equations'
    /// reduced-form residuals.
    pub coefficients: DVector<f64>,
    pub volatility: Volatility,
}

/// Full sampler state: equations plus the cached fit/residual decomposition
/// `Y = F(X) + eps`, column by column.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub equations: Vec<EquationState>,
    pub horseshoe: HorseshoeState,
    pub fitted: Vec<Vec<f64>>,
    pub residuals: Vec<Vec<f64>>,
}

/// One retained volatility draw. Constant-variance runs store `rho = 0`,
/// `sigma2 = 0` and an empty path, with the level in `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct VolatilityDraw {
    pub h: Vec<f64>,
    pub c: f64,
    pub rho: f64,
    pub sigma2: f64,
}

impl VolatilityDraw {
    pub fn from_state(v: &Volatility) -> Self {
        match v {
            Volatility::Stochastic(s) => Self {
                h: s.h.clone(),
                c: s.c,
                rho: s.rho,
                sigma2: s.sigma2,
            },
            Volatility::Constant { log_var } => Self {
                h: Vec::new(),
                c: *log_var,
                rho: 0.0,
                sigma2: 0.0,
            },
        }
    }

    /// Log variance at the end of the sample, the forecasting anchor.
    pub fn h_last(&self) -> f64 {
        self.h.last().copied().unwrap_or(self.c)
    }
}

/// Retained posterior draws plus everything needed to forecast from them.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    /// draw -> equation -> forest
    pub forests: Vec<Vec<Vec<DecisionTree>>>,
    /// draw -> equation -> loadings row
    pub coefficients: Vec<Vec<DVector<f64>>>,
    /// draw -> equation -> volatility state
    pub volatility: Vec<Vec<VolatilityDraw>>,
    /// conditional log likelihood at each retained sweep
    pub log_likelihood: Vec<f64>,
    pub config: ModelConfig,
    /// variable names in model (ordering-applied) order
    pub names: Vec<String>,
    pub num_covariates: usize,
    /// per-equation leaf-prior variances used during estimation
    pub leaf_variances: Vec<f64>,
}

impl PosteriorDraws {
    pub fn num_draws(&self) -> usize {
        self.forests.len()
    }

    pub fn num_equations(&self) -> usize {
        self.names.len()
    }

    /// Posterior mean of the sum-of-trees fit at each design row, per
    /// equation.
    pub fn posterior_mean_fits(&self, x: &DMatrix<f64>) -> Vec<Vec<f64>> {
        let m = self.num_equations();
        let mut out = vec![vec![0.0; x.nrows()]; m];
        for forest_draw in &self.forests {
            for (j, forest) in forest_draw.iter().enumerate() {
                for tree in forest {
                    for r in 0..x.nrows() {
                        out[j][r] += tree.evaluate_row_sum(x, r);
                    }
                }
            }
        }
        let scale = 1.0 / self.num_draws() as f64;
        for col in &mut out {
            for v in col {
                *v *= scale;
            }
        }
        out
    }

    /// Posterior median of the per-covariate splitting-rule counts, the
    /// variable-importance summary.
    pub fn importance_median(&self) -> DMatrix<f64> {
        let m = self.num_equations();
        let k = self.num_covariates;
        let mut per_draw: Vec<DMatrix<u32>> = Vec::with_capacity(self.num_draws());
        for forest_draw in &self.forests {
            per_draw.push(tree::splitting_rule_counts(forest_draw, k));
        }
        let mut out = DMatrix::zeros(k, m);
        let mut buf = Vec::with_capacity(per_draw.len());
        for kk in 0..k {
            for j in 0..m {
                buf.clear();
                buf.extend(per_draw.iter().map(|c| c[(kk, j)] as f64));
                buf.sort_unstable_by(f64::total_cmp);
                let n = buf.len();
                out[(kk, j)] = if n % 2 == 1 {
                    buf[n / 2]
                } else {
                    0.5 * (buf[n / 2 - 1] + buf[n / 2])
                };
            }
        }
        out
    }
}

impl DecisionTree {
    /// Leaf value reached by row `r`; convenience used in fit averaging.
    pub fn evaluate_row_sum(&self, x: &DMatrix<f64>, r: usize) -> f64 {
        match &self.nodes[self.route_row(x, r)] {
            crate::tree::TreeNode::Leaf { value } => *value,
            crate::tree::TreeNode::Internal { .. } => unreachable!(),
        }
    }
}

/// Partial residual for equation `eq`, tree `k`: the response net of the
/// contemporaneous-loading adjustment and all other trees' fits.
pub fn partial_residuals(
    state: &ModelState,
    design: &LagDesign,
    eq: usize,
    k: usize,
) -> Vec<f64> {
    let t_len = design.num_rows();
    let eq_state = &state.equations[eq];
    let mut out: Vec<f64> = (0..t_len).map(|t| design.y[(t, eq)]).collect();
    for l in 0..eq {
        let a = eq_state.coefficients[l];
        for t in 0..t_len {
            out[t] -= a * state.residuals[l][t];
        }
    }
    for (s, tree) in eq_state.forest.iter().enumerate() {
        if s == k {
            continue;
        }
        let fit = tree.fits(&design.x);
        for t in 0..t_len {
            out[t] -= fit[t];
        }
    }
    out
}

fn initial_state(
    design: &LagDesign,
    cfg: &ModelConfig,
) -> Result<ModelState, SamplerError> {
    let t_len = design.num_rows();
    let m = design.num_series();
    let mut equations = Vec::with_capacity(m);
    for j in 0..m {
        let resid_var = least_squares_residual_variance(design, j);
        let log_var = resid_var.max(1e-12).ln();
        let volatility = if cfg.stochastic_volatility {
            Volatility::Stochastic(SvState::initialize(t_len, log_var))
        } else {
            Volatility::Constant { log_var }
        };
        equations.push(EquationState {
            forest: vec![DecisionTree::stump(0.0); cfg.num_trees],
            coefficients: DVector::zeros(j),
            volatility,
        });
    }
    let fitted = vec![vec![0.0; t_len]; m];
    let residuals = (0..m)
        .map(|j| (0..t_len).map(|t| design.y[(t, j)]).collect())
        .collect();
    Ok(ModelState {
        equations,
        horseshoe: HorseshoeState::new(m * (m - 1) / 2),
        fitted,
        residuals,
    })
}

/// Residual variance of a ridge-stabilized least-squares fit of one response
/// column on the full lag design plus intercept; seeds the volatility level.
fn least_squares_residual_variance(design: &LagDesign, eq: usize) -> f64 {
    let t_len = design.num_rows();
    let k = design.num_covariates() + 1;
    let mut xtx: DMatrix<f64> = DMatrix::zeros(k, k);
    let mut xty: DVector<f64> = DVector::zeros(k);
    for t in 0..t_len {
        let mut row = Vec::with_capacity(k);
        row.push(1.0);
        for c in 0..design.num_covariates() {
            row.push(design.x[(t, c)]);
        }
        for i in 0..k {
            xty[i] += row[i] * design.y[(t, eq)];
            for j in 0..k {
                xtx[(i, j)] += row[i] * row[j];
            }
        }
    }
    for i in 0..k {
        xtx[(i, i)] += 1e-8;
    }
    let fallback = || {
        let mean: f64 = (0..t_len).map(|t| design.y[(t, eq)]).sum::<f64>() / t_len as f64;
        (0..t_len)
            .map(|t| (design.y[(t, eq)] - mean).powi(2))
            .sum::<f64>()
            / t_len as f64
    };
    let beta = match xtx.cholesky() {
        Some(chol) => chol.solve(&xty),
        None => return fallback().max(1e-12),
    };
    let mut ssr = 0.0;
    for t in 0..t_len {
        let mut fit = beta[0];
        for c in 0..design.num_covariates() {
            fit += beta[c + 1] * design.x[(t, c)];
        }
        ssr += (design.y[(t, eq)] - fit).powi(2);
    }
    let df = (t_len as f64 - k as f64).max(1.0);
    (ssr / df).max(1e-12)
}

/// One full sweep over all equations.
///
/// Stage 1 runs the backfitting tree updates per equation against a snapshot
/// of the previous sweep's residuals, so equations can proceed concurrently
/// with byte-identical results for any thread count. A barrier then refreshes
/// the cached residuals, stage 2 redraws the loadings row and the volatility
/// state per equation from the fresh residuals, and the shared horseshoe
/// scales are refreshed once at the end.
pub fn gibbs_sweep(
    state: &mut ModelState,
    design: &LagDesign,
    tree_cfgs: &[TreePriorConfig],
    sv_prior: &SvPrior,
    cfg: &ModelConfig,
    sweep: usize,
) -> Result<(), SamplerError> {
    let t_len = design.num_rows();
    let snapshot = state.residuals.clone();
    let x = &design.x;
    let y = &design.y;
    let seed = cfg.seed;

    let tree_results: Result<Vec<()>, SamplerError> = state
        .equations
        .par_iter_mut()
        .zip(state.fitted.par_iter_mut())
        .enumerate()
        .map(|(j, (eq, fit_col))| {
            let mut rng = rng::stream(seed, domains::TREES, sweep as u64, j as u64);
            let weights = eq.volatility.weights(t_len);
            let tree_cfg = &tree_cfgs[j];
            // Response net of the contemporaneous adjustment, which is held
            // at the previous sweep's residual snapshot during this stage.
            let mut adjusted: Vec<f64> = (0..t_len).map(|t| y[(t, j)]).collect();
            for l in 0..j {
                let a = eq.coefficients[l];
                for t in 0..t_len {
                    adjusted[t] -= a * snapshot[l][t];
                }
            }
            let mut partial = vec![0.0f64; t_len];
            for k in 0..eq.forest.len() {
                let old_fit = eq.forest[k].fits(x);
                for t in 0..t_len {
                    partial[t] = adjusted[t] - (fit_col[t] - old_fit[t]);
                }
                let proposal = tree::propose_move(&eq.forest[k], x, tree_cfg, &mut rng);
                let (kept, _accepted) = tree::mh_accept(
                    &eq.forest[k],
                    &proposal.tree,
                    proposal.log_ratio,
                    x,
                    &partial,
                    &weights,
                    tree_cfg,
                    &mut rng,
                )?;
                let refreshed = tree::sample_leaf_params(
                    &kept,
                    x,
                    &partial,
                    &weights,
                    tree_cfg.sigma_mu2,
                    &mut rng,
                )?;
                let new_fit = refreshed.fits(x);
                for t in 0..t_len {
                    fit_col[t] += new_fit[t] - old_fit[t];
                }
                eq.forest[k] = refreshed;
            }
            Ok(())
        })
        .collect();
    tree_results?;

    // Barrier: refresh the residual cache so Y = F(X) + eps holds exactly.
    for j in 0..state.equations.len() {
        for t in 0..t_len {
            state.residuals[j][t] = y[(t, j)] - state.fitted[j][t];
        }
    }

    let residuals = &state.residuals;
    let horseshoe = &state.horseshoe;
    let cov_results: Result<Vec<()>, SamplerError> = state
        .equations
        .par_iter_mut()
        .enumerate()
        .map(|(j, eq)| {
            let mut rng = rng::stream(seed, domains::COV_SV, sweep as u64, j as u64);
            let weights = eq.volatility.weights(t_len);
            let regressors = DMatrix::from_fn(t_len, j, |t, l| residuals[l][t]);
            let a = shrinkage::sample_covariance_row(
                j,
                &residuals[j],
                &regressors,
                &weights,
                horseshoe,
                &mut rng,
            )?;
            let mut orthogonal = residuals[j].clone();
            for l in 0..j {
                for t in 0..t_len {
                    orthogonal[t] -= a[l] * residuals[l][t];
                }
            }
            eq.coefficients = a;
            eq.volatility = match &eq.volatility {
                Volatility::Stochastic(s) => {
                    Volatility::Stochastic(sv::sample_sv(&orthogonal, s, sv_prior, &mut rng))
                }
                Volatility::Constant { log_var } => Volatility::Constant {
                    log_var: sv::sample_constant_variance(
                        &orthogonal,
                        *log_var,
                        sv_prior,
                        &mut rng,
                    ),
                },
            };
            Ok(())
        })
        .collect();
    cov_results?;

    let flat: Vec<f64> = state
        .equations
        .iter()
        .flat_map(|eq| eq.coefficients.iter().copied().collect::<Vec<_>>())
        .collect();
    let mut rng = rng::stream(seed, domains::HORSESHOE, sweep as u64, 0);
    shrinkage::update_scales(&mut state.horseshoe, &flat, &mut rng)?;
    Ok(())
}

/// Conditional log likelihood of the data under the current state.
fn log_likelihood(state: &ModelState, t_len: usize) -> f64 {
    let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let mut total = 0.0;
    for (j, eq) in state.equations.iter().enumerate() {
        for t in 0..t_len {
            let mut orth = state.residuals[j][t];
            for l in 0..j {
                orth -= eq.coefficients[l] * state.residuals[l][t];
            }
            let h = eq.volatility.log_var(t);
            total += -half_ln_2pi - 0.5 * h - 0.5 * orth * orth * (-h).exp();
        }
    }
    total
}

/// Runs the full chain on a time-series panel and returns the retained
/// posterior draws.
pub fn estimate(y: &TimeSeriesMatrix, cfg: &ModelConfig) -> Result<PosteriorDraws, SamplerError> {
    cfg.validate()?;
    crate::configure_threads(cfg.threads);
    let ordered = match &cfg.ordering {
        Some(order) => {
            let mut sorted_a: Vec<&String> = order.iter().collect();
            let mut sorted_b: Vec<&String> = y.names.iter().collect();
            sorted_a.sort();
            sorted_b.sort();
            if sorted_a != sorted_b {
                return Err(config_err(
                    "config.ordering",
                    "ordering must be a permutation of the data's column names",
                ));
            }
            y.reorder(order)?
        }
        None => y.clone(),
    };
    if ordered.num_rows() <= cfg.lags + 20 {
        return Err(config_err(
            "data.rows",
            format!(
                "need more than lags + 20 = {} rows, got {}",
                cfg.lags + 20,
                ordered.num_rows()
            ),
        ));
    }
    let design = build_lag_design(&ordered, cfg.lags)?;
    let m = design.num_series();

    let mut leaf_variances = Vec::with_capacity(m);
    let mut tree_cfgs = Vec::with_capacity(m);
    for j in 0..m {
        let col: Vec<f64> = (0..design.num_rows()).map(|t| design.y[(t, j)]).collect();
        let range = col.iter().cloned().fold(f64::MIN, f64::max)
            - col.iter().cloned().fold(f64::MAX, f64::min);
        let scale = tree::leaf_scale(range, cfg.s_tilde, cfg.num_trees).map_err(|_| {
            config_err(
                "data.columns",
                format!("column {} is constant; its range-based prior is undefined", j),
            )
        })?;
        let sigma_mu2 = if cfg.leaf_scale_is_stddev {
            scale * scale
        } else {
            scale
        };
        leaf_variances.push(sigma_mu2);
        let tree_cfg = TreePriorConfig {
            alpha: cfg.alpha,
            beta: cfg.beta,
            sigma_mu2,
            min_leaf: cfg.min_leaf,
            max_depth: cfg.max_depth,
        };
        tree_cfg.validate()?;
        tree_cfgs.push(tree_cfg);
    }

    let sv_prior = SvPrior::default();
    let mut state = initial_state(&design, cfg)?;
    let retained = cfg.retained_draws();
    let mut draws = PosteriorDraws {
        forests: Vec::with_capacity(retained),
        coefficients: Vec::with_capacity(retained),
        volatility: Vec::with_capacity(retained),
        log_likelihood: Vec::with_capacity(retained),
        config: cfg.clone(),
        names: ordered.names.clone(),
        num_covariates: design.num_covariates(),
        leaf_variances,
    };
    for sweep in 0..cfg.sweeps {
        gibbs_sweep(&mut state, &design, &tree_cfgs, &sv_prior, cfg, sweep)?;
        if sweep >= cfg.burn_in && (sweep - cfg.burn_in) % cfg.thinning == 0 {
            draws
                .forests
                .push(state.equations.iter().map(|e| e.forest.clone()).collect());
            draws.coefficients.push(
                state
                    .equations
                    .iter()
                    .map(|e| e.coefficients.clone())
                    .collect(),
            );
            draws.volatility.push(
                state
                    .equations
                    .iter()
                    .map(|e| VolatilityDraw::from_state(&e.volatility))
                    .collect(),
            );
            draws
                .log_likelihood
                .push(log_likelihood(&state, design.num_rows()));
        }
    }
    Ok(draws)
}

/// Applies the triangular system to turn orthogonal shocks into reduced-form
/// residuals in place: `eps_j += sum_{l<j} a_{jl} eps_l`, equation by
/// equation.
pub fn structural_to_reduced(coefficients: &[DVector<f64>], shocks: &mut [f64]) {
    for j in 0..shocks.len() {
        let mut v = shocks[j];
        for l in 0..j {
            v += coefficients[j][l] * shocks[l];
        }
        shocks[j] = v;
    }
}

/// Dense contemporaneous-impact matrix: the unit lower-triangular map from
/// orthogonal shocks to reduced-form residuals.
pub fn impact_matrix(coefficients: &[DVector<f64>]) -> DMatrix<f64> {
    let m = coefficients.len();
    let mut a0 = DMatrix::zeros(m, m);
    for j in 0..m {
        let mut unit = vec![0.0; m];
        unit[j] = 1.0;
        structural_to_reduced(coefficients, &mut unit);
        for i in 0..m {
            a0[(i, j)] = unit[i];
        }
    }
    a0
}

/// Draws a standard normal vector; small convenience for forecast code.
pub(crate) fn standard_normal_vec(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    (0..len)
        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect()
}
