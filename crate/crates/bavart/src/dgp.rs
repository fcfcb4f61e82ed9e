//! Synthetic data generators with known ground truth, used by the simulate
//! command and the recovery tests: a linear VAR, a threshold VAR, a
//! stochastic-volatility path, and a nonlinear benchmark surface.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, TimeSeriesMatrix};
use crate::rng::{self, domains};
use crate::sampler::structural_to_reduced;

#[derive(Debug, Error)]
pub enum DgpError {
    #[error("coefficient matrix must be square and match the system size")]
    BadShape,
    #[error("triangular loadings must have row lengths 0, 1, .., M-1")]
    BadLoadings,
    #[error("need at least {need} periods, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("trigger variable {0} is out of range")]
    BadTrigger(usize),
    #[error(transparent)]
    Data(#[from] DataError),
}

const WARMUP: usize = 100;

/// Linear first-order VAR with triangular contemporaneous loadings and
/// fixed log variances for the orthogonal shocks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarParams {
    /// M x M autoregressive matrix (row = equation).
    pub phi: Vec<Vec<f64>>,
    /// Lower-triangular free loadings, row j holding `a_{j,0..j}`.
    pub loadings: Vec<Vec<f64>>,
    /// Log variance of each equation's orthogonal shock.
    pub log_vars: Vec<f64>,
    pub intercept: Vec<f64>,
}

impl VarParams {
    fn validate(&self) -> Result<usize, DgpError> {
        let m = self.phi.len();
        if m == 0
            || self.phi.iter().any(|r| r.len() != m)
            || self.log_vars.len() != m
            || self.intercept.len() != m
        {
            return Err(DgpError::BadShape);
        }
        check_loadings(&self.loadings, m)?;
        Ok(m)
    }

    pub fn loading_vectors(&self) -> Vec<DVector<f64>> {
        self.loadings
            .iter()
            .map(|r| DVector::from_vec(r.clone()))
            .collect()
    }
}

fn check_loadings(loadings: &[Vec<f64>], m: usize) -> Result<(), DgpError> {
    if loadings.len() != m || loadings.iter().enumerate().any(|(j, r)| r.len() != j) {
        return Err(DgpError::BadLoadings);
    }
    Ok(())
}

fn default_names(m: usize) -> Vec<String> {
    (0..m).map(|j| format!("y{}", j + 1)).collect()
}

fn draw_reduced_shock(
    log_vars: &[f64],
    loadings: &[DVector<f64>],
    rng: &mut impl Rng,
) -> Vec<f64> {
    let mut eps: Vec<f64> = log_vars
        .iter()
        .map(|c| (0.5 * c).exp() * rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();
    structural_to_reduced(loadings, &mut eps);
    eps
}

fn mean_step(phi: &[Vec<f64>], intercept: &[f64], prev: &[f64]) -> Vec<f64> {
    let m = prev.len();
    (0..m)
        .map(|j| {
            intercept[j]
                + phi[j]
                    .iter()
                    .zip(prev)
                    .map(|(p, y)| p * y)
                    .sum::<f64>()
        })
        .collect()
}

/// Simulates `t` periods of the VAR after a discarded warmup block.
pub fn simulate_var(
    params: &VarParams,
    t: usize,
    seed: u64,
) -> Result<TimeSeriesMatrix, DgpError> {
    let m = params.validate()?;
    if t < 2 {
        return Err(DgpError::TooShort { need: 2, got: t });
    }
    let loadings = params.loading_vectors();
    let mut rng = rng::stream(seed, domains::DGP, 0, 0);
    let mut prev = vec![0.0f64; m];
    let mut out = DMatrix::zeros(t, m);
    for step in 0..WARMUP + t {
        let mut next = mean_step(&params.phi, &params.intercept, &prev);
        let shock = draw_reduced_shock(&params.log_vars, &loadings, &mut rng);
        for j in 0..m {
            next[j] += shock[j];
        }
        if step >= WARMUP {
            for j in 0..m {
                out[(step - WARMUP, j)] = next[j];
            }
        }
        prev = next;
    }
    Ok(TimeSeriesMatrix::new(out, default_names(m), "synthetic")?)
}

/// Analytic impulse responses of the linear VAR to a structural shock of
/// size `delta` in `shock`: steps `0..=horizon`, each an M-vector.
pub fn var_irf(
    params: &VarParams,
    shock: usize,
    delta: f64,
    horizon: usize,
) -> Result<Vec<Vec<f64>>, DgpError> {
    let m = params.validate()?;
    if shock >= m {
        return Err(DgpError::BadTrigger(shock));
    }
    let loadings = params.loading_vectors();
    let mut impact = vec![0.0; m];
    impact[shock] = delta;
    structural_to_reduced(&loadings, &mut impact);
    let mut out = Vec::with_capacity(horizon + 1);
    out.push(impact.clone());
    let mut current = impact;
    for _ in 0..horizon {
        current = mean_step(&params.phi, &vec![0.0; m], &current);
        out.push(current.clone());
    }
    Ok(out)
}

/// Two-regime threshold VAR: the autoregressive matrix switches on the
/// previous value of a trigger variable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdVarParams {
    /// Regime when the lagged trigger is at or below the threshold.
    pub phi_low: Vec<Vec<f64>>,
    /// Regime when it is above.
    pub phi_high: Vec<Vec<f64>>,
    pub threshold: f64,
    pub trigger: usize,
    pub loadings: Vec<Vec<f64>>,
    pub log_vars: Vec<f64>,
    pub intercept: Vec<f64>,
}

impl ThresholdVarParams {
    fn validate(&self) -> Result<usize, DgpError> {
        let m = self.phi_low.len();
        if m == 0
            || self.phi_low.iter().any(|r| r.len() != m)
            || self.phi_high.len() != m
            || self.phi_high.iter().any(|r| r.len() != m)
            || self.log_vars.len() != m
            || self.intercept.len() != m
        {
            return Err(DgpError::BadShape);
        }
        if self.trigger >= m {
            return Err(DgpError::BadTrigger(self.trigger));
        }
        check_loadings(&self.loadings, m)?;
        Ok(m)
    }

    pub fn regime_phi(&self, lagged_trigger: f64) -> &Vec<Vec<f64>> {
        if lagged_trigger <= self.threshold {
            &self.phi_low
        } else {
            &self.phi_high
        }
    }

    pub fn loading_vectors(&self) -> Vec<DVector<f64>> {
        self.loadings
            .iter()
            .map(|r| DVector::from_vec(r.clone()))
            .collect()
    }
}

pub fn simulate_tvar(
    params: &ThresholdVarParams,
    t: usize,
    seed: u64,
) -> Result<TimeSeriesMatrix, DgpError> {
    let m = params.validate()?;
    if t < 2 {
        return Err(DgpError::TooShort { need: 2, got: t });
    }
    let loadings = params.loading_vectors();
    let mut rng = rng::stream(seed, domains::DGP, 1, 0);
    let mut prev = vec![0.0f64; m];
    let mut out = DMatrix::zeros(t, m);
    for step in 0..WARMUP + t {
        let phi = params.regime_phi(prev[params.trigger]);
        let mut next = mean_step(phi, &params.intercept, &prev);
        let shock = draw_reduced_shock(&params.log_vars, &loadings, &mut rng);
        for j in 0..m {
            next[j] += shock[j];
        }
        if step >= WARMUP {
            for j in 0..m {
                out[(step - WARMUP, j)] = next[j];
            }
        }
        prev = next;
    }
    Ok(TimeSeriesMatrix::new(out, default_names(m), "synthetic")?)
}

/// One-step conditional-mean response of the threshold VAR to a structural
/// impulse applied at a history in the given regime: `Phi_regime A0 e_j d`.
pub fn tvar_step_response(
    params: &ThresholdVarParams,
    lagged_trigger: f64,
    shock: usize,
    delta: f64,
) -> Result<Vec<f64>, DgpError> {
    let m = params.validate()?;
    if shock >= m {
        return Err(DgpError::BadTrigger(shock));
    }
    let loadings = params.loading_vectors();
    let mut impact = vec![0.0; m];
    impact[shock] = delta;
    structural_to_reduced(&loadings, &mut impact);
    let phi = params.regime_phi(lagged_trigger);
    Ok(mean_step(phi, &vec![0.0; m], &impact))
}

/// Log-variance path parameters for a zero-mean stochastic-volatility series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SvPathParams {
    pub c: f64,
    pub rho: f64,
    pub sigma2: f64,
}

/// Simulates `y_t = exp(h_t / 2) z_t` with an AR(1) log-variance path;
/// returns the observed series and the true path.
pub fn simulate_sv_series(
    params: &SvPathParams,
    t: usize,
    seed: u64,
) -> Result<(TimeSeriesMatrix, Vec<f64>), DgpError> {
    if t < 2 {
        return Err(DgpError::TooShort { need: 2, got: t });
    }
    let mut rng = rng::stream(seed, domains::DGP, 2, 0);
    let sd = params.sigma2.sqrt();
    let stat_sd = (params.sigma2 / (1.0 - params.rho * params.rho).max(1e-12)).sqrt();
    let mut h = params.c + stat_sd * rng.sample::<f64, _>(rand_distr::StandardNormal);
    let mut path = Vec::with_capacity(t);
    let mut values = DMatrix::zeros(t, 1);
    for i in 0..t {
        h = params.c
            + params.rho * (h - params.c)
            + sd * rng.sample::<f64, _>(rand_distr::StandardNormal);
        path.push(h);
        values[(i, 0)] =
            (0.5 * h).exp() * rng.sample::<f64, _>(rand_distr::StandardNormal);
    }
    Ok((
        TimeSeriesMatrix::new(values, vec!["y1".to_string()], "synthetic")?,
        path,
    ))
}

/// Nonlinear benchmark: the first series responds to the lagged values of
/// five independent uniform predictor series through
/// `10 sin(pi x1 x2) + 20 (x3 - 1/2)^2 + 10 x4 + 5 x5`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FriedmanParams {
    pub noise_sd: f64,
}

pub fn friedman_mean(x: &[f64]) -> f64 {
    10.0 * (std::f64::consts::PI * x[0] * x[1]).sin()
        + 20.0 * (x[2] - 0.5) * (x[2] - 0.5)
        + 10.0 * x[3]
        + 5.0 * x[4]
}

/// Simulates the benchmark: returns the panel (target first, then the five
/// predictors) and the true conditional mean of the target at rows `1..t`,
/// aligned so `truth[i]` is the mean of the target at data row `i + 1`.
pub fn simulate_friedman(
    params: &FriedmanParams,
    t: usize,
    seed: u64,
) -> Result<(TimeSeriesMatrix, Vec<f64>), DgpError> {
    if t < 3 {
        return Err(DgpError::TooShort { need: 3, got: t });
    }
    let mut rng = rng::stream(seed, domains::DGP, 3, 0);
    let mut values = DMatrix::zeros(t, 6);
    let mut prev = [0.0f64; 5];
    let mut truth = Vec::with_capacity(t - 1);
    for i in 0..t {
        let x: [f64; 5] = std::array::from_fn(|_| rng.gen::<f64>());
        let target = if i == 0 {
            0.0
        } else {
            let mean = friedman_mean(&prev);
            truth.push(mean);
            mean + params.noise_sd * rng.sample::<f64, _>(rand_distr::StandardNormal)
        };
        values[(i, 0)] = target;
        for (k, v) in x.iter().enumerate() {
            values[(i, k + 1)] = *v;
        }
        prev = x;
    }
    let names = vec![
        "target".to_string(),
        "x1".to_string(),
        "x2".to_string(),
        "x3".to_string(),
        "x4".to_string(),
        "x5".to_string(),
    ];
    Ok((TimeSeriesMatrix::new(values, names, "synthetic")?, truth))
}
