//! Density forecasting and scoring: iterative simulation of the predictive
//! distribution, squared-error and CRPS evaluation, and the expanding-window
//! backtest protocol.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::data::{
    build_lag_design, ns_extract_factors, ns_map_forecasts, DataError, NsCurveConfig,
    TimeSeriesMatrix,
};
use crate::rng::{self, domains};
use crate::sampler::{
    estimate, standard_normal_vec, structural_to_reduced, ModelConfig, PosteriorDraws,
    SamplerError,
};
use crate::sv::{self, SvState};

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("forecast horizon must be at least 1")]
    BadHorizon,
    #[error("conditioning data has {got} rows but the model needs at least {need}")]
    TooFewRows { need: usize, got: usize },
    #[error("conditioning data columns {got:?} do not match the model's {expected:?}")]
    NameMismatch {
        expected: Vec<String>,
        got: Vec<String>,
    },
    #[error("no posterior draws to forecast from")]
    NoDraws,
    #[error("score inputs must be non-empty and of equal length")]
    BadScoreInput,
    #[error("scores need finite inputs")]
    NonFinite,
    #[error("backtest holdout must leave a training sample and cover every horizon")]
    BadBacktestWindow,
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
}

/// A simulated predictive distribution: `num_draws` sampled paths over
/// `horizon` steps for `num_series` variables.
///
/// `origin` records the number of conditioning rows the forecast was launched
/// from, so step `h` (0-based) targets data row `origin + h`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDraws {
    pub num_draws: usize,
    pub horizon: usize,
    pub num_series: usize,
    pub names: Vec<String>,
    pub origin: usize,
    values: Vec<f64>,
}

impl PredictiveDraws {
    pub fn zeros(
        num_draws: usize,
        horizon: usize,
        num_series: usize,
        names: Vec<String>,
        origin: usize,
    ) -> Self {
        assert_eq!(names.len(), num_series, "one name per series");
        Self {
            num_draws,
            horizon,
            num_series,
            names,
            origin,
            values: vec![0.0; num_draws * horizon * num_series],
        }
    }

    fn idx(&self, draw: usize, step: usize, series: usize) -> usize {
        debug_assert!(draw < self.num_draws && step < self.horizon && series < self.num_series);
        (draw * self.horizon + step) * self.num_series + series
    }

    pub fn at(&self, draw: usize, step: usize, series: usize) -> f64 {
        self.values[self.idx(draw, step, series)]
    }

    pub fn at_mut(&mut self, draw: usize, step: usize, series: usize) -> &mut f64 {
        let i = self.idx(draw, step, series);
        &mut self.values[i]
    }

    /// All draws for one (step, series) cell.
    pub fn cell_draws(&self, step: usize, series: usize) -> Vec<f64> {
        (0..self.num_draws)
            .map(|d| self.at(d, step, series))
            .collect()
    }

    /// Interpolated quantile (the common linear type) of one cell.
    pub fn quantile(&self, step: usize, series: usize, q: f64) -> f64 {
        assert!((0.0..=1.0).contains(&q), "quantile level must lie in [0, 1]");
        let mut v = self.cell_draws(step, series);
        v.sort_unstable_by(f64::total_cmp);
        quantile_sorted(&v, q)
    }

    pub fn median(&self, step: usize, series: usize) -> f64 {
        self.quantile(step, series, 0.5)
    }

    pub fn mean(&self, step: usize, series: usize) -> f64 {
        let v = self.cell_draws(step, series);
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
    }
}

/// Simulates the predictive distribution `horizon` steps ahead from the end
/// of `y`, one path per retained posterior draw.
///
/// Sampled values feed back into the lag vector, so parameter and shock
/// uncertainty both propagate. `salt` separates the random streams of
/// repeated calls (backtest windows pass their origin); identical inputs give
/// identical output.
pub fn predict(
    draws: &PosteriorDraws,
    y: &TimeSeriesMatrix,
    horizon: usize,
    salt: u64,
) -> Result<PredictiveDraws, ForecastError> {
    if horizon < 1 {
        return Err(ForecastError::BadHorizon);
    }
    if draws.num_draws() == 0 {
        return Err(ForecastError::NoDraws);
    }
    let ordered = match &draws.config.ordering {
        Some(order) => y.reorder(order)?,
        None => y.clone(),
    };
    if ordered.names != draws.names {
        return Err(ForecastError::NameMismatch {
            expected: draws.names.clone(),
            got: ordered.names.clone(),
        });
    }
    let p = draws.config.lags;
    let m = draws.num_equations();
    let t = ordered.num_rows();
    if t < p {
        return Err(ForecastError::TooFewRows { need: p, got: t });
    }

    // Lag vector in design layout: most recent row first, then older lags.
    let mut base_lags = Vec::with_capacity(p * m);
    for lag in 1..=p {
        for j in 0..m {
            base_lags.push(ordered.values[(t - lag, j)]);
        }
    }

    let mut out = PredictiveDraws::zeros(
        draws.num_draws(),
        horizon,
        m,
        draws.names.clone(),
        t,
    );
    let mut lagvec = vec![0.0f64; p * m];
    let mut fit = vec![0.0f64; m];
    for d in 0..draws.num_draws() {
        let mut rng = rng::stream(draws.config.seed, domains::PREDICT, d as u64, salt);
        let vols = &draws.volatility[d];
        let paths: Vec<Vec<f64>> = vols
            .iter()
            .map(|v| {
                let anchor = SvState {
                    h: vec![v.h_last()],
                    c: v.c,
                    rho: v.rho,
                    sigma2: v.sigma2,
                };
                sv::forecast_volatility(&anchor, horizon, &mut rng)
            })
            .collect();
        lagvec.copy_from_slice(&base_lags);
        for s in 0..horizon {
            for (j, forest) in draws.forests[d].iter().enumerate() {
                fit[j] = forest.iter().map(|tree| tree.evaluate(&lagvec)).sum();
            }
            let mut shocks = standard_normal_vec(&mut rng, m);
            for j in 0..m {
                shocks[j] *= (0.5 * paths[j][s]).exp();
            }
            structural_to_reduced(&draws.coefficients[d], &mut shocks);
            for j in 0..m {
                let v = fit[j] + shocks[j];
                *out.at_mut(d, s, j) = v;
            }
            // Shift the lag vector: the simulated row becomes lag one.
            if p > 1 {
                lagvec.copy_within(0..(p - 1) * m, m);
            }
            for j in 0..m {
                lagvec[j] = out.at(d, s, j);
            }
        }
    }
    Ok(out)
}

/// Mean squared error between point forecasts and outcomes.
pub fn msfe(forecasts: &[f64], outcomes: &[f64]) -> Result<f64, ForecastError> {
    if forecasts.is_empty() || forecasts.len() != outcomes.len() {
        return Err(ForecastError::BadScoreInput);
    }
    if forecasts.iter().chain(outcomes).any(|v| !v.is_finite()) {
        return Err(ForecastError::NonFinite);
    }
    let n = forecasts.len() as f64;
    Ok(forecasts
        .iter()
        .zip(outcomes)
        .map(|(f, o)| (f - o) * (f - o))
        .sum::<f64>()
        / n)
}

/// Sample continuous ranked probability score of a draw ensemble against one
/// outcome: `mean |x - y| - mean |x - x'| / 2`, computed in O(n log n) via
/// the sorted form of the pairwise term.
pub fn crps(draws: &[f64], outcome: f64) -> Result<f64, ForecastError> {
    if draws.is_empty() {
        return Err(ForecastError::BadScoreInput);
    }
    if !outcome.is_finite() || draws.iter().any(|v| !v.is_finite()) {
        return Err(ForecastError::NonFinite);
    }
    let n = draws.len();
    let mut sorted = draws.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let term1 = sorted.iter().map(|x| (x - outcome).abs()).sum::<f64>() / n as f64;
    // sum_{i,j} |x_i - x_j| = 2 * sum_k (2k - n + 1) x_(k) over the sorted
    // sample, 0-based.
    let mut pair_sum = 0.0;
    for (k, x) in sorted.iter().enumerate() {
        pair_sum += (2.0 * k as f64 - n as f64 + 1.0) * x;
    }
    pair_sum *= 2.0;
    Ok(term1 - pair_sum / (2.0 * (n * n) as f64))
}

/// Expanding-window backtest settings.
#[derive(Debug, Clone)]
pub struct BacktestConfig {
    /// Rows held out at the end of the sample.
    pub holdout: usize,
    /// Forecast horizons to score, in steps.
    pub horizons: Vec<usize>,
    /// Re-estimate every this many origins (1 = every window).
    pub refit_every: usize,
    /// When set, the model runs on extracted curve factors and forecasts are
    /// mapped back to yield space before scoring.
    pub curve: Option<NsCurveConfig>,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            holdout: 24,
            horizons: vec![1, 3],
            refit_every: 1,
            curve: None,
        }
    }
}

/// One (series, horizon) cell of a backtest report.
#[derive(Debug, Clone, PartialEq)]
pub struct BacktestCell {
    pub series: String,
    pub horizon: usize,
    pub points: usize,
    pub msfe: f64,
    pub crps: f64,
    /// Mean CRPS of a white-noise benchmark fitted to each training window.
    pub crps_baseline: f64,
}

#[derive(Debug, Clone)]
pub struct BacktestReport {
    pub cells: Vec<BacktestCell>,
    /// Training lengths used as forecast origins, in order.
    pub origins: Vec<usize>,
}

impl BacktestReport {
    pub fn cell(&self, series: &str, horizon: usize) -> Option<&BacktestCell> {
        self.cells
            .iter()
            .find(|c| c.series == series && c.horizon == horizon)
    }
}

/// Runs the expanding-window protocol: for each origin the model is fit on
/// all prior rows, forecasts are simulated, and medians and draw ensembles
/// are scored against the realized outcomes.
///
/// A forecast made at origin `o` for horizon `h` targets row `o + h - 1`
/// (0-based), so horizon `h` accumulates `holdout - h + 1` scored points.
pub fn expanding_backtest(
    y: &TimeSeriesMatrix,
    model_cfg: &ModelConfig,
    bt: &BacktestConfig,
) -> Result<BacktestReport, ForecastError> {
    if bt.holdout < 1
        || bt.horizons.is_empty()
        || bt.horizons.iter().any(|&h| h < 1 || h > bt.holdout)
        || bt.refit_every < 1
    {
        return Err(ForecastError::BadBacktestWindow);
    }
    let t_total = y.num_rows();
    if t_total <= bt.holdout + model_cfg.lags + 20 {
        return Err(ForecastError::BadBacktestWindow);
    }

    // In curve mode the model runs on factors extracted row by row (no
    // temporal leakage), while scoring stays in the observed yield space.
    let model_series = match &bt.curve {
        Some(cfg) => ns_extract_factors(y, cfg)?,
        None => y.clone(),
    };
    let outcome_names = y.names.clone();
    let m_out = y.num_series();
    let max_h = *bt.horizons.iter().max().unwrap();
    let first_origin = t_total - bt.holdout;

    let mut sq_err = vec![vec![0.0f64; m_out]; bt.horizons.len()];
    let mut crps_sum = vec![vec![0.0f64; m_out]; bt.horizons.len()];
    let mut base_sum = vec![vec![0.0f64; m_out]; bt.horizons.len()];
    let mut counts = vec![0usize; bt.horizons.len()];
    let mut origins = Vec::new();
    let mut cached: Option<crate::sampler::PosteriorDraws> = None;

    for origin in first_origin..t_total {
        let feasible: Vec<usize> = bt
            .horizons
            .iter()
            .copied()
            .filter(|&h| origin + h <= t_total)
            .collect();
        if feasible.is_empty() {
            continue;
        }
        origins.push(origin);
        let train = TimeSeriesMatrix::new(
            model_series.values.rows(0, origin).into_owned(),
            model_series.names.clone(),
            model_series.frequency.clone(),
        )?;
        let needs_fit =
            cached.is_none() || (origin - first_origin) % bt.refit_every == 0;
        if needs_fit {
            cached = Some(estimate(&train, model_cfg)?);
        }
        let draws = cached.as_ref().unwrap();
        let reach = max_h.min(t_total - origin);
        let pd = predict(draws, &train, reach, origin as u64)?;
        let pd = match &bt.curve {
            Some(cfg) => ns_map_forecasts(&pd, cfg)?,
            None => pd,
        };

        // White-noise benchmark moments from the training window, in
        // outcome space.
        let mut base_mean = vec![0.0f64; m_out];
        let mut base_sd = vec![0.0f64; m_out];
        for s in 0..m_out {
            let col: Vec<f64> = (0..origin).map(|t| y.values[(t, s)]).collect();
            let mu = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>()
                / (col.len() as f64 - 1.0);
            base_mean[s] = mu;
            base_sd[s] = var.max(1e-12).sqrt();
        }
        let mut base_rng = rng::stream(
            model_cfg.seed,
            domains::PREDICT,
            origin as u64,
            u64::MAX,
        );

        for (hi, &h) in bt.horizons.iter().enumerate() {
            if !feasible.contains(&h) {
                continue;
            }
            counts[hi] += 1;
            let target = origin + h - 1;
            for s in 0..m_out {
                let outcome = y.values[(target, s)];
                let med = pd.median(h - 1, s);
                sq_err[hi][s] += (med - outcome) * (med - outcome);
                crps_sum[hi][s] += crps(&pd.cell_draws(h - 1, s), outcome)?;
                let bench: Vec<f64> = standard_normal_vec(&mut base_rng, pd.num_draws)
                    .into_iter()
                    .map(|z| base_mean[s] + base_sd[s] * z)
                    .collect();
                base_sum[hi][s] += crps(&bench, outcome)?;
            }
        }
    }

    let mut cells = Vec::new();
    for (hi, &h) in bt.horizons.iter().enumerate() {
        for s in 0..m_out {
            let n = counts[hi] as f64;
            cells.push(BacktestCell {
                series: outcome_names[s].clone(),
                horizon: h,
                points: counts[hi],
                msfe: sq_err[hi][s] / n,
                crps: crps_sum[hi][s] / n,
                crps_baseline: base_sum[hi][s] / n,
            });
        }
    }
    Ok(BacktestReport { cells, origins })
}

/// Convenience: the design matrix implied by a conditioning sample, exposed
/// for fit diagnostics.
pub fn design_matrix(
    y: &TimeSeriesMatrix,
    cfg: &ModelConfig,
) -> Result<DMatrix<f64>, ForecastError> {
    let ordered = match &cfg.ordering {
        Some(order) => y.reorder(order)?,
        None => y.clone(),
    };
    Ok(build_lag_design(&ordered, cfg.lags)?.x)
}
