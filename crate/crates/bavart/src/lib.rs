//! Bayesian additive vector autoregressive tree (BAVART) estimation engine.
//!
//! A VAR in structural form where each equation's conditional mean is a sum
//! of regression trees, the error variances follow per-equation stochastic
//! volatility and the free covariance elements carry a Horseshoe prior.
//! Estimation is equation-by-equation Gibbs sampling; the fitted model
//! produces multi-step density forecasts, forecast-accuracy scores and
//! generalized impulse responses with optional zero restrictions.
//!
//! The crate is organised around the sampling pipeline:
//!
//! - [`data`]: CSV ingestion, lag designs and Nelson-Siegel factor mapping.
//! - [`tree`]: decision trees, the tree-generating prior, integrated
//!   likelihoods and the Metropolis-Hastings proposal kernel.
//! - [`sv`]: log-volatility sampling via the auxiliary Gaussian mixture
//!   with an interweaved parameter step.
//! - [`shrinkage`]: Horseshoe scale updates and the Gaussian draw of
//!   covariance rows.
//! - [`sampler`]: the full Gibbs sweep and posterior draw collection.
//! - [`forecast`]: predictive simulation, MSFE/CRPS scoring and the
//!   expanding-window backtest.
//! - [`girf`]: generalized impulse responses with common random numbers.
//! - [`store`]: the on-disk draw directory format.
//! - [`dgp`]: synthetic data generators used for validation runs.

pub mod data;
pub mod dgp;
pub mod forecast;
pub mod girf;
pub mod rng;
pub mod sampler;
pub mod shrinkage;
pub mod store;
pub mod sv;
pub mod tree;

pub use data::{build_lag_design, load_csv, LagDesign, NsCurveConfig, TimeSeriesMatrix};
pub use sampler::{estimate, ModelConfig, ModelState, PosteriorDraws};

/// Caps the size of the global worker pool. A no-op when `threads` is zero
/// (all cores) or when a pool already exists. Results are byte-identical at
/// any thread count; this only bounds parallelism.
pub fn configure_threads(threads: usize) {
    if threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
}
