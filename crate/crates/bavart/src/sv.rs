//! Per-equation stochastic volatility: an AR(1) log-variance state sampled
//! through the auxiliary Gaussian-mixture representation of a log
//! chi-squared observation error, with an interweaving step between the
//! centered and non-centered parameterizations to keep the AR parameters
//! mixing at high persistence.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use thiserror::Error;

/// Offset inside `log(eps^2 + offset)` guarding against exact zeros.
pub const LOG_OFFSET: f64 = 1e-10;

/// Ten-component Gaussian mixture approximating the density of
/// `log(z^2)` for standard normal `z`. Component probabilities, means and
/// variances; the table's first two moments match the analytic values
/// `digamma(1/2) + ln 2` and `pi^2 / 2` to about 1e-4 and 1e-3.
pub const MIX_PROB: [f64; 10] = [
    0.00609, 0.04775, 0.13057, 0.20674, 0.22715, 0.18842, 0.12047, 0.05591, 0.01575, 0.00115,
];
pub const MIX_MEAN: [f64; 10] = [
    1.92677, 1.34744, 0.73504, 0.02266, -0.85173, -1.97278, -3.46788, -5.55246, -8.68384,
    -14.65000,
];
pub const MIX_VAR: [f64; 10] = [
    0.11265, 0.17788, 0.26768, 0.40611, 0.62699, 0.98583, 1.57469, 2.54498, 4.16591, 7.33342,
];

#[derive(Debug, Error)]
pub enum SvError {
    #[error("persistence must satisfy |rho| < 1, got {0}")]
    BadRho(f64),
    #[error("innovation variance must be positive and finite, got {0}")]
    BadSigma2(f64),
    #[error("log-volatility path contains a non-finite value")]
    NonFiniteH,
}

/// Log-variance path and AR(1) parameters for one equation.
///
/// `h[t]` is the log variance at observation `t`; the presample value `h_0`
/// is integrated over each sweep through its stationary distribution
/// `N(c, sigma2/(1 - rho^2))` and is not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SvState {
    pub h: Vec<f64>,
    pub c: f64,
    pub rho: f64,
    pub sigma2: f64,
}

impl SvState {
    pub fn new(h: Vec<f64>, c: f64, rho: f64, sigma2: f64) -> Result<Self, SvError> {
        let state = Self { h, c, rho, sigma2 };
        state.validate()?;
        Ok(state)
    }

    pub fn validate(&self) -> Result<(), SvError> {
        if !(self.rho.abs() < 1.0) {
            return Err(SvError::BadRho(self.rho));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(SvError::BadSigma2(self.sigma2));
        }
        if !self.c.is_finite() || self.h.iter().any(|v| !v.is_finite()) {
            return Err(SvError::NonFiniteH);
        }
        Ok(())
    }

    /// Warm start: a flat path at `log_var` with moderate persistence.
    pub fn initialize(len: usize, log_var: f64) -> Self {
        Self {
            h: vec![log_var; len],
            c: log_var,
            rho: 0.9,
            sigma2: 0.1,
        }
    }
}

/// Prior hyperparameters: `c ~ N(0, c_var)`, `(rho+1)/2 ~ Beta(rho_a, rho_b)`,
/// `sigma2 ~ Gamma(sigma2_shape, rate = sigma2_rate)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvPrior {
    pub c_var: f64,
    pub rho_a: f64,
    pub rho_b: f64,
    pub sigma2_shape: f64,
    pub sigma2_rate: f64,
}

impl Default for SvPrior {
    fn default() -> Self {
        Self {
            c_var: 100.0,
            rho_a: 25.0,
            rho_b: 5.0,
            sigma2_shape: 0.5,
            sigma2_rate: 0.5,
        }
    }
}

impl SvPrior {
    /// Prior mean of the persistence under the Beta transform.
    pub fn rho_prior_mean(&self) -> f64 {
        2.0 * self.rho_a / (self.rho_a + self.rho_b) - 1.0
    }

    fn log_rho_density(&self, rho: f64) -> f64 {
        (self.rho_a - 1.0) * (1.0 + rho).ln() + (self.rho_b - 1.0) * (1.0 - rho).ln()
    }

    /// Variance of the signed-sigma normal prior implied by the Gamma prior
    /// on sigma2 (a Gamma(1/2, rate r) on sigma2 is a half-normal scale
    /// N(0, 1/(2r)) on sigma).
    fn sigma_normal_var(&self) -> f64 {
        1.0 / (2.0 * self.sigma2_rate)
    }
}

fn log_squared(eps: &[f64]) -> Vec<f64> {
    eps.iter().map(|e| (e * e + LOG_OFFSET).ln()).collect()
}

/// Draws a mixture indicator for each observation given the current log
/// variance at that observation.
fn draw_indicators(ystar: &[f64], h: &[f64], rng: &mut impl Rng) -> Vec<usize> {
    let mut out = Vec::with_capacity(ystar.len());
    let mut probs = [0.0f64; 10];
    for (t, &y) in ystar.iter().enumerate() {
        let mut total = 0.0;
        for i in 0..10 {
            let d = y - h[t] - MIX_MEAN[i];
            let p = MIX_PROB[i] * (-0.5 * d * d / MIX_VAR[i]).exp() / MIX_VAR[i].sqrt();
            probs[i] = p;
            total += p;
        }
        let mut u = rng.gen::<f64>() * total;
        let mut pick = 9;
        for i in 0..10 {
            u -= probs[i];
            if u < 0.0 {
                pick = i;
                break;
            }
        }
        out.push(pick);
    }
    out
}

/// Joint draw of `(h_0, h_1..h_T)` from the Gaussian full conditional with
/// tridiagonal precision, given mixture indicators and AR parameters.
fn draw_path(
    ystar: &[f64],
    indicators: &[usize],
    c: f64,
    rho: f64,
    sigma2: f64,
    rng: &mut impl Rng,
) -> (f64, Vec<f64>) {
    let t_len = ystar.len();
    let n = t_len + 1;
    let mut diag = vec![0.0f64; n];
    let mut off = vec![0.0f64; n - 1]; // entry t couples h_t and h_{t+1}
    let mut b = vec![0.0f64; n];
    let s2 = sigma2;
    diag[0] = 1.0 / s2;
    b[0] = c * (1.0 - rho) / s2;
    for t in 1..n {
        let v = MIX_VAR[indicators[t - 1]];
        let obs = (ystar[t - 1] - MIX_MEAN[indicators[t - 1]]) / v;
        let ar = if t < n - 1 {
            (1.0 + rho * rho) / s2
        } else {
            1.0 / s2
        };
        diag[t] = ar + 1.0 / v;
        let drift = if t < n - 1 {
            c * (1.0 - rho) * (1.0 - rho) / s2
        } else {
            c * (1.0 - rho) / s2
        };
        b[t] = drift + obs;
        off[t - 1] = -rho / s2;
    }
    // Cholesky of the tridiagonal precision, then one forward and one
    // backward sweep give mean and draw together.
    let mut l_diag = vec![0.0f64; n];
    let mut l_off = vec![0.0f64; n - 1];
    l_diag[0] = diag[0].sqrt();
    for t in 1..n {
        l_off[t - 1] = off[t - 1] / l_diag[t - 1];
        l_diag[t] = (diag[t] - l_off[t - 1] * l_off[t - 1]).sqrt();
    }
    let mut a = vec![0.0f64; n];
    a[0] = b[0] / l_diag[0];
    for t in 1..n {
        a[t] = (b[t] - l_off[t - 1] * a[t - 1]) / l_diag[t];
    }
    let mut h = vec![0.0f64; n];
    let z: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    h[n - 1] = (a[n - 1] + z[n - 1]) / l_diag[n - 1];
    for t in (0..n - 1).rev() {
        h[t] = (a[t] + z[t] - l_off[t] * h[t + 1]) / l_diag[t];
    }
    let path = h[1..].to_vec();
    (h[0], path)
}

/// Solves a symmetric 2x2 system and draws from N(A^-1 rhs, A^-1).
/// Returns `None` when the matrix is not positive definite.
fn draw_bivariate_normal(
    a11: f64,
    a12: f64,
    a22: f64,
    rhs1: f64,
    rhs2: f64,
    rng: &mut impl Rng,
) -> Option<(f64, f64)> {
    if !(a11 > 0.0) {
        return None;
    }
    let l11 = a11.sqrt();
    let l21 = a12 / l11;
    let d = a22 - l21 * l21;
    if !(d > 0.0) {
        return None;
    }
    let l22 = d.sqrt();
    // Mean: solve L y = rhs, then L' m = y.
    let y1 = rhs1 / l11;
    let y2 = (rhs2 - l21 * y1) / l22;
    let m2 = y2 / l22;
    let m1 = (y1 - l21 * m2) / l11;
    // Draw: m + L'^-1 z has covariance A^-1.
    let z1: f64 = rng.sample(StandardNormal);
    let z2: f64 = rng.sample(StandardNormal);
    let w2 = z2 / l22;
    let w1 = (z1 - l21 * w2) / l11;
    Some((m1 + w1, m2 + w2))
}

/// One full Gibbs pass for the volatility block of a single equation.
///
/// Steps: mixture indicators, joint path draw, centered updates of
/// `(c, rho)` (independence step from the lag-regression proposal) and of
/// `sigma2` (independence step from its conditional under a flat-ish
/// auxiliary prior), then a move to the non-centered scale where `(c, sigma)`
/// have a conjugate Gaussian draw and `rho` gets one more independence step.
pub fn sample_sv(eps: &[f64], state: &SvState, prior: &SvPrior, rng: &mut impl Rng) -> SvState {
    assert_eq!(
        eps.len(),
        state.h.len(),
        "residual and volatility lengths must match"
    );
    let t_len = eps.len();
    let ystar = log_squared(eps);
    let indicators = draw_indicators(&ystar, &state.h, rng);
    let (mut c, mut rho, mut sigma2) = (state.c, state.rho, state.sigma2);
    let (h0, mut h) = draw_path(&ystar, &indicators, c, rho, sigma2, rng);

    // Centered step for (c, rho): propose from the Gaussian posterior of the
    // regression h_t = gamma + rho h_{t-1} + e, then correct for the actual
    // priors, the stationary h_0 term and the gamma -> c reparameterization.
    let mut sum_x = 0.0;
    let mut sum_xx = 0.0;
    let mut sum_y = 0.0;
    let mut sum_xy = 0.0;
    for t in 0..t_len {
        let lag = if t == 0 { h0 } else { h[t - 1] };
        sum_x += lag;
        sum_xx += lag * lag;
        sum_y += h[t];
        sum_xy += lag * h[t];
    }
    let tf = t_len as f64;
    let scale = 1.0 / sigma2;
    if let Some((gamma_new, rho_new)) = draw_bivariate_normal(
        tf * scale,
        sum_x * scale,
        sum_xx * scale,
        sum_y * scale,
        sum_xy * scale,
        rng,
    ) {
        if rho_new.abs() < 1.0 {
            let c_new = gamma_new / (1.0 - rho_new);
            let log_target = |c_: f64, r_: f64| {
                0.5 * (1.0 - r_ * r_).ln() - (h0 - c_) * (h0 - c_) * (1.0 - r_ * r_) / (2.0 * sigma2)
                    - c_ * c_ / (2.0 * prior.c_var)
                    + prior.log_rho_density(r_)
                    - (1.0 - r_).ln()
            };
            let delta = log_target(c_new, rho_new) - log_target(c, rho);
            if delta >= 0.0 || rng.gen::<f64>().ln() < delta {
                c = c_new;
                rho = rho_new;
            }
        }
    }

    // Centered step for sigma2: independence proposal from the inverse-gamma
    // conditional; the leftover acceptance factor is exactly the Gamma
    // prior's exponential tilt.
    let mut s = (1.0 - rho * rho) * (h0 - c) * (h0 - c);
    for t in 0..t_len {
        let lag = if t == 0 { h0 } else { h[t - 1] };
        let e = h[t] - c - rho * (lag - c);
        s += e * e;
    }
    if s > 0.0 {
        let g = Gamma::new(0.5 * tf, 2.0 / s).expect("valid gamma");
        let draw = 1.0 / g.sample(rng);
        if draw.is_finite() && draw > 0.0 {
            let delta = -prior.sigma2_rate * (draw - sigma2);
            if delta >= 0.0 || rng.gen::<f64>().ln() < delta {
                sigma2 = draw;
            }
        }
    }

    // Non-centered step: with hhat = (h - c)/sigma held fixed, (c, sigma)
    // enter the observation equation linearly and get a conjugate joint
    // Gaussian draw; sigma is signed here and squares back into sigma2.
    let sigma = sigma2.sqrt();
    let hhat0 = (h0 - c) / sigma;
    let hhat: Vec<f64> = h.iter().map(|&v| (v - c) / sigma).collect();
    let mut a11 = 1.0 / prior.c_var;
    let mut a12 = 0.0;
    let mut a22 = 1.0 / prior.sigma_normal_var();
    let mut r1 = 0.0;
    let mut r2 = 0.0;
    for t in 0..t_len {
        let v = MIX_VAR[indicators[t]];
        let y = ystar[t] - MIX_MEAN[indicators[t]];
        a11 += 1.0 / v;
        a12 += hhat[t] / v;
        a22 += hhat[t] * hhat[t] / v;
        r1 += y / v;
        r2 += hhat[t] * y / v;
    }
    if let Some((c_new, sigma_signed)) = draw_bivariate_normal(a11, a12, a22, r1, r2, rng) {
        let s2_new = sigma_signed * sigma_signed;
        if s2_new.is_finite() && s2_new > 1e-12 {
            c = c_new;
            sigma2 = s2_new;
            for t in 0..t_len {
                h[t] = c + sigma_signed * hhat[t];
            }
        }
    }

    // Non-centered persistence refresh; the unit-variance AR likelihood of
    // hhat is the proposal, leaving the hhat_0 term and the Beta prior.
    let mut sxx = hhat0 * hhat0;
    let mut sxy = hhat0 * hhat[0];
    for t in 1..t_len {
        sxx += hhat[t - 1] * hhat[t - 1];
        sxy += hhat[t - 1] * hhat[t];
    }
    if sxx > 0.0 {
        let mean = sxy / sxx;
        let sd = (1.0 / sxx).sqrt();
        let z: f64 = rng.sample(StandardNormal);
        let rho_new = mean + sd * z;
        if rho_new.abs() < 1.0 {
            let log_target = |r_: f64| {
                0.5 * (1.0 - r_ * r_).ln() - hhat0 * hhat0 * (1.0 - r_ * r_) / 2.0
                    + prior.log_rho_density(r_)
            };
            let delta = log_target(rho_new) - log_target(rho);
            if delta >= 0.0 || rng.gen::<f64>().ln() < delta {
                rho = rho_new;
            }
        }
    }

    SvState { h, c, rho, sigma2 }
}

/// Homoscedastic fallback: one Gibbs pass for a constant log variance `c`
/// (so the error variance is `e^c`), using the same mixture representation
/// and the `N(0, c_var)` prior. Returns the refreshed `c`.
pub fn sample_constant_variance(
    eps: &[f64],
    c: f64,
    prior: &SvPrior,
    rng: &mut impl Rng,
) -> f64 {
    let ystar = log_squared(eps);
    let flat = vec![c; eps.len()];
    let indicators = draw_indicators(&ystar, &flat, rng);
    let mut prec = 1.0 / prior.c_var;
    let mut rhs = 0.0;
    for t in 0..eps.len() {
        let v = MIX_VAR[indicators[t]];
        prec += 1.0 / v;
        rhs += (ystar[t] - MIX_MEAN[indicators[t]]) / v;
    }
    let mean = rhs / prec;
    let z: f64 = rng.sample(StandardNormal);
    mean + z / prec.sqrt()
}

/// Simulates the log-variance path `o` steps past the end of the sample.
pub fn forecast_volatility(state: &SvState, horizon: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(horizon);
    let mut prev = state.h.last().copied().unwrap_or(state.c);
    let sd = state.sigma2.sqrt();
    for _ in 0..horizon {
        let z: f64 = rng.sample(StandardNormal);
        let next = state.c + state.rho * (prev - state.c) + sd * z;
        out.push(next);
        prev = next;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn simulate_sv_data(
        t_len: usize,
        c: f64,
        rho: f64,
        sigma: f64,
        rng: &mut impl Rng,
    ) -> (Vec<f64>, Vec<f64>) {
        let mut h = Vec::with_capacity(t_len);
        let mut eps = Vec::with_capacity(t_len);
        let mut prev = c + sigma / (1.0 - rho * rho).sqrt() * rng.sample::<f64, _>(StandardNormal);
        for _ in 0..t_len {
            let ht: f64 = c + rho * (prev - c) + sigma * rng.sample::<f64, _>(StandardNormal);
            let e: f64 = (0.5 * ht).exp() * rng.sample::<f64, _>(StandardNormal);
            h.push(ht);
            eps.push(e);
            prev = ht;
        }
        (h, eps)
    }

    #[test]
    fn mixture_table_is_a_probability_distribution_with_the_right_moments() {
        let total: f64 = MIX_PROB.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        let mean: f64 = MIX_PROB.iter().zip(&MIX_MEAN).map(|(p, m)| p * m).sum();
        let second: f64 = MIX_PROB
            .iter()
            .zip(MIX_MEAN.iter().zip(&MIX_VAR))
            .map(|(p, (m, v))| p * (v + m * m))
            .sum();
        let var = second - mean * mean;
        // Analytic moments of log chi-squared with one degree of freedom.
        let exact_mean = -1.2703628454614782;
        let exact_var = 4.934802200544679;
        assert!((mean - exact_mean).abs() < 5e-4, "mean {mean}");
        assert!((var - exact_var).abs() < 5e-3, "var {var}");
    }

    #[test]
    fn beta_prior_mean_matches_the_transform() {
        let prior = SvPrior::default();
        assert!((prior.rho_prior_mean() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn state_validation_rejects_bad_parameters() {
        assert!(matches!(
            SvState::new(vec![0.0], 0.0, 1.0, 0.1),
            Err(SvError::BadRho(_))
        ));
        assert!(matches!(
            SvState::new(vec![0.0], 0.0, 0.5, 0.0),
            Err(SvError::BadSigma2(_))
        ));
        assert!(matches!(
            SvState::new(vec![f64::NAN], 0.0, 0.5, 0.1),
            Err(SvError::NonFiniteH)
        ));
    }

    #[test]
    fn forecast_without_persistence_is_iid() {
        let state = SvState::new(vec![5.0; 4], -2.0, 0.0, 0.09).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let path = forecast_volatility(&state, 1, &mut rng);
            sum += path[0];
            sumsq += path[0] * path[0];
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!((mean - -2.0).abs() < 4.0 * (0.09f64 / n as f64).sqrt());
        assert!((var - 0.09).abs() < 0.005);
    }

    #[test]
    fn forecast_mean_reverts_along_the_ar_recursion() {
        let (c, rho, sigma2) = (-1.0, 0.8, 0.04);
        let h_last = 1.0;
        let state = SvState::new(vec![h_last; 3], c, rho, sigma2).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        let horizon = 6;
        let n = 100_000;
        let mut sums = vec![0.0f64; horizon];
        for _ in 0..n {
            let path = forecast_volatility(&state, horizon, &mut rng);
            for (s, &v) in sums.iter_mut().zip(&path) {
                *s += v;
            }
        }
        for s in 1..=horizon {
            let expect = c + rho.powi(s as i32) * (h_last - c);
            // Var(h_{T+s}) = sigma2 * sum_{i<s} rho^{2i}
            let var: f64 = sigma2 * (0..s).map(|i| rho.powi(2 * i as i32)).sum::<f64>();
            let se = (var / n as f64).sqrt();
            let got = sums[s - 1] / n as f64;
            assert!(
                (got - expect).abs() < 4.0 * se,
                "horizon {s}: {got} vs {expect}"
            );
        }
        // Starting at the unconditional mean stays there in expectation.
        let at_mean = SvState::new(vec![c; 3], c, rho, sigma2).unwrap();
        let mut sum = 0.0;
        for _ in 0..n {
            sum += forecast_volatility(&at_mean, 3, &mut rng)[2];
        }
        let var3: f64 = sigma2 * (0..3).map(|i| rho.powi(2 * i as i32)).sum::<f64>();
        assert!((sum / n as f64 - c).abs() < 4.0 * (var3 / n as f64).sqrt());
    }

    #[test]
    fn sampled_persistence_stays_stationary() {
        let mut rng = ChaCha12Rng::seed_from_u64(101);
        let (_, eps) = simulate_sv_data(300, -1.0, 0.9, 0.3, &mut rng);
        let mut state = SvState::initialize(300, -1.0);
        for _ in 0..300 {
            state = sample_sv(&eps, &state, &SvPrior::default(), &mut rng);
            assert!(state.rho.abs() < 1.0);
            assert!(state.sigma2 > 0.0);
            state.validate().unwrap();
        }
    }

    #[test]
    fn recovery_smoke_on_a_short_sample() {
        // Loose small-sample version of the full-size recovery check in the
        // acceptance suite.
        let mut rng = ChaCha12Rng::seed_from_u64(5150);
        let (h_true, eps) = simulate_sv_data(600, -1.0, 0.9, 0.25, &mut rng);
        let mut state = SvState::initialize(600, 0.0);
        let prior = SvPrior::default();
        let burn = 400;
        let keep = 600;
        let mut c_sum = 0.0;
        let mut h_sum = vec![0.0f64; 600];
        for sweep in 0..burn + keep {
            state = sample_sv(&eps, &state, &prior, &mut rng);
            if sweep >= burn {
                c_sum += state.c;
                for (acc, &v) in h_sum.iter_mut().zip(&state.h) {
                    *acc += v;
                }
            }
        }
        let c_mean = c_sum / keep as f64;
        assert!((c_mean - -1.0).abs() < 0.6, "c posterior mean {c_mean}");
        let h_mean: Vec<f64> = h_sum.iter().map(|v| v / keep as f64).collect();
        let corr = correlation(&h_mean, &h_true);
        assert!(corr > 0.5, "corr(h_hat, h_true) = {corr}");
    }

    #[test]
    fn scaling_residuals_shifts_only_the_level() {
        // Multiplying residuals by k adds 2 ln k to the log variance, so the
        // c posterior shifts by 2 ln k while rho and sigma2 stay put.
        let mut rng = ChaCha12Rng::seed_from_u64(404);
        let (_, eps) = simulate_sv_data(800, -0.5, 0.9, 0.25, &mut rng);
        let k = 3.0;
        let scaled: Vec<f64> = eps.iter().map(|e| e * k).collect();
        let prior = SvPrior::default();

        let run = |data: &[f64], seed: u64| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let mut state = SvState::initialize(data.len(), 0.0);
            let burn = 300;
            let keep = 700;
            let (mut c_acc, mut r_acc, mut s_acc) = (0.0, 0.0, 0.0);
            for sweep in 0..burn + keep {
                state = sample_sv(data, &state, &prior, &mut rng);
                if sweep >= burn {
                    c_acc += state.c;
                    r_acc += state.rho;
                    s_acc += state.sigma2;
                }
            }
            (
                c_acc / keep as f64,
                r_acc / keep as f64,
                s_acc / keep as f64,
            )
        };
        let (c0, r0, s0) = run(&eps, 1);
        let (c1, r1, s1) = run(&scaled, 2);
        assert!(
            (c1 - c0 - 2.0 * k.ln()).abs() < 0.25,
            "shift {} vs {}",
            c1 - c0,
            2.0 * k.ln()
        );
        assert!((r1 - r0).abs() < 0.1);
        assert!((s1 - s0).abs() < 0.1);
    }

    #[test]
    fn constant_variance_sampler_matches_grid_oracle() {
        // With the mixture indicators integrated out, the marginal of each
        // transformed observation given c is a 10-component normal mixture;
        // a fine grid over c gives the exact posterior to compare against.
        let mut rng = ChaCha12Rng::seed_from_u64(909);
        let c_true: f64 = -0.8;
        let eps: Vec<f64> = (0..400)
            .map(|_| (0.5 * c_true).exp() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let prior = SvPrior::default();

        let mut c = 0.0;
        let burn = 500;
        let keep = 4000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for sweep in 0..burn + keep {
            c = sample_constant_variance(&eps, c, &prior, &mut rng);
            if sweep >= burn {
                sum += c;
                sumsq += c * c;
            }
        }
        let mc_mean = sum / keep as f64;
        let mc_var = sumsq / keep as f64 - mc_mean * mc_mean;

        let ystar = log_squared(&eps);
        let log_lik = |c_: f64| {
            ystar
                .iter()
                .map(|&y| {
                    let mut p = 0.0;
                    for i in 0..10 {
                        let d = y - c_ - MIX_MEAN[i];
                        p += MIX_PROB[i] * (-0.5 * d * d / MIX_VAR[i]).exp()
                            / (2.0 * std::f64::consts::PI * MIX_VAR[i]).sqrt();
                    }
                    p.ln()
                })
                .sum::<f64>()
        };
        let lo = -3.0;
        let hi = 2.0;
        let steps = 4000;
        let dx = (hi - lo) / steps as f64;
        let mut weights = Vec::with_capacity(steps + 1);
        let mut max_lw = f64::MIN;
        for i in 0..=steps {
            let ci = lo + i as f64 * dx;
            let lw = log_lik(ci) - ci * ci / (2.0 * prior.c_var);
            weights.push((ci, lw));
            max_lw = max_lw.max(lw);
        }
        let mut z = 0.0;
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for &(ci, lw) in &weights {
            let w = (lw - max_lw).exp();
            z += w;
            m1 += w * ci;
            m2 += w * ci * ci;
        }
        let grid_mean = m1 / z;
        let grid_var = m2 / z - grid_mean * grid_mean;

        let se = (grid_var / keep as f64).sqrt() * 3.0; // generous for autocorrelation
        assert!(
            (mc_mean - grid_mean).abs() < (10.0 * se).max(0.01),
            "{mc_mean} vs {grid_mean}"
        );
        assert!(
            (mc_var - grid_var).abs() < 0.3 * grid_var,
            "{mc_var} vs {grid_var}"
        );
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let mut sab = 0.0;
        let mut saa = 0.0;
        let mut sbb = 0.0;
        for (x, y) in a.iter().zip(b) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma) * (x - ma);
            sbb += (y - mb) * (y - mb);
        }
        sab / (saa * sbb).sqrt()
    }
}
