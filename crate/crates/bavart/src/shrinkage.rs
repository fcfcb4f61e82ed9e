//! Horseshoe shrinkage for the free elements of the contemporaneous loading
//! matrix, via the inverse-gamma auxiliary representation of half-Cauchy
//! scales, plus the Gaussian full conditional for one covariance row.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ShrinkageError {
    #[error("coefficient vector length {got} does not match the state ({expected})")]
    LengthMismatch { got: usize, expected: usize },
    #[error("row {row}: regressors/residual/weights have inconsistent lengths")]
    RowShapeMismatch { row: usize },
    #[error("observation weight must be positive and finite, got {0}")]
    BadWeight(f64),
    #[error("posterior precision is not positive definite")]
    SingularPosterior,
}

/// Numeric guard for the sampled scales; the half-Cauchy posterior can push
/// them many orders of magnitude without changing the conditional draw
/// appreciably, so clamping only prevents overflow.
const SCALE_FLOOR: f64 = 1e-16;
const SCALE_CEIL: f64 = 1e16;

/// Local and global scales for all free loading-matrix elements.
///
/// With M equations there are M(M-1)/2 free elements; equation `eq`
/// (0-based) owns the slice `eq*(eq-1)/2 .. eq*(eq+1)/2` of length `eq`.
/// One global scale `lambda2` is shared across every equation.
#[derive(Debug, Clone, PartialEq)]
pub struct HorseshoeState {
    pub tau2: Vec<f64>,
    pub nu: Vec<f64>,
    pub lambda2: f64,
    pub xi: f64,
}

impl HorseshoeState {
    /// Unit scales for `q` coefficients.
    pub fn new(num_coefficients: usize) -> Self {
        Self {
            tau2: vec![1.0; num_coefficients],
            nu: vec![1.0; num_coefficients],
            lambda2: 1.0,
            xi: 1.0,
        }
    }

    /// Flat index range of equation `eq`'s coefficients.
    pub fn row_range(eq: usize) -> std::ops::Range<usize> {
        let start = eq * eq.saturating_sub(1) / 2;
        start..start + eq
    }

    /// Prior variances `lambda2 * tau2` for equation `eq`'s row.
    pub fn row_prior_variances(&self, eq: usize) -> Vec<f64> {
        Self::row_range(eq)
            .map(|i| (self.lambda2 * self.tau2[i]).clamp(SCALE_FLOOR, SCALE_CEIL))
            .collect()
    }
}

/// Shape and rate of the inverse-gamma full conditional for one local
/// scale `tau2` given its coefficient, the global scale and the auxiliary.
pub fn horseshoe_conditional_params(a: f64, lambda: f64, nu_aux: f64) -> (f64, f64) {
    (1.0, 1.0 / nu_aux + a * a / (2.0 * lambda * lambda))
}

fn inverse_gamma(shape: f64, rate: f64, rng: &mut impl Rng) -> f64 {
    let g = Gamma::new(shape, 1.0 / rate).expect("valid inverse-gamma parameters");
    (1.0 / g.sample(rng)).clamp(SCALE_FLOOR, SCALE_CEIL)
}

/// One Gibbs pass over all local scales, their auxiliaries, the shared
/// global scale and its auxiliary, given the current coefficients.
pub fn update_scales(
    state: &mut HorseshoeState,
    coefficients: &[f64],
    rng: &mut impl Rng,
) -> Result<(), ShrinkageError> {
    let q = state.tau2.len();
    if coefficients.len() != q {
        return Err(ShrinkageError::LengthMismatch {
            got: coefficients.len(),
            expected: q,
        });
    }
    let lambda = state.lambda2.sqrt();
    for i in 0..q {
        let (shape, rate) = horseshoe_conditional_params(coefficients[i], lambda, state.nu[i]);
        state.tau2[i] = inverse_gamma(shape, rate, rng);
        state.nu[i] = inverse_gamma(1.0, 1.0 + 1.0 / state.tau2[i], rng);
    }
    if q > 0 {
        let quad: f64 = coefficients
            .iter()
            .zip(&state.tau2)
            .map(|(a, t2)| a * a / t2)
            .sum();
        state.lambda2 = inverse_gamma(
            (q as f64 + 1.0) / 2.0,
            1.0 / state.xi + 0.5 * quad,
            rng,
        );
        state.xi = inverse_gamma(1.0, 1.0 + 1.0 / state.lambda2, rng);
    }
    Ok(())
}

/// Draws equation `eq`'s covariance row from its Gaussian full conditional
/// `N(V Z' W^-1 r, V)` with `V = (Z' W^-1 Z + D^-1)^-1` and
/// `D = diag(lambda2 * tau2)`. The first equation has no free elements and
/// returns an empty vector.
pub fn sample_covariance_row(
    eq: usize,
    target: &[f64],
    regressors: &DMatrix<f64>,
    weights: &[f64],
    state: &HorseshoeState,
    rng: &mut impl Rng,
) -> Result<DVector<f64>, ShrinkageError> {
    if eq == 0 {
        return Ok(DVector::zeros(0));
    }
    let t_len = target.len();
    let n = eq;
    if regressors.nrows() != t_len || regressors.ncols() != n || weights.len() != t_len {
        return Err(ShrinkageError::RowShapeMismatch { row: eq });
    }
    for &w in weights {
        if !(w > 0.0 && w.is_finite()) {
            return Err(ShrinkageError::BadWeight(w));
        }
    }
    let prior_var = state.row_prior_variances(eq);
    let mut vinv: DMatrix<f64> = DMatrix::zeros(n, n);
    let mut b: DVector<f64> = DVector::zeros(n);
    for t in 0..t_len {
        let wi = 1.0 / weights[t];
        for i in 0..n {
            let zi = regressors[(t, i)];
            b[i] += zi * wi * target[t];
            for j in i..n {
                vinv[(i, j)] += zi * wi * regressors[(t, j)];
            }
        }
    }
    for i in 0..n {
        vinv[(i, i)] += 1.0 / prior_var[i];
        for j in 0..i {
            vinv[(i, j)] = vinv[(j, i)];
        }
    }
    let chol = Cholesky::new(vinv).ok_or(ShrinkageError::SingularPosterior)?;
    let mean = chol.solve(&b);
    // mean + L'^-1 z has covariance V.
    let l = chol.l();
    let z: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let mut x = vec![0.0f64; n];
    for i in (0..n).rev() {
        let mut acc = z[i];
        for k in i + 1..n {
            acc -= l[(k, i)] * x[k];
        }
        x[i] = acc / l[(i, i)];
    }
    Ok(DVector::from_iterator(n, (0..n).map(|i| mean[i] + x[i])))
}
