//! Time-series ingestion, lag designs and Nelson-Siegel factor mapping.

use std::path::Path;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::forecast::PredictiveDraws;

/// Errors raised while loading or shaping time-series data.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot open {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv structure error: {0}")]
    Csv(String),
    #[error("cell at data row {row}, column {column} is not a finite number: {value:?}")]
    BadCell {
        row: usize,
        column: String,
        value: String,
    },
    #[error("need at least 2 data rows, found {0}")]
    TooFewRows(usize),
    #[error("column names are not unique: {0:?} appears twice")]
    DuplicateName(String),
    #[error("matrix has {names} names for {columns} columns")]
    NameCountMismatch { names: usize, columns: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("lag order must be at least 1, got {0}")]
    LagTooSmall(usize),
    #[error("lag order {p} leaves no usable rows for sample length {t}")]
    LagTooLarge { p: usize, t: usize },
    #[error("maturities must be positive and strictly increasing")]
    BadMaturities,
    #[error("decay parameter must be positive, got {0}")]
    BadDecay(f64),
    #[error("need at least 3 maturities for factor extraction, got {0}")]
    TooFewMaturities(usize),
    #[error("matrix has {cols} columns but the curve config lists {maturities} maturities")]
    MaturityMismatch { cols: usize, maturities: usize },
    #[error("loading matrix is rank deficient")]
    RankDeficient,
    #[error("expected {expected} series, got {got}")]
    SeriesCountMismatch { expected: usize, got: usize },
}

/// A complete T x M panel: rows are time points, columns are variables.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesMatrix {
    pub values: DMatrix<f64>,
    pub names: Vec<String>,
    pub frequency: String,
}

impl TimeSeriesMatrix {
    /// Validates shape, finiteness and name uniqueness.
    pub fn new(
        values: DMatrix<f64>,
        names: Vec<String>,
        frequency: impl Into<String>,
    ) -> Result<Self, DataError> {
        if names.len() != values.ncols() {
            return Err(DataError::NameCountMismatch {
                names: names.len(),
                columns: values.ncols(),
            });
        }
        if values.nrows() < 2 {
            return Err(DataError::TooFewRows(values.nrows()));
        }
        for (i, name) in names.iter().enumerate() {
            if names[..i].contains(name) {
                return Err(DataError::DuplicateName(name.clone()));
            }
        }
        for r in 0..values.nrows() {
            for c in 0..values.ncols() {
                if !values[(r, c)].is_finite() {
                    return Err(DataError::NonFinite { row: r, col: c });
                }
            }
        }
        Ok(Self {
            values,
            names,
            frequency: frequency.into(),
        })
    }

    pub fn num_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_series(&self) -> usize {
        self.values.ncols()
    }

    /// First differences, dropping the first row.
    pub fn difference(&self) -> Result<Self, DataError> {
        let t = self.num_rows();
        let m = self.num_series();
        let mut out = DMatrix::zeros(t - 1, m);
        for r in 1..t {
            for c in 0..m {
                out[(r - 1, c)] = self.values[(r, c)] - self.values[(r - 1, c)];
            }
        }
        Self::new(out, self.names.clone(), self.frequency.clone())
    }

    /// Returns a copy with columns rearranged to `order` (a permutation of names).
    pub fn reorder(&self, order: &[String]) -> Result<Self, DataError> {
        if order.len() != self.names.len() {
            return Err(DataError::SeriesCountMismatch {
                expected: self.names.len(),
                got: order.len(),
            });
        }
        let mut cols = Vec::with_capacity(order.len());
        for name in order {
            let idx = self
                .names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| DataError::DuplicateName(name.clone()))?;
            cols.push(idx);
        }
        let mut values = DMatrix::zeros(self.num_rows(), self.num_series());
        for (new_c, &old_c) in cols.iter().enumerate() {
            values.set_column(new_c, &self.values.column(old_c));
        }
        Self::new(values, order.to_vec(), self.frequency.clone())
    }
}

/// Loads a comma-separated file with a mandatory header row.
pub fn load_csv(path: impl AsRef<Path>) -> Result<TimeSeriesMatrix, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .comment(Some(b'#'))
        .from_reader(file);
    let names: Vec<String> = reader
        .headers()
        .map_err(|e| DataError::Csv(e.to_string()))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| DataError::Csv(e.to_string()))?;
        let mut row = Vec::with_capacity(names.len());
        for (c, cell) in record.iter().enumerate() {
            let parsed: f64 = cell.trim().parse().map_err(|_| DataError::BadCell {
                row: r + 1,
                column: names.get(c).cloned().unwrap_or_else(|| format!("{c}")),
                value: cell.to_string(),
            })?;
            if !parsed.is_finite() {
                return Err(DataError::BadCell {
                    row: r + 1,
                    column: names[c].clone(),
                    value: cell.to_string(),
                });
            }
            row.push(parsed);
        }
        rows.push(row);
    }
    if rows.len() < 2 {
        return Err(DataError::TooFewRows(rows.len()));
    }
    let values = DMatrix::from_fn(rows.len(), names.len(), |r, c| rows[r][c]);
    TimeSeriesMatrix::new(values, names, "unlabeled")
}

/// Writes the matrix back out in the same dialect `load_csv` reads.
pub fn write_csv(matrix: &TimeSeriesMatrix, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut writer = csv::Writer::from_writer(file);
    writer
        .write_record(&matrix.names)
        .map_err(|e| DataError::Csv(e.to_string()))?;
    for r in 0..matrix.num_rows() {
        let row: Vec<String> = (0..matrix.num_series())
            .map(|c| format!("{}", matrix.values[(r, c)]))
            .collect();
        writer
            .write_record(&row)
            .map_err(|e| DataError::Csv(e.to_string()))?;
    }
    writer.flush().map_err(|e| DataError::Csv(e.to_string()))?;
    Ok(())
}

/// Lagged design: row t of `x` holds (y'_{t-1}, ..., y'_{t-P}), aligned with
/// row t of the trimmed response `y`.
#[derive(Debug, Clone)]
pub struct LagDesign {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub lags: usize,
}

impl LagDesign {
    pub fn num_rows(&self) -> usize {
        self.y.nrows()
    }

    pub fn num_covariates(&self) -> usize {
        self.x.ncols()
    }

    pub fn num_series(&self) -> usize {
        self.y.ncols()
    }
}

/// Builds the lag design of order `p`: the lag-1 block comes first, then
/// lag-2 and so on.
pub fn build_lag_design(series: &TimeSeriesMatrix, p: usize) -> Result<LagDesign, DataError> {
    if p < 1 {
        return Err(DataError::LagTooSmall(p));
    }
    let t = series.num_rows();
    let m = series.num_series();
    if p >= t {
        return Err(DataError::LagTooLarge { p, t });
    }
    let rows = t - p;
    let mut x = DMatrix::zeros(rows, p * m);
    let mut y = DMatrix::zeros(rows, m);
    for r in 0..rows {
        let time = r + p;
        for lag in 1..=p {
            for c in 0..m {
                x[(r, (lag - 1) * m + c)] = series.values[(time - lag, c)];
            }
        }
        for c in 0..m {
            y[(r, c)] = series.values[(time, c)];
        }
    }
    Ok(LagDesign { x, y, lags: p })
}

/// Nelson-Siegel curve configuration. Maturities are in months.
#[derive(Debug, Clone, PartialEq)]
pub struct NsCurveConfig {
    pub maturities: Vec<f64>,
    pub gamma: f64,
}

impl NsCurveConfig {
    pub fn new(maturities: Vec<f64>, gamma: f64) -> Result<Self, DataError> {
        if gamma <= 0.0 || !gamma.is_finite() {
            return Err(DataError::BadDecay(gamma));
        }
        if maturities.is_empty() || maturities[0] <= 0.0 {
            return Err(DataError::BadMaturities);
        }
        if maturities.windows(2).any(|w| w[1] <= w[0]) {
            return Err(DataError::BadMaturities);
        }
        Ok(Self { maturities, gamma })
    }
}

// Below this the (1 - e^{-x})/x factor switches to its series expansion to
// dodge cancellation.
const SMALL_X: f64 = 1e-6;

/// Level, slope and curvature loadings at one maturity.
///
/// Returns `(1, (1-e^{-g w})/(g w), (1-e^{-g w})/(g w) - e^{-g w})`.
pub fn ns_loadings(maturity: f64, gamma: f64) -> Result<[f64; 3], DataError> {
    if gamma <= 0.0 {
        return Err(DataError::BadDecay(gamma));
    }
    if maturity <= 0.0 {
        return Err(DataError::BadMaturities);
    }
    let x = gamma * maturity;
    let slope = if x < SMALL_X {
        1.0 - x / 2.0 + x * x / 6.0
    } else {
        -(-x).exp_m1() / x
    };
    let curvature = slope - (-x).exp();
    Ok([1.0, slope, curvature])
}

/// Stacked loading matrix, one row per maturity.
pub fn ns_loading_matrix(cfg: &NsCurveConfig) -> Result<DMatrix<f64>, DataError> {
    let m = cfg.maturities.len();
    let mut out = DMatrix::zeros(m, 3);
    for (i, &w) in cfg.maturities.iter().enumerate() {
        let l = ns_loadings(w, cfg.gamma)?;
        for k in 0..3 {
            out[(i, k)] = l[k];
        }
    }
    Ok(out)
}

/// Extracts (level, slope, curvature) by per-period least squares across
/// maturities.
pub fn ns_extract_factors(
    yields: &TimeSeriesMatrix,
    cfg: &NsCurveConfig,
) -> Result<TimeSeriesMatrix, DataError> {
    if cfg.maturities.len() < 3 {
        return Err(DataError::TooFewMaturities(cfg.maturities.len()));
    }
    if yields.num_series() != cfg.maturities.len() {
        return Err(DataError::MaturityMismatch {
            cols: yields.num_series(),
            maturities: cfg.maturities.len(),
        });
    }
    let loadings = ns_loading_matrix(cfg)?;
    let gram = loadings.transpose() * &loadings;
    let chol = gram.cholesky().ok_or(DataError::RankDeficient)?;
    let t = yields.num_rows();
    let mut factors = DMatrix::zeros(t, 3);
    for r in 0..t {
        let row = yields.values.row(r).transpose();
        let rhs = loadings.transpose() * row;
        let beta = chol.solve(&rhs);
        for k in 0..3 {
            factors[(r, k)] = beta[k];
        }
    }
    TimeSeriesMatrix::new(
        factors,
        vec!["level".into(), "slope".into(), "curvature".into()],
        yields.frequency.clone(),
    )
}

/// Maps factor-space predictive draws into yield space through the loadings.
pub fn ns_map_forecasts(
    factor_draws: &PredictiveDraws,
    cfg: &NsCurveConfig,
) -> Result<PredictiveDraws, DataError> {
    if factor_draws.num_series != 3 {
        return Err(DataError::SeriesCountMismatch {
            expected: 3,
            got: factor_draws.num_series,
        });
    }
    let loadings = ns_loading_matrix(cfg)?;
    let m = cfg.maturities.len();
    let mut out = PredictiveDraws::zeros(
        factor_draws.num_draws,
        factor_draws.horizon,
        m,
        cfg.maturities.iter().map(|w| format!("m{w}")).collect(),
        factor_draws.origin,
    );
    for d in 0..factor_draws.num_draws {
        for h in 0..factor_draws.horizon {
            for i in 0..m {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += loadings[(i, k)] * factor_draws.at(d, h, k);
                }
                *out.at_mut(d, h, i) = acc;
            }
        }
    }
    Ok(out)
}
