//! The five batch commands. Each one loads a run configuration, does its
//! work through the library, and leaves provenance-stamped artifacts in the
//! configured output directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use bavart::dgp;
use bavart::forecast::{expanding_backtest, BacktestConfig, ForecastError};
use bavart::girf::{girf, GirfError, GirfSpec, ShockSize};
use bavart::sampler::ModelConfig;
use bavart::store;
use bavart::{estimate, PosteriorDraws, TimeSeriesMatrix};

use crate::config::{load_config, RunConfig};
use crate::CliError;

/// Hex SHA-256 over a JSON rendering; the provenance stamp for artifacts
/// that are not posterior draw files.
fn artifact_hash(value: &impl Serialize) -> String {
    let json = serde_json::to_string(value).expect("hash payloads serialize");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    let mut out = String::with_capacity(64);
    for byte in hasher.finalize() {
        let _ = write!(out, "{byte:02x}");
    }
    out
}

/// The hash stored draws were stamped with; artifacts derived from them
/// carry the same value so a result can be traced to its run.
fn draws_hash(draws: &PosteriorDraws) -> String {
    store::config_hash(
        &draws.config,
        &draws.names,
        draws.num_covariates,
        &draws.leaf_variances,
    )
}

fn write_text(path: &Path, content: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(CliError::runtime)?;
    }
    std::fs::write(path, content)
        .map_err(|e| CliError::Runtime {
            message: format!("cannot write {}: {e}", path.display()),
        })
}

/// Renders a series as CSV in the dialect `load_csv` reads, with the
/// provenance hash on a leading comment line.
fn series_csv(series: &TimeSeriesMatrix, hash: &str) -> String {
    let mut out = format!("# config {hash}\n");
    out.push_str(&series.names.join(","));
    out.push('\n');
    for r in 0..series.num_rows() {
        for c in 0..series.num_series() {
            if c > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", series.values[(r, c)]);
        }
        out.push('\n');
    }
    out
}

fn load_stored_draws(rc: &RunConfig, override_dir: Option<&Path>) -> Result<PosteriorDraws, CliError> {
    let dir: PathBuf = match override_dir {
        Some(d) => d.to_path_buf(),
        None => rc.run.output_dir.join("draws"),
    };
    store::load_draws(&dir).map_err(|e| CliError::Runtime {
        message: format!("{}: {e}", dir.display()),
    })
}

pub fn cmd_estimate(config_path: &Path) -> Result<(), CliError> {
    let rc = load_config(config_path)?;
    bavart::configure_threads(rc.run.threads);
    let model_cfg = rc.resolve_model()?;
    let (_, series) = rc.load_series()?;
    let draws = estimate(&series, &model_cfg)?;
    let dir = rc.run.output_dir.join("draws");
    store::save_draws(&dir, &draws).map_err(CliError::runtime)?;
    println!(
        "wrote {} draws for {} equations to {}",
        draws.num_draws(),
        draws.num_equations(),
        dir.display()
    );
    Ok(())
}

fn map_backtest_err(e: ForecastError) -> CliError {
    match e {
        ForecastError::BadBacktestWindow => CliError::Config {
            field: "backtest.holdout".to_string(),
            message: e.to_string(),
        },
        ForecastError::BadHorizon => CliError::Config {
            field: "backtest.horizons".to_string(),
            message: e.to_string(),
        },
        ForecastError::Sampler(inner) => CliError::from(inner),
        other => CliError::runtime(other),
    }
}

#[derive(Serialize)]
struct BacktestProvenance<'a> {
    model: &'a ModelConfig,
    holdout: usize,
    horizons: &'a [usize],
    refit_every: usize,
    curve_maturities: Option<&'a [f64]>,
    curve_gamma: Option<f64>,
    series: &'a [String],
}

pub fn cmd_backtest(config_path: &Path) -> Result<(), CliError> {
    let rc = load_config(config_path)?;
    bavart::configure_threads(rc.run.threads);
    let model_cfg = rc.resolve_model()?;
    let (observed, _) = rc.load_series()?;
    let curve = rc.curve_config()?;
    let (holdout, horizons, refit_every) = match &rc.backtest {
        Some(b) => (b.holdout, b.horizons.clone(), b.refit_every),
        None => (24, vec![1, 3], 1),
    };
    if refit_every < 1 {
        return Err(CliError::Config {
            field: "backtest.refit_every".to_string(),
            message: "must be at least 1".to_string(),
        });
    }
    let bt = BacktestConfig {
        holdout,
        horizons: horizons.clone(),
        refit_every,
        curve: curve.clone(),
    };
    let report = expanding_backtest(&observed, &model_cfg, &bt).map_err(map_backtest_err)?;

    let hash = artifact_hash(&BacktestProvenance {
        model: &model_cfg,
        holdout,
        horizons: &horizons,
        refit_every,
        curve_maturities: curve.as_ref().map(|c| c.maturities.as_slice()),
        curve_gamma: curve.as_ref().map(|c| c.gamma),
        series: &observed.names,
    });
    let mut msfe = format!("# config {hash}\nseries,horizon,points,msfe\n");
    let mut crps = format!("# config {hash}\nseries,horizon,points,crps,crps_baseline\n");
    for cell in &report.cells {
        let _ = writeln!(
            msfe,
            "{},{},{},{}",
            cell.series, cell.horizon, cell.points, cell.msfe
        );
        let _ = writeln!(
            crps,
            "{},{},{},{},{}",
            cell.series, cell.horizon, cell.points, cell.crps, cell.crps_baseline
        );
    }
    write_text(&rc.run.output_dir.join("backtest_msfe.csv"), &msfe)?;
    write_text(&rc.run.output_dir.join("backtest_crps.csv"), &crps)?;
    println!(
        "scored {} series/horizon cells over {} origins; wrote backtest_msfe.csv and backtest_crps.csv to {}",
        report.cells.len(),
        report.origins.len(),
        rc.run.output_dir.display()
    );
    Ok(())
}

fn map_girf_err(e: GirfError) -> CliError {
    let field = match &e {
        GirfError::BadShockIndex(_) | GirfError::ShockIsRestricted(_) => "girf.shock",
        GirfError::BadRestrictedIndex(_) => "girf.restricted",
        GirfError::BadHorizon => "girf.horizon",
        GirfError::BadHistory { .. } => "girf.history",
        GirfError::NameMismatch { .. } | GirfError::NoDraws | GirfError::Data(_) => {
            return CliError::runtime(e)
        }
    };
    CliError::Config {
        field: field.to_string(),
        message: e.to_string(),
    }
}

fn resolve_name(names: &[String], wanted: &str, field: &str) -> Result<usize, CliError> {
    names
        .iter()
        .position(|n| n == wanted)
        .ok_or_else(|| CliError::Config {
            field: field.to_string(),
            message: format!("unknown variable {wanted:?}; available: {}", names.join(", ")),
        })
}

/// Zero restrictions pin a variable in the units the model works in, so
/// when the data were differenced the configuration must say so explicitly.
fn check_restriction_space(rc: &RunConfig, restricted: bool) -> Result<(), CliError> {
    let differenced = rc.data.as_ref().is_some_and(|d| d.difference);
    let space = rc
        .girf
        .as_ref()
        .and_then(|g| g.restriction_space.as_deref());
    let err = |message: &str| {
        Err(CliError::Config {
            field: "girf.restriction_space".to_string(),
            message: message.to_string(),
        })
    };
    match space {
        None if differenced && restricted => err(
            "data are differenced; set restriction_space = \"differenced\" to \
             confirm the zero restriction applies to the differenced series",
        ),
        None => Ok(()),
        Some("differenced") if differenced => Ok(()),
        Some("differenced") => err("data are not differenced; use \"level\" or drop the key"),
        Some("level") if !differenced => Ok(()),
        Some("level") => err(
            "pinning the level of a differenced series is not supported; \
             model levels instead or restrict the differenced series",
        ),
        Some(other) => Err(CliError::Config {
            field: "girf.restriction_space".to_string(),
            message: format!("unknown value {other:?}; expected \"level\" or \"differenced\""),
        }),
    }
}

const GIRF_PERCENTILES: [usize; 5] = [16, 25, 50, 75, 84];

pub fn cmd_girf(config_path: &Path) -> Result<(), CliError> {
    let rc = load_config(config_path)?;
    bavart::configure_threads(rc.run.threads);
    let g = rc.girf.as_ref().ok_or_else(|| CliError::Config {
        field: "girf".to_string(),
        message: "this command needs a [girf] section".to_string(),
    })?;
    check_restriction_space(&rc, !g.restricted.is_empty())?;
    let draws = load_stored_draws(&rc, g.draws_dir.as_deref())?;
    let (_, series) = rc.load_series()?;

    let size = match g.size.as_str() {
        "one-sd" => ShockSize::OneSd,
        "unit" => ShockSize::Unit,
        other => {
            return Err(CliError::Config {
                field: "girf.size".to_string(),
                message: format!("unknown value {other:?}; expected \"one-sd\" or \"unit\""),
            })
        }
    };
    let shock_variable = resolve_name(&draws.names, &g.shock, "girf.shock")?;
    let mut restricted = Vec::with_capacity(g.restricted.len());
    for name in &g.restricted {
        restricted.push(resolve_name(&draws.names, name, "girf.restricted")?);
    }
    let spec = GirfSpec {
        shock_variable,
        size,
        horizon: g.horizon,
        restricted,
        history: g.history,
    };
    let resp = girf(&draws, &series, &spec).map_err(map_girf_err)?;

    let hash = draws_hash(&draws);
    let mut out = format!("# config {hash}\nhorizon,series,quantile,value\n");
    for step in 0..resp.horizon {
        for (s, name) in resp.names.iter().enumerate() {
            for q in GIRF_PERCENTILES {
                let value = resp.quantile(step, s, q as f64 / 100.0);
                let _ = writeln!(out, "{step},{name},{q},{value}");
            }
        }
    }
    let path = rc.run.output_dir.join("girf.csv");
    write_text(&path, &out)?;
    println!(
        "impulse responses for a {} shock to {}: {} steps x {} series, {} draws; wrote {}",
        g.size,
        g.shock,
        resp.horizon,
        resp.num_series,
        resp.num_draws,
        path.display()
    );
    Ok(())
}

pub fn cmd_importance(config_path: &Path) -> Result<(), CliError> {
    let rc = load_config(config_path)?;
    let g = rc.girf.as_ref();
    let draws = load_stored_draws(&rc, g.and_then(|g| g.draws_dir.as_deref()))?;
    let counts = draws.importance_median();
    let m = draws.num_equations();

    let hash = draws_hash(&draws);
    let mut out = format!("# config {hash}\ncovariate,equation,median_splits\n");
    for c in 0..draws.num_covariates {
        let source = &draws.names[c % m];
        let lag = c / m + 1;
        for (j, eq) in draws.names.iter().enumerate() {
            let _ = writeln!(out, "{source}.l{lag},{eq},{}", counts[(c, j)]);
        }
    }
    let path = rc.run.output_dir.join("importance.csv");
    write_text(&path, &out)?;
    println!(
        "posterior-median splitting counts for {} covariates x {} equations; wrote {}",
        draws.num_covariates,
        m,
        path.display()
    );
    Ok(())
}

fn map_dgp_err(e: dgp::DgpError, kind: &str) -> CliError {
    let field = match &e {
        dgp::DgpError::TooShort { .. } => "simulate.periods".to_string(),
        dgp::DgpError::Data(_) => return CliError::runtime(e),
        _ => format!("simulate.{kind}"),
    };
    CliError::Config {
        field,
        message: e.to_string(),
    }
}

fn missing_table(kind: &str) -> CliError {
    CliError::Config {
        field: format!("simulate.{kind}"),
        message: format!("kind = {kind:?} needs a [simulate.{kind}] table"),
    }
}

pub fn cmd_simulate(config_path: &Path) -> Result<(), CliError> {
    let rc = load_config(config_path)?;
    let sim = rc.simulate.as_ref().ok_or_else(|| CliError::Config {
        field: "simulate".to_string(),
        message: "this command needs a [simulate] section".to_string(),
    })?;

    let kind = sim.kind.as_str();
    let (series, truth): (TimeSeriesMatrix, serde_json::Value) = match kind {
        "var" => {
            let p = sim.var.as_ref().ok_or_else(|| missing_table(kind))?;
            let series =
                dgp::simulate_var(p, sim.periods, sim.seed).map_err(|e| map_dgp_err(e, kind))?;
            (series, serde_json::json!({ "var": p }))
        }
        "tvar" => {
            let p = sim.tvar.as_ref().ok_or_else(|| missing_table(kind))?;
            let series =
                dgp::simulate_tvar(p, sim.periods, sim.seed).map_err(|e| map_dgp_err(e, kind))?;
            (series, serde_json::json!({ "tvar": p }))
        }
        "sv" => {
            let p = sim.sv.as_ref().ok_or_else(|| missing_table(kind))?;
            let (series, h) = dgp::simulate_sv_series(p, sim.periods, sim.seed)
                .map_err(|e| map_dgp_err(e, kind))?;
            (series, serde_json::json!({ "sv": p, "log_volatility": h }))
        }
        "friedman" => {
            let p = sim.friedman.as_ref().ok_or_else(|| missing_table(kind))?;
            let (series, mean) = dgp::simulate_friedman(p, sim.periods, sim.seed)
                .map_err(|e| map_dgp_err(e, kind))?;
            (series, serde_json::json!({ "friedman": p, "conditional_mean": mean }))
        }
        other => {
            return Err(CliError::Config {
                field: "simulate.kind".to_string(),
                message: format!(
                    "unknown kind {other:?}; expected \"var\", \"tvar\", \"sv\" or \"friedman\""
                ),
            })
        }
    };

    // The sidecar echoes the generator parameters verbatim plus any
    // realized ground truth (volatility path, conditional mean).
    let mut sidecar = serde_json::json!({
        "kind": kind,
        "periods": sim.periods,
        "seed": sim.seed,
        "params": truth.get(kind).cloned().unwrap_or(serde_json::Value::Null),
    });
    if let Some(extra) = truth.get("log_volatility") {
        sidecar["log_volatility"] = extra.clone();
    }
    if let Some(extra) = truth.get("conditional_mean") {
        sidecar["conditional_mean"] = extra.clone();
    }
    let hash = artifact_hash(&sidecar);
    sidecar["config_hash"] = serde_json::json!(hash);

    let data_path = rc.run.output_dir.join("sim_data.csv");
    let truth_path = rc.run.output_dir.join("sim_truth.json");
    write_text(&data_path, &series_csv(&series, &hash))?;
    let rendered =
        serde_json::to_string_pretty(&sidecar).map_err(CliError::runtime)?;
    write_text(&truth_path, &format!("{rendered}\n"))?;
    println!(
        "simulated {} rows x {} series ({}); wrote {} and {}",
        series.num_rows(),
        series.num_series(),
        kind,
        data_path.display(),
        truth_path.display()
    );
    Ok(())
}
