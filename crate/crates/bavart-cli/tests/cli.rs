//! End-to-end tests of the batch binary: every subcommand is exercised
//! through real processes against temporary directories, checking exit
//! codes, artifact contents and cross-run determinism.

use std::path::Path;
use std::process::Output;

fn bavart(args: &[&str]) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_bavart"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(path: &Path, content: &str) {
    std::fs::write(path, content).expect("test fixture writes");
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()))
}

/// A bivariate linear VAR simulation config writing into `dir`.
fn sim_config(dir: &Path) -> String {
    format!(
        r#"
[run]
output_dir = "{out}"

[simulate]
kind = "var"
periods = 100
seed = 7

[simulate.var]
phi = [[0.5, 0.1], [0.0, 0.4]]
loadings = [[], [0.6]]
log_vars = [-0.5, -1.0]
intercept = [0.2, 0.0]
"#,
        out = dir.display()
    )
}

/// A small but complete run config over the simulated data in `dir`.
fn run_config(dir: &Path, threads: usize) -> String {
    format!(
        r#"
[run]
output_dir = "{out}"
threads = {threads}

[data]
path = "{out}/sim_data.csv"

[model]
num_trees = 10
sweeps = 30
burn_in = 20
thinning = 2
seed = 3
stochastic_volatility = false

[backtest]
holdout = 6
horizons = [1, 3]

[girf]
shock = "y1"
horizon = 4
restricted = ["y2"]
"#,
        out = dir.display()
    )
}

/// Simulates data and fits the model once under `dir`, returning the config
/// path used for the estimation run.
fn prepare_fit(dir: &Path, threads: usize) -> std::path::PathBuf {
    let sim = dir.join("sim.toml");
    write(&sim, &sim_config(dir));
    let out = bavart(&["simulate", sim.to_str().unwrap()]);
    assert!(out.status.success(), "simulate failed: {}", stderr_of(&out));

    let run = dir.join("run.toml");
    write(&run, &run_config(dir, threads));
    let out = bavart(&["estimate", run.to_str().unwrap()]);
    assert!(out.status.success(), "estimate failed: {}", stderr_of(&out));
    run
}

const DRAW_FILES: [&str; 5] = [
    "manifest.json",
    "forests.txt",
    "a.csv",
    "sv.csv",
    "loglik.csv",
];

fn draw_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    DRAW_FILES
        .iter()
        .map(|f| {
            let path = dir.join("draws").join(f);
            let bytes =
                std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            (f.to_string(), bytes)
        })
        .collect()
}

#[test]
fn estimation_reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let run = prepare_fit(tmp.path(), 1);
    let first = draw_bytes(tmp.path());
    let out = bavart(&["estimate", run.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(first, draw_bytes(tmp.path()));
}

#[test]
fn thread_count_does_not_change_the_draw_files() {
    let tmp_a = tempfile::tempdir().unwrap();
    let tmp_b = tempfile::tempdir().unwrap();
    prepare_fit(tmp_a.path(), 1);
    // The data differ only in where they were written; regenerate so both
    // runs see identical inputs, then fit with a wider pool.
    prepare_fit(tmp_b.path(), 4);
    let a = draw_bytes(tmp_a.path());
    let b = draw_bytes(tmp_b.path());
    for ((name_a, bytes_a), (name_b, bytes_b)) in a.iter().zip(&b) {
        assert_eq!(name_a, name_b);
        assert_eq!(bytes_a, bytes_b, "{name_a} differs across thread counts");
    }
}

#[test]
fn sweeps_not_exceeding_burn_in_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run.toml");
    write(
        &run,
        &run_config(tmp.path(), 1).replace("sweeps = 30", "sweeps = 15"),
    );
    let out = bavart(&["estimate", run.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_of(&out);
    assert!(err.contains("config.sweeps"), "stderr was: {err}");
    assert_eq!(err.trim().lines().count(), 1, "error must be one line");
}

#[test]
fn unknown_configuration_keys_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run.toml");
    write(&run, "[run]\noutput_dir = \"x\"\nbogus = 1\n");
    let out = bavart(&["estimate", run.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("bogus"));
}

#[test]
fn missing_draws_are_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim.toml");
    write(&sim, &sim_config(tmp.path()));
    assert!(bavart(&["simulate", sim.to_str().unwrap()]).status.success());
    let run = tmp.path().join("run.toml");
    write(&run, &run_config(tmp.path(), 1));
    // No estimate ran, so the draws directory does not exist yet.
    let out = bavart(&["girf", run.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("manifest.json"));
}

#[test]
fn backtest_tables_count_points_per_horizon() {
    let tmp = tempfile::tempdir().unwrap();
    let run = prepare_fit(tmp.path(), 1);
    let out = bavart(&["backtest", run.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr_of(&out));

    for file in ["backtest_msfe.csv", "backtest_crps.csv"] {
        let table = read(&tmp.path().join(file));
        let mut lines = table.lines();
        assert!(lines.next().unwrap().starts_with("# config "));
        let header = lines.next().unwrap();
        assert!(header.starts_with("series,horizon,points,"));
        // Holdout 6 scores 6 one-step points and 6 - 3 + 1 = 4 three-step
        // points for each of the two series.
        let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
        assert_eq!(rows.len(), 4);
        for row in &rows {
            let horizon: usize = row[1].parse().unwrap();
            let points: usize = row[2].parse().unwrap();
            assert_eq!(points, match horizon {
                1 => 6,
                3 => 4,
                other => panic!("unexpected horizon {other}"),
            });
            for cell in &row[3..] {
                let value: f64 = cell.parse().unwrap();
                assert!(value.is_finite() && value >= 0.0);
            }
        }
    }
}

#[test]
fn girf_output_pins_restricted_series_to_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let run = prepare_fit(tmp.path(), 1);
    let out = bavart(&["girf", run.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr_of(&out));

    let table = read(&tmp.path().join("girf.csv"));
    let mut lines = table.lines();
    let hash_line = lines.next().unwrap();
    assert!(hash_line.starts_with("# config "));
    assert_eq!(lines.next().unwrap(), "horizon,series,quantile,value");
    let mut horizons = std::collections::BTreeSet::new();
    let mut saw_quantiles = std::collections::BTreeSet::new();
    let mut nonzero_y1 = false;
    for line in lines {
        let parts: Vec<&str> = line.split(',').collect();
        let (horizon, series, quantile, value) = (
            parts[0].parse::<usize>().unwrap(),
            parts[1],
            parts[2].parse::<usize>().unwrap(),
            parts[3].parse::<f64>().unwrap(),
        );
        horizons.insert(horizon);
        saw_quantiles.insert(quantile);
        match series {
            "y2" => assert_eq!(value, 0.0, "restricted series must stay pinned"),
            "y1" => nonzero_y1 |= value != 0.0,
            other => panic!("unexpected series {other}"),
        }
    }
    assert_eq!(horizons.into_iter().collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
    assert_eq!(
        saw_quantiles.into_iter().collect::<Vec<_>>(),
        vec![16, 25, 50, 75, 84]
    );
    assert!(nonzero_y1, "the shocked series must respond");

    // The responses carry the provenance hash of the draws they came from.
    let manifest = read(&tmp.path().join("draws/manifest.json"));
    let stored: serde_json::Value = serde_json::from_str(&manifest).unwrap();
    let expected = format!("# config {}", stored["config_hash"].as_str().unwrap());
    assert_eq!(hash_line, expected);
}

#[test]
fn importance_table_names_the_lagged_covariates() {
    let tmp = tempfile::tempdir().unwrap();
    let run = prepare_fit(tmp.path(), 1);
    let out = bavart(&["importance", run.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr_of(&out));

    let table = read(&tmp.path().join("importance.csv"));
    let mut lines = table.lines();
    assert!(lines.next().unwrap().starts_with("# config "));
    assert_eq!(lines.next().unwrap(), "covariate,equation,median_splits");
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    // Two covariates (one lag of each series) by two equations.
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0][0], "y1.l1");
    assert_eq!(rows[2][0], "y2.l1");
    for row in &rows {
        let count: f64 = row[2].parse().unwrap();
        assert!(count >= 0.0);
    }
}

#[test]
fn simulate_writes_a_faithful_sidecar_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim.toml");
    write(&sim, &sim_config(tmp.path()));
    assert!(bavart(&["simulate", sim.to_str().unwrap()]).status.success());
    let data_first = read(&tmp.path().join("sim_data.csv"));
    let truth_first = read(&tmp.path().join("sim_truth.json"));

    let truth: serde_json::Value = serde_json::from_str(&truth_first).unwrap();
    assert_eq!(truth["kind"], "var");
    assert_eq!(truth["periods"], 100);
    assert_eq!(truth["seed"], 7);
    assert_eq!(truth["params"]["phi"][0][0], 0.5);
    assert_eq!(truth["params"]["loadings"][1][0], 0.6);
    let hash = truth["config_hash"].as_str().unwrap();
    assert_eq!(hash.len(), 64);
    assert!(data_first.starts_with(&format!("# config {hash}\n")));

    // The data file the model consumes parses despite the hash comment.
    assert!(bavart(&["simulate", sim.to_str().unwrap()]).status.success());
    assert_eq!(data_first, read(&tmp.path().join("sim_data.csv")));
    assert_eq!(truth_first, read(&tmp.path().join("sim_truth.json")));
}

#[test]
fn restricted_girf_on_differenced_data_needs_an_explicit_space() {
    let tmp = tempfile::tempdir().unwrap();
    let run = prepare_fit(tmp.path(), 1);
    let differenced = read(&run).replace(
        "[model]",
        "difference = true\n\n[model]",
    );
    write(&run, &differenced);
    let out = bavart(&["girf", run.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("girf.restriction_space"));
}
