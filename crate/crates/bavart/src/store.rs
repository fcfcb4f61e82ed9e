//! On-disk layout for retained posterior draws: a manifest plus plain-text
//! tables that round-trip exactly and carry a configuration hash so mixed-up
//! directories are caught at load time.
//!
//! Layout of a draws directory:
//! - `manifest.json`: run metadata and the configuration hash
//! - `forests.txt`: every tree node, `draw eq tree id parent cov threshold
//!   value` with `.` for inapplicable fields and parent `-1` at the root
//! - `a.csv`: contemporaneous loadings, one row per coefficient
//! - `sv.csv`: volatility parameters and the end-of-sample log variance
//! - `loglik.csv`: conditional log likelihood per retained draw

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::sampler::{ModelConfig, PosteriorDraws, VolatilityDraw};
use crate::tree::{DecisionTree, SplitRule, TreeNode};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{file}:{line}: {message}")]
    Format {
        file: String,
        line: usize,
        message: String,
    },
    #[error("{file} belongs to a different run (configuration hash mismatch)")]
    HashMismatch { file: String },
    #[error("draws directory is missing {0}")]
    MissingFile(String),
    #[error("stored forest is malformed: {0}")]
    BadForest(String),
}

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    config_hash: String,
    num_draws: usize,
    num_equations: usize,
    num_covariates: usize,
    names: Vec<String>,
    leaf_variances: Vec<f64>,
    config: ModelConfig,
}

/// Hex SHA-256 over the run's identifying metadata; written into every file
/// so partial copies from different runs cannot be mixed silently.
pub fn config_hash(
    config: &ModelConfig,
    names: &[String],
    num_covariates: usize,
    leaf_variances: &[f64],
) -> String {
    let payload = serde_json::json!({
        "config": config,
        "names": names,
        "num_covariates": num_covariates,
        "leaf_variances": leaf_variances,
    });
    let mut hasher = Sha256::new();
    hasher.update(payload.to_string().as_bytes());
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        write!(out, "{b:02x}").unwrap();
    }
    out
}

fn fmt_f64(v: f64) -> String {
    // `Display` for f64 prints the shortest representation that parses back
    // to the same bits, so text storage is lossless.
    format!("{v}")
}

/// Writes all draw files into `dir`, creating it if needed.
pub fn save_draws(dir: &Path, draws: &PosteriorDraws) -> Result<(), StoreError> {
    fs::create_dir_all(dir)?;
    let hash = config_hash(
        &draws.config,
        &draws.names,
        draws.num_covariates,
        &draws.leaf_variances,
    );
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config_hash: hash.clone(),
        num_draws: draws.num_draws(),
        num_equations: draws.num_equations(),
        num_covariates: draws.num_covariates,
        names: draws.names.clone(),
        leaf_variances: draws.leaf_variances.clone(),
        config: draws.config.clone(),
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;

    let mut forests = String::new();
    writeln!(forests, "# config {hash}").unwrap();
    writeln!(forests, "draw eq tree id parent cov threshold value").unwrap();
    for (d, per_eq) in draws.forests.iter().enumerate() {
        for (eq, forest) in per_eq.iter().enumerate() {
            for (k, tree) in forest.iter().enumerate() {
                let parents = tree.parents();
                for (id, node) in tree.nodes.iter().enumerate() {
                    let parent = parents[id].map_or(-1i64, |p| p as i64);
                    match node {
                        TreeNode::Leaf { value } => {
                            writeln!(
                                forests,
                                "{d} {eq} {k} {id} {parent} . . {}",
                                fmt_f64(*value)
                            )
                            .unwrap();
                        }
                        TreeNode::Internal { rule, .. } => {
                            writeln!(
                                forests,
                                "{d} {eq} {k} {id} {parent} {} {} .",
                                rule.covariate,
                                fmt_f64(rule.threshold)
                            )
                            .unwrap();
                        }
                    }
                }
            }
        }
    }
    fs::write(dir.join("forests.txt"), forests)?;

    let mut a = String::new();
    writeln!(a, "# config {hash}").unwrap();
    writeln!(a, "draw,equation,index,value").unwrap();
    for (d, per_eq) in draws.coefficients.iter().enumerate() {
        for (eq, row) in per_eq.iter().enumerate() {
            for (i, v) in row.iter().enumerate() {
                writeln!(a, "{d},{eq},{i},{}", fmt_f64(*v)).unwrap();
            }
        }
    }
    fs::write(dir.join("a.csv"), a)?;

    let mut sv = String::new();
    writeln!(sv, "# config {hash}").unwrap();
    writeln!(sv, "draw,equation,c,rho,sigma2,h_last").unwrap();
    for (d, per_eq) in draws.volatility.iter().enumerate() {
        for (eq, v) in per_eq.iter().enumerate() {
            writeln!(
                sv,
                "{d},{eq},{},{},{},{}",
                fmt_f64(v.c),
                fmt_f64(v.rho),
                fmt_f64(v.sigma2),
                fmt_f64(v.h_last())
            )
            .unwrap();
        }
    }
    fs::write(dir.join("sv.csv"), sv)?;

    let mut ll = String::new();
    writeln!(ll, "# config {hash}").unwrap();
    writeln!(ll, "draw,log_likelihood").unwrap();
    for (d, v) in draws.log_likelihood.iter().enumerate() {
        writeln!(ll, "{d},{}", fmt_f64(*v)).unwrap();
    }
    fs::write(dir.join("loglik.csv"), ll)?;
    Ok(())
}

fn read_file(dir: &Path, name: &str) -> Result<String, StoreError> {
    let path = dir.join(name);
    if !path.exists() {
        return Err(StoreError::MissingFile(name.to_string()));
    }
    Ok(fs::read_to_string(path)?)
}

fn check_hash_line(content: &str, file: &str, hash: &str) -> Result<(), StoreError> {
    let first = content.lines().next().unwrap_or("");
    let expect = format!("# config {hash}");
    if first != expect {
        return Err(StoreError::HashMismatch {
            file: file.to_string(),
        });
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(
    raw: &str,
    file: &str,
    line: usize,
    what: &str,
) -> Result<T, StoreError> {
    raw.trim().parse().map_err(|_| StoreError::Format {
        file: file.to_string(),
        line,
        message: format!("cannot parse {what} from {raw:?}"),
    })
}

fn parse_optional(
    raw: &str,
    file: &str,
    line: usize,
    what: &str,
) -> Result<Option<f64>, StoreError> {
    if raw.trim() == "." {
        Ok(None)
    } else {
        parse_field(raw, file, line, what).map(Some)
    }
}

struct NodeRecord {
    parent: i64,
    covariate: Option<usize>,
    threshold: Option<f64>,
    value: Option<f64>,
}

/// Rebuilds one tree from its node records, which arrive in preorder id
/// order; the first child attached to a parent is its left child.
fn rebuild_tree(records: &[NodeRecord]) -> Result<DecisionTree, StoreError> {
    let n = records.len();
    let mut children: Vec<(Option<usize>, Option<usize>)> = vec![(None, None); n];
    for (id, rec) in records.iter().enumerate() {
        if rec.parent >= 0 {
            let p = rec.parent as usize;
            if p >= n {
                return Err(StoreError::BadForest(format!(
                    "node {id} points at missing parent {p}"
                )));
            }
            match &mut children[p] {
                (slot @ None, _) => *slot = Some(id),
                (_, slot @ None) => *slot = Some(id),
                _ => {
                    return Err(StoreError::BadForest(format!(
                        "node {p} has more than two children"
                    )))
                }
            }
        } else if id != 0 {
            return Err(StoreError::BadForest(format!(
                "non-root node {id} without parent"
            )));
        }
    }
    let mut nodes = Vec::with_capacity(n);
    for (id, rec) in records.iter().enumerate() {
        let node = match (rec.covariate, rec.threshold, rec.value) {
            (Some(covariate), Some(threshold), None) => {
                let (left, right) = children[id];
                let (left, right) = match (left, right) {
                    (Some(l), Some(r)) => (l, r),
                    _ => {
                        return Err(StoreError::BadForest(format!(
                            "internal node {id} lacks two children"
                        )))
                    }
                };
                TreeNode::Internal {
                    rule: SplitRule {
                        covariate,
                        threshold,
                    },
                    left,
                    right,
                }
            }
            (None, None, Some(value)) => {
                if children[id].0.is_some() {
                    return Err(StoreError::BadForest(format!(
                        "leaf node {id} has children"
                    )));
                }
                TreeNode::Leaf { value }
            }
            _ => {
                return Err(StoreError::BadForest(format!(
                    "node {id} mixes leaf and split fields"
                )))
            }
        };
        nodes.push(node);
    }
    let tree = DecisionTree { nodes };
    tree.validate_structure()
        .map_err(|e| StoreError::BadForest(e.to_string()))?;
    Ok(tree)
}

/// Loads a draws directory written by [`save_draws`]. Volatility paths are
/// stored compactly: the reloaded state carries the end-of-sample log
/// variance, which is all forecasting needs.
pub fn load_draws(dir: &Path) -> Result<PosteriorDraws, StoreError> {
    let manifest: Manifest = serde_json::from_str(&read_file(dir, "manifest.json")?)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(StoreError::BadForest(format!(
            "unsupported format version {}",
            manifest.format_version
        )));
    }
    let hash = config_hash(
        &manifest.config,
        &manifest.names,
        manifest.num_covariates,
        &manifest.leaf_variances,
    );
    if hash != manifest.config_hash {
        return Err(StoreError::HashMismatch {
            file: "manifest.json".to_string(),
        });
    }
    let (n_draws, m) = (manifest.num_draws, manifest.num_equations);
    let n_trees = manifest.config.num_trees;

    let file = "forests.txt";
    let content = read_file(dir, file)?;
    check_hash_line(&content, file, &hash)?;
    let mut forests: Vec<Vec<Vec<DecisionTree>>> = Vec::with_capacity(n_draws);
    let mut pending: Vec<NodeRecord> = Vec::new();
    let mut pending_key: Option<(usize, usize, usize)> = None;
    let flush = |key: Option<(usize, usize, usize)>,
                     records: &mut Vec<NodeRecord>,
                     forests: &mut Vec<Vec<Vec<DecisionTree>>>|
     -> Result<(), StoreError> {
        if let Some((d, eq, k)) = key {
            while forests.len() <= d {
                forests.push(Vec::new());
            }
            while forests[d].len() <= eq {
                forests[d].push(Vec::new());
            }
            if forests[d][eq].len() != k {
                return Err(StoreError::BadForest(format!(
                    "tree {k} of draw {d}, equation {eq} is out of order"
                )));
            }
            forests[d][eq].push(rebuild_tree(records)?);
            records.clear();
        }
        Ok(())
    };
    for (lineno, line) in content.lines().enumerate().skip(2) {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 8 {
            return Err(StoreError::Format {
                file: file.to_string(),
                line: lineno + 1,
                message: format!("expected 8 fields, got {}", parts.len()),
            });
        }
        let d: usize = parse_field(parts[0], file, lineno + 1, "draw")?;
        let eq: usize = parse_field(parts[1], file, lineno + 1, "equation")?;
        let k: usize = parse_field(parts[2], file, lineno + 1, "tree")?;
        let id: usize = parse_field(parts[3], file, lineno + 1, "node id")?;
        let parent: i64 = parse_field(parts[4], file, lineno + 1, "parent")?;
        let covariate = if parts[5].trim() == "." {
            None
        } else {
            Some(parse_field::<usize>(parts[5], file, lineno + 1, "covariate")?)
        };
        let threshold = parse_optional(parts[6], file, lineno + 1, "threshold")?;
        let value = parse_optional(parts[7], file, lineno + 1, "leaf value")?;
        if pending_key != Some((d, eq, k)) {
            flush(pending_key.take(), &mut pending, &mut forests)?;
            pending_key = Some((d, eq, k));
        }
        if id != pending.len() {
            return Err(StoreError::Format {
                file: file.to_string(),
                line: lineno + 1,
                message: format!("node ids must be consecutive, got {id}"),
            });
        }
        pending.push(NodeRecord {
            parent,
            covariate,
            threshold,
            value,
        });
    }
    flush(pending_key.take(), &mut pending, &mut forests)?;
    if forests.len() != n_draws
        || forests
            .iter()
            .any(|per_eq| per_eq.len() != m || per_eq.iter().any(|f| f.len() != n_trees))
    {
        return Err(StoreError::BadForest(
            "forest table does not cover every draw, equation, and tree".to_string(),
        ));
    }

    let file = "a.csv";
    let content = read_file(dir, file)?;
    check_hash_line(&content, file, &hash)?;
    let mut coeff_raw: Vec<Vec<Vec<f64>>> = vec![(0..m).map(Vec::with_capacity).collect(); n_draws];
    for (lineno, line) in content.lines().enumerate().skip(2) {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(StoreError::Format {
                file: file.to_string(),
                line: lineno + 1,
                message: format!("expected 4 fields, got {}", parts.len()),
            });
        }
        let d: usize = parse_field(parts[0], file, lineno + 1, "draw")?;
        let eq: usize = parse_field(parts[1], file, lineno + 1, "equation")?;
        let idx: usize = parse_field(parts[2], file, lineno + 1, "index")?;
        let v: f64 = parse_field(parts[3], file, lineno + 1, "value")?;
        if d >= n_draws || eq >= m || idx != coeff_raw[d][eq].len() {
            return Err(StoreError::Format {
                file: file.to_string(),
                line: lineno + 1,
                message: "loading row out of range or out of order".to_string(),
            });
        }
        coeff_raw[d][eq].push(v);
    }
    let coefficients: Vec<Vec<DVector<f64>>> = coeff_raw
        .into_iter()
        .map(|per_eq| per_eq.into_iter().map(DVector::from_vec).collect())
        .collect();
    for (d, per_eq) in coefficients.iter().enumerate() {
        for (eq, row) in per_eq.iter().enumerate() {
            if row.len() != eq {
                return Err(StoreError::BadForest(format!(
                    "draw {d}, equation {eq} has {} loadings, expected {eq}",
                    row.len()
                )));
            }
        }
    }

    let file = "sv.csv";
    let content = read_file(dir, file)?;
    check_hash_line(&content, file, &hash)?;
    let mut volatility: Vec<Vec<VolatilityDraw>> = vec![Vec::with_capacity(m); n_draws];
    for (lineno, line) in content.lines().enumerate().skip(2) {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 6 {
            return Err(StoreError::Format {
                file: file.to_string(),
                line: lineno + 1,
                message: format!("expected 6 fields, got {}", parts.len()),
            });
        }
        let d: usize = parse_field(parts[0], file, lineno + 1, "draw")?;
        let eq: usize = parse_field(parts[1], file, lineno + 1, "equation")?;
        let c: f64 = parse_field(parts[2], file, lineno + 1, "c")?;
        let rho: f64 = parse_field(parts[3], file, lineno + 1, "rho")?;
        let sigma2: f64 = parse_field(parts[4], file, lineno + 1, "sigma2")?;
        let h_last: f64 = parse_field(parts[5], file, lineno + 1, "h_last")?;
        if d >= n_draws || eq != volatility[d].len() {
            return Err(StoreError::Format {
                file: file.to_string(),
                line: lineno + 1,
                message: "volatility row out of range or out of order".to_string(),
            });
        }
        let h = if sigma2 == 0.0 { Vec::new() } else { vec![h_last] };
        volatility[d].push(VolatilityDraw {
            h,
            c,
            rho,
            sigma2,
        });
    }
    if volatility.iter().any(|per_eq| per_eq.len() != m) {
        return Err(StoreError::BadForest(
            "volatility table does not cover every draw and equation".to_string(),
        ));
    }

    let file = "loglik.csv";
    let content = read_file(dir, file)?;
    check_hash_line(&content, file, &hash)?;
    let mut log_likelihood = Vec::with_capacity(n_draws);
    for (lineno, line) in content.lines().enumerate().skip(2) {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 2 {
            return Err(StoreError::Format {
                file: file.to_string(),
                line: lineno + 1,
                message: format!("expected 2 fields, got {}", parts.len()),
            });
        }
        let d: usize = parse_field(parts[0], file, lineno + 1, "draw")?;
        let v: f64 = parse_field(parts[1], file, lineno + 1, "log likelihood")?;
        if d != log_likelihood.len() {
            return Err(StoreError::Format {
                file: file.to_string(),
                line: lineno + 1,
                message: "log-likelihood rows out of order".to_string(),
            });
        }
        log_likelihood.push(v);
    }
    if log_likelihood.len() != n_draws {
        return Err(StoreError::BadForest(
            "log-likelihood table does not cover every draw".to_string(),
        ));
    }

    Ok(PosteriorDraws {
        forests,
        coefficients,
        volatility,
        log_likelihood,
        config: manifest.config,
        names: manifest.names,
        num_covariates: manifest.num_covariates,
        leaf_variances: manifest.leaf_variances,
    })
}
