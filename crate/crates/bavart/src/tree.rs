//! Binary regression trees and their Markov kernel.
//!
//! Everything the sum-of-trees sampler needs from a single tree lives here:
//! the arena representation, the depth-penalized generative prior, the
//! integrated (leaf-marginalized) likelihood, the structural
//! Metropolis-Hastings moves and the conjugate leaf-value draw.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Unnormalized selection weights for the four structural moves.
pub const GROW_WEIGHT: f64 = 0.25;
pub const PRUNE_WEIGHT: f64 = 0.25;
pub const SWAP_WEIGHT: f64 = 0.4;
pub const CHANGE_WEIGHT: f64 = 0.1;

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("response range must be positive and finite, got {0}")]
    ZeroRange(f64),
    #[error("tree count must be at least 1")]
    NoTrees,
    #[error("residuals ({resid}) and weights ({weights}) must match the design rows ({rows})")]
    LengthMismatch {
        resid: usize,
        weights: usize,
        rows: usize,
    },
    #[error("observation weight must be positive and finite, got {0}")]
    BadWeight(f64),
    #[error("leaf variance must be nonnegative and finite, got {0}")]
    BadLeafVariance(f64),
    #[error("leaf {node} holds no observations")]
    EmptyLeaf { node: usize },
    #[error("split probability slope alpha must lie in (0,1), got {0}")]
    BadAlpha(f64),
    #[error("depth penalty beta must be nonnegative, got {0}")]
    BadBeta(f64),
    #[error("minimum leaf size must be at least 1")]
    BadMinLeaf,
    #[error("node {node} breaks the preorder arena layout")]
    BadArena { node: usize },
}

/// A single decision: observations with `x[covariate] <= threshold` go left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRule {
    pub covariate: usize,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Leaf { value: f64 },
    Internal { rule: SplitRule, left: usize, right: usize },
}

/// A binary tree stored as a preorder arena: the root is node 0 and every
/// child index is larger than its parent's, with `left == parent + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
}

/// Hyperparameters of the tree prior.
///
/// `sigma_mu2` is the prior variance of a leaf value. `max_depth` caps the
/// depth of leaves; `None` leaves the depth unconstrained apart from the
/// geometric decay of the split probability.
#[derive(Debug, Clone, PartialEq)]
pub struct TreePriorConfig {
    pub alpha: f64,
    pub beta: f64,
    pub sigma_mu2: f64,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
}

impl Default for TreePriorConfig {
    fn default() -> Self {
        Self {
            alpha: 0.95,
            beta: 2.0,
            sigma_mu2: 1.0,
            min_leaf: 5,
            max_depth: None,
        }
    }
}

impl TreePriorConfig {
    pub fn validate(&self) -> Result<(), TreeError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(TreeError::BadAlpha(self.alpha));
        }
        if !(self.beta >= 0.0) {
            return Err(TreeError::BadBeta(self.beta));
        }
        if !(self.sigma_mu2 >= 0.0 && self.sigma_mu2.is_finite()) {
            return Err(TreeError::BadLeafVariance(self.sigma_mu2));
        }
        if self.min_leaf < 1 {
            return Err(TreeError::BadMinLeaf);
        }
        Ok(())
    }
}

/// Probability that a node at depth `d` splits: `alpha * (1 + d)^(-beta)`.
pub fn split_probability(depth: usize, cfg: &TreePriorConfig) -> f64 {
    cfg.alpha * (1.0 + depth as f64).powf(-cfg.beta)
}

/// Leaf scale from the response range: `range / (2 * s_tilde * sqrt(n_trees))`.
///
/// Whether the result is used as a standard deviation or as a variance is the
/// caller's choice (see the sampler's `leaf_scale_is_stddev` switch).
pub fn leaf_scale(range: f64, s_tilde: f64, num_trees: usize) -> Result<f64, TreeError> {
    if !(range > 0.0 && range.is_finite()) {
        return Err(TreeError::ZeroRange(range));
    }
    if num_trees == 0 {
        return Err(TreeError::NoTrees);
    }
    Ok(range / (2.0 * s_tilde * (num_trees as f64).sqrt()))
}

impl DecisionTree {
    /// A single-leaf tree.
    pub fn stump(value: f64) -> Self {
        Self {
            nodes: vec![TreeNode::Leaf { value }],
        }
    }

    /// Routes `x` to its leaf and returns the leaf value.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Internal { rule, left, right } => {
                    id = if x[rule.covariate] <= rule.threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    /// Routes row `r` of a design matrix to its leaf node id.
    pub fn route_row(&self, x: &DMatrix<f64>, r: usize) -> usize {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                TreeNode::Leaf { .. } => return id,
                TreeNode::Internal { rule, left, right } => {
                    id = if x[(r, rule.covariate)] <= rule.threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    /// Leaf node id for every design row.
    pub fn assign_rows(&self, x: &DMatrix<f64>) -> Vec<usize> {
        (0..x.nrows()).map(|r| self.route_row(x, r)).collect()
    }

    /// Fitted value for every design row.
    pub fn fits(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows())
            .map(|r| match &self.nodes[self.route_row(x, r)] {
                TreeNode::Leaf { value } => *value,
                TreeNode::Internal { .. } => unreachable!(),
            })
            .collect()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf { .. }))
            .count()
    }

    pub fn num_internal(&self) -> usize {
        self.nodes.len() - self.num_leaves()
    }

    pub fn leaf_ids(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| matches!(self.nodes[i], TreeNode::Leaf { .. }))
            .collect()
    }

    pub fn internal_ids(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| matches!(self.nodes[i], TreeNode::Internal { .. }))
            .collect()
    }

    /// Depth of every node; the root has depth 0.
    pub fn depths(&self) -> Vec<usize> {
        let mut d = vec![0usize; self.nodes.len()];
        for id in 0..self.nodes.len() {
            if let TreeNode::Internal { left, right, .. } = &self.nodes[id] {
                d[*left] = d[id] + 1;
                d[*right] = d[id] + 1;
            }
        }
        d
    }

    /// Parent of every node; the root has none.
    pub fn parents(&self) -> Vec<Option<usize>> {
        let mut p = vec![None; self.nodes.len()];
        for id in 0..self.nodes.len() {
            if let TreeNode::Internal { left, right, .. } = &self.nodes[id] {
                p[*left] = Some(id);
                p[*right] = Some(id);
            }
        }
        p
    }

    pub fn leaf_values(&self) -> Vec<f64> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                TreeNode::Leaf { value } => Some(*value),
                TreeNode::Internal { .. } => None,
            })
            .collect()
    }

    /// Checks the preorder arena layout and the binary-tree node count.
    pub fn validate_structure(&self) -> Result<(), TreeError> {
        if self.nodes.is_empty() {
            return Err(TreeError::BadArena { node: 0 });
        }
        // A preorder walk must visit node ids 0..n in order.
        fn walk(t: &DecisionTree, id: usize, next: &mut usize) -> Result<(), TreeError> {
            if id != *next {
                return Err(TreeError::BadArena { node: id });
            }
            *next += 1;
            if let TreeNode::Internal { left, right, .. } = &t.nodes[id] {
                if *left >= t.nodes.len() || *right >= t.nodes.len() {
                    return Err(TreeError::BadArena { node: id });
                }
                walk(t, *left, next)?;
                walk(t, *right, next)?;
            }
            Ok(())
        }
        let mut next = 0;
        walk(self, 0, &mut next)?;
        if next != self.nodes.len() {
            return Err(TreeError::BadArena { node: next });
        }
        if self.num_leaves() != self.num_internal() + 1 {
            return Err(TreeError::BadArena { node: 0 });
        }
        Ok(())
    }

    /// Replaces leaf `leaf_id` by an internal node with two fresh leaves.
    /// Returns the rebuilt tree and the new internal node's id.
    pub fn grow(&self, leaf_id: usize, rule: SplitRule) -> (Self, usize) {
        let mut nodes = Vec::with_capacity(self.nodes.len() + 2);
        let mut target = None;
        self.copy_edit(0, &Edit::Grow { leaf_id, rule }, &mut nodes, &mut target);
        (
            Self { nodes },
            target.expect("grow target must be a leaf of the tree"),
        )
    }

    /// Collapses internal node `node_id` (and its whole subtree) to a leaf.
    /// Returns the rebuilt tree and the new leaf's id.
    pub fn prune(&self, node_id: usize) -> (Self, usize) {
        let mut nodes = Vec::with_capacity(self.nodes.len());
        let mut target = None;
        self.copy_edit(0, &Edit::Prune { node_id }, &mut nodes, &mut target);
        (
            Self { nodes },
            target.expect("prune target must be an internal node of the tree"),
        )
    }

    /// Rewrites the rule of internal node `node_id`, keeping the structure.
    pub fn with_rule(&self, node_id: usize, rule: SplitRule) -> Self {
        let mut nodes = Vec::with_capacity(self.nodes.len());
        self.copy_edit(0, &Edit::SetRule { node_id, rule }, &mut nodes, &mut None);
        Self { nodes }
    }

    fn copy_edit(
        &self,
        id: usize,
        edit: &Edit,
        out: &mut Vec<TreeNode>,
        target: &mut Option<usize>,
    ) -> usize {
        match (&self.nodes[id], edit) {
            (TreeNode::Leaf { .. }, Edit::Grow { leaf_id, rule }) if id == *leaf_id => {
                let my = out.len();
                out.push(TreeNode::Leaf { value: f64::NAN });
                let left = out.len();
                out.push(TreeNode::Leaf { value: 0.0 });
                let right = out.len();
                out.push(TreeNode::Leaf { value: 0.0 });
                out[my] = TreeNode::Internal { rule: *rule, left, right };
                *target = Some(my);
                my
            }
            (TreeNode::Internal { .. }, Edit::Prune { node_id }) if id == *node_id => {
                out.push(TreeNode::Leaf { value: 0.0 });
                *target = Some(out.len() - 1);
                out.len() - 1
            }
            (TreeNode::Leaf { value }, _) => {
                out.push(TreeNode::Leaf { value: *value });
                out.len() - 1
            }
            (TreeNode::Internal { rule, left, right }, _) => {
                let rule = match edit {
                    Edit::SetRule { node_id, rule: new } if id == *node_id => *new,
                    _ => *rule,
                };
                let my = out.len();
                out.push(TreeNode::Leaf { value: f64::NAN });
                let l = self.copy_edit(*left, edit, out, target);
                let r = self.copy_edit(*right, edit, out, target);
                out[my] = TreeNode::Internal { rule, left: l, right: r };
                my
            }
        }
    }

    /// For every node id, the design rows routed through it.
    pub(crate) fn route_observations(&self, x: &DMatrix<f64>) -> Vec<Vec<u32>> {
        let mut obs: Vec<Vec<u32>> = vec![Vec::new(); self.nodes.len()];
        obs[0] = (0..x.nrows() as u32).collect();
        // Children always carry larger ids, so one forward pass suffices.
        for id in 0..self.nodes.len() {
            if let TreeNode::Internal { rule, left, right } = &self.nodes[id] {
                let mut l = Vec::new();
                let mut r = Vec::new();
                for &i in &obs[id] {
                    if x[(i as usize, rule.covariate)] <= rule.threshold {
                        l.push(i);
                    } else {
                        r.push(i);
                    }
                }
                obs[*left] = l;
                obs[*right] = r;
            }
        }
        obs
    }
}

enum Edit {
    Grow { leaf_id: usize, rule: SplitRule },
    Prune { node_id: usize },
    SetRule { node_id: usize, rule: SplitRule },
}

fn values_at(x: &DMatrix<f64>, obs: &[u32], cov: usize) -> Vec<f64> {
    obs.iter().map(|&i| x[(i as usize, cov)]).collect()
}

/// Sorted distinct values of one covariate among the given rows.
fn distinct_sorted(x: &DMatrix<f64>, obs: &[u32], cov: usize) -> Vec<f64> {
    let mut v = values_at(x, obs, cov);
    v.sort_unstable_by(f64::total_cmp);
    v.dedup();
    v
}

fn has_two_distinct(x: &DMatrix<f64>, obs: &[u32], cov: usize) -> bool {
    if obs.is_empty() {
        return false;
    }
    let first = x[(obs[0] as usize, cov)];
    obs.iter().any(|&i| x[(i as usize, cov)] != first)
}

/// Covariates with at least two distinct values among the given rows; only
/// these can carry a split.
fn eligible_covariates(x: &DMatrix<f64>, obs: &[u32]) -> Vec<usize> {
    (0..x.ncols())
        .filter(|&c| has_two_distinct(x, obs, c))
        .collect()
}

/// Log density of the structure-and-rules prior, or negative infinity when
/// the tree violates the support (undersized leaf, threshold outside the
/// node's observed values, split past the depth cap).
///
/// Internal nodes contribute `ln p_split(d) - ln E - ln H` where `E` counts
/// eligible covariates at the node and `H` the admissible thresholds
/// (distinct observed values minus the largest). Leaves contribute
/// `ln(1 - p_split(d))` except where splitting is impossible, in which case
/// the no-split factor is 1.
pub fn log_tree_prior(tree: &DecisionTree, x: &DMatrix<f64>, cfg: &TreePriorConfig) -> f64 {
    let obs = tree.route_observations(x);
    let depths = tree.depths();
    let has_internal = tree.num_internal() > 0;
    let mut lp = 0.0;
    for id in 0..tree.nodes.len() {
        let d = depths[id];
        match &tree.nodes[id] {
            TreeNode::Internal { rule, .. } => {
                if let Some(cap) = cfg.max_depth {
                    if d >= cap {
                        return f64::NEG_INFINITY;
                    }
                }
                let distinct = distinct_sorted(x, &obs[id], rule.covariate);
                if distinct.len() < 2 {
                    return f64::NEG_INFINITY;
                }
                let h = distinct.len() - 1;
                if !distinct[..h].contains(&rule.threshold) {
                    return f64::NEG_INFINITY;
                }
                let e = eligible_covariates(x, &obs[id]).len();
                lp += split_probability(d, cfg).ln() - (e as f64).ln() - (h as f64).ln();
            }
            TreeNode::Leaf { .. } => {
                if has_internal && obs[id].len() < cfg.min_leaf {
                    return f64::NEG_INFINITY;
                }
                let capped = cfg.max_depth.map_or(false, |cap| d >= cap);
                let splittable = !capped && !eligible_covariates(x, &obs[id]).is_empty();
                if splittable {
                    lp += (1.0 - split_probability(d, cfg)).ln();
                }
            }
        }
    }
    lp
}

/// Draws a tree from the generative prior over structures and rules, with
/// leaf values drawn from their `N(0, sigma_mu2)` prior.
///
/// The minimum-leaf-size constraint is part of the posterior support rather
/// than the generative draw, so prior simulation ignores it.
pub fn sample_tree_from_prior(
    x: &DMatrix<f64>,
    cfg: &TreePriorConfig,
    rng: &mut impl Rng,
) -> DecisionTree {
    fn recurse(
        x: &DMatrix<f64>,
        obs: Vec<u32>,
        depth: usize,
        cfg: &TreePriorConfig,
        rng: &mut impl Rng,
        out: &mut Vec<TreeNode>,
    ) {
        let capped = cfg.max_depth.map_or(false, |cap| depth >= cap);
        let elig = if capped {
            Vec::new()
        } else {
            eligible_covariates(x, &obs)
        };
        let split = !elig.is_empty() && rng.gen::<f64>() < split_probability(depth, cfg);
        if split {
            let cov = elig[rng.gen_range(0..elig.len())];
            let distinct = distinct_sorted(x, &obs, cov);
            let threshold = distinct[rng.gen_range(0..distinct.len() - 1)];
            let (mut l, mut r) = (Vec::new(), Vec::new());
            for &i in &obs {
                if x[(i as usize, cov)] <= threshold {
                    l.push(i);
                } else {
                    r.push(i);
                }
            }
            let my = out.len();
            out.push(TreeNode::Leaf { value: f64::NAN });
            let left = out.len();
            recurse(x, l, depth + 1, cfg, rng, out);
            let right = out.len();
            recurse(x, r, depth + 1, cfg, rng, out);
            out[my] = TreeNode::Internal {
                rule: SplitRule { covariate: cov, threshold },
                left,
                right,
            };
        } else {
            let z: f64 = rng.sample(StandardNormal);
            out.push(TreeNode::Leaf {
                value: z * cfg.sigma_mu2.sqrt(),
            });
        }
    }
    let mut nodes = Vec::new();
    let obs = (0..x.nrows() as u32).collect();
    recurse(x, obs, 0, cfg, rng, &mut nodes);
    DecisionTree { nodes }
}

/// Log of the likelihood with all leaf values integrated out.
///
/// Per leaf with residuals `r_i` and variances `w_i`, using
/// `s = sum 1/w_i` and `b = sum r_i/w_i`:
/// `-(n/2) ln 2pi - (1/2) sum ln w_i - (1/2) ln(1 + sigma_mu2 * s)
///  + b^2 sigma_mu2 / (2 (1 + sigma_mu2 * s)) - (1/2) sum r_i^2 / w_i`.
/// The form stays finite as `sigma_mu2 -> 0`.
pub fn log_marginal_likelihood(
    tree: &DecisionTree,
    x: &DMatrix<f64>,
    resid: &[f64],
    weights: &[f64],
    sigma_mu2: f64,
) -> Result<f64, TreeError> {
    check_inputs(x, resid, weights, sigma_mu2)?;
    let assign = tree.assign_rows(x);
    let n_nodes = tree.nodes.len();
    let mut count = vec![0usize; n_nodes];
    let mut sum_prec = vec![0.0f64; n_nodes];
    let mut sum_rprec = vec![0.0f64; n_nodes];
    let mut sum_r2prec = vec![0.0f64; n_nodes];
    let mut sum_logw = vec![0.0f64; n_nodes];
    for (i, &leaf) in assign.iter().enumerate() {
        let w = weights[i];
        let r = resid[i];
        count[leaf] += 1;
        sum_prec[leaf] += 1.0 / w;
        sum_rprec[leaf] += r / w;
        sum_r2prec[leaf] += r * r / w;
        sum_logw[leaf] += w.ln();
    }
    let mut total = 0.0;
    for leaf in tree.leaf_ids() {
        let n = count[leaf];
        if n == 0 {
            return Err(TreeError::EmptyLeaf { node: leaf });
        }
        let shrink = 1.0 + sigma_mu2 * sum_prec[leaf];
        total += -0.5 * (n as f64) * (2.0 * std::f64::consts::PI).ln()
            - 0.5 * sum_logw[leaf]
            - 0.5 * shrink.ln()
            + sum_rprec[leaf] * sum_rprec[leaf] * sigma_mu2 / (2.0 * shrink)
            - 0.5 * sum_r2prec[leaf];
    }
    Ok(total)
}

fn check_inputs(
    x: &DMatrix<f64>,
    resid: &[f64],
    weights: &[f64],
    sigma_mu2: f64,
) -> Result<(), TreeError> {
    if resid.len() != x.nrows() || weights.len() != x.nrows() {
        return Err(TreeError::LengthMismatch {
            resid: resid.len(),
            weights: weights.len(),
            rows: x.nrows(),
        });
    }
    for &w in weights {
        if !(w > 0.0 && w.is_finite()) {
            return Err(TreeError::BadWeight(w));
        }
    }
    if !(sigma_mu2 >= 0.0 && sigma_mu2.is_finite()) {
        return Err(TreeError::BadLeafVariance(sigma_mu2));
    }
    Ok(())
}

/// Redraws every leaf value from its conjugate normal posterior.
pub fn sample_leaf_params(
    tree: &DecisionTree,
    x: &DMatrix<f64>,
    resid: &[f64],
    weights: &[f64],
    sigma_mu2: f64,
    rng: &mut impl Rng,
) -> Result<DecisionTree, TreeError> {
    check_inputs(x, resid, weights, sigma_mu2)?;
    let assign = tree.assign_rows(x);
    let n_nodes = tree.nodes.len();
    let mut count = vec![0usize; n_nodes];
    let mut sum_prec = vec![0.0f64; n_nodes];
    let mut sum_rprec = vec![0.0f64; n_nodes];
    for (i, &leaf) in assign.iter().enumerate() {
        count[leaf] += 1;
        sum_prec[leaf] += 1.0 / weights[i];
        sum_rprec[leaf] += resid[i] / weights[i];
    }
    let mut out = tree.clone();
    for leaf in tree.leaf_ids() {
        if count[leaf] == 0 {
            return Err(TreeError::EmptyLeaf { node: leaf });
        }
        // Posterior: mean b*v, variance v with v = sigma_mu2 / (1 + sigma_mu2*s).
        let shrink = 1.0 + sigma_mu2 * sum_prec[leaf];
        let var = sigma_mu2 / shrink;
        let mean = sum_rprec[leaf] * var;
        let z: f64 = rng.sample(StandardNormal);
        if let TreeNode::Leaf { value } = &mut out.nodes[leaf] {
            *value = mean + var.sqrt() * z;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MoveKind {
    Grow,
    Prune,
    Swap,
    Change,
    /// No structural change: either no move is available or the drawn
    /// candidate fell outside the prior support and is rejected in place.
    Stay,
}

/// A candidate tree together with `log q(reverse) - log q(forward)`.
#[derive(Debug, Clone)]
pub struct Proposal {
    pub tree: DecisionTree,
    pub log_ratio: f64,
    pub kind: MoveKind,
}

struct GrowLeaf {
    leaf: usize,
    eligible: Vec<usize>,
}

/// Leaves that can host a new split: below the depth cap and with at least
/// one eligible covariate.
fn growable_leaves(
    tree: &DecisionTree,
    x: &DMatrix<f64>,
    cfg: &TreePriorConfig,
    obs: &[Vec<u32>],
    depths: &[usize],
) -> Vec<GrowLeaf> {
    tree.leaf_ids()
        .into_iter()
        .filter(|&id| cfg.max_depth.map_or(true, |cap| depths[id] < cap))
        .filter_map(|id| {
            let eligible = eligible_covariates(x, &obs[id]);
            if eligible.is_empty() {
                None
            } else {
                Some(GrowLeaf { leaf: id, eligible })
            }
        })
        .collect()
}

fn any_growable(
    tree: &DecisionTree,
    x: &DMatrix<f64>,
    cfg: &TreePriorConfig,
    obs: &[Vec<u32>],
    depths: &[usize],
) -> bool {
    tree.leaf_ids().into_iter().any(|id| {
        cfg.max_depth.map_or(true, |cap| depths[id] < cap)
            && (0..x.ncols()).any(|c| has_two_distinct(x, &obs[id], c))
    })
}

fn nog_nodes(tree: &DecisionTree) -> Vec<usize> {
    tree.internal_ids()
        .into_iter()
        .filter(|&id| {
            if let TreeNode::Internal { left, right, .. } = &tree.nodes[id] {
                matches!(tree.nodes[*left], TreeNode::Leaf { .. })
                    && matches!(tree.nodes[*right], TreeNode::Leaf { .. })
            } else {
                false
            }
        })
        .collect()
}

/// Ordered (parent, child) pairs where both nodes are internal.
fn swap_pairs(tree: &DecisionTree) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for id in tree.internal_ids() {
        if let TreeNode::Internal { left, right, .. } = &tree.nodes[id] {
            for child in [*left, *right] {
                if matches!(tree.nodes[child], TreeNode::Internal { .. }) {
                    pairs.push((id, child));
                }
            }
        }
    }
    pairs
}

fn rule_of(tree: &DecisionTree, id: usize) -> SplitRule {
    match &tree.nodes[id] {
        TreeNode::Internal { rule, .. } => *rule,
        TreeNode::Leaf { .. } => unreachable!("node {id} is a leaf"),
    }
}

/// Total weight of the move types available on `tree`.
fn normalizer_parts(grow: bool, prune: bool, swap: bool, change: bool) -> f64 {
    let mut z = 0.0;
    if grow {
        z += GROW_WEIGHT;
    }
    if prune {
        z += PRUNE_WEIGHT;
    }
    if swap {
        z += SWAP_WEIGHT;
    }
    if change {
        z += CHANGE_WEIGHT;
    }
    z
}

fn normalizer(tree: &DecisionTree, x: &DMatrix<f64>, cfg: &TreePriorConfig) -> f64 {
    let obs = tree.route_observations(x);
    let depths = tree.depths();
    let has_internal = tree.num_internal() > 0;
    normalizer_parts(
        any_growable(tree, x, cfg, &obs, &depths),
        has_internal,
        !swap_pairs(tree).is_empty(),
        has_internal,
    )
}

/// Draws one structural move and returns the candidate tree with its log
/// proposal ratio.
///
/// Move types are selected with weights GROW 0.25, PRUNE 0.25, SWAP 0.4,
/// CHANGE 0.1, renormalized over the moves available on the current tree.
/// The splitting covariate is uniform over eligible covariates at the node
/// and the threshold uniform over that covariate's distinct observed values
/// there, excluding the largest so both children stay nonempty. Candidates
/// that land outside the prior support (for example an undersized leaf)
/// come back as `Stay` with ratio 0, which is equivalent to proposing and
/// rejecting them. When no move is available at all the unchanged tree is
/// returned the same way.
pub fn propose_move(
    tree: &DecisionTree,
    x: &DMatrix<f64>,
    cfg: &TreePriorConfig,
    rng: &mut impl Rng,
) -> Proposal {
    let stay = |tree: &DecisionTree| Proposal {
        tree: tree.clone(),
        log_ratio: 0.0,
        kind: MoveKind::Stay,
    };
    let obs = tree.route_observations(x);
    let depths = tree.depths();
    let grow_cands = growable_leaves(tree, x, cfg, &obs, &depths);
    let nogs = nog_nodes(tree);
    let pairs = swap_pairs(tree);
    let internal = tree.internal_ids();
    let z = normalizer_parts(
        !grow_cands.is_empty(),
        !nogs.is_empty(),
        !pairs.is_empty(),
        !internal.is_empty(),
    );
    if z == 0.0 {
        return stay(tree);
    }
    let mut pick = rng.gen::<f64>() * z;
    let kind = 'k: {
        if !grow_cands.is_empty() {
            pick -= GROW_WEIGHT;
            if pick < 0.0 {
                break 'k MoveKind::Grow;
            }
        }
        if !nogs.is_empty() {
            pick -= PRUNE_WEIGHT;
            if pick < 0.0 {
                break 'k MoveKind::Prune;
            }
        }
        if !pairs.is_empty() {
            pick -= SWAP_WEIGHT;
            if pick < 0.0 {
                break 'k MoveKind::Swap;
            }
        }
        MoveKind::Change
    };

    match kind {
        MoveKind::Grow => {
            let gl = &grow_cands[rng.gen_range(0..grow_cands.len())];
            let cov = gl.eligible[rng.gen_range(0..gl.eligible.len())];
            let distinct = distinct_sorted(x, &obs[gl.leaf], cov);
            let h = distinct.len() - 1;
            let threshold = distinct[rng.gen_range(0..h)];
            let rule = SplitRule { covariate: cov, threshold };
            let (cand, _) = tree.grow(gl.leaf, rule);
            if log_tree_prior(&cand, x, cfg) == f64::NEG_INFINITY {
                return stay(tree);
            }
            let z_new = normalizer(&cand, x, cfg);
            let log_fwd = GROW_WEIGHT.ln() - z.ln()
                - (grow_cands.len() as f64).ln()
                - (gl.eligible.len() as f64).ln()
                - (h as f64).ln();
            let log_rev =
                PRUNE_WEIGHT.ln() - z_new.ln() - (nog_nodes(&cand).len() as f64).ln();
            Proposal {
                tree: cand,
                log_ratio: log_rev - log_fwd,
                kind,
            }
        }
        MoveKind::Prune => {
            let node = nogs[rng.gen_range(0..nogs.len())];
            let old_rule = rule_of(tree, node);
            let (cand, new_leaf) = tree.prune(node);
            let cand_obs = cand.route_observations(x);
            let cand_depths = cand.depths();
            let cand_grow = growable_leaves(&cand, x, cfg, &cand_obs, &cand_depths);
            let gl = cand_grow
                .iter()
                .find(|g| g.leaf == new_leaf)
                .expect("pruned node must be regrowable on a valid tree");
            let h = distinct_sorted(x, &cand_obs[new_leaf], old_rule.covariate).len() - 1;
            let z_new = normalizer_parts(
                true,
                cand.num_internal() > 0,
                !swap_pairs(&cand).is_empty(),
                cand.num_internal() > 0,
            );
            let log_fwd = PRUNE_WEIGHT.ln() - z.ln() - (nogs.len() as f64).ln();
            let log_rev = GROW_WEIGHT.ln() - z_new.ln()
                - (cand_grow.len() as f64).ln()
                - (gl.eligible.len() as f64).ln()
                - (h as f64).ln();
            Proposal {
                tree: cand,
                log_ratio: log_rev - log_fwd,
                kind,
            }
        }
        MoveKind::Swap => {
            let (parent, child) = pairs[rng.gen_range(0..pairs.len())];
            let rp = rule_of(tree, parent);
            let rc = rule_of(tree, child);
            let cand = tree.with_rule(parent, rc).with_rule(child, rp);
            if log_tree_prior(&cand, x, cfg) == f64::NEG_INFINITY {
                return stay(tree);
            }
            // Structure is unchanged, so pair counts cancel; only the
            // move-availability normalizers differ.
            let z_new = normalizer(&cand, x, cfg);
            Proposal {
                tree: cand,
                log_ratio: z.ln() - z_new.ln(),
                kind,
            }
        }
        MoveKind::Change => {
            let node = internal[rng.gen_range(0..internal.len())];
            let elig = eligible_covariates(x, &obs[node]);
            let cov = elig[rng.gen_range(0..elig.len())];
            let distinct = distinct_sorted(x, &obs[node], cov);
            let h_new = distinct.len() - 1;
            let threshold = distinct[rng.gen_range(0..h_new)];
            let old_rule = rule_of(tree, node);
            let h_old = distinct_sorted(x, &obs[node], old_rule.covariate).len() - 1;
            let cand = tree.with_rule(node, SplitRule { covariate: cov, threshold });
            if log_tree_prior(&cand, x, cfg) == f64::NEG_INFINITY {
                return stay(tree);
            }
            let z_new = normalizer(&cand, x, cfg);
            // Node and covariate selection probabilities cancel (the node's
            // observation set is unchanged); the threshold menus differ.
            Proposal {
                tree: cand,
                log_ratio: z.ln() - z_new.ln() + (h_new as f64).ln() - (h_old as f64).ln(),
                kind,
            }
        }
        MoveKind::Stay => unreachable!(),
    }
}

/// Metropolis-Hastings accept/reject between the current tree and a
/// candidate, using the integrated likelihood and the structure prior.
/// Returns the chosen tree and whether the candidate was accepted.
pub fn mh_accept(
    tree: &DecisionTree,
    candidate: &DecisionTree,
    log_proposal_ratio: f64,
    x: &DMatrix<f64>,
    resid: &[f64],
    weights: &[f64],
    cfg: &TreePriorConfig,
    rng: &mut impl Rng,
) -> Result<(DecisionTree, bool), TreeError> {
    let lp_new = log_tree_prior(candidate, x, cfg);
    if lp_new == f64::NEG_INFINITY {
        return Ok((tree.clone(), false));
    }
    let lp_old = log_tree_prior(tree, x, cfg);
    let ll_new = log_marginal_likelihood(candidate, x, resid, weights, cfg.sigma_mu2)?;
    let ll_old = log_marginal_likelihood(tree, x, resid, weights, cfg.sigma_mu2)?;
    let log_alpha = log_proposal_ratio + (ll_new - ll_old) + (lp_new - lp_old);
    let accept = log_alpha >= 0.0 || rng.gen::<f64>().ln() < log_alpha;
    if accept {
        Ok((candidate.clone(), true))
    } else {
        Ok((tree.clone(), false))
    }
}

/// Counts, per equation, how often each covariate appears in a splitting
/// rule. Entry (k, j) is the number of internal nodes in equation j's forest
/// whose rule splits on covariate k.
pub fn splitting_rule_counts(
    forests: &[Vec<DecisionTree>],
    num_covariates: usize,
) -> DMatrix<u32> {
    let mut counts = DMatrix::zeros(num_covariates, forests.len());
    for (j, forest) in forests.iter().enumerate() {
        for tree in forest {
            for node in &tree.nodes {
                if let TreeNode::Internal { rule, .. } = node {
                    counts[(rule.covariate, j)] += 1;
                }
            }
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    /// The bivariate example tree: root splits on x1 at 0.8 (yes -> left),
    /// the left child splits on x2 at 0.3.
    fn example_tree() -> DecisionTree {
        DecisionTree {
            nodes: vec![
                TreeNode::Internal {
                    rule: SplitRule { covariate: 0, threshold: 0.8 },
                    left: 1,
                    right: 4,
                },
                TreeNode::Internal {
                    rule: SplitRule { covariate: 1, threshold: 0.3 },
                    left: 2,
                    right: 3,
                },
                TreeNode::Leaf { value: 3.0 }, // both rules satisfied
                TreeNode::Leaf { value: 2.0 }, // first satisfied, second not
                TreeNode::Leaf { value: 1.0 }, // root rule violated
            ],
        }
    }

    fn single_covariate_design(values: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(values.len(), 1, values)
    }

    #[test]
    fn evaluate_routes_like_the_example() {
        let t = example_tree();
        assert_eq!(t.evaluate(&[0.9, 0.5]), 1.0);
        assert_eq!(t.evaluate(&[0.5, 0.1]), 3.0);
        assert_eq!(t.evaluate(&[0.5, 0.4]), 2.0);
        assert_eq!(DecisionTree::stump(0.7).evaluate(&[123.0, -4.0]), 0.7);
    }

    #[test]
    fn evaluate_is_piecewise_constant() {
        let t = example_tree();
        let base = t.evaluate(&[0.5, 0.1]);
        // Perturbations that cross no threshold leave the output unchanged.
        for eps in [1e-9, 1e-6, 1e-3] {
            assert_eq!(t.evaluate(&[0.5 + eps, 0.1 - eps]), base);
        }
    }

    #[test]
    fn structure_checks_pass_on_example() {
        let t = example_tree();
        t.validate_structure().unwrap();
        assert_eq!(t.num_leaves(), 3);
        assert_eq!(t.num_internal(), 2);
        assert_eq!(t.depths(), vec![0, 1, 2, 2, 1]);
        assert_eq!(
            t.parents(),
            vec![None, Some(0), Some(1), Some(1), Some(0)]
        );
    }

    #[test]
    fn split_probability_matches_hyperparameters() {
        let cfg = TreePriorConfig::default();
        assert!((split_probability(0, &cfg) - 0.95).abs() < 1e-15);
        assert!((split_probability(1, &cfg) - 0.2375).abs() < 1e-15);
        let flat = TreePriorConfig { beta: 0.0, ..TreePriorConfig::default() };
        for d in 0..6 {
            assert_eq!(split_probability(d, &flat), 0.95);
        }
    }

    #[test]
    fn leaf_scale_examples() {
        assert_eq!(leaf_scale(4.0, 2.0, 1).unwrap(), 1.0);
        assert_eq!(leaf_scale(4.0, 2.0, 4).unwrap(), 0.5);
        assert!(matches!(
            leaf_scale(0.0, 2.0, 10),
            Err(TreeError::ZeroRange(_))
        ));
    }

    #[test]
    fn marginal_likelihood_degenerate_prior() {
        let x = single_covariate_design(&[0.0]);
        let t = DecisionTree::stump(0.0);
        let got = log_marginal_likelihood(&t, &x, &[0.0], &[1.0], 0.0).unwrap();
        let expect = -0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((got - expect).abs() < 1e-14);
    }

    #[test]
    fn marginal_likelihood_matches_quadrature() {
        // Two observations in one leaf; integrate the leaf value out
        // numerically over a fine grid and compare.
        let x = single_covariate_design(&[0.0, 1.0]);
        let t = DecisionTree::stump(0.0);
        let resid = [1.0, -1.0];
        let w = [1.0, 1.0];
        let sigma_mu2 = 1.0;
        let got = log_marginal_likelihood(&t, &x, &resid, &w, sigma_mu2).unwrap();

        let norm = |v: f64, mean: f64, var: f64| {
            (-0.5 * (v - mean) * (v - mean) / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
        };
        let step = 1e-4;
        let mut acc = 0.0;
        let mut mu = -12.0;
        while mu <= 12.0 {
            let f = norm(resid[0], mu, w[0]) * norm(resid[1], mu, w[1]) * norm(mu, 0.0, sigma_mu2);
            acc += f * step;
            mu += step;
        }
        assert!((got - acc.ln()).abs() < 1e-6, "{got} vs {}", acc.ln());
    }

    #[test]
    fn marginal_likelihood_adds_over_leaves() {
        let x = single_covariate_design(&[0.0, 1.0, 2.0, 3.0]);
        let (split, _) = DecisionTree::stump(0.0).grow(
            0,
            SplitRule { covariate: 0, threshold: 1.0 },
        );
        let resid = [0.3, -0.1, 0.8, 0.2];
        let w = [1.0, 0.5, 2.0, 1.5];
        let whole = log_marginal_likelihood(&split, &x, &resid, &w, 0.7).unwrap();

        let left_x = single_covariate_design(&[0.0, 1.0]);
        let right_x = single_covariate_design(&[2.0, 3.0]);
        let stump = DecisionTree::stump(0.0);
        let left =
            log_marginal_likelihood(&stump, &left_x, &resid[..2], &w[..2], 0.7).unwrap();
        let right =
            log_marginal_likelihood(&stump, &right_x, &resid[2..], &w[2..], 0.7).unwrap();
        assert!((whole - (left + right)).abs() < 1e-12);
    }

    #[test]
    fn marginal_likelihood_ignores_observation_order() {
        let x = DMatrix::from_column_slice(4, 1, &[3.0, 1.0, 2.0, 0.0]);
        let xs = DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 2.0, 3.0]);
        let (tree, _) = DecisionTree::stump(0.0).grow(
            0,
            SplitRule { covariate: 0, threshold: 1.0 },
        );
        let a = log_marginal_likelihood(&tree, &x, &[0.4, -0.2, 0.9, 0.1], &[1.0, 2.0, 0.5, 1.0], 0.3)
            .unwrap();
        let b = log_marginal_likelihood(&tree, &xs, &[0.1, -0.2, 0.9, 0.4], &[1.0, 2.0, 0.5, 1.0], 0.3)
            .unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn leaf_draws_collapse_without_prior_mass() {
        let x = single_covariate_design(&[0.0, 1.0, 2.0]);
        let t = DecisionTree::stump(5.0);
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let drawn =
            sample_leaf_params(&t, &x, &[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0], 0.0, &mut rng).unwrap();
        assert_eq!(drawn.leaf_values(), vec![0.0]);
    }

    #[test]
    fn leaf_draws_reach_the_flat_prior_limit() {
        let x = single_covariate_design(&[0.0, 1.0]);
        let t = DecisionTree::stump(0.0);
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let big = 1e12;
        let n = 200_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let d = sample_leaf_params(&t, &x, &[2.0, 2.0], &[1.0, 1.0], big, &mut rng).unwrap();
            let v = d.leaf_values()[0];
            sum += v;
            sumsq += v * v;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!((mean - 2.0).abs() < 0.01, "mean {mean}");
        assert!((var - 0.5).abs() < 0.01, "var {var}");
    }

    #[test]
    fn leaf_draw_moments_match_the_conjugate_posterior() {
        let x = single_covariate_design(&[0.0, 1.0, 2.0]);
        let t = DecisionTree::stump(0.0);
        let resid = [1.0, 0.5, -0.25];
        let w = [1.0, 0.5, 2.0];
        let sigma_mu2 = 0.8;
        let s: f64 = w.iter().map(|wi| 1.0 / wi).sum();
        let b: f64 = resid.iter().zip(&w).map(|(r, wi)| r / wi).sum();
        let var = sigma_mu2 / (1.0 + sigma_mu2 * s);
        let mean = b * var;
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let n = 200_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let d = sample_leaf_params(&t, &x, &resid, &w, sigma_mu2, &mut rng).unwrap();
            let v = d.leaf_values()[0];
            sum += v;
            sumsq += v * v;
        }
        let emp_mean = sum / n as f64;
        let emp_var = sumsq / n as f64 - emp_mean * emp_mean;
        assert!((emp_mean - mean).abs() < 4.0 * (var / n as f64).sqrt());
        assert!((emp_var - var).abs() < 0.01 * var.max(0.1));
    }

    #[test]
    fn prior_matches_hand_computation() {
        let x = single_covariate_design(&[1.0, 2.0, 3.0, 4.0]);
        let cfg = TreePriorConfig {
            min_leaf: 1,
            sigma_mu2: 1.0,
            ..TreePriorConfig::default()
        };
        let stump = DecisionTree::stump(0.0);
        assert!((log_tree_prior(&stump, &x, &cfg) - 0.05f64.ln()).abs() < 1e-12);

        let (tree, _) = stump.grow(0, SplitRule { covariate: 0, threshold: 2.0 });
        // Root: split 0.95, one eligible covariate, three thresholds.
        // Children each hold two distinct values, so both carry no-split
        // factors at depth 1.
        let expect = 0.95f64.ln() - 3.0f64.ln() + 2.0 * (1.0 - 0.2375f64).ln();
        assert!((log_tree_prior(&tree, &x, &cfg) - expect).abs() < 1e-12);
    }

    #[test]
    fn prior_rejects_undersized_leaves_and_foreign_thresholds() {
        let x = single_covariate_design(&[1.0, 2.0, 3.0, 4.0]);
        let cfg = TreePriorConfig { min_leaf: 2, ..TreePriorConfig::default() };
        let (small, _) = DecisionTree::stump(0.0).grow(
            0,
            SplitRule { covariate: 0, threshold: 1.0 },
        );
        assert_eq!(log_tree_prior(&small, &x, &cfg), f64::NEG_INFINITY);

        let (foreign, _) = DecisionTree::stump(0.0).grow(
            0,
            SplitRule { covariate: 0, threshold: 2.5 },
        );
        assert_eq!(log_tree_prior(&foreign, &x, &cfg), f64::NEG_INFINITY);

        // The node maximum cannot be a threshold: its right child is empty.
        let (max_thr, _) = DecisionTree::stump(0.0).grow(
            0,
            SplitRule { covariate: 0, threshold: 4.0 },
        );
        assert_eq!(log_tree_prior(&max_thr, &x, &cfg), f64::NEG_INFINITY);
    }

    #[test]
    fn depth_cap_zeroes_deep_splits() {
        let x = single_covariate_design(&[1.0, 2.0, 3.0, 4.0]);
        let cfg = TreePriorConfig {
            min_leaf: 1,
            max_depth: Some(1),
            ..TreePriorConfig::default()
        };
        let (depth1, _) = DecisionTree::stump(0.0).grow(
            0,
            SplitRule { covariate: 0, threshold: 2.0 },
        );
        assert!(log_tree_prior(&depth1, &x, &cfg).is_finite());
        // Leaves sit at the cap, so their no-split factor is 1.
        assert!((log_tree_prior(&depth1, &x, &cfg) - (0.95f64.ln() - 3.0f64.ln())).abs() < 1e-12);

        let (depth2, _) = depth1.grow(1, SplitRule { covariate: 0, threshold: 1.0 });
        assert_eq!(log_tree_prior(&depth2, &x, &cfg), f64::NEG_INFINITY);
    }

    #[test]
    fn stump_only_proposes_grow() {
        let x = single_covariate_design(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0]);
        let cfg = TreePriorConfig { min_leaf: 1, ..TreePriorConfig::default() };
        let stump = DecisionTree::stump(0.0);
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        for _ in 0..100 {
            let p = propose_move(&stump, &x, &cfg, &mut rng);
            assert_eq!(p.kind, MoveKind::Grow);
            assert_eq!(p.tree.num_nodes(), 3);
            assert!(p.log_ratio.is_finite());
        }
    }

    #[test]
    fn constant_design_has_no_moves() {
        let x = single_covariate_design(&[2.0, 2.0, 2.0, 2.0]);
        let cfg = TreePriorConfig::default();
        let stump = DecisionTree::stump(0.0);
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let p = propose_move(&stump, &x, &cfg, &mut rng);
        assert_eq!(p.kind, MoveKind::Stay);
        assert_eq!(p.log_ratio, 0.0);
        assert_eq!(p.tree, stump);
    }

    #[test]
    fn grow_then_prune_ratios_are_exact_negatives() {
        let x = DMatrix::from_fn(12, 2, |r, c| ((r * 3 + c * 5) % 12) as f64);
        let cfg = TreePriorConfig { min_leaf: 2, ..TreePriorConfig::default() };
        let stump = DecisionTree::stump(0.0);
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let mut checked = 0;
        for _ in 0..200 {
            let grown = propose_move(&stump, &x, &cfg, &mut rng);
            if grown.kind != MoveKind::Grow {
                continue;
            }
            // Hunt for the prune that undoes the grow.
            for _ in 0..200 {
                let back = propose_move(&grown.tree, &x, &cfg, &mut rng);
                if back.kind == MoveKind::Prune && back.tree == stump {
                    assert!(
                        (grown.log_ratio + back.log_ratio).abs() < 1e-12,
                        "{} vs {}",
                        grown.log_ratio,
                        back.log_ratio
                    );
                    checked += 1;
                    break;
                }
            }
            if checked >= 20 {
                break;
            }
        }
        assert!(checked >= 20, "only verified {checked} grow/prune pairs");
    }

    #[test]
    fn accepting_the_current_tree_is_certain() {
        let x = single_covariate_design(&[1.0, 2.0, 3.0, 4.0]);
        let cfg = TreePriorConfig { min_leaf: 1, ..TreePriorConfig::default() };
        let t = DecisionTree::stump(0.0);
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..50 {
            let (_, accepted) = mh_accept(
                &t,
                &t,
                0.0,
                &x,
                &[0.1, 0.2, -0.3, 0.4],
                &[1.0; 4],
                &cfg,
                &mut rng,
            )
            .unwrap();
            assert!(accepted);
        }
    }

    #[test]
    fn zero_prior_candidates_are_never_accepted() {
        let x = single_covariate_design(&[1.0, 2.0, 3.0, 4.0]);
        let cfg = TreePriorConfig { min_leaf: 2, ..TreePriorConfig::default() };
        let t = DecisionTree::stump(0.0);
        // Threshold 1.0 leaves a single observation in the left leaf.
        let (bad, _) = t.grow(0, SplitRule { covariate: 0, threshold: 1.0 });
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        for _ in 0..100 {
            let (kept, accepted) = mh_accept(
                &t,
                &bad,
                0.0,
                &x,
                &[10.0, 10.0, -10.0, -10.0],
                &[1.0; 4],
                &cfg,
                &mut rng,
            )
            .unwrap();
            assert!(!accepted);
            assert_eq!(kept, t);
        }
    }

    #[test]
    fn prior_simulation_smoke() {
        // Small-sample version of the prior-frequency check; the full-size
        // run lives in the acceptance suite.
        let x = DMatrix::from_fn(200, 2, |r, c| (r as f64) * 0.37 + (c as f64) * 0.11);
        let cfg = TreePriorConfig::default();
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let n = 4000;
        let mut root_splits = 0;
        for _ in 0..n {
            let t = sample_tree_from_prior(&x, &cfg, &mut rng);
            if t.num_internal() > 0 {
                root_splits += 1;
            }
        }
        let freq = root_splits as f64 / n as f64;
        assert!((freq - 0.95).abs() < 0.02, "root split frequency {freq}");
    }

    #[test]
    fn rule_counts_follow_the_forest() {
        let stumps = vec![vec![DecisionTree::stump(0.0); 3]; 2];
        assert_eq!(splitting_rule_counts(&stumps, 4), DMatrix::zeros(4, 2));

        let forests = vec![vec![example_tree()]];
        let counts = splitting_rule_counts(&forests, 3);
        assert_eq!(counts[(0, 0)], 1);
        assert_eq!(counts[(1, 0)], 1);
        assert_eq!(counts[(2, 0)], 0);
        let total: u32 = counts.iter().sum();
        assert_eq!(total as usize, example_tree().num_internal());
    }

    #[test]
    fn proposals_keep_invariants_along_a_chain() {
        let x = DMatrix::from_fn(60, 3, |r, c| ((r * 7 + c * 13) % 60) as f64 * 0.1);
        let cfg = TreePriorConfig {
            min_leaf: 5,
            sigma_mu2: 0.25,
            ..TreePriorConfig::default()
        };
        let resid: Vec<f64> = (0..60).map(|i| ((i as f64) * 0.4).sin()).collect();
        let w = vec![0.5; 60];
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let mut tree = DecisionTree::stump(0.0);
        for _ in 0..400 {
            let prop = propose_move(&tree, &x, &cfg, &mut rng);
            let (next, _) =
                mh_accept(&tree, &prop.tree, prop.log_ratio, &x, &resid, &w, &cfg, &mut rng)
                    .unwrap();
            tree = sample_leaf_params(&next, &x, &resid, &w, cfg.sigma_mu2, &mut rng).unwrap();
            tree.validate_structure().unwrap();
            assert!(log_tree_prior(&tree, &x, &cfg).is_finite());
            let obs = tree.route_observations(&x);
            for leaf in tree.leaf_ids() {
                assert!(obs[leaf].len() >= cfg.min_leaf);
            }
        }
    }
}
