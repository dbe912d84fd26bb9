//! Adaptive pruning: node scores, depth-dependent thresholds, soft pruning
//! and fast recovery of previously pruned nodes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::search::{PruneRecord, SearchConfig, SearchTree, ROOT};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneLogEntry {
    pub node: usize,
    pub score: f64,
    pub depth: usize,
    pub visits: u64,
    pub iteration: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestoreEntry {
    pub node: usize,
    pub iteration: usize,
    /// Degradation ratio that triggered the restore.
    pub ratio: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneDecision {
    Keep,
    Prune,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PruneLog {
    pub pruned: Vec<PruneLogEntry>,
    pub restored: Vec<RestoreEntry>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MaintenanceReport {
    pub pruned: Vec<usize>,
    pub restored: Vec<usize>,
}

/// Shannon entropy (natural log) of a visit distribution; zero counts are skipped.
pub fn visit_entropy(visits: &[u64]) -> f64 {
    let total: u64 = visits.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    -visits
        .iter()
        .filter(|&&n| n > 0)
        .map(|&n| {
            let p = n as f64 / total;
            p * p.ln()
        })
        .sum::<f64>()
}

pub fn entropy(tree: &SearchTree, id: usize) -> f64 {
    let visits: Vec<u64> = tree.node(id).children.iter().map(|&c| tree.node(c).visits).collect();
    visit_entropy(&visits)
}

/// `H(parent) - sum(N(c) / N(parent) * H(c))` from precomputed values.
pub fn gain_from_parts(parent_entropy: f64, parent_visits: u64, children: &[(u64, f64)]) -> f64 {
    if parent_visits == 0 {
        return 0.0;
    }
    let n = parent_visits as f64;
    parent_entropy - children.iter().map(|&(nc, hc)| nc as f64 / n * hc).sum::<f64>()
}

pub fn information_gain(tree: &SearchTree, id: usize) -> f64 {
    let node = tree.node(id);
    let children: Vec<(u64, f64)> = node.children.iter().map(|&c| (tree.node(c).visits, entropy(tree, c))).collect();
    gain_from_parts(entropy(tree, id), node.visits, &children)
}

pub fn combine_score(value: f64, gain: f64, alpha: f64, beta: f64) -> f64 {
    alpha * value + beta * gain
}

pub fn node_score(tree: &SearchTree, id: usize, alpha: f64, beta: f64) -> f64 {
    combine_score(tree.node(id).value, information_gain(tree, id), alpha, beta)
}

/// The depth `d_early` itself uses the shallow formula.
pub fn threshold(depth: usize, cfg: &SearchConfig) -> f64 {
    let frac = cfg.lambda * depth as f64 / cfg.d_max as f64;
    if depth <= cfg.d_early {
        cfg.tau0 * (1.0 - frac)
    } else {
        cfg.tau0 * (1.0 + frac)
    }
}

pub fn retention_probability(score: f64, tau: f64, kappa: f64) -> f64 {
    (-kappa * (tau - score)).exp()
}

/// Keep with probability `exp(-κ(τ - I))`; draws exactly one number from `rng`.
pub fn soft_prune_decision(score: f64, tau: f64, kappa: f64, rng: &mut impl Rng) -> PruneDecision {
    let u: f64 = rng.gen();
    if u < retention_probability(score, tau, kappa) {
        PruneDecision::Keep
    } else {
        PruneDecision::Prune
    }
}

/// `(V_best - V_current) / V_best`, or `None` when `V_best` is not positive.
pub fn degradation_ratio(v_best: f64, v_current: f64) -> Option<f64> {
    (v_best > 0.0).then(|| (v_best - v_current) / v_best)
}

/// Restores up to `j` currently pruned logged nodes, highest score first and
/// most recent first among equal scores, when the current path has degraded
/// past `epsilon` relative to the best one.
#[allow(clippy::too_many_arguments)]
pub fn check_recovery(
    tree: &mut SearchTree,
    log: &mut PruneLog,
    best: Option<usize>,
    current: Option<usize>,
    epsilon: f64,
    j: usize,
    iteration: usize,
) -> Vec<usize> {
    let (Some(best), Some(current)) = (best, current) else { return Vec::new() };
    let Some(ratio) = degradation_ratio(tree.path_mean_value(best), tree.path_mean_value(current)) else {
        return Vec::new();
    };
    if ratio <= epsilon {
        return Vec::new();
    }
    // Latest entry per node that is still pruned.
    let mut candidates: Vec<(usize, &PruneLogEntry)> = Vec::new();
    for (pos, e) in log.pruned.iter().enumerate().rev() {
        if tree.node(e.node).pruned && !candidates.iter().any(|(_, c)| c.node == e.node) {
            candidates.push((pos, e));
        }
    }
    candidates.sort_by(|(pa, a), (pb, b)| b.score.total_cmp(&a.score).then(pb.cmp(pa)));
    let restored: Vec<usize> = candidates.iter().take(j).map(|(_, e)| e.node).collect();
    for &id in &restored {
        tree.node_mut(id).pruned = false;
        log.restored.push(RestoreEntry { node: id, iteration, ratio });
    }
    restored
}

/// One pass before selection: soft-prunes sub-threshold nodes (skipping the
/// root and anything under an already pruned node), then checks recovery.
pub fn maintenance_pass(
    tree: &mut SearchTree,
    cfg: &SearchConfig,
    iteration: usize,
    rng: &mut impl Rng,
    log: &mut PruneLog,
    best: Option<usize>,
    current: Option<usize>,
) -> MaintenanceReport {
    let mut report = MaintenanceReport::default();
    for id in 0..tree.len() {
        if id == ROOT || tree.is_blocked(id) {
            continue;
        }
        let depth = tree.node(id).depth;
        let score = node_score(tree, id, cfg.alpha, cfg.beta);
        let tau = threshold(depth, cfg);
        if score >= tau {
            continue;
        }
        if soft_prune_decision(score, tau, cfg.kappa, rng) == PruneDecision::Prune {
            let visits = tree.node(id).visits;
            let node = tree.node_mut(id);
            node.pruned = true;
            node.prune_record = Some(PruneRecord { score, depth, visits });
            log.pruned.push(PruneLogEntry { node: id, score, depth, visits, iteration });
            report.pruned.push(id);
        }
    }
    report.restored = check_recovery(tree, log, best, current, cfg.epsilon, cfg.recovery_count_j, iteration);
    report
}
