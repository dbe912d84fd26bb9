use serde::{Deserialize, Serialize};

use crate::config::ConfigError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Exploration coefficient.
    pub c: f64,
    /// Expansion width.
    pub k: usize,
    pub max_iterations: usize,
    pub d_max: usize,
    pub d_early: usize,
    pub alpha: f64,
    pub beta: f64,
    pub tau0: f64,
    pub lambda: f64,
    pub kappa: f64,
    pub epsilon: f64,
    pub recovery_count_j: usize,
    pub max_retries: usize,
    /// Early stop once a terminal reaches this outcome reward.
    pub success_threshold: f64,
    /// Number of tools offered to the policy.
    pub retrieve_top_k: usize,
    /// `false` skips maintenance passes entirely.
    pub prune: bool,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            c: 1.4,
            k: 3,
            max_iterations: 20,
            d_max: 8,
            d_early: 3,
            alpha: 0.7,
            beta: 0.3,
            tau0: 0.3,
            lambda: 0.5,
            kappa: 5.0,
            epsilon: 0.2,
            recovery_count_j: 2,
            max_retries: 2,
            success_threshold: 1.0,
            retrieve_top_k: crate::registry::DEFAULT_TOP_K,
            prune: true,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let reals = [
            ("c", self.c),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("tau0", self.tau0),
            ("lambda", self.lambda),
            ("kappa", self.kappa),
            ("epsilon", self.epsilon),
            ("success_threshold", self.success_threshold),
        ];
        if let Some((name, _)) = reals.iter().find(|(_, v)| !v.is_finite()) {
            return Err(ConfigError::Invalid(format!("{name} must be finite")));
        }
        let checks = [
            (self.k >= 1, "k ≥ 1"),
            (self.max_iterations >= 1, "max_iterations ≥ 1"),
            (self.d_early > 0 && self.d_early < self.d_max, "0 < d_early < d_max"),
            (self.c >= 0.0, "c ≥ 0"),
            (self.alpha >= 0.0 && self.beta >= 0.0, "α, β ≥ 0"),
            (self.tau0 >= 0.0, "τ0 ≥ 0"),
            (self.kappa > 0.0, "κ > 0"),
            (self.epsilon > 0.0 && self.epsilon < 1.0, "0 < ε < 1"),
            ((0.0..=1.0).contains(&self.success_threshold), "0 ≤ success_threshold ≤ 1"),
            (self.retrieve_top_k >= 1, "retrieve_top_k ≥ 1"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(ConfigError::Invalid((*msg).to_owned())),
            None => Ok(()),
        }
    }
}
