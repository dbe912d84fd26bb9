//! Flat TOML run configuration. Every key is optional; unknown keys are rejected.
//!
//! ```toml
//! c = 2.0
//! k = 3
//! kappa = 5.0
//! mode = "scripted"
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::data::PipelineConfig;
use crate::eval::Averaging;
use crate::gateway::prompt::PromptTemplates;
use crate::gateway::remote::{RemoteConfig, Role};
use crate::gateway::scripted::{FillerMode, PolicyMode};
pub use crate::search::SearchConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Scripted,
    Remote,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub c: f64,
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub tau0: f64,
    pub lambda: f64,
    pub kappa: f64,
    pub epsilon: f64,
    pub d_max: usize,
    pub d_early: usize,
    pub max_iterations: usize,
    pub orm_weight_w: f64,
    pub max_retries: usize,
    /// Defaults to 1.0 in scripted mode and 0.5 in remote mode.
    pub success_threshold: Option<f64>,
    pub recovery_count_j: usize,
    pub reorder_permutations_p: usize,
    pub retrieve_top_k: usize,
    pub prune: bool,
    pub seed: u64,

    pub mode: Mode,
    pub policy: PolicyMode,
    pub filler: FillerMode,
    pub backend_url: Option<String>,
    pub timeout_ms: u64,
    pub retries: usize,
    pub temperature: f64,
    pub prompt_dir: Option<PathBuf>,
    pub model_policy: Option<String>,
    pub model_execution: Option<String>,
    pub model_prm: Option<String>,
    pub model_orm: Option<String>,
    pub model_reflect: Option<String>,
    pub model_judge: Option<String>,

    pub averaging: Averaging,
}

impl Default for Config {
    fn default() -> Self {
        let s = SearchConfig::default();
        let p = PipelineConfig::default();
        Self {
            c: s.c,
            k: s.k,
            alpha: s.alpha,
            beta: s.beta,
            tau0: s.tau0,
            lambda: s.lambda,
            kappa: s.kappa,
            epsilon: s.epsilon,
            d_max: s.d_max,
            d_early: s.d_early,
            max_iterations: s.max_iterations,
            orm_weight_w: p.orm_weight_w,
            max_retries: s.max_retries,
            success_threshold: None,
            recovery_count_j: s.recovery_count_j,
            reorder_permutations_p: p.reorder_permutations_p,
            retrieve_top_k: s.retrieve_top_k,
            prune: s.prune,
            seed: s.seed,
            mode: Mode::Scripted,
            policy: PolicyMode::Gold,
            filler: FillerMode::Gold,
            backend_url: None,
            timeout_ms: 30_000,
            retries: 2,
            temperature: 0.7,
            prompt_dir: None,
            model_policy: None,
            model_execution: None,
            model_prm: None,
            model_orm: None,
            model_reflect: None,
            model_judge: None,
            averaging: Averaging::Micro,
        }
    }
}

impl Config {
    pub fn search(&self) -> SearchConfig {
        let default_threshold = match self.mode {
            Mode::Scripted => 1.0,
            Mode::Remote => 0.5,
        };
        SearchConfig {
            c: self.c,
            k: self.k,
            max_iterations: self.max_iterations,
            d_max: self.d_max,
            d_early: self.d_early,
            alpha: self.alpha,
            beta: self.beta,
            tau0: self.tau0,
            lambda: self.lambda,
            kappa: self.kappa,
            epsilon: self.epsilon,
            recovery_count_j: self.recovery_count_j,
            max_retries: self.max_retries,
            success_threshold: self.success_threshold.unwrap_or(default_threshold),
            retrieve_top_k: self.retrieve_top_k,
            prune: self.prune,
            seed: self.seed,
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            orm_weight_w: self.orm_weight_w,
            reorder_permutations_p: self.reorder_permutations_p,
            seed: self.seed,
        }
    }

    /// Remote client settings; `HEMCTS_BACKEND_URL` / `HEMCTS_BACKEND_TOKEN` override the file.
    pub fn remote(&self) -> Result<RemoteConfig, ConfigError> {
        let mut rc = RemoteConfig::new(self.backend_url.clone().unwrap_or_default()).with_env();
        if rc.url.is_empty() {
            return Err(ConfigError::Invalid("remote mode needs backend_url or HEMCTS_BACKEND_URL".into()));
        }
        rc.timeout = Duration::from_millis(self.timeout_ms);
        rc.retries = self.retries;
        rc.temperature = self.temperature;
        let models = [
            (Role::Policy, &self.model_policy),
            (Role::Execution, &self.model_execution),
            (Role::Prm, &self.model_prm),
            (Role::Orm, &self.model_orm),
            (Role::Reflect, &self.model_reflect),
            (Role::Judge, &self.model_judge),
        ];
        rc.models = models.into_iter().filter_map(|(r, m)| Some((r, m.clone()?))).collect::<BTreeMap<_, _>>();
        if let Some(dir) = &self.prompt_dir {
            rc.templates = PromptTemplates::load(dir)
                .map_err(|source| ConfigError::Io { path: dir.display().to_string(), source })?;
        }
        Ok(rc)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.search().validate()?;
        if !(0.0..=1.0).contains(&self.orm_weight_w) {
            return Err(ConfigError::Invalid("0 ≤ orm_weight_w ≤ 1".into()));
        }
        if self.reorder_permutations_p < 1 {
            return Err(ConfigError::Invalid("reorder_permutations_p ≥ 1".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(ConfigError::Invalid("temperature ≥ 0".into()));
        }
        Ok(())
    }
}

pub fn parse_config(text: &str) -> Result<Config, ConfigError> {
    let cfg: Config = toml::from_str(text).map_err(|e| ConfigError::Parse(e.message().to_owned()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<Config, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    parse_config(&text)
}
