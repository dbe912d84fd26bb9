//! Monte Carlo tree search over partial tool-use trajectories.

mod config;
mod engine;
mod tree;

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

pub use config::SearchConfig;
pub use engine::{run_search, Engine, SearchError, SearchEvent, SearchResult, StopReason};
pub use tree::{step_key, uct, uct_score, PruneRecord, SearchNode, SearchTree, ROOT};

use crate::executor::ToolEnvironment;
use crate::gateway::scripted::{FillerMode, PolicyMode};
use crate::gateway::ModelSuite;
use crate::sandbox::BenchmarkCase;

impl SearchResult {
    /// sha256 over the serialized node list.
    pub fn structural_hash(&self) -> String {
        let nodes = serde_json::to_vec(&self.tree.nodes).expect("nodes serialize");
        hex::encode(Sha256::digest(&nodes))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("search result serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_json() + "\n")
    }

    pub fn read(path: &Path) -> std::io::Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

/// Runs a benchmark case with the scripted models.
pub fn run_scripted(
    case: &BenchmarkCase,
    cfg: &SearchConfig,
    policy: PolicyMode,
    filler: FillerMode,
    env: &dyn ToolEnvironment,
) -> Result<SearchResult, SearchError> {
    let models = ModelSuite::scripted(Arc::new(case.clone()), policy, filler);
    run_search(&case.query, Some(&case.id), cfg, &models, env)
}

/// Searches every case in parallel; results keep the input order.
pub fn batch_search<F>(
    cases: &[BenchmarkCase],
    cfg: &SearchConfig,
    env: &dyn ToolEnvironment,
    models: F,
) -> Vec<Result<SearchResult, SearchError>>
where
    F: Fn(&BenchmarkCase) -> ModelSuite + Sync,
{
    cases.par_iter().map(|case| run_search(&case.query, Some(&case.id), cfg, &models(case), env)).collect()
}
