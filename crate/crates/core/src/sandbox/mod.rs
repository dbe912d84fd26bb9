//! Deterministic offline tool environment and synthetic benchmark generator.

mod bench;
mod tools;

use std::collections::HashMap;
use std::path::Path;

use serde_json::json;

pub use bench::{
    generate_benchmark, read_benchmark, replay_chain, step_thought, write_benchmark, BenchmarkCase, GoldStep, Replay,
    SandboxError, MAX_CHAIN_DEPTH,
};
pub use tools::{formula_mass, parse_formula, round_sig, SandboxTool, DENSITIES, ELEMENTS};

use crate::executor::ToolEnvironment;
use crate::registry::{RegistryError, ToolPool};
use crate::trajectory::{Args, Observation, ToolInvocation};

pub struct Sandbox {
    pool: ToolPool,
    tools: HashMap<String, SandboxTool>,
}

impl Default for Sandbox {
    fn default() -> Self {
        Self::new()
    }
}

impl Sandbox {
    pub fn new() -> Self {
        let catalog = tools::catalog();
        let pool = ToolPool::new("sandbox", catalog.iter().map(|t| t.spec.clone()).collect())
            .expect("sandbox catalog is a valid pool");
        let tools = catalog.into_iter().map(|t| (t.spec.name.clone(), t)).collect();
        Self { pool, tools }
    }

    pub fn pool(&self) -> &ToolPool {
        &self.pool
    }

    /// Runs a call. Invalid calls fail with text naming the first violated constraint.
    pub fn execute_tool(&self, call: &ToolInvocation) -> Observation {
        let report = self.pool.validate_invocation(call);
        if let Some(issue) = report.issues.first() {
            return Observation::failure(issue.to_string());
        }
        match self.tools[&call.tool].run(&call.args) {
            Ok(value) => Observation::success(value),
            Err(e) => Observation::failure(e),
        }
    }

    /// A fixed, valid argument set for `tool`, used for off-plan calls.
    pub fn example_args(tool: &str) -> Args {
        let pairs = match tool {
            "molar_mass" | "formula_parse" => vec![("formula", json!("NaCl"))],
            "element_property" => vec![("symbol", json!("O")), ("property", json!("atomic_number"))],
            "unit_convert" => vec![("value", json!(25)), ("from", json!("C")), ("to", json!("K"))],
            "balance_check" => vec![("reactants", json!(["H2", "O2"])), ("products", json!(["H2O"]))],
            "dilution_calc" => vec![("c1", json!(1.0)), ("v1", json!(10.0)), ("v2", json!(100.0))],
            "ph_from_concentration" => vec![("concentration", json!(0.01))],
            "smiles_length" => vec![("smiles", json!("CCO"))],
            "mixture_mass" => vec![("masses", json!([1.0, 2.0]))],
            "reaction_yield" => vec![("actual", json!(4.0)), ("theoretical", json!(5.0))],
            "density_lookup" => vec![("substance", json!("water"))],
            "significant_round" => vec![("value", json!(12.3456)), ("digits", json!(3))],
            _ => vec![],
        };
        pairs.into_iter().map(|(k, v)| (k.to_owned(), v)).collect()
    }

    /// Writes the sandbox package (`tools.json`) to `dir`.
    pub fn write_package(&self, dir: &Path) -> Result<(), RegistryError> {
        self.pool.save(dir)
    }
}

impl ToolEnvironment for Sandbox {
    fn pool(&self) -> &ToolPool {
        &self.pool
    }

    fn execute(&self, call: &ToolInvocation) -> Observation {
        self.execute_tool(call)
    }
}
