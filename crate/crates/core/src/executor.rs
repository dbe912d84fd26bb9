//! Tool-level execution with immediate reflection.

use serde::{Deserialize, Serialize};

use crate::gateway::{ExecutionModel, GatewayError};
use crate::registry::{ToolPool, ToolSpec};
use crate::trajectory::{Action, Observation, PolicyState, ToolInvocation};

/// Something that can run tool calls from a pool.
pub trait ToolEnvironment: Send + Sync {
    fn pool(&self) -> &ToolPool;
    fn execute(&self, call: &ToolInvocation) -> Observation;
}

pub const SCHEMA_PREFIX: &str = "schema: ";
pub const RUNTIME_PREFIX: &str = "runtime: ";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub invocation: ToolInvocation,
    pub observation: Observation,
    pub retries: usize,
    /// Failure text of every attempt that was followed by a retry, in order.
    pub feedback: Vec<String>,
}

fn attempt(env: &dyn ToolEnvironment, tool: &ToolSpec, call: &ToolInvocation) -> Observation {
    if call.tool != tool.name {
        return Observation::failure(format!("{SCHEMA_PREFIX}expected a call to `{}`, got `{}`", tool.name, call.tool));
    }
    let report = env.pool().validate_invocation(call);
    if !report.is_empty() {
        return Observation::failure(format!("{SCHEMA_PREFIX}{report}"));
    }
    let obs = env.execute(call);
    if obs.ok {
        obs
    } else {
        Observation::failure(format!("{RUNTIME_PREFIX}{}", obs.error_text()))
    }
}

/// Fills parameters for `tool`, runs the call and, on failure, asks the
/// execution model again with the failure text, at most `max_retries` times.
/// Tool failures come back as failed observations; only gateway errors are raised.
pub fn execute_with_reflection(
    state: &PolicyState,
    action: &Action,
    tool: &ToolSpec,
    env: &dyn ToolEnvironment,
    filler: &dyn ExecutionModel,
    max_retries: usize,
) -> Result<ExecutionOutcome, GatewayError> {
    let mut feedback: Vec<String> = Vec::new();
    loop {
        let invocation = filler.fill(state, action, tool, feedback.last().map(String::as_str))?;
        let observation = attempt(env, tool, &invocation);
        if observation.ok || feedback.len() == max_retries {
            return Ok(ExecutionOutcome { invocation, observation, retries: feedback.len(), feedback });
        }
        feedback.push(observation.error_text().to_owned());
    }
}
