//! Model roles used by the search: policy, execution, process and outcome
//! reward, reflection and answer judging.
//!
//! Every role is a trait so the engine can run against the deterministic
//! [`scripted`] oracles or the JSON-over-HTTP [`remote`] client.

pub mod prompt;
pub mod remote;
pub mod scripted;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::registry::ToolSpec;
use crate::sandbox::BenchmarkCase;
use crate::trajectory::{Action, PolicyState, ToolInvocation};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("backend unreachable: {0}")]
    BackendUnreachable(String),
    #[error("malformed completion: {0}")]
    MalformedCompletion(String),
}

/// A reward in `[0, 1]`. Out-of-range values are rejected, never clamped.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Score(f64);

impl Score {
    pub const ZERO: Score = Score(0.0);
    pub const ONE: Score = Score(1.0);

    pub fn new(value: f64) -> Result<Self, GatewayError> {
        if (0.0..=1.0).contains(&value) {
            Ok(Score(value))
        } else {
            Err(GatewayError::MalformedCompletion(format!("score {value} outside [0, 1]")))
        }
    }

    pub fn from_bool(hit: bool) -> Self {
        if hit {
            Score::ONE
        } else {
            Score::ZERO
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Score {
    type Error = GatewayError;

    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Score::new(value)
    }
}

impl From<Score> for f64 {
    fn from(s: Score) -> f64 {
        s.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyRequest {
    pub state: PolicyState,
    pub k: usize,
    /// Names of the tools the policy may choose from.
    pub tools: Vec<String>,
    /// One summary per already expanded sibling of the target node.
    pub diversity_hints: Vec<String>,
    pub reflection_notes: Vec<String>,
}

pub trait PolicyModel: Send + Sync {
    /// Up to `req.k` candidate next actions.
    fn propose(&self, req: &PolicyRequest) -> Result<Vec<Action>, GatewayError>;
}

pub trait ExecutionModel: Send + Sync {
    /// Concrete arguments for the tool chosen by `action`.
    fn fill(
        &self,
        state: &PolicyState,
        action: &Action,
        tool: &ToolSpec,
        error_feedback: Option<&str>,
    ) -> Result<ToolInvocation, GatewayError>;
}

pub trait ProcessRewardModel: Send + Sync {
    fn score(&self, state: &PolicyState) -> Result<Score, GatewayError>;
}

pub trait OutcomeRewardModel: Send + Sync {
    fn score(&self, query: &str, final_answer: &str) -> Result<Score, GatewayError>;
}

pub trait Reflector: Send + Sync {
    /// Failure analysis of a finished, unsuccessful trajectory.
    fn reflect(&self, query: &str, failed: &PolicyState) -> Result<String, GatewayError>;
}

/// Decides whether an answer agrees with a case's reference answer.
pub trait AnswerJudge: Send + Sync {
    fn judge(&self, case: &BenchmarkCase, answer: &str) -> Result<Score, GatewayError>;
}

/// The five roles one search needs.
pub struct ModelSuite {
    pub policy: Box<dyn PolicyModel>,
    pub execution: Box<dyn ExecutionModel>,
    pub prm: Box<dyn ProcessRewardModel>,
    pub orm: Box<dyn OutcomeRewardModel>,
    pub reflector: Box<dyn Reflector>,
}

impl ModelSuite {
    pub fn scripted(case: Arc<BenchmarkCase>, policy: scripted::PolicyMode, filler: scripted::FillerMode) -> Self {
        ModelSuite {
            policy: Box::new(scripted::ScriptedPolicy::new(case.clone(), policy)),
            execution: Box::new(scripted::ScriptedFiller::new(case.clone(), filler)),
            prm: Box::new(scripted::ScriptedPrm::new(case.clone())),
            orm: Box::new(scripted::ExactMatchOrm::new(case.gold_answer.clone())),
            reflector: Box::new(scripted::ScriptedReflector::new(case)),
        }
    }

    pub fn remote(backend: Arc<remote::RemoteBackend>) -> Self {
        ModelSuite {
            policy: Box::new(remote::RemotePolicy(backend.clone())),
            execution: Box::new(remote::RemoteExecution(backend.clone())),
            prm: Box::new(remote::RemotePrm(backend.clone())),
            orm: Box::new(remote::RemoteOrm(backend.clone())),
            reflector: Box::new(remote::RemoteReflector(backend)),
        }
    }
}
