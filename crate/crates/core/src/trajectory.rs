//! Trajectory primitives shared by every layer: tool invocations, observations,
//! actions and the partial policy state they accumulate into.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Arguments of a tool call, keyed by canonical parameter name.
pub type Args = BTreeMap<String, Value>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolInvocation {
    pub tool: String,
    #[serde(default)]
    pub args: Args,
}

impl ToolInvocation {
    pub fn new(tool: impl Into<String>, args: Args) -> Self {
        Self { tool: tool.into(), args }
    }

    /// Tool-only draft, as proposed by a policy before parameter filling.
    pub fn draft(tool: impl Into<String>) -> Self {
        Self { tool: tool.into(), args: Args::new() }
    }

    /// Canonical one-line rendering, e.g. `molar_mass {"formula":"H2O"}`.
    pub fn summary(&self) -> String {
        let args = serde_json::to_string(&self.args).unwrap_or_default();
        format!("{} {}", self.tool, args)
    }

    /// Tool and args equal, with numbers compared by value.
    pub fn same_call(&self, other: &ToolInvocation) -> bool {
        self.tool == other.tool
            && self.args.len() == other.args.len()
            && self
                .args
                .iter()
                .all(|(k, v)| other.args.get(k).is_some_and(|o| same_value(v, o)))
    }
}

/// Result of running a tool. Exactly one of `value` / `error` is populated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Observation {
    pub fn success(value: Value) -> Self {
        Self { ok: true, value: Some(value), error: None }
    }

    pub fn failure(error: impl Into<String>) -> Self {
        Self { ok: false, value: None, error: Some(error.into()) }
    }

    pub fn is_well_formed(&self) -> bool {
        self.ok == self.value.is_some() && self.ok != self.error.is_some()
    }

    pub fn error_text(&self) -> &str {
        self.error.as_deref().unwrap_or("")
    }

    /// Key used for sibling uniqueness and return matching.
    pub fn key(&self) -> String {
        match (&self.value, &self.error) {
            (Some(v), _) => format!("ok:{}", canonical_json(v)),
            (None, Some(e)) => format!("err:{e}"),
            (None, None) => "none".to_owned(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    Invoke { thought: String, invocation: ToolInvocation },
    Answer { thought: String, answer: String },
}

impl Action {
    pub fn invoke(thought: impl Into<String>, invocation: ToolInvocation) -> Self {
        Action::Invoke { thought: thought.into(), invocation }
    }

    pub fn answer(thought: impl Into<String>, answer: impl Into<String>) -> Self {
        Action::Answer { thought: thought.into(), answer: answer.into() }
    }

    pub fn thought(&self) -> &str {
        match self {
            Action::Invoke { thought, .. } | Action::Answer { thought, .. } => thought,
        }
    }

    pub fn thought_mut(&mut self) -> &mut String {
        match self {
            Action::Invoke { thought, .. } | Action::Answer { thought, .. } => thought,
        }
    }

    pub fn invocation(&self) -> Option<&ToolInvocation> {
        match self {
            Action::Invoke { invocation, .. } => Some(invocation),
            Action::Answer { .. } => None,
        }
    }

    pub fn answer_text(&self) -> Option<&str> {
        match self {
            Action::Answer { answer, .. } => Some(answer),
            Action::Invoke { .. } => None,
        }
    }

    pub fn is_answer(&self) -> bool {
        matches!(self, Action::Answer { .. })
    }

    /// Short description used as a diversity hint for later proposals.
    pub fn summary(&self) -> String {
        match self {
            Action::Invoke { invocation, .. } => invocation.summary(),
            Action::Answer { answer, .. } => format!("answer: {}", normalize_text(answer)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<Observation>,
}

impl Step {
    pub fn new(action: Action, observation: Option<Observation>) -> Self {
        Self { action, observation }
    }
}

/// The partial trajectory `[query, a1, o1, ..., ai, oi]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicyState {
    pub query: String,
    #[serde(default)]
    pub steps: Vec<Step>,
}

impl PolicyState {
    pub fn new(query: impl Into<String>) -> Self {
        Self { query: query.into(), steps: Vec::new() }
    }

    pub fn terminal(&self) -> bool {
        self.steps.last().is_some_and(|s| s.action.is_answer())
    }

    pub fn extended(&self, step: Step) -> Self {
        let mut next = self.clone();
        next.steps.push(step);
        next
    }

    pub fn invocations(&self) -> impl Iterator<Item = &ToolInvocation> {
        self.steps.iter().filter_map(|s| s.action.invocation())
    }

    pub fn final_answer(&self) -> Option<&str> {
        self.steps.last().and_then(|s| s.action.answer_text())
    }

    /// Value of the most recent successful observation.
    pub fn last_value(&self) -> Option<&Value> {
        self.steps
            .iter()
            .rev()
            .filter_map(|s| s.observation.as_ref())
            .find(|o| o.ok)
            .and_then(|o| o.value.as_ref())
    }

    /// Every invoke carries an observation; an answer has none and comes last.
    pub fn is_well_formed(&self) -> bool {
        let n = self.steps.len();
        self.steps.iter().enumerate().all(|(i, s)| match &s.action {
            Action::Invoke { .. } => s.observation.as_ref().is_some_and(Observation::is_well_formed),
            Action::Answer { .. } => s.observation.is_none() && i + 1 == n,
        })
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, step) in self.steps.iter().enumerate() {
            let n = i + 1;
            match &step.action {
                Action::Invoke { thought, invocation } => {
                    out.push_str(&format!("Step {n} thought: {thought}\nStep {n} call: {}\n", invocation.summary()));
                    if let Some(obs) = &step.observation {
                        out.push_str(&format!("Step {n} observation: {}\n", render_observation(obs)));
                    }
                }
                Action::Answer { thought, answer } => {
                    out.push_str(&format!("Step {n} thought: {thought}\nFinal answer: {answer}\n"));
                }
            }
        }
        out
    }
}

pub const ANSWER_THOUGHT: &str = "All required values are available; report the final result.";

/// Answer synthesized from the latest successful observation.
pub fn answer_from_trajectory(state: &PolicyState) -> Action {
    let answer = state.last_value().map(render_value).unwrap_or_else(|| "unknown".to_owned());
    Action::answer(ANSWER_THOUGHT, answer)
}

pub fn render_observation(obs: &Observation) -> String {
    match (&obs.value, &obs.error) {
        (Some(v), _) => render_value(v),
        (None, Some(e)) => format!("error: {e}"),
        _ => String::new(),
    }
}

/// Textual answer form of a tool result.
pub fn render_value(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        other => canonical_json(other),
    }
}

pub fn canonical_json(value: &Value) -> String {
    serde_json::to_string(value).unwrap_or_default()
}

/// Trim, collapse internal whitespace, case-fold.
pub fn normalize_text(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Structural JSON equality where numbers compare as `f64`.
pub fn same_value(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => x.as_f64() == y.as_f64(),
        (Value::Array(x), Value::Array(y)) => {
            x.len() == y.len() && x.iter().zip(y).all(|(p, q)| same_value(p, q))
        }
        (Value::Object(x), Value::Object(y)) => {
            x.len() == y.len() && x.iter().all(|(k, v)| y.get(k).is_some_and(|w| same_value(v, w)))
        }
        _ => a == b,
    }
}
