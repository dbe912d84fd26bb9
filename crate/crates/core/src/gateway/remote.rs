//! JSON-over-HTTP client shared by all model roles.
//!
//! Request: `{"role", "model"?, "messages": [{"role","content"}], "n", "temperature"}`.
//! Response: `{"candidates": [text, ...]}` or `{"score": real}`.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::prompt::{render, PromptTemplates};
use super::{
    AnswerJudge, ExecutionModel, GatewayError, OutcomeRewardModel, PolicyModel, PolicyRequest, ProcessRewardModel,
    Reflector, Score,
};
use crate::registry::ToolSpec;
use crate::sandbox::BenchmarkCase;
use crate::trajectory::{Action, Args, PolicyState, ToolInvocation};

pub const ENV_BACKEND_URL: &str = "HEMCTS_BACKEND_URL";
pub const ENV_BACKEND_TOKEN: &str = "HEMCTS_BACKEND_TOKEN";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Policy,
    Execution,
    Prm,
    Orm,
    Reflect,
    Judge,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

#[derive(Serialize)]
struct BackendRequest<'a> {
    role: Role,
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
    messages: Vec<Message>,
    n: usize,
    temperature: f64,
}

#[derive(Debug, Default, Deserialize)]
struct BackendReply {
    #[serde(default)]
    candidates: Option<Vec<String>>,
    #[serde(default)]
    score: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RemoteConfig {
    pub url: String,
    pub token: Option<String>,
    pub timeout: Duration,
    pub retries: usize,
    pub temperature: f64,
    pub models: BTreeMap<Role, String>,
    pub templates: PromptTemplates,
}

impl RemoteConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            token: None,
            timeout: Duration::from_secs(30),
            retries: 2,
            temperature: 0.7,
            models: BTreeMap::new(),
            templates: PromptTemplates::default(),
        }
    }

    /// Environment variables override the URL and supply the token.
    pub fn with_env(mut self) -> Self {
        if let Ok(url) = std::env::var(ENV_BACKEND_URL) {
            self.url = url;
        }
        if let Ok(token) = std::env::var(ENV_BACKEND_TOKEN) {
            self.token = Some(token);
        }
        self
    }
}

pub struct RemoteBackend {
    client: reqwest::blocking::Client,
    config: RemoteConfig,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| GatewayError::BackendUnreachable(e.to_string()))?;
        Ok(Self { client, config })
    }

    pub fn templates(&self) -> &PromptTemplates {
        &self.config.templates
    }

    fn post_once(&self, role: Role, prompt: &str, n: usize) -> Result<BackendReply, GatewayError> {
        let body = BackendRequest {
            role,
            model: self.config.models.get(&role).map(String::as_str),
            messages: vec![Message { role: "user".into(), content: prompt.to_owned() }],
            n,
            temperature: self.config.temperature,
        };
        let mut req = self.client.post(&self.config.url).json(&body);
        if let Some(token) = &self.config.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| GatewayError::BackendUnreachable(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(GatewayError::BackendUnreachable(format!("HTTP {status}")));
        }
        let text = resp.text().map_err(|e| GatewayError::BackendUnreachable(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| GatewayError::MalformedCompletion(format!("{e}: {text}")))
    }

    /// Calls `parse` on each reply, retrying transport and parse failures
    /// up to the configured count.
    fn request<T>(
        &self,
        role: Role,
        prompt: &str,
        n: usize,
        parse: impl Fn(BackendReply) -> Result<T, GatewayError>,
    ) -> Result<T, GatewayError> {
        let mut last = GatewayError::BackendUnreachable("no attempt made".into());
        for _ in 0..=self.config.retries {
            match self.post_once(role, prompt, n).and_then(&parse) {
                Ok(v) => return Ok(v),
                Err(e) => last = e,
            }
        }
        Err(last)
    }

    pub fn candidates(&self, role: Role, prompt: &str, n: usize) -> Result<Vec<String>, GatewayError> {
        self.request(role, prompt, n, |r| {
            r.candidates.ok_or_else(|| GatewayError::MalformedCompletion("reply has no candidates".into()))
        })
    }

    pub fn score(&self, role: Role, prompt: &str) -> Result<Score, GatewayError> {
        self.request(role, prompt, 1, |r| {
            let raw = r.score.ok_or_else(|| GatewayError::MalformedCompletion("reply has no score".into()))?;
            Score::new(raw)
        })
    }
}

/// The outermost `{...}` span of `text`, parsed as JSON.
fn json_object(text: &str) -> Option<serde_json::Map<String, Value>> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    match serde_json::from_str(text.get(start..=end)?).ok()? {
        Value::Object(map) => Some(map),
        _ => None,
    }
}

fn args_of(obj: &serde_json::Map<String, Value>) -> Option<Args> {
    match obj.get("args") {
        None => Some(Args::new()),
        Some(Value::Object(m)) => Some(m.iter().map(|(k, v)| (k.clone(), v.clone())).collect()),
        Some(_) => None,
    }
}

/// Parses one policy candidate; `None` for anything that is not a valid action.
pub fn parse_action(text: &str) -> Option<Action> {
    let obj = json_object(text)?;
    let thought = obj.get("thought").and_then(Value::as_str).unwrap_or_default().to_owned();
    if let Some(answer) = obj.get("answer").and_then(Value::as_str) {
        return Some(Action::answer(thought, answer));
    }
    let tool = obj.get("tool").and_then(Value::as_str)?;
    Some(Action::invoke(thought, ToolInvocation::new(tool, args_of(&obj)?)))
}

pub fn parse_invocation(text: &str) -> Option<ToolInvocation> {
    let obj = json_object(text)?;
    let tool = obj.get("tool").and_then(Value::as_str)?;
    Some(ToolInvocation::new(tool, args_of(&obj)?))
}

fn bullet_list(items: &[String]) -> String {
    if items.is_empty() {
        return "(none)".into();
    }
    items.iter().map(|s| format!("- {s}")).collect::<Vec<_>>().join("\n")
}

pub struct RemotePolicy(pub Arc<RemoteBackend>);

impl PolicyModel for RemotePolicy {
    fn propose(&self, req: &PolicyRequest) -> Result<Vec<Action>, GatewayError> {
        let prompt = render(
            &self.0.templates().policy,
            &[
                ("query", &req.state.query),
                ("tools", &req.tools.join(", ")),
                ("trajectory", &req.state.render()),
                ("hints", &bullet_list(&req.diversity_hints)),
                ("notes", &bullet_list(&req.reflection_notes)),
            ],
        );
        let mut texts = self.0.candidates(Role::Policy, &prompt, req.k)?;
        // Backends that ignore `n` get one request per missing candidate.
        if req.k > 1 && texts.len() <= 1 {
            for _ in texts.len()..req.k {
                texts.extend(self.0.candidates(Role::Policy, &prompt, 1)?.into_iter().take(1));
            }
        }
        Ok(texts.iter().filter_map(|t| parse_action(t)).take(req.k).collect())
    }
}

pub struct RemoteExecution(pub Arc<RemoteBackend>);

impl ExecutionModel for RemoteExecution {
    fn fill(
        &self,
        state: &PolicyState,
        action: &Action,
        tool: &ToolSpec,
        error_feedback: Option<&str>,
    ) -> Result<ToolInvocation, GatewayError> {
        let spec = serde_json::to_string(tool).unwrap_or_default();
        let prompt = render(
            &self.0.templates().execution,
            &[
                ("query", &state.query),
                ("trajectory", &state.render()),
                ("thought", action.thought()),
                ("tool", &spec),
                ("error", error_feedback.unwrap_or("")),
            ],
        );
        self.0.request(Role::Execution, &prompt, 1, |reply| {
            reply
                .candidates
                .as_deref()
                .and_then(|c| c.first())
                .and_then(|t| parse_invocation(t))
                .ok_or_else(|| GatewayError::MalformedCompletion("execution reply is not an invocation".into()))
        })
    }
}

pub struct RemotePrm(pub Arc<RemoteBackend>);

impl ProcessRewardModel for RemotePrm {
    fn score(&self, state: &PolicyState) -> Result<Score, GatewayError> {
        let prompt = render(&self.0.templates().prm, &[("query", &state.query), ("trajectory", &state.render())]);
        self.0.score(Role::Prm, &prompt)
    }
}

pub struct RemoteOrm(pub Arc<RemoteBackend>);

impl OutcomeRewardModel for RemoteOrm {
    fn score(&self, query: &str, final_answer: &str) -> Result<Score, GatewayError> {
        let prompt = render(&self.0.templates().orm, &[("query", query), ("answer", final_answer)]);
        self.0.score(Role::Orm, &prompt)
    }
}

pub struct RemoteReflector(pub Arc<RemoteBackend>);

impl Reflector for RemoteReflector {
    fn reflect(&self, query: &str, failed: &PolicyState) -> Result<String, GatewayError> {
        let prompt = render(&self.0.templates().reflect, &[("query", query), ("trajectory", &failed.render())]);
        self.0.request(Role::Reflect, &prompt, 1, |reply| {
            reply
                .candidates
                .and_then(|c| c.into_iter().find(|t| !t.trim().is_empty()))
                .ok_or_else(|| GatewayError::MalformedCompletion("empty reflection".into()))
        })
    }
}

pub struct RemoteJudge(pub Arc<RemoteBackend>);

impl AnswerJudge for RemoteJudge {
    fn judge(&self, case: &BenchmarkCase, answer: &str) -> Result<Score, GatewayError> {
        let prompt = render(
            &self.0.templates().judge,
            &[("query", &case.query), ("reference", &case.gold_answer), ("answer", answer)],
        );
        self.0.score(Role::Judge, &prompt)
    }
}
