//! Tool packages described by a `tools.json` file: loading, validation,
//! lexical retrieval and invocation checking.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::trajectory::ToolInvocation;

pub const TOOLS_FILE: &str = "tools.json";

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("missing {TOOLS_FILE} in {}", .0.display())]
    MissingFile(PathBuf),
    #[error("malformed {TOOLS_FILE} (tool {tool}): {reason}")]
    MalformedJson { tool: String, reason: String },
    #[error("duplicate tool name `{0}`")]
    DuplicateToolName(String),
    #[error("tool `{0}` has an empty description")]
    EmptyDescription(String),
    #[error("tool `{tool}`: parameter name `{param}` is not canonical snake_case")]
    InvalidParamName { tool: String, param: String },
    #[error("tool `{tool}`: duplicate parameter `{param}`")]
    DuplicateParam { tool: String, param: String },
    #[error("tool pool is empty")]
    EmptyPool,
    #[error("io error on {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamType {
    String,
    Integer,
    Number,
    Boolean,
    Array,
    Object,
    /// Opaque locator of a serialized object; never inspected.
    BlobRef,
}

impl ParamType {
    pub fn accepts(self, value: &Value) -> bool {
        match self {
            ParamType::String | ParamType::BlobRef => value.is_string(),
            ParamType::Integer => match value {
                Value::Number(n) => {
                    n.is_i64() || n.is_u64() || n.as_f64().is_some_and(|f| f.fract() == 0.0)
                }
                _ => false,
            },
            ParamType::Number => value.is_number(),
            ParamType::Boolean => value.is_boolean(),
            ParamType::Array => value.is_array(),
            ParamType::Object => value.is_object(),
        }
    }
}

impl fmt::Display for ParamType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ParamType::String => "string",
            ParamType::Integer => "integer",
            ParamType::Number => "number",
            ParamType::Boolean => "boolean",
            ParamType::Array => "array",
            ParamType::Object => "object",
            ParamType::BlobRef => "blob_ref",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolParam {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: ParamType,
    #[serde(default)]
    pub description: String,
    #[serde(default = "default_required")]
    pub required: bool,
}

fn default_required() -> bool {
    true
}

impl ToolParam {
    pub fn new(name: &str, kind: ParamType, description: &str, required: bool) -> Self {
        Self { name: name.to_owned(), kind, description: description.to_owned(), required }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    #[serde(default)]
    pub params: Vec<ToolParam>,
    #[serde(default)]
    pub returns: String,
    #[serde(default)]
    pub code_path: String,
}

impl ToolSpec {
    pub fn param(&self, name: &str) -> Option<&ToolParam> {
        self.params.iter().find(|p| p.name == name)
    }
}

/// `[a-z][a-z0-9_]*`
pub fn is_canonical_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

/// Retrieval depth used by the search engine unless configured otherwise.
pub const DEFAULT_TOP_K: usize = 8;

/// An immutable, validated set of tools.
#[derive(Clone, Debug)]
pub struct ToolPool {
    source: String,
    tools: Vec<ToolSpec>,
    by_name: HashMap<String, usize>,
    doc_tokens: Vec<HashMap<String, u32>>,
}

impl PartialEq for ToolPool {
    fn eq(&self, other: &Self) -> bool {
        self.source == other.source && self.tools == other.tools
    }
}

impl ToolPool {
    pub fn new(source: impl Into<String>, tools: Vec<ToolSpec>) -> Result<Self, RegistryError> {
        if tools.is_empty() {
            return Err(RegistryError::EmptyPool);
        }
        let mut by_name = HashMap::with_capacity(tools.len());
        for (i, tool) in tools.iter().enumerate() {
            validate_spec(tool)?;
            if by_name.insert(tool.name.clone(), i).is_some() {
                return Err(RegistryError::DuplicateToolName(tool.name.clone()));
            }
        }
        let doc_tokens = tools
            .iter()
            .map(|t| token_counts(&format!("{} {}", t.name, t.description)))
            .collect();
        Ok(Self { source: source.into(), tools, by_name, doc_tokens })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&ToolSpec> {
        self.by_name.get(name).map(|&i| &self.tools[i])
    }

    pub fn contains(&self, name: &str) -> bool {
        self.by_name.contains_key(name)
    }

    pub fn tools(&self) -> &[ToolSpec] {
        &self.tools
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.tools).expect("tool specs serialize")
    }

    /// Writes `<dir>/tools.json`.
    pub fn save(&self, dir: &Path) -> Result<(), RegistryError> {
        let io = |source| RegistryError::Io { path: dir.to_path_buf(), source };
        fs::create_dir_all(dir).map_err(io)?;
        let mut text = self.to_json();
        text.push('\n');
        fs::write(dir.join(TOOLS_FILE), text).map_err(io)
    }

    /// Top `top_k` tools by case-folded token overlap with `query`, ties by name.
    pub fn retrieve(&self, query: &str, top_k: usize) -> Vec<&ToolSpec> {
        let q = token_counts(query);
        let mut scored: Vec<(u32, &ToolSpec)> = self
            .tools
            .iter()
            .zip(&self.doc_tokens)
            .map(|(tool, doc)| {
                let score = q
                    .iter()
                    .map(|(tok, &n)| n.min(doc.get(tok).copied().unwrap_or(0)))
                    .sum();
                (score, tool)
            })
            .collect();
        scored.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.name.cmp(&b.1.name)));
        scored.into_iter().take(top_k.max(1)).map(|(_, t)| t).collect()
    }

    pub fn validate_invocation(&self, call: &ToolInvocation) -> ValidationReport {
        let mut issues = Vec::new();
        let Some(spec) = self.get(&call.tool) else {
            issues.push(ValidationIssue::UnknownTool(call.tool.clone()));
            return ValidationReport { issues };
        };
        for param in &spec.params {
            match call.args.get(&param.name) {
                None if param.required => issues.push(ValidationIssue::MissingParam(param.name.clone())),
                None => {}
                Some(v) if !param.kind.accepts(v) => issues.push(ValidationIssue::TypeMismatch {
                    param: param.name.clone(),
                    expected: param.kind,
                }),
                Some(_) => {}
            }
        }
        for name in call.args.keys() {
            if spec.param(name).is_none() {
                issues.push(ValidationIssue::UnknownParam(name.clone()));
            }
        }
        ValidationReport { issues }
    }
}

fn validate_spec(tool: &ToolSpec) -> Result<(), RegistryError> {
    if tool.name.trim().is_empty() {
        return Err(RegistryError::MalformedJson {
            tool: "<unnamed>".into(),
            reason: "empty tool name".into(),
        });
    }
    if tool.description.trim().is_empty() {
        return Err(RegistryError::EmptyDescription(tool.name.clone()));
    }
    let mut seen = HashSet::new();
    for p in &tool.params {
        if !is_canonical_name(&p.name) {
            return Err(RegistryError::InvalidParamName { tool: tool.name.clone(), param: p.name.clone() });
        }
        if !seen.insert(p.name.as_str()) {
            return Err(RegistryError::DuplicateParam { tool: tool.name.clone(), param: p.name.clone() });
        }
    }
    Ok(())
}

/// Loads and validates `<dir>/tools.json`.
pub fn load_pool(dir: &Path) -> Result<ToolPool, RegistryError> {
    let file = dir.join(TOOLS_FILE);
    if !file.is_file() {
        return Err(RegistryError::MissingFile(dir.to_path_buf()));
    }
    let text = fs::read_to_string(&file).map_err(|source| RegistryError::Io { path: file.clone(), source })?;
    let specs = parse_tools_json(&text)?;
    let source = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    ToolPool::new(source, specs)
}

pub fn parse_tools_json(text: &str) -> Result<Vec<ToolSpec>, RegistryError> {
    let malformed = |tool: &str, reason: String| RegistryError::MalformedJson { tool: tool.to_owned(), reason };
    let root: Value = serde_json::from_str(text).map_err(|e| malformed("<file>", e.to_string()))?;
    let Value::Array(entries) = root else {
        return Err(malformed("<file>", "top level must be an array".into()));
    };
    entries
        .into_iter()
        .enumerate()
        .map(|(i, entry)| {
            let label = entry
                .get("name")
                .and_then(Value::as_str)
                .map(str::to_owned)
                .unwrap_or_else(|| format!("#{i}"));
            serde_json::from_value(entry).map_err(|e| malformed(&label, e.to_string()))
        })
        .collect()
}

fn token_counts(text: &str) -> HashMap<String, u32> {
    let mut counts = HashMap::new();
    for tok in tokenize(text) {
        *counts.entry(tok).or_insert(0) += 1;
    }
    counts
}

pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "issue", content = "detail", rename_all = "snake_case")]
pub enum ValidationIssue {
    UnknownTool(String),
    MissingParam(String),
    UnknownParam(String),
    TypeMismatch { param: String, expected: ParamType },
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationIssue::UnknownTool(t) => write!(f, "unknown tool `{t}`"),
            ValidationIssue::MissingParam(p) => write!(f, "missing required parameter `{p}`"),
            ValidationIssue::UnknownParam(p) => write!(f, "unknown parameter `{p}`"),
            ValidationIssue::TypeMismatch { param, expected } => {
                write!(f, "parameter `{param}` must be of type {expected}")
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.issues.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join("; "))
    }
}
