//! Prompt templates with `{name}` placeholders.

use std::fs;
use std::path::Path;

pub const DEFAULT_POLICY: &str = "\
You are the planning model of a chemistry tool agent. Choose the next action.
Available tools: {tools}
Query: {query}
Trajectory so far:
{trajectory}
Already tried at this point (propose something different): {hints}
Lessons from earlier failed attempts: {notes}
Reply with JSON only: {\"thought\": ..., \"tool\": ...} to call a tool, or {\"thought\": ..., \"answer\": ...} to finish.";

pub const DEFAULT_EXECUTION: &str = "\
You fill in tool parameters. Query: {query}
Trajectory so far:
{trajectory}
Planned step: {thought}
Tool specification: {tool}
Previous error (empty if none): {error}
Reply with JSON only: {\"tool\": ..., \"args\": {...}}";

pub const DEFAULT_PRM: &str = "\
Rate how likely this partial trajectory leads to a correct answer, from 0 to 1.
Query: {query}
Trajectory:
{trajectory}";

pub const DEFAULT_ORM: &str = "\
Rate the correctness of the final answer from 0 to 1.
Query: {query}
Answer: {answer}";

pub const DEFAULT_REFLECT: &str = "\
The following attempt failed. Analyse the failure and give concise advice for the next attempt.
Query: {query}
Trajectory:
{trajectory}";

pub const DEFAULT_JUDGE: &str = "\
Does the answer agree with the reference? Score 1 for consistent, 0 otherwise.
Query: {query}
Reference: {reference}
Answer: {answer}";

#[derive(Clone, Debug, PartialEq)]
pub struct PromptTemplates {
    pub policy: String,
    pub execution: String,
    pub prm: String,
    pub orm: String,
    pub reflect: String,
    pub judge: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            policy: DEFAULT_POLICY.into(),
            execution: DEFAULT_EXECUTION.into(),
            prm: DEFAULT_PRM.into(),
            orm: DEFAULT_ORM.into(),
            reflect: DEFAULT_REFLECT.into(),
            judge: DEFAULT_JUDGE.into(),
        }
    }
}

impl PromptTemplates {
    /// Reads `<role>.txt` files from `dir`; missing files keep the defaults.
    pub fn load(dir: &Path) -> std::io::Result<Self> {
        let mut t = Self::default();
        for (name, slot) in [
            ("policy", &mut t.policy),
            ("execution", &mut t.execution),
            ("prm", &mut t.prm),
            ("orm", &mut t.orm),
            ("reflect", &mut t.reflect),
            ("judge", &mut t.judge),
        ] {
            let path = dir.join(format!("{name}.txt"));
            if path.is_file() {
                *slot = fs::read_to_string(path)?;
            }
        }
        Ok(t)
    }
}

/// Substitutes `{name}` for each pair; unknown placeholders are left alone.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_owned();
    for (name, value) in vars {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}
