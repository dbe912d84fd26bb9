//! Deterministic stand-ins for every model role, driven by a case's gold chain.

use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    AnswerJudge, ExecutionModel, GatewayError, OutcomeRewardModel, PolicyModel, PolicyRequest, ProcessRewardModel,
    Reflector, Score,
};
use crate::registry::{ParamType, ToolSpec};
use crate::sandbox::{BenchmarkCase, Sandbox};
use crate::trajectory::{answer_from_trajectory, normalize_text, Action, Args, PolicyState, ToolInvocation};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    /// Proposes the next gold step first, then declared distractors.
    #[default]
    Gold,
    /// Proposes distractors before the gold step; single-sample rollouts go astray.
    DistractorFirst,
    /// Only ever proposes wrong final answers.
    AlwaysWrong,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillerMode {
    #[default]
    Gold,
    /// Corrupts the first attempt, corrects once error feedback arrives.
    FirstTryWrong,
    AlwaysWrong,
}

impl FromStr for PolicyMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gold" => Ok(PolicyMode::Gold),
            "distractor_first" => Ok(PolicyMode::DistractorFirst),
            "always_wrong" => Ok(PolicyMode::AlwaysWrong),
            other => Err(format!("unknown policy mode `{other}`")),
        }
    }
}

impl FromStr for FillerMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gold" => Ok(FillerMode::Gold),
            "first_try_wrong" => Ok(FillerMode::FirstTryWrong),
            "always_wrong" => Ok(FillerMode::AlwaysWrong),
            other => Err(format!("unknown filler mode `{other}`")),
        }
    }
}

fn hinted(action: &Action, hints: &[String]) -> bool {
    match action {
        Action::Invoke { invocation, .. } if invocation.args.is_empty() => {
            let prefix = format!("{} ", invocation.tool);
            hints.iter().any(|h| h.starts_with(&prefix))
        }
        _ => {
            let summary = action.summary();
            hints.contains(&summary)
        }
    }
}

pub struct ScriptedPolicy {
    case: Arc<BenchmarkCase>,
    mode: PolicyMode,
}

impl ScriptedPolicy {
    pub fn new(case: Arc<BenchmarkCase>, mode: PolicyMode) -> Self {
        Self { case, mode }
    }

    fn plan(&self, state: &PolicyState) -> Vec<Action> {
        match self.case.gold_prefix_indices(state) {
            Some(used) if used.len() == self.case.len() => vec![answer_from_trajectory(state)],
            Some(used) => self.case.next_gold(&used).into_iter().map(|g| self.case.gold_action(g)).collect(),
            None => vec![answer_from_trajectory(state)],
        }
    }

    fn distractors(&self, req: &PolicyRequest, plan: &[Action]) -> Vec<Action> {
        let planned: Vec<&str> = plan.iter().filter_map(|a| a.invocation()).map(|i| i.tool.as_str()).collect();
        req.tools
            .iter()
            .filter(|t| !planned.contains(&t.as_str()))
            .map(|t| Action::invoke(format!("Try `{t}` as an alternative."), ToolInvocation::draft(t.clone())))
            .collect()
    }
}

impl PolicyModel for ScriptedPolicy {
    fn propose(&self, req: &PolicyRequest) -> Result<Vec<Action>, GatewayError> {
        let candidates = match self.mode {
            PolicyMode::AlwaysWrong => {
                let base = req.reflection_notes.len() * req.k;
                (0..req.k)
                    .map(|j| Action::answer("Guess without using any tool.", format!("guess #{}", base + j)))
                    .collect()
            }
            PolicyMode::Gold => {
                let plan = self.plan(&req.state);
                let distractors = self.distractors(req, &plan);
                plan.into_iter().chain(distractors).collect::<Vec<_>>()
            }
            PolicyMode::DistractorFirst => {
                let plan = self.plan(&req.state);
                let mut out = self.distractors(req, &plan);
                if plan.iter().any(Action::is_answer) {
                    out.insert(0, Action::answer("Answer right away.", "no answer"));
                }
                out.truncate(req.k.saturating_sub(1).max(1));
                out.extend(plan);
                out
            }
        };
        Ok(candidates
            .into_iter()
            .filter(|a| !hinted(a, &req.diversity_hints))
            .take(req.k)
            .collect())
    }
}

pub struct ScriptedFiller {
    case: Arc<BenchmarkCase>,
    mode: FillerMode,
}

impl ScriptedFiller {
    pub fn new(case: Arc<BenchmarkCase>, mode: FillerMode) -> Self {
        Self { case, mode }
    }

    /// Gold arguments when the tool fits the chain at this position,
    /// the sandbox's example arguments otherwise.
    fn correct_args(&self, state: &PolicyState, action: &Action, tool: &ToolSpec) -> Args {
        let used = self.case.gold_prefix_indices(state).unwrap_or_default();
        let pos = state.invocations().count();
        let mut candidates: Vec<usize> = self
            .case
            .candidates_at(pos)
            .into_iter()
            .filter(|g| !used.contains(g) && self.case.gold_chain[*g].call.tool == tool.name)
            .collect();
        if let Some(draft) = action.invocation().filter(|d| !d.args.is_empty()) {
            if let Some(i) = candidates.iter().position(|g| self.case.gold_chain[*g].call.same_call(draft)) {
                candidates.swap(0, i);
            }
        }
        match candidates.first() {
            Some(&g) => self.case.gold_chain[g].call.args.clone(),
            None => Sandbox::example_args(&tool.name),
        }
    }
}

/// Replaces the first declared argument with a value of the wrong type.
pub fn corrupt_args(mut args: Args, tool: &ToolSpec) -> Args {
    match tool.params.first() {
        Some(p) => {
            let bad: Value = match p.kind {
                ParamType::String | ParamType::BlobRef => json!(0),
                _ => json!("corrupted"),
            };
            args.insert(p.name.clone(), bad);
        }
        None => {
            args.insert("corrupted".into(), json!(true));
        }
    }
    args
}

impl ExecutionModel for ScriptedFiller {
    fn fill(
        &self,
        state: &PolicyState,
        action: &Action,
        tool: &ToolSpec,
        error_feedback: Option<&str>,
    ) -> Result<ToolInvocation, GatewayError> {
        let args = self.correct_args(state, action, tool);
        let args = match (self.mode, error_feedback) {
            (FillerMode::Gold, _) | (FillerMode::FirstTryWrong, Some(_)) => args,
            (FillerMode::FirstTryWrong, None) | (FillerMode::AlwaysWrong, _) => corrupt_args(args, tool),
        };
        Ok(ToolInvocation::new(tool.name.clone(), args))
    }
}

/// 1 when the state is a gold prefix, else 0.
pub struct ScriptedPrm {
    case: Arc<BenchmarkCase>,
}

impl ScriptedPrm {
    pub fn new(case: Arc<BenchmarkCase>) -> Self {
        Self { case }
    }
}

impl ProcessRewardModel for ScriptedPrm {
    fn score(&self, state: &PolicyState) -> Result<Score, GatewayError> {
        Ok(Score::from_bool(self.case.is_gold_prefix(state)))
    }
}

/// Exact match after whitespace and case normalization.
pub struct ExactMatchOrm {
    gold: String,
}

impl ExactMatchOrm {
    pub fn new(gold_answer: impl Into<String>) -> Self {
        Self { gold: normalize_text(&gold_answer.into()) }
    }
}

impl OutcomeRewardModel for ExactMatchOrm {
    fn score(&self, _query: &str, final_answer: &str) -> Result<Score, GatewayError> {
        Ok(Score::from_bool(normalize_text(final_answer) == self.gold))
    }
}

pub struct ScriptedReflector {
    case: Arc<BenchmarkCase>,
}

impl ScriptedReflector {
    pub fn new(case: Arc<BenchmarkCase>) -> Self {
        Self { case }
    }
}

impl Reflector for ScriptedReflector {
    fn reflect(&self, _query: &str, failed: &PolicyState) -> Result<String, GatewayError> {
        let step = self.case.first_divergence(failed) + 1;
        Ok(format!(
            "The previous attempt went wrong at step {step}; choose a different tool or arguments there."
        ))
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ExactMatchJudge;

impl AnswerJudge for ExactMatchJudge {
    fn judge(&self, case: &BenchmarkCase, answer: &str) -> Result<Score, GatewayError> {
        Ok(Score::from_bool(case.answer_matches(answer)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sandbox::generate_benchmark;
    use crate::trajectory::Step;

    fn case() -> Arc<BenchmarkCase> {
        Arc::new(generate_benchmark(7, 0, 1, (3, 3)).unwrap().remove(0))
    }

    fn request(state: PolicyState, k: usize, hints: Vec<String>) -> PolicyRequest {
        let tools = Sandbox::new().pool().tools().iter().map(|t| t.name.clone()).collect();
        PolicyRequest { state, k, tools, diversity_hints: hints, reflection_notes: vec![] }
    }

    #[test]
    fn gold_follower_proposes_next_gold_step() {
        let case = case();
        let policy = ScriptedPolicy::new(case.clone(), PolicyMode::Gold);
        let out = policy.propose(&request(case.gold_state(1), 1, vec![])).unwrap();
        assert_eq!(out, vec![case.gold_action(1)]);
        let done = policy.propose(&request(case.gold_state(case.len()), 1, vec![])).unwrap();
        assert_eq!(done[0].answer_text(), Some(case.gold_answer.as_str()));
    }

    #[test]
    fn hinted_gold_step_yields_distractor() {
        let case = case();
        let policy = ScriptedPolicy::new(case.clone(), PolicyMode::Gold);
        let hint = case.gold_chain[1].call.summary();
        let out = policy.propose(&request(case.gold_state(1), 1, vec![hint])).unwrap();
        let tool = &out[0].invocation().unwrap().tool;
        assert_ne!(tool, &case.gold_chain[1].call.tool);
        assert!(out[0].thought().contains("alternative"));
    }

    #[test]
    fn first_try_wrong_filler() {
        let case = case();
        let filler = ScriptedFiller::new(case.clone(), FillerMode::FirstTryWrong);
        let sb = Sandbox::new();
        let tool = sb.pool().get(&case.gold_chain[0].call.tool).unwrap();
        let first = filler.fill(&case.gold_state(0), &case.gold_action(0), tool, None).unwrap();
        assert_ne!(first.args, case.gold_chain[0].call.args);
        let second = filler.fill(&case.gold_state(0), &case.gold_action(0), tool, Some("schema: bad")).unwrap();
        assert_eq!(second, case.gold_chain[0].call);
    }

    #[test]
    fn prm_scores_gold_prefixes() {
        let case = case();
        let prm = ScriptedPrm::new(case.clone());
        assert_eq!(prm.score(&case.gold_state(2)).unwrap(), Score::ONE);
        let mut off = case.gold_state(2);
        off.steps[0].action = Action::invoke("", ToolInvocation::draft("smiles_length"));
        assert_eq!(prm.score(&off).unwrap(), Score::ZERO);
    }

    #[test]
    fn orm_and_reflection() {
        let case = case();
        let orm = ExactMatchOrm::new(case.gold_answer.clone());
        assert_eq!(orm.score("q", &format!("  {} ", case.gold_answer.to_uppercase())).unwrap(), Score::ONE);
        assert_eq!(orm.score("q", "nope").unwrap(), Score::ZERO);
        let mut failed = case.gold_state(2);
        failed.steps[1].action = Action::invoke("", ToolInvocation::draft("smiles_length"));
        failed.steps.push(Step::new(Action::answer("", "x"), None));
        let note = ScriptedReflector::new(case).reflect("q", &failed).unwrap();
        assert!(note.contains("step 2"), "{note}");
    }
}
