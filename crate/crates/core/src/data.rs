//! Training-set extraction from benchmark chains and search trees.
//!
//! Outputs: step-level samples from gold chains (`dp`), the enhanced
//! step-level set (`dp_tilde`), process-reward labels (`prm`) and outcome
//! rewards (`orm`).

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::executor::RUNTIME_PREFIX;
use crate::gateway::{AnswerJudge, GatewayError};
use crate::registry::ToolPool;
use crate::sandbox::BenchmarkCase;
use crate::search::{SearchResult, ROOT};
use crate::trajectory::{Action, Observation, PolicyState};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("invalid gold chain: {0}")]
    InvalidGoldChain(String),
    #[error("tree references unknown case `{0}`")]
    UnknownCase(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {reason}")]
    Parse { path: String, line: usize, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Meta,
    Tree,
    Perturbed,
    Reordered,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSample {
    pub case_id: String,
    /// The trajectory before the action.
    pub state: PolicyState,
    pub action: Action,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrmSample {
    pub case_id: String,
    pub node: usize,
    /// The trajectory including the labelled action.
    pub state: PolicyState,
    pub label: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrmComponents {
    /// Judge score of the answer.
    pub judge: f64,
    /// 1 when the invocation sequence matches the gold chain.
    pub rule: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrmSample {
    pub case_id: String,
    pub node: usize,
    pub query: String,
    pub final_answer: String,
    pub reward: f64,
    pub components: OrmComponents,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Paths,
    Robust,
    Reorder,
    #[default]
    All,
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paths" => Ok(Strategy::Paths),
            "robust" => Ok(Strategy::Robust),
            "reorder" => Ok(Strategy::Reorder),
            "all" => Ok(Strategy::All),
            other => Err(format!("unknown strategy `{other}` (expected paths, robust, reorder or all)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Weight of the judge score in the outcome reward.
    pub orm_weight_w: f64,
    /// Orderings emitted per interchange group, the original included.
    pub reorder_permutations_p: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { orm_weight_w: 0.5, reorder_permutations_p: 2, seed: 0 }
    }
}

fn gold_samples(case: &BenchmarkCase, provenance: Provenance) -> Vec<StepSample> {
    (0..case.len())
        .map(|i| StepSample {
            case_id: case.id.clone(),
            state: case.gold_state(i),
            action: case.gold_action(i),
            provenance,
        })
        .collect()
}

pub fn extract_dp(cases: &[BenchmarkCase], pool: &ToolPool) -> Result<Vec<StepSample>, DataError> {
    let mut out = Vec::new();
    for case in cases {
        case.validate(pool).map_err(DataError::InvalidGoldChain)?;
        out.extend(gold_samples(case, Provenance::Meta));
    }
    Ok(out)
}

fn case_index(cases: &[BenchmarkCase]) -> HashMap<&str, &BenchmarkCase> {
    cases.iter().map(|c| (c.id.as_str(), c)).collect()
}

fn tree_case<'a>(tree: &SearchResult, index: &HashMap<&str, &'a BenchmarkCase>) -> Result<&'a BenchmarkCase, DataError> {
    let id = tree.case_id.as_deref().unwrap_or_default();
    index.get(id).copied().ok_or_else(|| DataError::UnknownCase(id.to_owned()))
}

/// Tree nodes whose whole trajectory, including the node's own step, stays on the gold chain.
pub fn extract_dp_tilde_paths(trees: &[SearchResult], cases: &[BenchmarkCase]) -> Result<Vec<StepSample>, DataError> {
    let index = case_index(cases);
    let mut out = Vec::new();
    for tree in trees {
        let case = tree_case(tree, &index)?;
        for node in tree.tree.nodes.iter().filter(|n| n.id != ROOT) {
            let Some(action @ Action::Invoke { .. }) = &node.action else { continue };
            if case.is_gold_prefix(&tree.tree.state(node.id)) {
                let parent = node.parent.unwrap_or(ROOT);
                out.push(StepSample {
                    case_id: case.id.clone(),
                    state: tree.tree.state(parent),
                    action: action.clone(),
                    provenance: Provenance::Tree,
                });
            }
        }
    }
    Ok(dedupe(out).0)
}

/// Every ordering of `positions`, identity first.
fn orderings(positions: &[usize]) -> Vec<Vec<usize>> {
    if positions.len() <= 1 {
        return vec![positions.to_vec()];
    }
    let mut out = Vec::new();
    for (i, &first) in positions.iter().enumerate() {
        let mut rest = positions.to_vec();
        rest.remove(i);
        for mut tail in orderings(&rest) {
            tail.insert(0, first);
            out.push(tail);
        }
    }
    out
}

/// Gold samples under up to `p` orderings of each interchange group. The
/// original ordering keeps provenance `meta`; other orderings are `reordered`.
pub fn reorder_meta(cases: &[BenchmarkCase], p: usize, rng: &mut impl Rng) -> Vec<StepSample> {
    let mut out = Vec::new();
    for case in cases {
        out.extend(gold_samples(case, Provenance::Meta));
        for (gi, group) in case.interchange_groups.iter().enumerate() {
            let mut positions = group.clone();
            positions.sort_unstable();
            let mut others = orderings(&positions).split_off(1);
            others.shuffle(rng);
            for order in others.iter().take(p.saturating_sub(1)) {
                out.extend(gold_samples(&case.with_group_order(gi, order), Provenance::Reordered));
            }
        }
    }
    dedupe(out).0
}

fn corrupt_value(v: &Value) -> Value {
    match v {
        Value::Number(n) => json!(n.as_f64().unwrap_or(0.0) * 10.0 + 1.0),
        Value::String(s) => json!(format!("{s}?")),
        Value::Bool(b) => json!(!b),
        _ => json!("corrupted"),
    }
}

/// Applies one perturbation to an earlier step of `state`; returns the rule name.
pub fn perturb_state(state: &mut PolicyState, rng: &mut impl Rng) -> &'static str {
    let j = rng.gen_range(0..state.steps.len());
    let rule = rng.gen_range(0..3);
    let step = &mut state.steps[j];
    match (rule, &mut step.action) {
        (1, Action::Invoke { invocation, .. }) if !invocation.args.is_empty() => {
            let keys: Vec<String> = invocation.args.keys().cloned().collect();
            let key = &keys[rng.gen_range(0..keys.len())];
            let bad = corrupt_value(&invocation.args[key]);
            invocation.args.insert(key.clone(), bad);
            "corrupt_arg"
        }
        (2, action) if action.thought().chars().count() > 1 => {
            let thought = action.thought_mut();
            let keep = thought.chars().count() / 2;
            *thought = thought.chars().take(keep).collect();
            "truncate_thought"
        }
        _ => {
            step.observation = Some(Observation::failure(format!("{RUNTIME_PREFIX}service temporarily unavailable")));
            "failed_observation"
        }
    }
}

/// Correct actions taken from erroneous states: tree nodes whose step is
/// gold for its position although the prefix left the chain, plus
/// rule-based perturbations of gold states.
pub fn extract_dp_tilde_robust(
    trees: &[SearchResult],
    cases: &[BenchmarkCase],
    rng: &mut impl Rng,
) -> Result<Vec<StepSample>, DataError> {
    let index = case_index(cases);
    let mut out = Vec::new();
    for tree in trees {
        let case = tree_case(tree, &index)?;
        for node in tree.tree.nodes.iter().filter(|n| n.id != ROOT) {
            let Some(action @ Action::Invoke { invocation, .. }) = &node.action else { continue };
            let state = tree.tree.state(node.parent.unwrap_or(ROOT));
            let pos = state.steps.len();
            let gold_here = case.candidates_at(pos).iter().any(|&g| case.gold_chain[g].call.same_call(invocation));
            if gold_here && !case.is_gold_prefix(&state) {
                out.push(StepSample { case_id: case.id.clone(), state, action: action.clone(), provenance: Provenance::Tree });
            }
        }
    }
    for case in cases {
        for mut sample in gold_samples(case, Provenance::Perturbed).into_iter().skip(1) {
            perturb_state(&mut sample.state, rng);
            out.push(sample);
        }
    }
    Ok(dedupe(out).0)
}

/// Label 1 when the node's trajectory is a gold prefix, else 0.
pub fn extract_prm(trees: &[SearchResult], cases: &[BenchmarkCase]) -> Result<Vec<PrmSample>, DataError> {
    let index = case_index(cases);
    let mut out = Vec::new();
    for tree in trees {
        let case = tree_case(tree, &index)?;
        for node in tree.tree.nodes.iter().filter(|n| n.id != ROOT) {
            let state = tree.tree.state(node.id);
            let label = u8::from(case.is_gold_prefix(&state));
            out.push(PrmSample { case_id: case.id.clone(), node: node.id, state, label });
        }
    }
    Ok(out)
}

pub fn orm_reward(w: f64, judge: f64, rule: f64) -> f64 {
    w * judge + (1.0 - w) * rule
}

pub fn extract_orm(
    trees: &[SearchResult],
    cases: &[BenchmarkCase],
    judge: &dyn AnswerJudge,
    w: f64,
) -> Result<Vec<OrmSample>, DataError> {
    let index = case_index(cases);
    let mut out = Vec::new();
    for tree in trees {
        let case = tree_case(tree, &index)?;
        for node in tree.tree.nodes.iter().filter(|n| n.is_terminal()) {
            let state = tree.tree.state(node.id);
            let answer = state.final_answer().unwrap_or_default().to_owned();
            let r1 = judge.judge(case, &answer)?.value();
            let r2 = if case.chain_matches(state.invocations()) { 1.0 } else { 0.0 };
            out.push(OrmSample {
                case_id: case.id.clone(),
                node: node.id,
                query: case.query.clone(),
                final_answer: answer,
                reward: orm_reward(w, r1, r2),
                components: OrmComponents { judge: r1, rule: r2 },
            });
        }
    }
    Ok(out)
}

/// Checks that a step sample's action, replayed at its position, is a valid
/// call matching the gold chain under interchange equivalence.
pub fn check_label(sample: &StepSample, case: &BenchmarkCase, pool: &ToolPool) -> Result<(), String> {
    let Some(call) = sample.action.invocation() else {
        return Err("action is not a tool call".into());
    };
    let report = pool.validate_invocation(call);
    if !report.is_empty() {
        return Err(report.to_string());
    }
    let pos = sample.state.steps.len();
    if case.candidates_at(pos).iter().any(|&g| case.gold_chain[g].call.same_call(call)) {
        Ok(())
    } else {
        Err(format!("`{}` is not a gold step at position {pos}", call.summary()))
    }
}

pub fn sample_hash(sample: &StepSample) -> [u8; 32] {
    let bytes = serde_json::to_vec(&(&sample.state, &sample.action)).expect("sample serializes");
    Sha256::digest(&bytes).into()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DedupeStats {
    pub dropped: usize,
    /// Hash-equal pairs whose contents differ.
    pub collisions: usize,
}

/// Drops later samples with the same `(state, action)`, keeping the first.
pub fn dedupe(samples: Vec<StepSample>) -> (Vec<StepSample>, DedupeStats) {
    let mut seen: HashMap<[u8; 32], Vec<usize>> = HashMap::new();
    let mut out: Vec<StepSample> = Vec::new();
    let mut stats = DedupeStats::default();
    for s in samples {
        let slot = seen.entry(sample_hash(&s)).or_default();
        if slot.iter().any(|&i| out[i].state == s.state && out[i].action == s.action) {
            stats.dropped += 1;
            continue;
        }
        if !slot.is_empty() {
            stats.collisions += 1;
        }
        slot.push(out.len());
        out.push(s);
    }
    (out, stats)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Datasets {
    pub dp: Vec<StepSample>,
    pub dp_tilde: Vec<StepSample>,
    pub prm: Vec<PrmSample>,
    pub orm: Vec<OrmSample>,
}

pub const DP_FILE: &str = "dp.jsonl";
pub const DP_TILDE_FILE: &str = "dp_tilde.jsonl";
pub const PRM_FILE: &str = "prm.jsonl";
pub const ORM_FILE: &str = "orm.jsonl";

impl Datasets {
    pub fn write(&self, dir: &Path) -> Result<(), DataError> {
        write_jsonl(&dir.join(DP_FILE), &self.dp)?;
        write_jsonl(&dir.join(DP_TILDE_FILE), &self.dp_tilde)?;
        write_jsonl(&dir.join(PRM_FILE), &self.prm)?;
        write_jsonl(&dir.join(ORM_FILE), &self.orm)
    }
}

/// All four datasets. Trees are processed in case order so output does not
/// depend on the order they were loaded in.
pub fn build_datasets(
    trees: &[SearchResult],
    cases: &[BenchmarkCase],
    pool: &ToolPool,
    strategy: Strategy,
    cfg: &PipelineConfig,
    judge: &dyn AnswerJudge,
) -> Result<Datasets, DataError> {
    let order: HashMap<&str, usize> = cases.iter().enumerate().map(|(i, c)| (c.id.as_str(), i)).collect();
    let mut trees: Vec<&SearchResult> = trees.iter().collect();
    trees.sort_by_key(|t| t.case_id.as_deref().and_then(|id| order.get(id).copied()).unwrap_or(usize::MAX));
    let trees: Vec<SearchResult> = trees.into_iter().cloned().collect();

    let dp = extract_dp(cases, pool)?;
    let mut tilde = Vec::new();
    if matches!(strategy, Strategy::Paths | Strategy::All) {
        tilde.extend(extract_dp_tilde_paths(&trees, cases)?);
    }
    if matches!(strategy, Strategy::Reorder | Strategy::All) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        tilde.extend(reorder_meta(cases, cfg.reorder_permutations_p, &mut rng));
    }
    if matches!(strategy, Strategy::Robust | Strategy::All) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(2);
        tilde.extend(extract_dp_tilde_robust(&trees, cases, &mut rng)?);
    }
    Ok(Datasets {
        dp,
        dp_tilde: dedupe(tilde).0,
        prm: extract_prm(&trees, cases)?,
        orm: extract_orm(&trees, cases, judge, cfg.orm_weight_w)?,
    })
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), DataError> {
    let io = |source| DataError::Io { path: path.display().to_string(), source };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let mut file = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    for item in items {
        let line = serde_json::to_string(item).expect("sample serializes");
        writeln!(file, "{line}").map_err(io)?;
    }
    file.flush().map_err(io)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, DataError> {
    let p = path.display().to_string();
    let file = fs::File::open(path).map_err(|source| DataError::Io { path: p.clone(), source })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| DataError::Io { path: p.clone(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| DataError::Parse { path: p.clone(), line: i + 1, reason: e.to_string() })?;
        out.push(item);
    }
    Ok(out)
}

/// Case ids whose samples fail [`check_label`], with reasons.
pub fn unsound_labels(samples: &[StepSample], cases: &[BenchmarkCase], pool: &ToolPool) -> Vec<String> {
    let index = case_index(cases);
    let mut bad = Vec::new();
    let mut reported = HashSet::new();
    for s in samples {
        let verdict = match index.get(s.case_id.as_str()) {
            Some(case) => check_label(s, case, pool),
            None => Err("unknown case".into()),
        };
        if let Err(reason) = verdict {
            if reported.insert((s.case_id.clone(), reason.clone())) {
                bad.push(format!("{}: {reason}", s.case_id));
            }
        }
    }
    bad
}
