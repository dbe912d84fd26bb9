use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::tools::{DENSITIES, ELEMENTS, ELEMENT_PROPERTIES};
use super::Sandbox;
use crate::registry::{ToolPool, DEFAULT_TOP_K};
use crate::trajectory::{
    normalize_text, render_value, same_value, Action, Args, Observation, PolicyState, Step, ToolInvocation,
    ANSWER_THOUGHT,
};

/// Longest chain the generator composes; keeps the answer step below the default depth cap.
pub const MAX_CHAIN_DEPTH: usize = 6;

#[derive(Debug, thiserror::Error)]
pub enum SandboxError {
    #[error("infeasible depth range [{min}, {max}]: multi-step chains need 2 <= min <= max <= {MAX_CHAIN_DEPTH}")]
    InfeasibleDepth { min: usize, max: usize },
    #[error("io error on {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: {reason}", path.display())]
    Parse { path: PathBuf, line: usize, reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoldStep {
    #[serde(flatten)]
    pub call: ToolInvocation,
    pub expected: Observation,
}

/// A query with its standard invocation chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkCase {
    pub id: String,
    pub query: String,
    pub gold_chain: Vec<GoldStep>,
    /// Disjoint sets of chain positions whose steps commute.
    #[serde(default)]
    pub interchange_groups: Vec<Vec<usize>>,
    pub gold_answer: String,
}

/// Template thought attached to a gold step.
pub fn step_thought(call: &ToolInvocation) -> String {
    format!("Next I need `{}` with arguments {}.", call.tool, serde_json::to_string(&call.args).unwrap_or_default())
}

impl BenchmarkCase {
    pub fn len(&self) -> usize {
        self.gold_chain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gold_chain.is_empty()
    }

    /// Gold positions that may legally occupy chain position `pos`.
    pub fn candidates_at(&self, pos: usize) -> Vec<usize> {
        if pos >= self.gold_chain.len() {
            return Vec::new();
        }
        match self.interchange_groups.iter().find(|g| g.contains(&pos)) {
            Some(group) => {
                let mut g = group.clone();
                g.sort_unstable();
                g
            }
            None => vec![pos],
        }
    }

    /// Matches a call sequence against the chain under interchange equivalence,
    /// returning the gold index consumed by each call.
    pub fn match_calls<'a>(&self, calls: impl IntoIterator<Item = &'a ToolInvocation>) -> Option<Vec<usize>> {
        let mut used = Vec::new();
        for (pos, call) in calls.into_iter().enumerate() {
            let g = self
                .candidates_at(pos)
                .into_iter()
                .find(|g| !used.contains(g) && self.gold_chain[*g].call.same_call(call))?;
            used.push(g);
        }
        Some(used)
    }

    /// Unused gold indices valid at the next position.
    pub fn next_gold(&self, used: &[usize]) -> Vec<usize> {
        self.candidates_at(used.len()).into_iter().filter(|g| !used.contains(g)).collect()
    }

    pub fn answer_matches(&self, answer: &str) -> bool {
        normalize_text(answer) == normalize_text(&self.gold_answer)
    }

    /// Gold indices consumed by `state` when every step (including a final
    /// answer) is consistent with the chain; `None` otherwise.
    pub fn gold_prefix_indices(&self, state: &PolicyState) -> Option<Vec<usize>> {
        let mut used: Vec<usize> = Vec::new();
        for (i, step) in state.steps.iter().enumerate() {
            match &step.action {
                Action::Invoke { invocation, .. } => {
                    let g = self
                        .next_gold(&used)
                        .into_iter()
                        .find(|g| self.gold_chain[*g].call.same_call(invocation))?;
                    let obs_ok = step.observation.as_ref().is_none_or(|o| {
                        o.ok && match (&o.value, &self.gold_chain[g].expected.value) {
                            (Some(a), Some(b)) => same_value(a, b),
                            _ => false,
                        }
                    });
                    if !obs_ok {
                        return None;
                    }
                    used.push(g);
                }
                Action::Answer { answer, .. } => {
                    let complete = used.len() == self.gold_chain.len() && i + 1 == state.steps.len();
                    if !(complete && self.answer_matches(answer)) {
                        return None;
                    }
                }
            }
        }
        Some(used)
    }

    pub fn is_gold_prefix(&self, state: &PolicyState) -> bool {
        self.gold_prefix_indices(state).is_some()
    }

    /// Index of the first step that leaves the gold chain, or the step count
    /// when the trajectory is consistent but unfinished.
    pub fn first_divergence(&self, state: &PolicyState) -> usize {
        (0..state.steps.len())
            .find(|&i| {
                let prefix = PolicyState { query: state.query.clone(), steps: state.steps[..=i].to_vec() };
                !self.is_gold_prefix(&prefix)
            })
            .unwrap_or(state.steps.len())
    }

    /// True when the invocations cover the whole chain in an equivalent order.
    pub fn chain_matches<'a>(&self, calls: impl IntoIterator<Item = &'a ToolInvocation>) -> bool {
        self.match_calls(calls).is_some_and(|used| used.len() == self.gold_chain.len())
    }

    pub fn gold_action(&self, pos: usize) -> Action {
        let call = &self.gold_chain[pos].call;
        Action::invoke(step_thought(call), call.clone())
    }

    pub fn answer_action(&self) -> Action {
        Action::answer(ANSWER_THOUGHT, self.gold_answer.clone())
    }

    /// The gold state after the first `upto` steps.
    pub fn gold_state(&self, upto: usize) -> PolicyState {
        let steps = self.gold_chain[..upto]
            .iter()
            .enumerate()
            .map(|(i, g)| Step::new(self.gold_action(i), Some(g.expected.clone())))
            .collect();
        PolicyState { query: self.query.clone(), steps }
    }

    /// Chain with the steps of `interchange_groups[group]` placed in `order`.
    pub fn with_group_order(&self, group: usize, order: &[usize]) -> BenchmarkCase {
        let mut positions = self.interchange_groups[group].clone();
        positions.sort_unstable();
        let mut out = self.clone();
        for (slot, &src) in positions.iter().zip(order) {
            out.gold_chain[*slot] = self.gold_chain[src].clone();
        }
        out
    }

    /// Chain non-empty, steps validate, groups disjoint and in range.
    pub fn validate(&self, pool: &ToolPool) -> Result<(), String> {
        if self.gold_chain.is_empty() {
            return Err(format!("case {}: empty gold chain", self.id));
        }
        for (i, step) in self.gold_chain.iter().enumerate() {
            let report = pool.validate_invocation(&step.call);
            if !report.is_empty() {
                return Err(format!("case {}: step {i}: {report}", self.id));
            }
        }
        let mut seen = HashSet::new();
        for group in &self.interchange_groups {
            for &p in group {
                if p >= self.gold_chain.len() || !seen.insert(p) {
                    return Err(format!("case {}: invalid interchange group {group:?}", self.id));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Replay {
    Pass,
    Fail { index: usize, expected: Observation, actual: Observation },
}

impl Replay {
    pub fn passed(&self) -> bool {
        matches!(self, Replay::Pass)
    }
}

/// Re-executes each gold step and compares with its recorded observation.
pub fn replay_chain(case: &BenchmarkCase, sandbox: &Sandbox) -> Replay {
    for (index, step) in case.gold_chain.iter().enumerate() {
        let actual = sandbox.execute_tool(&step.call);
        let same = actual.ok == step.expected.ok
            && match (&actual.value, &step.expected.value) {
                (Some(a), Some(b)) => same_value(a, b),
                (None, None) => actual.error == step.expected.error,
                _ => false,
            };
        if !same {
            return Replay::Fail { index, expected: step.expected.clone(), actual };
        }
    }
    Replay::Pass
}

const FORMULAS: &[&str] = &[
    "H2O", "CO2", "NaCl", "CH4", "C2H6O", "NH3", "H2SO4", "CaCO3", "C6H12O6", "KCl", "MgO", "Ca(OH)2", "NaHCO3",
    "Fe2O3", "C3H8",
];
const SMILES: &[&str] = &["CCO", "c1ccccc1", "CC(=O)O", "ClCCl", "O=C=O", "CC(C)Br", "C[N+](C)(C)C", "OCC(O)CO"];
const REACTIONS: &[(&[&str], &[&str])] = &[
    (&["2H2", "O2"], &["2H2O"]),
    (&["CH4", "2O2"], &["CO2", "2H2O"]),
    (&["H2", "O2"], &["H2O"]),
    (&["N2", "3H2"], &["2NH3"]),
    (&["CaCO3"], &["CaO", "CO2"]),
    (&["Na", "Cl2"], &["NaCl"]),
];
const TEMPERATURE_UNITS: &[&str] = &["C", "K", "F"];
const MASS_UNITS: &[&str] = &["g", "kg", "mg"];

fn args(pairs: Vec<(&str, Value)>) -> Args {
    pairs.into_iter().map(|(k, v)| (k.to_owned(), v)).collect()
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, items: &'a [T]) -> &'a T {
    items.choose(rng).expect("non-empty table")
}

/// A number with one decimal in `[lo, hi)` tenths.
fn tenths(rng: &mut ChaCha8Rng, lo: u32, hi: u32) -> f64 {
    f64::from(rng.gen_range(lo..hi)) / 10.0
}

fn single_call(rng: &mut ChaCha8Rng, tool: &str) -> (ToolInvocation, String) {
    let (a, query) = match tool {
        "molar_mass" => {
            let f = *pick(rng, FORMULAS);
            (args(vec![("formula", json!(f))]), format!("What is the molar mass of {f}?"))
        }
        "element_property" => {
            let el = pick(rng, ELEMENTS).symbol;
            let prop = *pick(rng, ELEMENT_PROPERTIES);
            (
                args(vec![("symbol", json!(el)), ("property", json!(prop))]),
                format!("What is the {} of {el}?", prop.replace('_', " ")),
            )
        }
        "unit_convert" => {
            let units = if rng.gen_bool(0.5) { TEMPERATURE_UNITS } else { MASS_UNITS };
            let mut pair: Vec<&str> = units.to_vec();
            pair.shuffle(rng);
            let v = tenths(rng, 0, 1000);
            (
                args(vec![("value", json!(v)), ("from", json!(pair[0])), ("to", json!(pair[1]))]),
                format!("Convert {v} {} to {}.", pair[0], pair[1]),
            )
        }
        "balance_check" => {
            let (l, r) = *pick(rng, REACTIONS);
            (
                args(vec![("reactants", json!(l)), ("products", json!(r))]),
                format!("Is the reaction {} -> {} balanced?", l.join(" + "), r.join(" + ")),
            )
        }
        "dilution_calc" => {
            let (c1, v1) = (tenths(rng, 1, 50), tenths(rng, 10, 200));
            let v2 = ((v1 + tenths(rng, 10, 500)) * 10.0).round() / 10.0;
            (
                args(vec![("c1", json!(c1)), ("v1", json!(v1)), ("v2", json!(v2))]),
                format!("A {c1} M solution of {v1} mL is diluted to {v2} mL. What is the final concentration?"),
            )
        }
        "ph_from_concentration" => {
            let c = *pick(rng, &[0.1, 0.01, 0.001, 0.0005, 0.00025, 1e-7]);
            (args(vec![("concentration", json!(c))]), format!("What is the pH of a solution with [H+] = {c} mol/L?"))
        }
        "smiles_length" => {
            let s = *pick(rng, SMILES);
            (args(vec![("smiles", json!(s))]), format!("How many atoms are in the SMILES {s}?"))
        }
        "formula_parse" => {
            let f = *pick(rng, FORMULAS);
            (args(vec![("formula", json!(f))]), format!("Which elements, and how many of each, make up {f}?"))
        }
        "mixture_mass" => {
            let m: Vec<f64> = (0..3).map(|_| tenths(rng, 1, 1000)).collect();
            (
                args(vec![("masses", json!(m))]),
                format!("What is the total mass of a mixture of {} g, {} g and {} g?", m[0], m[1], m[2]),
            )
        }
        "reaction_yield" => {
            let t = tenths(rng, 10, 1000);
            let a = ((t * f64::from(rng.gen_range(30..100u32))).round()) / 100.0;
            (
                args(vec![("actual", json!(a)), ("theoretical", json!(t))]),
                format!("A reaction produced {a} g against a theoretical {t} g. What is the percent yield?"),
            )
        }
        "density_lookup" => {
            let s = pick(rng, DENSITIES).0;
            (args(vec![("substance", json!(s))]), format!("What is the density of {s}?"))
        }
        _ => {
            let v = f64::from(rng.gen_range(1000..100000u32)) / 1000.0;
            let d = rng.gen_range(1..5u32);
            (
                args(vec![("value", json!(v)), ("digits", json!(d))]),
                format!("Round {v} to {d} significant figures."),
            )
        }
    };
    (ToolInvocation::new(tool, a), query)
}

struct ChainBuilder<'a> {
    sandbox: &'a Sandbox,
    steps: Vec<GoldStep>,
    groups: Vec<Vec<usize>>,
    phrases: Vec<String>,
}

impl ChainBuilder<'_> {
    fn push(&mut self, call: ToolInvocation) -> f64 {
        let expected = self.sandbox.execute_tool(&call);
        assert!(expected.ok, "generator produced a failing call {call:?}: {expected:?}");
        let value = expected.value.as_ref().and_then(Value::as_f64).unwrap_or(0.0);
        self.steps.push(GoldStep { call, expected });
        value
    }

    fn last_tool(&self) -> &str {
        self.steps.last().map_or("", |s| s.call.tool.as_str())
    }
}

fn start_chain(rng: &mut ChaCha8Rng, b: &mut ChainBuilder<'_>, depth: usize) -> f64 {
    if depth >= 3 && rng.gen_bool(0.5) {
        let mut formulas: Vec<&str> = FORMULAS.to_vec();
        formulas.shuffle(rng);
        let (f1, f2) = (formulas[0], formulas[1]);
        let m1 = b.push(ToolInvocation::new("molar_mass", args(vec![("formula", json!(f1))])));
        let m2 = b.push(ToolInvocation::new("molar_mass", args(vec![("formula", json!(f2))])));
        b.groups.push(vec![0, 1]);
        b.phrases.push(format!("compute the molar masses of {f1} and {f2}"));
        b.phrases.push("add them to get the total mass of one mole of each".into());
        return b.push(ToolInvocation::new("mixture_mass", args(vec![("masses", json!([m1, m2]))])));
    }
    match rng.gen_range(0..3) {
        0 => {
            let f = *pick(rng, FORMULAS);
            b.phrases.push(format!("compute the molar mass of {f}"));
            b.push(ToolInvocation::new("molar_mass", args(vec![("formula", json!(f))])))
        }
        1 => {
            let s = pick(rng, DENSITIES).0;
            b.phrases.push(format!("look up the density of {s}"));
            b.push(ToolInvocation::new("density_lookup", args(vec![("substance", json!(s))])))
        }
        _ => {
            let el = pick(rng, ELEMENTS).symbol;
            b.phrases.push(format!("look up the atomic mass of {el}"));
            b.push(ToolInvocation::new(
                "element_property",
                args(vec![("symbol", json!(el)), ("property", json!("atomic_mass"))]),
            ))
        }
    }
}

fn extend_chain(rng: &mut ChaCha8Rng, b: &mut ChainBuilder<'_>, x: f64) -> f64 {
    let mut options = vec!["significant_round", "unit_convert", "dilution_calc"];
    if x > 0.0 {
        options.extend(["ph_from_concentration", "reaction_yield"]);
    }
    options.retain(|t| *t != b.last_tool());
    match *pick(rng, &options) {
        "significant_round" => {
            let d = rng.gen_range(3..5u32);
            b.phrases.push(format!("round the result to {d} significant figures"));
            b.push(ToolInvocation::new("significant_round", args(vec![("value", json!(x)), ("digits", json!(d))])))
        }
        "unit_convert" => {
            b.phrases.push("convert the result from g to mg".into());
            b.push(ToolInvocation::new(
                "unit_convert",
                args(vec![("value", json!(x)), ("from", json!("g")), ("to", json!("mg"))]),
            ))
        }
        "dilution_calc" => {
            let v1 = f64::from(rng.gen_range(1..20u32)) * 5.0;
            let v2 = v1 * f64::from(rng.gen_range(2..10u32));
            b.phrases.push(format!("compute the final concentration after a dilution of {v1} mL at the result concentration to {v2} mL"));
            b.push(ToolInvocation::new(
                "dilution_calc",
                args(vec![("c1", json!(x)), ("v1", json!(v1)), ("v2", json!(v2))]),
            ))
        }
        "ph_from_concentration" => {
            b.phrases.push("compute the pH for a hydrogen ion concentration equal to the result".into());
            b.push(ToolInvocation::new("ph_from_concentration", args(vec![("concentration", json!(x))])))
        }
        _ => {
            let actual = (x * f64::from(rng.gen_range(50..96u32))).round() / 100.0;
            b.phrases.push(format!(
                "compute the percent yield when {actual} is obtained against a theoretical amount equal to the result"
            ));
            b.push(ToolInvocation::new(
                "reaction_yield",
                args(vec![("actual", json!(actual)), ("theoretical", json!(x))]),
            ))
        }
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_uppercase().collect::<String>() + c.as_str()).unwrap_or_default()
}

fn render_multi_query(phrases: &[String]) -> String {
    let mut q = format!("First, {}.", phrases[0]);
    for p in &phrases[1..] {
        q.push_str(&format!(" Then {p}."));
    }
    q.push_str(" Report the final value.");
    capitalize(&q)
}

fn gold_answer(steps: &[GoldStep]) -> String {
    steps.last().and_then(|s| s.expected.value.as_ref()).map(render_value).unwrap_or_default()
}

/// Generates `n_single` one-step and `n_multi` chained cases; a fixed seed
/// yields identical output.
pub fn generate_benchmark(
    seed: u64,
    n_single: usize,
    n_multi: usize,
    depth_range: (usize, usize),
) -> Result<Vec<BenchmarkCase>, SandboxError> {
    let (min, max) = depth_range;
    if n_multi > 0 && (min < 2 || min > max || max > MAX_CHAIN_DEPTH) {
        return Err(SandboxError::InfeasibleDepth { min, max });
    }
    let sandbox = Sandbox::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tool_names: Vec<String> = sandbox.pool().tools().iter().map(|t| t.name.clone()).collect();
    let mut cases = Vec::with_capacity(n_single + n_multi);

    for i in 0..n_single {
        let tool = pick(&mut rng, &tool_names).clone();
        let (call, query) = single_call(&mut rng, &tool);
        let expected = sandbox.execute_tool(&call);
        assert!(expected.ok, "generator produced a failing call {call:?}: {expected:?}");
        let steps = vec![GoldStep { call, expected }];
        cases.push(BenchmarkCase {
            id: format!("single-{i:04}"),
            query,
            gold_answer: gold_answer(&steps),
            gold_chain: steps,
            interchange_groups: Vec::new(),
        });
    }

    for i in 0..n_multi {
        let depth = rng.gen_range(min..=max);
        // Resample until the query retrieves every tool the chain needs.
        let b = loop {
            let mut b = ChainBuilder { sandbox: &sandbox, steps: Vec::new(), groups: Vec::new(), phrases: Vec::new() };
            let mut x = start_chain(&mut rng, &mut b, depth);
            while b.steps.len() < depth {
                x = extend_chain(&mut rng, &mut b, x);
            }
            let found = sandbox.pool().retrieve(&render_multi_query(&b.phrases), DEFAULT_TOP_K);
            if b.steps.iter().all(|s| found.iter().any(|t| t.name == s.call.tool)) {
                break b;
            }
        };
        cases.push(BenchmarkCase {
            id: format!("multi-{i:04}"),
            query: render_multi_query(&b.phrases),
            gold_answer: gold_answer(&b.steps),
            gold_chain: b.steps,
            interchange_groups: b.groups,
        });
    }
    Ok(cases)
}

pub fn write_benchmark(cases: &[BenchmarkCase], path: &Path) -> Result<(), SandboxError> {
    let io = |source| SandboxError::Io { path: path.to_path_buf(), source };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io)?;
    }
    let mut out = Vec::new();
    for case in cases {
        serde_json::to_writer(&mut out, case).expect("cases serialize");
        out.push(b'\n');
    }
    fs::File::create(path).and_then(|mut f| f.write_all(&out)).map_err(io)
}

pub fn read_benchmark(path: &Path) -> Result<Vec<BenchmarkCase>, SandboxError> {
    let text = fs::read_to_string(path).map_err(|source| SandboxError::Io { path: path.to_path_buf(), source })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| SandboxError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}
