use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{step_key, uct, SearchTree, ROOT};
use super::SearchConfig;
use crate::config::ConfigError;
use crate::executor::{execute_with_reflection, ToolEnvironment, SCHEMA_PREFIX};
use crate::gateway::{GatewayError, ModelSuite, PolicyRequest};
use crate::pruning::{maintenance_pass, threshold, PruneLog};
use crate::trajectory::{answer_from_trajectory, Action, Observation, PolicyState, Step};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SearchEvent {
    Pruned { iteration: usize, node: usize, score: f64, threshold: f64 },
    Restored { iteration: usize, node: usize },
    Selected { iteration: usize, node: usize },
    Expanded { iteration: usize, node: usize, children: Vec<usize> },
    Discarded { iteration: usize, parent: usize, reason: String },
    Retry { iteration: usize, node: usize, tool: String, feedback: Vec<String> },
    Simulated { iteration: usize, from: usize, terminal: usize },
    Reward { iteration: usize, node: usize, reward: f64 },
    Reflection { iteration: usize, note: String },
    Exhausted { iteration: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// A terminal reached the success threshold.
    Success,
    /// The iteration budget ran out.
    Budget,
    /// Nothing selectable was left.
    Exhausted,
    /// A gateway call failed after retries.
    Aborted,
}

#[derive(Debug, thiserror::Error)]
pub enum SearchError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("search exhausted: every path is pruned or terminal")]
    Exhausted,
    #[error("gateway failure in iteration {iteration}: {source}")]
    Gateway {
        source: GatewayError,
        iteration: usize,
        /// Tree as it stood when the call failed.
        partial: Box<SearchResult>,
    },
}

/// Everything a finished search produced; serialized as the tree dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub case_id: Option<String>,
    pub config: SearchConfig,
    pub stop_reason: StopReason,
    pub iterations: usize,
    /// Terminal with the highest outcome reward, earliest found on ties.
    pub best: Option<usize>,
    pub best_reward: Option<f64>,
    pub final_answer: Option<String>,
    pub retries: usize,
    pub reflection_notes: Vec<String>,
    /// Terminal ids in the order they were first reached.
    pub terminals: Vec<usize>,
    #[serde(flatten)]
    pub tree: SearchTree,
    pub prune_log: PruneLog,
    pub events: Vec<SearchEvent>,
}

impl SearchResult {
    pub fn trajectory(&self) -> PolicyState {
        match self.best {
            Some(id) => self.tree.state(id),
            None => PolicyState::new(self.tree.query.clone()),
        }
    }

    pub fn passed(&self) -> bool {
        self.stop_reason == StopReason::Success
    }
}

enum Built {
    Step { step: Step, forced: bool, feedback: Vec<String> },
    Discard(String),
}

/// One search over one query. The phase methods are public so callers can
/// drive iterations by hand; [`Engine::run`] does the full loop.
pub struct Engine<'a> {
    cfg: &'a SearchConfig,
    models: &'a ModelSuite,
    env: &'a dyn ToolEnvironment,
    tools: Vec<String>,
    pub tree: SearchTree,
    rng: ChaCha8Rng,
    pub prune_log: PruneLog,
    pub events: Vec<SearchEvent>,
    pub notes: Vec<String>,
    pub terminals: Vec<usize>,
    last_terminal: Option<usize>,
    iteration: usize,
    retries: usize,
}

impl<'a> Engine<'a> {
    pub fn new(
        query: &str,
        cfg: &'a SearchConfig,
        models: &'a ModelSuite,
        env: &'a dyn ToolEnvironment,
    ) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let tools = env.pool().retrieve(query, cfg.retrieve_top_k).into_iter().map(|t| t.name.clone()).collect();
        Ok(Self {
            cfg,
            models,
            env,
            tools,
            tree: SearchTree::new(query),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            prune_log: PruneLog::default(),
            events: Vec::new(),
            notes: Vec::new(),
            terminals: Vec::new(),
            last_terminal: None,
            iteration: 0,
            retries: 0,
        })
    }

    /// Tools offered to the policy, in retrieval order.
    pub fn retrieved_tools(&self) -> &[String] {
        &self.tools
    }

    pub fn best(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for &t in &self.terminals {
            let r = self.tree.node(t).reward.unwrap_or(0.0);
            if best.is_none_or(|(_, b)| r > b) {
                best = Some((t, r));
            }
        }
        best.map(|(t, _)| t)
    }

    pub fn maintain(&mut self) {
        let best = self.best();
        let report = maintenance_pass(
            &mut self.tree,
            self.cfg,
            self.iteration,
            &mut self.rng,
            &mut self.prune_log,
            best,
            self.last_terminal,
        );
        for id in report.pruned {
            let node = self.tree.node(id);
            let score = node.prune_record.map(|r| r.score).unwrap_or_default();
            let threshold = threshold(node.depth, self.cfg);
            self.events.push(SearchEvent::Pruned { iteration: self.iteration, node: id, score, threshold });
        }
        for id in report.restored {
            self.events.push(SearchEvent::Restored { iteration: self.iteration, node: id });
        }
    }

    /// Walks down by UCT, preferring non-terminal children, to a terminal or expandable node.
    /// Walks down by UCT. A fresh node is expanded first; otherwise non-terminal
    /// children win, then widening the current node, then its terminal children.
    pub fn select(&self) -> Result<usize, SearchError> {
        let selectable = self.tree.selectable(self.cfg.d_max);
        if !selectable[ROOT] {
            return Err(SearchError::Exhausted);
        }
        let mut cur = ROOT;
        loop {
            let node = self.tree.node(cur);
            let expandable = self.tree.is_expandable(cur, self.cfg.d_max);
            if node.is_terminal() || (expandable && !node.expanded) {
                return Ok(cur);
            }
            let open: Vec<usize> = node.children.iter().copied().filter(|&c| selectable[c]).collect();
            let non_terminal: Vec<usize> =
                open.iter().copied().filter(|&c| !self.tree.node(c).is_terminal()).collect();
            if non_terminal.is_empty() && expandable {
                return Ok(cur);
            }
            let pool = if non_terminal.is_empty() { open } else { non_terminal };
            let mut best: Option<(usize, f64)> = None;
            for c in pool {
                let score = uct(node, self.tree.node(c), self.cfg.c);
                if best.is_none_or(|(_, b)| score > b) {
                    best = Some((c, score));
                }
            }
            match best {
                Some((c, _)) => cur = c,
                None => return Err(SearchError::Exhausted),
            }
        }
    }

    fn build(&self, state: &PolicyState, child_depth: usize, action: Action, rollout: bool) -> Result<Built, GatewayError> {
        let Action::Invoke { thought, invocation } = &action else {
            return Ok(Built::Step { step: Step::new(action, None), forced: false, feedback: vec![] });
        };
        if child_depth >= self.cfg.d_max {
            let step = Step::new(answer_from_trajectory(state), None);
            return Ok(Built::Step { step, forced: true, feedback: vec![] });
        }
        let spec = match self.env.pool().get(&invocation.tool) {
            Some(spec) if self.tools.contains(&spec.name) => spec,
            _ if rollout => {
                let obs =
                    Observation::failure(format!("{SCHEMA_PREFIX}tool `{}` is not among the retrieved tools", invocation.tool));
                return Ok(Built::Step { step: Step::new(action, Some(obs)), forced: false, feedback: vec![] });
            }
            _ => return Ok(Built::Discard(format!("tool `{}` is not among the retrieved tools", invocation.tool))),
        };
        let out = execute_with_reflection(state, &action, spec, self.env, self.models.execution.as_ref(), self.cfg.max_retries)?;
        let step = Step::new(Action::invoke(thought.clone(), out.invocation), Some(out.observation));
        Ok(Built::Step { step, forced: false, feedback: out.feedback })
    }

    fn attach(&mut self, parent: usize, step: Step, forced: bool, feedback: Vec<String>) -> Result<usize, GatewayError> {
        let tool = step.action.invocation().map(|i| i.tool.clone());
        let id = self.tree.add_child(parent, step, 0.0);
        self.tree.node_mut(id).forced = forced;
        if !feedback.is_empty() {
            self.retries += feedback.len();
            let tool = tool.unwrap_or_default();
            self.events.push(SearchEvent::Retry { iteration: self.iteration, node: id, tool, feedback });
        }
        self.evaluate(id)?;
        Ok(id)
    }

    /// Stores the PRM score as the node's initial value.
    pub fn evaluate(&mut self, id: usize) -> Result<f64, GatewayError> {
        let v = self.models.prm.score(&self.tree.state(id))?.value();
        self.tree.node_mut(id).value = v;
        Ok(v)
    }

    pub fn expand(&mut self, id: usize) -> Result<Vec<usize>, GatewayError> {
        let state = self.tree.state(id);
        let children = self.tree.node(id).children.clone();
        let mut keys: Vec<String> = children.iter().filter_map(|&c| self.tree.node(c).sibling_key()).collect();
        let diversity_hints = children
            .iter()
            .filter_map(|&c| self.tree.node(c).action.as_ref().map(Action::summary))
            .collect();
        let req = PolicyRequest {
            state: state.clone(),
            k: self.cfg.k,
            tools: self.tools.clone(),
            diversity_hints,
            reflection_notes: self.notes.clone(),
        };
        let candidates = self.models.policy.propose(&req)?;
        let child_depth = self.tree.node(id).depth + 1;
        let mut created = Vec::new();
        for action in candidates.into_iter().take(self.cfg.k) {
            match self.build(&state, child_depth, action, false)? {
                Built::Discard(reason) => {
                    self.events.push(SearchEvent::Discarded { iteration: self.iteration, parent: id, reason })
                }
                Built::Step { step, forced, feedback } => {
                    let key = step_key(&step.action, step.observation.as_ref());
                    if keys.contains(&key) {
                        let reason = format!("duplicate sibling {key}");
                        self.events.push(SearchEvent::Discarded { iteration: self.iteration, parent: id, reason });
                        continue;
                    }
                    keys.push(key);
                    created.push(self.attach(id, step, forced, feedback)?);
                }
            }
        }
        let node = self.tree.node_mut(id);
        node.expanded = true;
        node.fully_explored = created.is_empty();
        self.events.push(SearchEvent::Expanded { iteration: self.iteration, node: id, children: created.clone() });
        Ok(created)
    }

    /// Single-sample rollout from `leaf` to a terminal, reusing identical existing children.
    pub fn simulate(&mut self, leaf: usize) -> Result<usize, GatewayError> {
        let mut cur = leaf;
        while !self.tree.node(cur).is_terminal() {
            let state = self.tree.state(cur);
            let req = PolicyRequest {
                state: state.clone(),
                k: 1,
                tools: self.tools.clone(),
                diversity_hints: vec![],
                reflection_notes: self.notes.clone(),
            };
            let proposed = self.models.policy.propose(&req)?.into_iter().next();
            let built = match proposed {
                Some(action) => self.build(&state, self.tree.node(cur).depth + 1, action, true)?,
                None => Built::Step { step: Step::new(answer_from_trajectory(&state), None), forced: true, feedback: vec![] },
            };
            let Built::Step { step, forced, feedback } = built else { unreachable!("rollouts never discard") };
            let key = step_key(&step.action, step.observation.as_ref());
            cur = match self.tree.child_with_key(cur, &key) {
                Some(existing) => existing,
                None => self.attach(cur, step, forced, feedback)?,
            };
        }
        self.events.push(SearchEvent::Simulated { iteration: self.iteration, from: leaf, terminal: cur });
        Ok(cur)
    }

    /// Outcome reward of a terminal, computed once and cached on the node.
    pub fn outcome_reward(&mut self, terminal: usize) -> Result<f64, GatewayError> {
        if let Some(r) = self.tree.node(terminal).reward {
            return Ok(r);
        }
        let answer = self.tree.node(terminal).action.as_ref().and_then(Action::answer_text).unwrap_or_default();
        let r = self.models.orm.score(&self.tree.query, answer)?.value();
        self.tree.node_mut(terminal).reward = Some(r);
        Ok(r)
    }

    pub fn backpropagate(&mut self, terminal: usize, reward: f64) {
        self.tree.backpropagate(terminal, reward);
        if !self.terminals.contains(&terminal) {
            self.terminals.push(terminal);
        }
        self.last_terminal = Some(terminal);
    }

    /// One full iteration; `Some` when the search should stop.
    pub fn iterate(&mut self) -> Result<Option<StopReason>, GatewayError> {
        self.iteration += 1;
        if self.cfg.prune {
            self.maintain();
        }
        let selected = match self.select() {
            Ok(id) => id,
            Err(_) => {
                self.events.push(SearchEvent::Exhausted { iteration: self.iteration });
                // Nothing was searched, so the attempt does not count.
                self.iteration -= 1;
                return Ok(Some(StopReason::Exhausted));
            }
        };
        self.events.push(SearchEvent::Selected { iteration: self.iteration, node: selected });
        let terminal = if self.tree.node(selected).is_terminal() {
            selected
        } else {
            let created = self.expand(selected)?;
            let mut start: Option<usize> = None;
            for &c in &created {
                if start.is_none_or(|s| self.tree.node(c).value > self.tree.node(s).value) {
                    start = Some(c);
                }
            }
            match start {
                Some(s) => self.simulate(s)?,
                None => return Ok(None),
            }
        };
        let reward = self.outcome_reward(terminal)?;
        self.events.push(SearchEvent::Reward { iteration: self.iteration, node: terminal, reward });
        let success = reward >= self.cfg.success_threshold;
        if !success {
            let note = self.models.reflector.reflect(&self.tree.query, &self.tree.state(terminal))?;
            self.events.push(SearchEvent::Reflection { iteration: self.iteration, note: note.clone() });
            self.notes.push(note);
        }
        self.backpropagate(terminal, reward);
        Ok(success.then_some(StopReason::Success))
    }

    fn finish(self, case_id: Option<&str>, stop_reason: StopReason) -> SearchResult {
        let best = self.best();
        let best_reward = best.and_then(|b| self.tree.node(b).reward);
        let final_answer = best.and_then(|b| self.tree.node(b).action.as_ref()?.answer_text().map(str::to_owned));
        SearchResult {
            case_id: case_id.map(str::to_owned),
            config: self.cfg.clone(),
            stop_reason,
            iterations: self.iteration,
            best,
            best_reward,
            final_answer,
            retries: self.retries,
            reflection_notes: self.notes,
            terminals: self.terminals,
            tree: self.tree,
            prune_log: self.prune_log,
            events: self.events,
        }
    }

    pub fn run(mut self, case_id: Option<&str>) -> Result<SearchResult, SearchError> {
        while self.iteration < self.cfg.max_iterations {
            match self.iterate() {
                Ok(Some(stop)) => return Ok(self.finish(case_id, stop)),
                Ok(None) => {}
                Err(source) => {
                    let iteration = self.iteration;
                    let partial = Box::new(self.finish(case_id, StopReason::Aborted));
                    return Err(SearchError::Gateway { source, iteration, partial });
                }
            }
        }
        Ok(self.finish(case_id, StopReason::Budget))
    }
}

pub fn run_search(
    query: &str,
    case_id: Option<&str>,
    cfg: &SearchConfig,
    models: &ModelSuite,
    env: &dyn ToolEnvironment,
) -> Result<SearchResult, SearchError> {
    Engine::new(query, cfg, models, env)?.run(case_id)
}
