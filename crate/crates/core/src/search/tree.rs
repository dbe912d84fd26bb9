use serde::{Deserialize, Serialize};

use crate::trajectory::{Action, Observation, PolicyState, Step};

/// Snapshot of a node's statistics when it was pruned.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneRecord {
    pub score: f64,
    pub depth: usize,
    pub visits: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub depth: usize,
    /// Running mean of backpropagated rewards; the PRM score before the first update.
    #[serde(rename = "V")]
    pub value: f64,
    #[serde(rename = "N")]
    pub visits: u64,
    pub children: Vec<usize>,
    pub pruned: bool,
    pub prune_record: Option<PruneRecord>,
    /// `None` only for the root.
    pub action: Option<Action>,
    pub observation: Option<Observation>,
    /// Answer synthesized because the depth cap was reached.
    #[serde(default)]
    pub forced: bool,
    #[serde(default)]
    pub expanded: bool,
    #[serde(default)]
    pub fully_explored: bool,
    /// Outcome reward, cached the first time the terminal is scored.
    #[serde(default)]
    pub reward: Option<f64>,
}

impl SearchNode {
    pub fn is_terminal(&self) -> bool {
        self.action.as_ref().is_some_and(Action::is_answer)
    }

    /// Key for sibling uniqueness: the call plus its observation, or the normalized answer.
    pub fn sibling_key(&self) -> Option<String> {
        self.action.as_ref().map(|a| step_key(a, self.observation.as_ref()))
    }
}

pub fn step_key(action: &Action, observation: Option<&Observation>) -> String {
    match action {
        Action::Invoke { invocation, .. } => {
            format!("{} => {}", invocation.summary(), observation.map(Observation::key).unwrap_or_default())
        }
        Action::Answer { .. } => action.summary(),
    }
}

/// Arena of nodes; ids are indices and children always have larger ids than parents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchTree {
    pub query: String,
    pub nodes: Vec<SearchNode>,
}

pub const ROOT: usize = 0;

impl SearchTree {
    pub fn new(query: impl Into<String>) -> Self {
        let root = SearchNode {
            id: ROOT,
            parent: None,
            depth: 0,
            value: 0.0,
            visits: 0,
            children: Vec::new(),
            pruned: false,
            prune_record: None,
            action: None,
            observation: None,
            forced: false,
            expanded: false,
            fully_explored: false,
            reward: None,
        };
        Self { query: query.into(), nodes: vec![root] }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: usize) -> &SearchNode {
        &self.nodes[id]
    }

    pub fn node_mut(&mut self, id: usize) -> &mut SearchNode {
        &mut self.nodes[id]
    }

    pub fn add_child(&mut self, parent: usize, step: Step, value: f64) -> usize {
        let id = self.nodes.len();
        let depth = self.nodes[parent].depth + 1;
        self.nodes.push(SearchNode {
            id,
            parent: Some(parent),
            depth,
            value,
            visits: 0,
            children: Vec::new(),
            pruned: false,
            prune_record: None,
            action: Some(step.action),
            observation: step.observation,
            forced: false,
            expanded: false,
            fully_explored: false,
            reward: None,
        });
        self.nodes[parent].children.push(id);
        id
    }

    /// Ids from the root down to `id`, inclusive.
    pub fn path(&self, id: usize) -> Vec<usize> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    pub fn state(&self, id: usize) -> PolicyState {
        let mut state = PolicyState::new(self.query.clone());
        for &n in &self.path(id)[1..] {
            let node = &self.nodes[n];
            if let Some(action) = &node.action {
                state.steps.push(Step::new(action.clone(), node.observation.clone()));
            }
        }
        state
    }

    pub fn child_with_key(&self, parent: usize, key: &str) -> Option<usize> {
        self.nodes[parent].children.iter().copied().find(|&c| self.nodes[c].sibling_key().as_deref() == Some(key))
    }

    /// True when the node or one of its ancestors is pruned.
    pub fn is_blocked(&self, id: usize) -> bool {
        self.path(id).iter().any(|&n| self.nodes[n].pruned)
    }

    /// Non-terminal, below the depth cap and not fully explored.
    pub fn is_expandable(&self, id: usize, d_max: usize) -> bool {
        let n = &self.nodes[id];
        !n.is_terminal() && n.depth < d_max && !n.fully_explored
    }

    /// Per node: can `select` still reach a terminal or expandable node through it?
    pub fn selectable(&self, d_max: usize) -> Vec<bool> {
        let mut out = vec![false; self.nodes.len()];
        for id in (0..self.nodes.len()).rev() {
            let n = &self.nodes[id];
            out[id] = !n.pruned
                && (n.is_terminal() || self.is_expandable(id, d_max) || n.children.iter().any(|&c| out[c]));
        }
        out
    }

    /// N += 1 then V += (R - V) / N along the path to the root; returns the path length.
    pub fn backpropagate(&mut self, terminal: usize, reward: f64) -> usize {
        let path = self.path(terminal);
        for &id in &path {
            let n = &mut self.nodes[id];
            n.visits += 1;
            n.value += (reward - n.value) / n.visits as f64;
        }
        path.len()
    }

    /// Mean of node values along the root-to-`id` path.
    pub fn path_mean_value(&self, id: usize) -> f64 {
        let path = self.path(id);
        path.iter().map(|&n| self.nodes[n].value).sum::<f64>() / path.len() as f64
    }
}

pub fn uct_score(child_value: f64, parent_visits: u64, child_visits: u64, c: f64) -> f64 {
    let parent = (parent_visits.max(1)) as f64;
    child_value + c * (parent.ln() / (1.0 + child_visits as f64)).sqrt()
}

pub fn uct(parent: &SearchNode, child: &SearchNode, c: f64) -> f64 {
    uct_score(child.value, parent.visits, child.visits, c)
}
