//! Monte Carlo tree search for tool-using agents.
//!
//! A policy model proposes the next step of a tool-use trajectory, an
//! execution model fills tool parameters (retrying on execution errors),
//! a process reward model initializes node values and an outcome reward
//! model scores final answers. Low-value subtrees are pruned adaptively and
//! can be restored when the search degrades. Finished trees are mined for
//! step-level, process-reward and outcome-reward training data.
//!
//! Everything runs offline against [`sandbox::Sandbox`] and the scripted
//! models in [`gateway::scripted`]; [`gateway::remote`] talks to a
//! JSON-over-HTTP model backend instead.
//!
//! ```
//! use hemcts::gateway::scripted::{FillerMode, PolicyMode};
//! use hemcts::sandbox::{generate_benchmark, Sandbox};
//! use hemcts::search::{run_scripted, SearchConfig};
//!
//! let case = &generate_benchmark(7, 1, 0, (2, 4)).unwrap()[0];
//! let result = run_scripted(case, &SearchConfig::default(), PolicyMode::Gold, FillerMode::Gold, &Sandbox::new()).unwrap();
//! assert!(result.passed());
//! ```

pub mod cli;
pub mod config;
pub mod data;
pub mod eval;
pub mod executor;
pub mod gateway;
pub mod pruning;
pub mod registry;
pub mod sandbox;
pub mod search;
pub mod trajectory;
