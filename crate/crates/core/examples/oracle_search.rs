//! Searches one multi-step case with the gold-following scripted models and dumps the tree.

use hemcts::gateway::scripted::{FillerMode, PolicyMode};
use hemcts::sandbox::{generate_benchmark, Sandbox};
use hemcts::search::{run_scripted, SearchConfig};

fn main() -> anyhow::Result<()> {
    let case = generate_benchmark(7, 0, 1, (3, 3))?.remove(0);
    let cfg = SearchConfig::default();
    let r = run_scripted(&case, &cfg, PolicyMode::Gold, FillerMode::Gold, &Sandbox::new())?;

    println!("query: {}", case.query);
    println!("stop: {:?} after {} iterations, {} nodes", r.stop_reason, r.iterations, r.tree.len());
    for step in &r.trajectory().steps {
        println!("  {}", step.action.summary());
    }
    println!("answer {:?} (gold {})", r.final_answer, case.gold_answer);
    for n in &r.tree.nodes {
        println!("  node {:>2} parent {:?} depth {} V={:.3} N={}", n.id, n.parent, n.depth, n.value, n.visits);
    }
    Ok(())
}
