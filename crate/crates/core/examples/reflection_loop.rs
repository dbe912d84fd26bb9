//! Shows the execution retry loop: a filler that gets the first call wrong
//! and fixes it once the error text comes back.

use hemcts::gateway::scripted::{FillerMode, PolicyMode};
use hemcts::sandbox::{generate_benchmark, Sandbox};
use hemcts::search::{run_scripted, SearchConfig, SearchEvent};

fn main() -> anyhow::Result<()> {
    let sandbox = Sandbox::new();
    let case = generate_benchmark(11, 0, 1, (3, 3))?.remove(0);
    for filler in [FillerMode::FirstTryWrong, FillerMode::AlwaysWrong] {
        let cfg = SearchConfig { max_iterations: 4, ..Default::default() };
        let r = run_scripted(&case, &cfg, PolicyMode::Gold, filler, &sandbox)?;
        println!("{filler:?}: {:?}, {} retries", r.stop_reason, r.retries);
        for e in &r.events {
            if let SearchEvent::Retry { iteration, tool, feedback, .. } = e {
                println!("  iteration {iteration} `{tool}`:");
                for f in feedback {
                    println!("    {f}");
                }
            }
        }
        for note in &r.reflection_notes {
            println!("  note: {note}");
        }
    }
    Ok(())
}
