//! Scores search output and a hand-edited prediction file against the gold chains.

use std::sync::Arc;

use hemcts::eval::{evaluate, Averaging, Prediction, PredictionSet};
use hemcts::gateway::scripted::{ExactMatchJudge, FillerMode, PolicyMode};
use hemcts::gateway::ModelSuite;
use hemcts::sandbox::{generate_benchmark, Sandbox};
use hemcts::search::{batch_search, SearchConfig};

fn main() -> anyhow::Result<()> {
    let sandbox = Sandbox::new();
    let cases = generate_benchmark(5, 5, 5, (2, 4))?;
    let results = batch_search(&cases, &SearchConfig::default(), &sandbox, |c| {
        ModelSuite::scripted(Arc::new(c.clone()), PolicyMode::Gold, FillerMode::Gold)
    });
    let preds: Vec<Prediction> = results.iter().flatten().map(Prediction::from_search).collect();

    let report = evaluate(&PredictionSet::from_predictions(preds.clone()), &cases, &ExactMatchJudge, Averaging::Micro)?;
    println!("search output\n{report}");

    // Drop the last call and answer of every other case, and add a garbage line.
    let mut lines: Vec<String> = preds
        .into_iter()
        .enumerate()
        .map(|(i, mut p)| {
            if i % 2 == 1 {
                p.trajectory.pop();
                p.final_answer = None;
            }
            serde_json::to_string(&p).unwrap()
        })
        .collect();
    lines.push("{not json".into());
    let edited = PredictionSet::from_jsonl(&lines.join("\n"));
    for avg in [Averaging::Micro, Averaging::Macro] {
        println!("edited, {avg:?}\n{}", evaluate(&edited, &cases, &ExactMatchJudge, avg)?);
    }
    Ok(())
}
