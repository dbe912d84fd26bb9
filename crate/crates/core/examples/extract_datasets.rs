//! Runs a batch of searches and mines them for training data.

use std::sync::Arc;

use hemcts::data::{build_datasets, unsound_labels, PipelineConfig, Strategy};
use hemcts::gateway::scripted::{ExactMatchJudge, FillerMode, PolicyMode};
use hemcts::gateway::ModelSuite;
use hemcts::sandbox::{generate_benchmark, Sandbox};
use hemcts::search::{batch_search, SearchConfig};

fn main() -> anyhow::Result<()> {
    let sandbox = Sandbox::new();
    let cases = generate_benchmark(3, 4, 6, (2, 5))?;
    let cfg = SearchConfig { prune: false, ..Default::default() };
    let trees = batch_search(&cases, &cfg, &sandbox, |c| {
        ModelSuite::scripted(Arc::new(c.clone()), PolicyMode::DistractorFirst, FillerMode::FirstTryWrong)
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;

    let data = build_datasets(&trees, &cases, sandbox.pool(), Strategy::All, &PipelineConfig::default(), &ExactMatchJudge)?;
    println!("dp {}, dp~ {}, prm {}, orm {}", data.dp.len(), data.dp_tilde.len(), data.prm.len(), data.orm.len());
    println!("unsound labels: {:?}", unsound_labels(&data.dp_tilde, &cases, sandbox.pool()));
    if let Some(s) = data.prm.iter().find(|s| s.label == 0) {
        println!("negative prm sample: {}", serde_json::to_string(s)?);
    }

    let dir = tempfile::tempdir()?;
    data.write(dir.path())?;
    for entry in std::fs::read_dir(dir.path())? {
        let entry = entry?;
        println!("{} {} bytes", entry.file_name().to_string_lossy(), entry.metadata()?.len());
    }
    Ok(())
}
