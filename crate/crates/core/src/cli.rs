//! Command-line front end. The `hemcts` binary only calls [`main_with_args`].

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use crate::config::{load_config, Config, Mode};
use crate::data::{build_datasets, write_jsonl, Strategy};
use crate::eval::{evaluate, Prediction, PredictionSet};
use crate::gateway::remote::{RemoteBackend, RemoteJudge};
use crate::gateway::scripted::ExactMatchJudge;
use crate::gateway::{AnswerJudge, ModelSuite};
use crate::registry::load_pool;
use crate::sandbox::{generate_benchmark, read_benchmark, write_benchmark, BenchmarkCase, Sandbox};
use crate::search::{batch_search, run_search, SearchError, SearchResult};

#[derive(Debug, Parser)]
#[command(name = "hemcts", version, about = "Tree search for tool-using agents")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic benchmark over the sandbox tools.
    GenBench {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        n_single: usize,
        #[arg(long, default_value_t = 10)]
        n_multi: usize,
        #[arg(long, default_value_t = 2)]
        depth_min: usize,
        #[arg(long, default_value_t = 4)]
        depth_max: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Search one case and optionally dump the tree.
    Search {
        #[arg(long)]
        bench: PathBuf,
        #[arg(long)]
        case: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dump_tree: Option<PathBuf>,
        #[arg(long)]
        no_prune: bool,
    },
    /// Search every case; writes trees/ and preds/ under --out.
    BatchSearch {
        #[arg(long)]
        bench: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_prune: bool,
        /// Only print the final tally.
        #[arg(long, short)]
        quiet: bool,
    },
    /// Extract training datasets from search trees.
    Extract {
        #[arg(long)]
        trees: PathBuf,
        #[arg(long)]
        bench: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "all")]
        strategy: Strategy,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Score predictions against a benchmark.
    Eval {
        #[arg(long)]
        bench: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, value_enum, default_value = "scripted")]
        judge: JudgeKind,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Where to write the JSON report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tool package utilities.
    Tools {
        #[command(subcommand)]
        command: ToolsCommand,
    },
}

#[derive(Debug, Subcommand)]
pub enum ToolsCommand {
    /// Load a package; with --bench also validate every gold step against it.
    Validate {
        dir: PathBuf,
        #[arg(long)]
        bench: Option<PathBuf>,
    },
    /// Write the sandbox package (tools.json) to a directory.
    Export { dir: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum JudgeKind {
    Scripted,
    Remote,
}

fn config_from(path: Option<&Path>, no_prune: bool) -> Result<Config> {
    let mut cfg = match path {
        Some(p) => load_config(p).with_context(|| format!("config {}", p.display()))?,
        None => Config::default(),
    };
    if no_prune {
        cfg.prune = false;
    }
    Ok(cfg)
}

fn bench_from(path: &Path) -> Result<Vec<BenchmarkCase>> {
    read_benchmark(path).with_context(|| format!("benchmark {}", path.display()))
}

fn remote_backend(cfg: &Config) -> Result<Arc<RemoteBackend>> {
    Ok(Arc::new(RemoteBackend::new(cfg.remote()?)?))
}

fn models_for(cfg: &Config, backend: Option<&Arc<RemoteBackend>>, case: &BenchmarkCase) -> ModelSuite {
    match backend {
        Some(b) => ModelSuite::remote(b.clone()),
        None => ModelSuite::scripted(Arc::new(case.clone()), cfg.policy, cfg.filler),
    }
}

fn backend_for(cfg: &Config) -> Result<Option<Arc<RemoteBackend>>> {
    match cfg.mode {
        Mode::Remote => Ok(Some(remote_backend(cfg)?)),
        Mode::Scripted => Ok(None),
    }
}

fn tree_file(out: &Path, case_id: &str) -> PathBuf {
    out.join("trees").join(format!("{case_id}.json"))
}

pub const PREDICTIONS_FILE: &str = "predictions.jsonl";

fn summary(r: &SearchResult) -> String {
    format!(
        "{}: {:?} after {} iteration(s), {} nodes, reward {}, answer {}",
        r.case_id.as_deref().unwrap_or("-"),
        r.stop_reason,
        r.iterations,
        r.tree.len(),
        r.best_reward.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into()),
        r.final_answer.as_deref().unwrap_or("-"),
    )
}

fn cmd_search(bench: &Path, case_id: &str, config: Option<&Path>, dump: Option<&Path>, no_prune: bool) -> Result<()> {
    let cfg = config_from(config, no_prune)?;
    let cases = bench_from(bench)?;
    let case = cases.iter().find(|c| c.id == case_id).ok_or_else(|| anyhow!("case not found: {case_id}"))?;
    let sandbox = Sandbox::new();
    let backend = backend_for(&cfg)?;
    let models = models_for(&cfg, backend.as_ref(), case);
    let result = match run_search(&case.query, Some(&case.id), &cfg.search(), &models, &sandbox) {
        Ok(r) => r,
        Err(SearchError::Gateway { source, iteration, partial }) => {
            if let Some(path) = dump {
                partial.write(path)?;
            }
            bail!("gateway failure in iteration {iteration}: {source}");
        }
        Err(e) => return Err(e.into()),
    };
    println!("{}", summary(&result));
    if let Some(path) = dump {
        result.write(path).with_context(|| format!("writing {}", path.display()))?;
        println!("tree written to {}", path.display());
    }
    Ok(())
}

fn cmd_batch(bench: &Path, config: Option<&Path>, out: &Path, no_prune: bool, quiet: bool) -> Result<()> {
    let cfg = config_from(config, no_prune)?;
    let cases = bench_from(bench)?;
    let sandbox = Sandbox::new();
    let backend = backend_for(&cfg)?;
    let results = batch_search(&cases, &cfg.search(), &sandbox, |case| models_for(&cfg, backend.as_ref(), case));
    let mut preds = Vec::new();
    let mut failures = Vec::new();
    for (case, result) in cases.iter().zip(results) {
        let r = match result {
            Ok(r) => r,
            Err(SearchError::Gateway { source, partial, .. }) => {
                failures.push(format!("{}: {source}", case.id));
                *partial
            }
            Err(e) => return Err(anyhow!("case {}: {e}", case.id)),
        };
        r.write(&tree_file(out, &case.id))?;
        if !quiet {
            println!("{}", summary(&r));
        }
        preds.push(Prediction::from_search(&r));
    }
    write_jsonl(&out.join("preds").join(PREDICTIONS_FILE), &preds)?;
    let passed = preds.iter().zip(&cases).filter(|(p, c)| p.final_answer.as_deref().is_some_and(|a| c.answer_matches(a))).count();
    println!("{passed}/{} cases answered correctly; output in {}", cases.len(), out.display());
    if !failures.is_empty() {
        bail!("{} case(s) aborted on gateway errors: {}", failures.len(), failures.join("; "));
    }
    Ok(())
}

/// Tree dumps in `dir`, sorted by file name.
pub fn read_trees(dir: &Path) -> Result<Vec<SearchResult>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| SearchResult::read(p).with_context(|| format!("tree {}", p.display()))).collect()
}

fn judge_for(kind: JudgeKind, cfg: &Config) -> Result<Box<dyn AnswerJudge>> {
    Ok(match kind {
        JudgeKind::Scripted => Box::new(ExactMatchJudge),
        JudgeKind::Remote => Box::new(RemoteJudge(remote_backend(cfg)?)),
    })
}

fn cmd_extract(trees: &Path, bench: &Path, out: &Path, strategy: Strategy, config: Option<&Path>) -> Result<()> {
    let cfg = config_from(config, false)?;
    let cases = bench_from(bench)?;
    let trees = read_trees(trees)?;
    let judge = judge_for(if cfg.mode == Mode::Remote { JudgeKind::Remote } else { JudgeKind::Scripted }, &cfg)?;
    let sandbox = Sandbox::new();
    let ds = build_datasets(&trees, &cases, sandbox.pool(), strategy, &cfg.pipeline(), judge.as_ref())?;
    ds.write(out)?;
    println!(
        "dp {} | dp_tilde {} | prm {} | orm {} -> {}",
        ds.dp.len(),
        ds.dp_tilde.len(),
        ds.prm.len(),
        ds.orm.len(),
        out.display()
    );
    Ok(())
}

fn cmd_eval(bench: &Path, pred: &Path, judge: JudgeKind, config: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let cfg = config_from(config, false)?;
    let cases = bench_from(bench)?;
    let preds = PredictionSet::read(pred)?;
    let judge = judge_for(judge, &cfg)?;
    let report = evaluate(&preds, &cases, judge.as_ref(), cfg.averaging)?;
    println!("{report}");
    if let Some(path) = out {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_string_pretty(&report)? + "\n")?;
    }
    Ok(())
}

fn cmd_validate(dir: &Path, bench: Option<&Path>) -> Result<()> {
    let pool = load_pool(dir)?;
    println!("{}: {} tools", dir.display(), pool.len());
    let Some(bench) = bench else { return Ok(()) };
    let mut entries = 0;
    for case in bench_from(bench)? {
        for (i, step) in case.gold_chain.iter().enumerate() {
            let report = pool.validate_invocation(&step.call);
            for issue in &report.issues {
                println!("{} step {i}: {issue}", case.id);
                entries += 1;
            }
        }
    }
    if entries > 0 {
        bail!("{entries} validation issue(s)");
    }
    println!("all gold steps validate");
    Ok(())
}

fn stage(command: &Command) -> &'static str {
    match command {
        Command::GenBench { .. } => "gen-bench",
        Command::Search { .. } => "search",
        Command::BatchSearch { .. } => "batch-search",
        Command::Extract { .. } => "extract",
        Command::Eval { .. } => "eval",
        Command::Tools { .. } => "tools",
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenBench { seed, n_single, n_multi, depth_min, depth_max, out } => {
            let cases = generate_benchmark(seed, n_single, n_multi, (depth_min, depth_max))?;
            write_benchmark(&cases, &out)?;
            println!("{} cases written to {}", cases.len(), out.display());
            Ok(())
        }
        Command::Search { bench, case, config, dump_tree, no_prune } => {
            cmd_search(&bench, &case, config.as_deref(), dump_tree.as_deref(), no_prune)
        }
        Command::BatchSearch { bench, config, out, no_prune, quiet } => {
            cmd_batch(&bench, config.as_deref(), &out, no_prune, quiet)
        }
        Command::Extract { trees, bench, out, strategy, config } => {
            cmd_extract(&trees, &bench, &out, strategy, config.as_deref())
        }
        Command::Eval { bench, pred, judge, config, out } => {
            cmd_eval(&bench, &pred, judge, config.as_deref(), out.as_deref())
        }
        Command::Tools { command: ToolsCommand::Validate { dir, bench } } => cmd_validate(&dir, bench.as_deref()),
        Command::Tools { command: ToolsCommand::Export { dir } } => {
            Sandbox::new().write_package(&dir)?;
            println!("sandbox package written to {}", dir.display());
            Ok(())
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let name = stage(&cli.command);
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {name}: {e:#}");
            1
        }
    }
}
