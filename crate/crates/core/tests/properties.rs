use std::collections::HashMap;
use std::sync::Mutex;

use hemcts::data::{dedupe, read_jsonl, reorder_meta, write_jsonl, StepSample};
use hemcts::eval::{aggregate, score_case, Averaging, Counts, Prediction, PredictedCall};
use hemcts::executor::execute_with_reflection;
use hemcts::gateway::scripted::{corrupt_args, FillerMode, PolicyMode};
use hemcts::gateway::{ExecutionModel, GatewayError, Score};
use hemcts::pruning::{maintenance_pass, retention_probability, threshold, PruneLog};
use hemcts::registry::{load_pool, ParamType, ToolParam, ToolPool, ToolSpec};
use hemcts::sandbox::{generate_benchmark, replay_chain, BenchmarkCase, Sandbox};
use hemcts::search::{run_scripted, uct_score, SearchConfig, SearchEvent, SearchTree, ROOT};
use hemcts::trajectory::{Action, PolicyState, Step, ToolInvocation};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cfg_strategy() -> impl Strategy<Value = SearchConfig> {
    (2usize..20, 0.0f64..1.0, 0.0f64..1.0).prop_flat_map(|(d_max, tau0, lambda)| {
        (0..d_max).prop_map(move |d_early| SearchConfig { d_max, d_early, tau0, lambda, ..Default::default() })
    })
}

/// Random tree: each node hangs under an earlier one, then random rewards are backpropagated.
fn random_tree(parents: &[usize], rewards: &[(usize, f64)]) -> SearchTree {
    let mut t = SearchTree::new("q");
    for (i, &p) in parents.iter().enumerate() {
        let parent = p % (i + 1);
        t.add_child(parent, Step::new(Action::answer("", format!("a{i}")), None), 0.5);
    }
    for &(node, r) in rewards {
        t.backpropagate(node % t.len(), r);
    }
    t
}

fn tree_strategy() -> impl Strategy<Value = SearchTree> {
    (prop::collection::vec(any::<usize>(), 0..25), prop::collection::vec((any::<usize>(), 0.0f64..=1.0), 0..40))
        .prop_map(|(p, r)| random_tree(&p, &r))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn threshold_is_monotone_on_each_side_of_the_boundary(cfg in cfg_strategy()) {
        for d in 0..cfg.d_early {
            prop_assert!(threshold(d + 1, &cfg) <= threshold(d, &cfg));
        }
        for d in cfg.d_early + 1..cfg.d_max {
            prop_assert!(threshold(d + 1, &cfg) >= threshold(d, &cfg));
        }
    }

    #[test]
    fn retention_falls_as_the_gap_widens(tau in 0.0f64..1.0, a in 1e-6f64..1.0, extra in 1e-4f64..1.0, kappa in 0.1f64..10.0) {
        let near = retention_probability(tau - a, tau, kappa);
        let far = retention_probability(tau - a - extra, tau, kappa);
        prop_assert!(far < near);
        prop_assert!(near > 0.0 && near <= 1.0);
        prop_assert!(far > 0.0);
    }

    #[test]
    fn scores_accept_exactly_the_unit_interval(x in -2.0f64..3.0) {
        prop_assert_eq!(Score::new(x).is_ok(), (0.0..=1.0).contains(&x));
    }

    #[test]
    fn uct_argmax_survives_a_constant_shift(vals in prop::collection::vec(0u8..64, 1..8), shift in 0u8..64, n in 0u64..50, np in 0u64..500) {
        // Eighths keep the shifted sums exact.
        let argmax = |off: f64| {
            let scores: Vec<f64> = vals.iter().map(|&v| uct_score(v as f64 / 8.0 + off, np, n, 1.4)).collect();
            (0..scores.len()).fold(0, |b, i| if scores[i] > scores[b] { i } else { b })
        };
        prop_assert_eq!(argmax(0.0), argmax(shift as f64 / 8.0));
    }

    #[test]
    fn backprop_keeps_running_means_and_visit_counts(parents in prop::collection::vec(any::<usize>(), 0..25),
                                                   rewards in prop::collection::vec((any::<usize>(), 0.0f64..=1.0), 0..40)) {
        let t = random_tree(&parents, &rewards);
        let mut routed: HashMap<usize, Vec<f64>> = HashMap::new();
        for &(node, r) in &rewards {
            for id in t.path(node % t.len()) {
                routed.entry(id).or_default().push(r);
            }
        }
        prop_assert_eq!(t.node(ROOT).visits, rewards.len() as u64);
        for n in &t.nodes {
            prop_assert!((0.0..=1.0).contains(&n.value));
            match routed.get(&n.id) {
                Some(rs) => {
                    prop_assert_eq!(n.visits, rs.len() as u64);
                    let mean = rs.iter().sum::<f64>() / rs.len() as f64;
                    prop_assert!((n.value - mean).abs() < 1e-9);
                }
                None => prop_assert_eq!(n.visits, 0),
            }
        }
    }

    #[test]
    fn maintenance_only_toggles_prune_flags(mut t in tree_strategy(), seed in any::<u64>(), tau0 in 0.0f64..1.0,
                                            beta in 0.0f64..1.0, passes in 1usize..6) {
        let cfg = SearchConfig { tau0, beta, alpha: 1.0 - beta, ..Default::default() };
        let before: Vec<(f64, u64)> = t.nodes.iter().map(|n| (n.value, n.visits)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut log = PruneLog::default();
        let last = t.len() - 1;
        for it in 1..=passes {
            maintenance_pass(&mut t, &cfg, it, &mut rng, &mut log, Some(last), Some(last / 2));
        }
        let after: Vec<(f64, u64)> = t.nodes.iter().map(|n| (n.value, n.visits)).collect();
        prop_assert_eq!(before.iter().map(|x| (x.0.to_bits(), x.1)).collect::<Vec<_>>(),
                        after.iter().map(|x| (x.0.to_bits(), x.1)).collect::<Vec<_>>());
        prop_assert!(!t.node(ROOT).pruned);
        for r in &log.restored {
            let pruned_before = log.pruned.iter().any(|p| p.node == r.node && p.iteration <= r.iteration);
            prop_assert!(pruned_before, "node {} restored without being pruned", r.node);
        }
        for n in t.nodes.iter().filter(|n| n.pruned) {
            prop_assert!(log.pruned.iter().any(|p| p.node == n.id));
        }
    }

    #[test]
    fn zero_threshold_never_prunes(mut t in tree_strategy(), seed in any::<u64>()) {
        let cfg = SearchConfig { beta: 0.0, tau0: 0.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut log = PruneLog::default();
        let report = maintenance_pass(&mut t, &cfg, 1, &mut rng, &mut log, None, None);
        prop_assert!(report.pruned.is_empty() && log.pruned.is_empty());
        // No draw was consumed.
        prop_assert_eq!(rng.get_word_pos(), ChaCha8Rng::seed_from_u64(seed).get_word_pos());
    }

    #[test]
    fn f1_lies_between_precision_and_recall(gold in 0usize..50, predicted in 0usize..50, matched in 0usize..50) {
        let matched = matched.min(gold).min(predicted);
        let prf = Counts { matched, predicted, gold }.prf();
        for x in [prf.precision, prf.recall, prf.f1] {
            prop_assert!((0.0..=100.0).contains(&x));
        }
        if matched > 0 {
            let (lo, hi) = (prf.precision.min(prf.recall), prf.precision.max(prf.recall));
            prop_assert!(prf.f1 >= lo - 1e-9 && prf.f1 <= hi + 1e-9);
        } else {
            prop_assert_eq!(prf.f1, 0.0);
        }
    }
}

fn pool_strategy() -> impl Strategy<Value = Vec<ToolSpec>> {
    let kinds = prop::sample::select(vec![
        ParamType::String,
        ParamType::Integer,
        ParamType::Number,
        ParamType::Boolean,
        ParamType::Array,
        ParamType::Object,
        ParamType::BlobRef,
    ]);
    let param = ("[a-z][a-z0-9_]{0,8}", kinds, "[a-z ]{0,20}", any::<bool>())
        .prop_map(|(n, k, d, r)| ToolParam::new(&n, k, &d, r));
    let tool = ("[a-z ]{1,30}[a-z]", prop::collection::vec(param, 0..4), "[a-z ]{0,10}");
    prop::collection::vec(tool, 1..12).prop_map(|tools| {
        tools
            .into_iter()
            .enumerate()
            .map(|(i, (description, mut params, returns))| {
                params.sort_by(|a, b| a.name.cmp(&b.name));
                params.dedup_by(|a, b| a.name == b.name);
                ToolSpec { name: format!("tool_{i}"), description, params, returns, code_path: String::new() }
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tool_pools_round_trip_and_retrieve_deterministically(tools in pool_strategy(), query in "[a-z ]{0,40}", k in 0usize..15) {
        let pool = ToolPool::new("p", tools).unwrap();
        let dir = tempfile::tempdir().unwrap();
        pool.save(dir.path()).unwrap();
        let loaded = load_pool(dir.path()).unwrap();
        prop_assert_eq!(loaded.tools(), pool.tools());
        let names = |p: &ToolPool| p.retrieve(&query, k).iter().map(|t| t.name.clone()).collect::<Vec<_>>();
        let first = names(&pool);
        prop_assert_eq!(&first, &names(&pool));
        prop_assert_eq!(&first, &names(&loaded));
        prop_assert_eq!(first.len(), k.max(1).min(pool.len()));
    }

    #[test]
    fn generated_chains_replay_in_every_interchange_order(seed in 0u64..10_000, shuffle in any::<u64>()) {
        let sb = Sandbox::new();
        let cases = generate_benchmark(seed, 2, 3, (2, 6)).unwrap();
        prop_assert_eq!(&cases, &generate_benchmark(seed, 2, 3, (2, 6)).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(shuffle);
        for case in &cases {
            prop_assert!(case.validate(sb.pool()).is_ok());
            prop_assert!(replay_chain(case, &sb).passed());
            for (g, group) in case.interchange_groups.iter().enumerate() {
                let mut order = group.clone();
                order.shuffle(&mut rng);
                prop_assert!(replay_chain(&case.with_group_order(g, &order), &sb).passed());
            }
        }
    }

    #[test]
    fn sandbox_calls_are_pure(seed in 0u64..10_000) {
        let sb = Sandbox::new();
        for case in generate_benchmark(seed, 2, 2, (2, 4)).unwrap() {
            for step in &case.gold_chain {
                prop_assert_eq!(sb.execute_tool(&step.call), sb.execute_tool(&step.call));
            }
        }
    }

    #[test]
    fn reordered_samples_dedupe_without_collisions(seed in 0u64..10_000, p in 1usize..4) {
        let cases = generate_benchmark(seed, 1, 4, (2, 6)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = reorder_meta(&cases, p, &mut rng);
        let mut doubled = samples.clone();
        doubled.extend(samples.iter().cloned());
        let (kept, stats) = dedupe(doubled);
        prop_assert_eq!(stats.collisions, 0);
        prop_assert!(kept.len() <= samples.len());
        prop_assert_eq!(kept.len() + stats.dropped, samples.len() * 2);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        write_jsonl(&path, &kept).unwrap();
        let back: Vec<StepSample> = read_jsonl(&path).unwrap();
        prop_assert_eq!(back, kept);
    }

    #[test]
    fn metrics_ignore_case_order(seed in 0u64..10_000, drop in prop::collection::vec(any::<bool>(), 6), shuffle in any::<u64>()) {
        let cases = generate_benchmark(seed, 3, 3, (2, 4)).unwrap();
        // Gold predictions with some calls removed.
        let preds: Vec<Prediction> = cases
            .iter()
            .zip(&drop)
            .map(|(c, &d)| Prediction {
                case_id: c.id.clone(),
                trajectory: c
                    .gold_chain
                    .iter()
                    .skip(d as usize)
                    .map(|s| PredictedCall { tool: s.call.tool.clone(), args: s.call.args.clone(), observation: Some(s.expected.clone()) })
                    .collect(),
                final_answer: Some(c.gold_answer.clone()),
            })
            .collect();
        let counts: Vec<_> = cases.iter().zip(&preds).map(|(c, p)| score_case(Some(p), c)).collect();
        let mut shuffled = counts.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle));
        for avg in [Averaging::Micro, Averaging::Macro] {
            let a = aggregate(&counts, avg).unwrap();
            let b = aggregate(&shuffled, avg).unwrap();
            for (x, y) in [(a.tool, b.tool), (a.param, b.param), (a.ret, b.ret)] {
                prop_assert!((x.f1 - y.f1).abs() < 1e-9 && (x.precision - y.precision).abs() < 1e-9);
            }
        }
    }
}

/// Correct or corrupted calls from a script; records the feedback it was given.
struct Scripted {
    gold: ToolInvocation,
    script: Vec<bool>,
    seen: Mutex<Vec<Option<String>>>,
}

impl ExecutionModel for Scripted {
    fn fill(
        &self,
        _state: &PolicyState,
        _action: &Action,
        tool: &ToolSpec,
        error_feedback: Option<&str>,
    ) -> Result<ToolInvocation, GatewayError> {
        let mut seen = self.seen.lock().unwrap();
        let right = self.script.get(seen.len()).copied().unwrap_or(true);
        seen.push(error_feedback.map(str::to_owned));
        let args = if right { self.gold.args.clone() } else { corrupt_args(self.gold.args.clone(), tool) };
        Ok(ToolInvocation::new(self.gold.tool.clone(), args))
    }
}

fn first_case() -> BenchmarkCase {
    generate_benchmark(7, 0, 1, (2, 2)).unwrap().remove(0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn retries_are_bounded_and_carry_the_previous_failure(script in prop::collection::vec(any::<bool>(), 0..6), max_retries in 0usize..4) {
        let sb = Sandbox::new();
        let case = first_case();
        let gold = case.gold_chain[0].call.clone();
        let tool = sb.pool().get(&gold.tool).unwrap();
        let filler = Scripted { gold, script: script.clone(), seen: Mutex::new(Vec::new()) };
        let out = execute_with_reflection(&case.gold_state(0), &case.gold_action(0), tool, &sb, &filler, max_retries).unwrap();
        let seen = filler.seen.into_inner().unwrap();
        prop_assert!(out.retries <= max_retries);
        prop_assert_eq!(seen.len(), out.retries + 1);
        prop_assert_eq!(&seen[0], &None);
        for (i, fb) in out.feedback.iter().enumerate() {
            prop_assert_eq!(seen[i + 1].as_deref(), Some(fb.as_str()));
        }
        let first_right = script.iter().position(|&r| r).unwrap_or(script.len());
        prop_assert_eq!(out.observation.ok, first_right <= max_retries);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scripted_searches_build_consistent_trees(
        seed in 0u64..1_000,
        which in 0usize..4,
        policy in prop::sample::select(vec![PolicyMode::Gold, PolicyMode::DistractorFirst, PolicyMode::AlwaysWrong]),
        filler in prop::sample::select(vec![FillerMode::Gold, FillerMode::FirstTryWrong, FillerMode::AlwaysWrong]),
        k in 1usize..4,
        prune in any::<bool>(),
    ) {
        let sb = Sandbox::new();
        let case = generate_benchmark(seed, 2, 2, (2, 5)).unwrap().remove(which);
        let cfg = SearchConfig { k, prune, max_iterations: 8, ..Default::default() };
        let r = run_scripted(&case, &cfg, policy, filler, &sb).unwrap();
        let t = &r.tree;
        let mut routed = vec![0u64; t.len()];
        let mut rewards = 0;
        for e in &r.events {
            match e {
                SearchEvent::Reward { node, .. } => {
                    rewards += 1;
                    for id in t.path(*node) {
                        routed[id] += 1;
                    }
                }
                SearchEvent::Expanded { children, .. } => prop_assert!(children.len() <= k),
                SearchEvent::Retry { feedback, .. } => prop_assert!(feedback.len() <= cfg.max_retries),
                _ => {}
            }
        }
        prop_assert_eq!(t.node(ROOT).visits, rewards);
        prop_assert!(r.iterations <= cfg.max_iterations);
        for n in &t.nodes {
            prop_assert_eq!(n.visits, routed[n.id]);
            prop_assert!((0.0..=1.0).contains(&n.value));
            prop_assert!(n.depth <= cfg.d_max);
            let kids = t.nodes.iter().filter(|c| c.parent == Some(n.id)).count();
            prop_assert!(kids <= k * cfg.max_iterations);
        }
        let again = run_scripted(&case, &cfg, policy, filler, &sb).unwrap();
        prop_assert_eq!(again.structural_hash(), r.structural_hash());
    }
}
