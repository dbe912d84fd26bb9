//! Entropy, information gain, node scores and thresholds on a hand-built
//! tree, then one soft-pruning pass and a recovery check.

use hemcts::pruning::{entropy, information_gain, maintenance_pass, node_score, threshold, PruneLog};
use hemcts::search::{SearchConfig, SearchTree, ROOT};
use hemcts::trajectory::{Action, Step};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn step(text: &str) -> Step {
    Step::new(Action::answer("", text), None)
}

fn main() {
    let mut t = SearchTree::new("toy");
    let a = t.add_child(ROOT, step("a"), 0.5);
    let b = t.add_child(ROOT, step("b"), 0.5);
    let a1 = t.add_child(a, step("a1"), 0.5);
    let a2 = t.add_child(a, step("a2"), 0.5);
    for (leaf, r) in [(a1, 0.9), (a1, 0.8), (a2, 0.1), (b, 0.0)] {
        t.backpropagate(leaf, r);
    }

    let cfg = SearchConfig::default();
    for id in 0..t.len() {
        let n = t.node(id);
        println!(
            "node {id} depth {} V={:.3} N={} H={:.4} U={:.4} I={:.4} tau={:.4}",
            n.depth,
            n.value,
            n.visits,
            entropy(&t, id),
            information_gain(&t, id),
            node_score(&t, id, cfg.alpha, cfg.beta),
            threshold(n.depth, &cfg)
        );
    }

    let strict = SearchConfig { tau0: 0.6, ..cfg };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut log = PruneLog::default();
    let report = maintenance_pass(&mut t, &strict, 1, &mut rng, &mut log, None, None);
    println!("pruned {:?}", report.pruned);
    // The best path is far better than the current one, so pruned nodes come back.
    let report = maintenance_pass(&mut t, &strict, 2, &mut rng, &mut log, Some(a1), Some(b));
    println!("pruned {:?}, restored {:?}", report.pruned, report.restored);
}
