//! Generates a small benchmark, writes it as JSONL and replays every gold chain.

use hemcts::sandbox::{generate_benchmark, read_benchmark, replay_chain, write_benchmark, Sandbox};

fn main() -> anyhow::Result<()> {
    let cases = generate_benchmark(7, 3, 3, (2, 5))?;
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("bench.jsonl");
    write_benchmark(&cases, &path)?;
    let back = read_benchmark(&path)?;
    assert_eq!(back, cases);

    let sandbox = Sandbox::new();
    for case in &back {
        let tools: Vec<&str> = case.gold_chain.iter().map(|s| s.call.tool.as_str()).collect();
        println!("{} [{}] {}", case.id, tools.join(" -> "), case.query);
        println!("    answer {}, replay {:?}, groups {:?}", case.gold_answer, replay_chain(case, &sandbox), case.interchange_groups);
    }
    Ok(())
}
