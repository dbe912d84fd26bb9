//! Drives a search through the HTTP gateway. A local stub plays every model
//! role; point `HEMCTS_BACKEND_URL` at a real backend to use that instead.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::Arc;
use std::thread;

use hemcts::gateway::remote::{RemoteBackend, RemoteConfig, ENV_BACKEND_TOKEN, ENV_BACKEND_URL};
use hemcts::gateway::ModelSuite;
use hemcts::sandbox::{generate_benchmark, BenchmarkCase, Sandbox};
use hemcts::search::{run_search, SearchConfig};
use serde_json::{json, Value};

/// Knows the gold chain of `case` and answers like a well-behaved model.
fn reply(case: &BenchmarkCase, body: &Value) -> Value {
    let prompt = body["messages"][0]["content"].as_str().unwrap_or_default();
    let done = case.gold_chain.iter().take_while(|s| prompt.contains(&s.call.summary())).count();
    let next = match case.gold_chain.get(done) {
        Some(s) => json!({"thought": "next step", "tool": s.call.tool, "args": s.call.args}),
        None => json!({"thought": "done", "answer": case.gold_answer}),
    };
    match body["role"].as_str().unwrap_or_default() {
        "policy" | "execution" => json!({ "candidates": [next.to_string()] }),
        "prm" => json!({ "score": 0.7 }),
        "orm" | "judge" => json!({ "score": if prompt.contains(&case.gold_answer) { 1.0 } else { 0.0 } }),
        _ => json!({ "candidates": ["recheck the previous step"] }),
    }
}

fn serve(case: BenchmarkCase) -> std::io::Result<String> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let url = format!("http://{}/complete", listener.local_addr()?);
    thread::spawn(move || {
        for mut stream in listener.incoming().flatten() {
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            let mut line = String::new();
            while reader.read_line(&mut line).unwrap_or(0) > 0 && line != "\r\n" {
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap_or(0);
                }
                line.clear();
            }
            let mut body = vec![0; len];
            let _ = reader.read_exact(&mut body);
            let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
            let text = reply(&case, &body).to_string();
            let _ = write!(stream, "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}", text.len());
        }
    });
    Ok(url)
}

fn main() -> anyhow::Result<()> {
    let case = generate_benchmark(7, 0, 1, (2, 3))?.remove(0);
    let url = match std::env::var(ENV_BACKEND_URL) {
        Ok(url) => url,
        Err(_) => serve(case.clone())?,
    };
    let mut remote = RemoteConfig::new(&url);
    remote.token = std::env::var(ENV_BACKEND_TOKEN).ok();
    let models = ModelSuite::remote(Arc::new(RemoteBackend::new(remote)?));

    let cfg = SearchConfig { k: 1, success_threshold: 0.5, ..Default::default() };
    let r = run_search(&case.query, Some(&case.id), &cfg, &models, &Sandbox::new())?;
    println!("backend {url}");
    println!("{}: {:?} in {} iterations, answer {:?} (gold {})", case.id, r.stop_reason, r.iterations, r.final_answer, case.gold_answer);
    Ok(())
}
