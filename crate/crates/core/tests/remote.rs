use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use hemcts::gateway::remote::{RemoteBackend, RemoteConfig, RemoteJudge, RemotePolicy, RemotePrm, Role};
use hemcts::gateway::{AnswerJudge, GatewayError, ModelSuite, PolicyModel, PolicyRequest, ProcessRewardModel};
use hemcts::sandbox::{generate_benchmark, write_benchmark, Sandbox};
use hemcts::search::{run_search, SearchConfig, StopReason};
use hemcts::trajectory::PolicyState;
use serde_json::{json, Value};

/// A received request: JSON body plus the Authorization header, if any.
#[derive(Clone, Debug)]
struct Seen {
    body: Value,
    auth: Option<String>,
}

struct Stub {
    url: String,
    seen: Arc<Mutex<Vec<Seen>>>,
}

impl Stub {
    fn seen(&self) -> Vec<Seen> {
        self.seen.lock().unwrap().clone()
    }
}

/// One-request-per-connection HTTP server; `reply(body, index)` gives status and JSON text.
fn serve<F>(reply: F) -> Stub
where
    F: Fn(&Value, usize) -> (u16, String) + Send + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/complete", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let (mut len, mut auth) = (0, None);
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            loop {
                line.clear();
                reader.read_line(&mut line).unwrap();
                let l = line.trim_end();
                if l.is_empty() {
                    break;
                }
                let (name, value) = l.split_once(':').unwrap_or((l, ""));
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => len = value.trim().parse().unwrap(),
                    "authorization" => auth = Some(value.trim().to_owned()),
                    _ => {}
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
            let index = {
                let mut l = log.lock().unwrap();
                l.push(Seen { body: body.clone(), auth });
                l.len() - 1
            };
            let (status, text) = reply(&body, index);
            let resp = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                text.len()
            );
            let _ = stream.write_all(resp.as_bytes());
        }
    });
    Stub { url, seen }
}

fn backend(url: &str, retries: usize) -> Arc<RemoteBackend> {
    let mut cfg = RemoteConfig::new(url);
    cfg.retries = retries;
    cfg.timeout = Duration::from_secs(5);
    Arc::new(RemoteBackend::new(cfg).unwrap())
}

fn prompt(body: &Value) -> &str {
    body["messages"][0]["content"].as_str().unwrap_or_default()
}

fn request(k: usize) -> PolicyRequest {
    PolicyRequest {
        state: PolicyState::new("What is the molar mass of H2O?"),
        k,
        tools: vec!["molar_mass".into()],
        diversity_hints: vec![],
        reflection_notes: vec![],
    }
}

#[test]
fn policy_candidates_are_parsed_and_request_is_well_formed() {
    let stub = serve(|_, _| {
        let c = [
            json!({"thought": "mass", "tool": "molar_mass", "args": {"formula": "H2O"}}).to_string(),
            "no json here".to_string(),
            json!({"thought": "done", "answer": "18.015"}).to_string(),
        ];
        (200, json!({ "candidates": c }).to_string())
    });
    let mut cfg = RemoteConfig::new(&stub.url);
    cfg.token = Some("secret".into());
    cfg.models.insert(Role::Policy, "planner-small".into());
    let policy = RemotePolicy(Arc::new(RemoteBackend::new(cfg).unwrap()));
    let actions = policy.propose(&request(3)).unwrap();
    assert_eq!(actions.len(), 2);
    assert_eq!(actions[0].invocation().unwrap().tool, "molar_mass");
    assert_eq!(actions[1].answer_text(), Some("18.015"));

    let seen = stub.seen();
    assert_eq!(seen.len(), 1);
    let body = &seen[0].body;
    assert_eq!(body["role"], "policy");
    assert_eq!(body["model"], "planner-small");
    assert_eq!(body["n"], 3);
    assert_eq!(body["messages"][0]["role"], "user");
    assert!(prompt(body).contains("What is the molar mass of H2O?"));
    assert_eq!(seen[0].auth.as_deref(), Some("Bearer secret"));
}

#[test]
fn backend_ignoring_n_gets_single_requests() {
    let stub = serve(|_, i| {
        let c = json!({"thought": "t", "answer": format!("a{i}")}).to_string();
        (200, json!({ "candidates": [c] }).to_string())
    });
    let actions = RemotePolicy(backend(&stub.url, 0)).propose(&request(3)).unwrap();
    let answers: Vec<_> = actions.iter().map(|a| a.answer_text().unwrap().to_owned()).collect();
    assert_eq!(answers, ["a0", "a1", "a2"]);
    let ns: Vec<_> = stub.seen().iter().map(|s| s.body["n"].as_u64().unwrap()).collect();
    assert_eq!(ns, [3, 1, 1]);
}

#[test]
fn scores_are_read_and_range_checked() {
    let stub = serve(|body, _| {
        let score = if prompt(body).contains("bad") { 1.7 } else { 0.73 };
        (200, json!({ "score": score }).to_string())
    });
    let prm = RemotePrm(backend(&stub.url, 1));
    let s = prm.score(&PolicyState::new("fine")).unwrap();
    assert_eq!(s.value(), 0.73);
    assert_eq!(stub.seen()[0].body["role"], "prm");

    let err = prm.score(&PolicyState::new("bad")).unwrap_err();
    assert!(matches!(err, GatewayError::MalformedCompletion(ref m) if m.contains("1.7")), "{err:?}");
    // One attempt plus one retry.
    assert_eq!(stub.seen().len(), 3);
}

#[test]
fn server_errors_are_retried() {
    let stub = serve(|_, i| if i == 0 { (503, "{}".into()) } else { (200, json!({"score": 1.0}).to_string()) });
    let case = generate_benchmark(7, 1, 0, (2, 4)).unwrap().remove(0);
    let judge = RemoteJudge(backend(&stub.url, 2));
    assert_eq!(judge.judge(&case, &case.gold_answer).unwrap().value(), 1.0);
    assert_eq!(stub.seen().len(), 2);
    assert_eq!(stub.seen()[1].body["role"], "judge");

    let down = serve(|_, _| (500, "{}".into()));
    let err = RemoteJudge(backend(&down.url, 2)).judge(&case, "x").unwrap_err();
    assert!(matches!(err, GatewayError::BackendUnreachable(ref m) if m.contains("500")), "{err:?}");
    assert_eq!(down.seen().len(), 3);
}

#[test]
fn malformed_replies_are_reported() {
    let stub = serve(|_, _| (200, "not json".into()));
    let err = RemotePrm(backend(&stub.url, 0)).score(&PolicyState::new("q")).unwrap_err();
    assert!(matches!(err, GatewayError::MalformedCompletion(_)), "{err:?}");
}

/// Answers every role for the first generated case as a competent model would.
fn oracle_backend() -> (Stub, hemcts::sandbox::BenchmarkCase) {
    let case = generate_benchmark(7, 1, 0, (2, 4)).unwrap().remove(0);
    let call = &case.gold_chain[0].call;
    let invoke = json!({"thought": "look it up", "tool": call.tool, "args": call.args}).to_string();
    let answer = json!({"thought": "done", "answer": case.gold_answer}).to_string();
    let gold = case.gold_answer.clone();
    let stub = serve(move |body, _| {
        let p = prompt(body);
        let reply = match body["role"].as_str().unwrap_or_default() {
            "policy" if p.contains(&gold) => json!({ "candidates": [answer] }),
            "policy" => json!({ "candidates": [invoke] }),
            "execution" => json!({ "candidates": [invoke] }),
            "prm" => json!({ "score": 0.8 }),
            "orm" | "judge" => json!({ "score": if p.contains(&gold) { 1.0 } else { 0.0 } }),
            _ => json!({ "candidates": ["check the units"] }),
        };
        (200, reply.to_string())
    });
    (stub, case)
}

#[test]
fn remote_models_drive_a_search() {
    let (stub, case) = oracle_backend();
    let models = ModelSuite::remote(backend(&stub.url, 0));
    let cfg = SearchConfig { k: 1, success_threshold: 0.5, ..Default::default() };
    let r = run_search(&case.query, Some(&case.id), &cfg, &models, &Sandbox::new()).unwrap();
    assert_eq!(r.stop_reason, StopReason::Success);
    assert_eq!(r.final_answer.as_deref(), Some(case.gold_answer.as_str()));
    let roles: Vec<String> = stub.seen().iter().map(|s| s.body["role"].as_str().unwrap().to_owned()).collect();
    for role in ["policy", "execution", "prm", "orm"] {
        assert!(roles.iter().any(|r| r == role), "{role} never called: {roles:?}");
    }
}

#[test]
fn unreachable_backend_aborts_with_partial_tree() {
    let case = generate_benchmark(7, 1, 0, (2, 4)).unwrap().remove(0);
    let models = ModelSuite::remote(backend("http://127.0.0.1:9/none", 0));
    let err = run_search(&case.query, Some(&case.id), &SearchConfig::default(), &models, &Sandbox::new()).unwrap_err();
    match err {
        hemcts::search::SearchError::Gateway { partial, iteration, .. } => {
            assert_eq!(iteration, 1);
            assert_eq!(partial.stop_reason, StopReason::Aborted);
            assert_eq!(partial.tree.len(), 1);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn cli_remote_mode_uses_the_configured_backend() {
    let (stub, case) = oracle_backend();
    let dir = tempfile::tempdir().unwrap();
    let bench = dir.path().join("bench.jsonl");
    write_benchmark(std::slice::from_ref(&case), &bench).unwrap();
    let config = dir.path().join("remote.toml");
    std::fs::write(&config, format!("mode = \"remote\"\nk = 1\nretries = 0\nbackend_url = \"{}\"\n", stub.url)).unwrap();
    let out = dir.path().join("run");
    let p = |x: &std::path::Path| x.display().to_string();
    let code = hemcts::cli::main_with_args([
        "hemcts", "batch-search", "--quiet", "--bench", &p(&bench), "--config", &p(&config), "--out", &p(&out),
    ]);
    assert_eq!(code, 0);
    let pred = out.join("preds").join("predictions.jsonl");
    let report = dir.path().join("report.json");
    let code = hemcts::cli::main_with_args([
        "hemcts", "eval", "--bench", &p(&bench), "--pred", &p(&pred), "--judge", "remote", "--config", &p(&config),
        "--out", &p(&report),
    ]);
    assert_eq!(code, 0);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(report["pass_rate"], 100.0);
    assert!(stub.seen().iter().any(|s| s.body["role"] == "judge"));
}
