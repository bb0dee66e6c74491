//! Remote backend against a scripted local HTTP server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use chrono::NaiveDate;
use serde_json::{json, Value};

use searisk_core::evidence::{Direction, Driver, EvidenceRecord, NeighborEvidence};
use searisk_core::ingest::CellId;
use searisk_report::backend::template_report;
use searisk_report::generate::AuditLog;
use searisk_report::{build_prompt, generate_report, GenerationOutcome, RemoteBackend, RemoteConfig, ReportError};

struct MockServer {
    url: String,
    requests: Arc<Mutex<Vec<(String, Value)>>>,
}

/// Serves `script` in order, one connection per response, then stops.
fn serve(script: Vec<(u16, String)>) -> MockServer {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let requests = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&requests);
    thread::spawn(move || {
        for (status, body) in script {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut headers = Vec::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                headers.push(line.trim_end().to_string());
            }
            let len = headers
                .iter()
                .find_map(|h| {
                    let lower = h.to_ascii_lowercase();
                    lower.strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().unwrap())
                })
                .unwrap_or(0);
            let mut buf = vec![0u8; len];
            reader.read_exact(&mut buf).unwrap();
            let auth = headers
                .iter()
                .find(|h| h.to_ascii_lowercase().starts_with("authorization:"))
                .cloned()
                .unwrap_or_default();
            log.lock().unwrap().push((auth, serde_json::from_slice(&buf).unwrap()));
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            let mut stream = reader.into_inner();
            stream.write_all(reply.as_bytes()).unwrap();
            stream.flush().unwrap();
        }
    });
    MockServer { url, requests }
}

fn completion(content: &str) -> String {
    json!({
        "id": "x",
        "model": "mock-model",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]
    })
    .to_string()
}

fn evidence() -> EvidenceRecord {
    let names = ["slow_ratio", "mean_sog", "anchor_ratio", "tanker_ratio", "std_sog"];
    let zs = [2.1, -1.8, 1.1, 0.6, -0.3];
    let rs = [0.19, -0.204, 0.1, -0.02, 0.05];
    EvidenceRecord {
        cell: CellId::new(321, -1195),
        date: NaiveDate::from_ymd_opt(2023, 6, 2).unwrap(),
        probability: 0.659,
        drivers: (0..5)
            .map(|i| Driver {
                feature: names[i].into(),
                z: zs[i],
                direction: Direction::from_signs(zs[i], rs[i]),
                r: rs[i],
                weak: false,
            })
            .collect(),
        neighbors: vec![
            NeighborEvidence {
                cell: CellId::new(322, -1195),
                weight: 0.5,
                feature: "slow_ratio".into(),
                z: 1.0,
            },
            NeighborEvidence {
                cell: CellId::new(320, -1195),
                weight: 0.3,
                feature: "mean_sog".into(),
                z: -1.0,
            },
        ],
        neighbor_shortfall: false,
    }
}

fn config(url: &str) -> RemoteConfig {
    RemoteConfig {
        endpoint: url.to_string(),
        api_key_env: "SEARISK_TEST_KEY_UNSET".into(),
        backoff_ms: 5,
        timeout_secs: 10,
        ..RemoteConfig::default()
    }
}

#[test]
fn extra_key_is_reprompted_with_the_error() {
    let ev = evidence();
    let good = serde_json::to_value(template_report(&ev)).unwrap();
    let mut bad = good.clone();
    bad["disclaimer"] = json!("seventh key");
    let server = serve(vec![(200, completion(&bad.to_string())), (200, completion(&good.to_string()))]);
    let backend = RemoteBackend::new(config(&server.url)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let audit = AuditLog::new(dir.path()).unwrap();
    let out = generate_report(&build_prompt(&ev).unwrap(), &backend, Some(&audit)).unwrap();
    let GenerationOutcome::Report(r) = out else { panic!("expected a report") };
    assert_eq!(r.provenance.passes, 2);
    assert_eq!(r.provenance.model.as_deref(), Some("mock-model"));
    assert!(r.provenance.timestamp.is_some());

    let reqs = server.requests.lock().unwrap();
    assert_eq!(reqs.len(), 2);
    let first = &reqs[0].1;
    assert_eq!(first["temperature"], 0);
    assert_eq!(first["max_tokens"], 2500);
    assert_eq!(first["response_format"]["type"], "json_object");
    assert_eq!(first["messages"][0]["role"], "system");
    let second_user = reqs[1].1["messages"][1]["content"].as_str().unwrap();
    assert!(second_user.contains("disclaimer"));
    assert!(reqs[0].0.is_empty(), "no key configured, no auth header");

    // both calls were audited with request and raw response
    let mut entries: Vec<Value> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| serde_json::from_str(&std::fs::read_to_string(e.unwrap().path()).unwrap()).unwrap())
        .collect();
    entries.sort_by_key(|e| e["pass"].as_u64());
    assert_eq!(entries.len(), 2);
    assert!(entries[0]["response"].as_str().unwrap().contains("disclaimer"));
    assert_eq!(entries[1]["outcome"], "accepted");
    assert_eq!(entries[0]["request"]["max_tokens"], 2500);
}

#[test]
fn server_errors_are_retried_with_backoff() {
    let ev = evidence();
    let good = serde_json::to_string(&template_report(&ev)).unwrap();
    let server = serve(vec![
        (500, "{}".into()),
        (503, "{}".into()),
        (200, completion(&good)),
    ]);
    let backend = RemoteBackend::new(config(&server.url)).unwrap();
    let out = generate_report(&build_prompt(&ev).unwrap(), &backend, None).unwrap();
    assert!(matches!(out, GenerationOutcome::Report(_)));
    assert_eq!(server.requests.lock().unwrap().len(), 3);
}

#[test]
fn three_failures_give_up() {
    let server = serve(vec![(500, "{}".into()), (502, "{}".into()), (500, "{}".into())]);
    let backend = RemoteBackend::new(config(&server.url)).unwrap();
    let err = generate_report(&build_prompt(&evidence()).unwrap(), &backend, None).unwrap_err();
    assert!(matches!(err, ReportError::Transport { attempts: 3, .. }));
}

#[test]
fn client_errors_are_not_retried() {
    let server = serve(vec![(401, "{\"error\": \"bad key\"}".into())]);
    let backend = RemoteBackend::new(config(&server.url)).unwrap();
    let err = generate_report(&build_prompt(&evidence()).unwrap(), &backend, None).unwrap_err();
    assert!(matches!(err, ReportError::Transport { attempts: 1, .. }));
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    // bind then drop to get a port with nothing listening
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let backend = RemoteBackend::new(config(&format!("http://127.0.0.1:{port}/v1/chat/completions"))).unwrap();
    let err = generate_report(&build_prompt(&evidence()).unwrap(), &backend, None).unwrap_err();
    assert!(matches!(err, ReportError::Transport { attempts: 3, .. }));
}
