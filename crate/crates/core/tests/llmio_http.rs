//! Remote chat backend against a local stub HTTP server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde_json::{json, Value};
use synthweave::llmio::{complete_batch, BackendConfig, ChatBackend, ChatRequest, RemoteBackend};
use synthweave::Error;

#[derive(Debug, Clone)]
struct Hit {
    start: Instant,
    end: Instant,
    user: String,
    auth: Option<String>,
}

type Handler = dyn Fn(usize, &str) -> (u16, String) + Send + Sync;

struct Stub {
    url: String,
    hits: Arc<Mutex<Vec<Hit>>>,
}

fn read_request(stream: &mut TcpStream) -> Option<(Option<String>, Value)> {
    let mut reader = BufReader::new(stream);
    let mut len = 0usize;
    let mut auth = None;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).ok()? == 0 {
            return None;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            match k.to_ascii_lowercase().as_str() {
                "content-length" => len = v.trim().parse().ok()?,
                "authorization" => auth = Some(v.trim().to_string()),
                _ => {}
            }
        }
    }
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body).ok()?;
    Some((auth, serde_json::from_slice(&body).ok()?))
}

/// Serves each connection on its own thread; `handler(hit_index, user)`
/// picks the status and content.
fn start(handler: Box<Handler>, delay: Duration) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let hits: Arc<Mutex<Vec<Hit>>> = Arc::default();
    let counter = Arc::new(AtomicUsize::new(0));
    let handler: Arc<Handler> = Arc::from(handler);
    let h2 = hits.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let (hits, counter, handler) = (h2.clone(), counter.clone(), handler.clone());
            std::thread::spawn(move || {
                let Some((auth, body)) = read_request(&mut stream) else { return };
                let start = Instant::now();
                let user = body["messages"]
                    .as_array()
                    .and_then(|m| m.iter().find(|x| x["role"] == "user"))
                    .and_then(|m| m["content"].as_str())
                    .unwrap_or_default()
                    .to_string();
                let n = counter.fetch_add(1, Ordering::SeqCst);
                std::thread::sleep(delay);
                let (status, content) = handler(n, &user);
                let payload = if status == 200 {
                    json!({ "choices": [{ "message": { "role": "assistant", "content": content } }] }).to_string()
                } else {
                    json!({ "error": content }).to_string()
                };
                hits.lock().unwrap().push(Hit { start, end: Instant::now(), user, auth });
                let resp = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                    payload.len()
                );
                let _ = stream.write_all(resp.as_bytes());
            });
        }
    });
    Stub { url, hits }
}

fn backend(url: &str, concurrency: usize, retries: u32) -> RemoteBackend {
    std::env::set_var("SYNTHWEAVE_TEST_LLM_KEY", "test-key");
    let mut cfg = BackendConfig::remote(url, "stub-model", "SYNTHWEAVE_TEST_LLM_KEY");
    cfg.max_concurrency = concurrency;
    cfg.max_retries = retries;
    cfg.base_backoff_ms = 2;
    cfg.timeout_secs = 10;
    RemoteBackend::from_config(&cfg).unwrap()
}

fn req(user: &str) -> ChatRequest {
    ChatRequest::new(user, 0.0, "stub-model")
}

#[test]
fn fails_twice_then_succeeds() {
    let stub = start(
        Box::new(|n, _| if n < 2 { (503, "busy".into()) } else { (200, "hello".into()) }),
        Duration::ZERO,
    );
    let (res, attempts) = backend(&stub.url, 2, 4).complete_logged(&req("hi"));
    assert_eq!(res.unwrap(), "hello");
    assert_eq!(attempts.len(), 3);
    assert_eq!(attempts[2].outcome, "ok");
    let hits = stub.hits.lock().unwrap();
    assert_eq!(hits.len(), 3);
    assert_eq!(hits[0].auth.as_deref(), Some("Bearer test-key"));
}

#[test]
fn retries_exhausted_reports_every_attempt() {
    let stub = start(Box::new(|_, _| (500, "down".into())), Duration::ZERO);
    match backend(&stub.url, 1, 2).complete(&req("hi")) {
        Err(Error::Backend { attempts, .. }) => assert_eq!(attempts.len(), 3),
        other => panic!("expected backend error, got {other:?}"),
    }
}

#[test]
fn batch_isolates_permanent_failure() {
    let stub = start(
        Box::new(|_, user| if user == "item 42" { (400, "bad item".into()) } else { (200, format!("echo {user}")) }),
        Duration::ZERO,
    );
    let b = backend(&stub.url, 8, 3);
    let reqs: Vec<ChatRequest> = (0..100).map(|i| req(&format!("item {i}"))).collect();
    let out = complete_batch(&b, &reqs);
    assert_eq!(out.len(), 100);
    for (pos, (i, r)) in out.iter().enumerate() {
        assert_eq!(pos, *i);
        if *i == 42 {
            assert!(r.is_err());
        } else {
            assert_eq!(r.as_deref().unwrap(), format!("echo item {i}"));
        }
    }
    // permanent 4xx is not retried
    let hits = stub.hits.lock().unwrap();
    assert_eq!(hits.iter().filter(|h| h.user == "item 42").count(), 1);
}

fn intervals(stub: &Stub) -> Vec<(Instant, Instant)> {
    let mut v: Vec<(Instant, Instant)> = stub.hits.lock().unwrap().iter().map(|h| (h.start, h.end)).collect();
    v.sort();
    v
}

#[test]
fn concurrency_one_is_sequential() {
    let stub = start(Box::new(|_, u| (200, u.to_string())), Duration::from_millis(15));
    let b = backend(&stub.url, 1, 0);
    let reqs: Vec<ChatRequest> = (0..8).map(|i| req(&format!("r{i}"))).collect();
    assert!(complete_batch(&b, &reqs).iter().all(|(_, r)| r.is_ok()));
    let iv = intervals(&stub);
    assert_eq!(iv.len(), 8);
    for w in iv.windows(2) {
        assert!(w[1].0 >= w[0].1, "requests overlapped");
    }
}

#[test]
fn concurrency_bound_allows_overlap_up_to_limit() {
    let stub = start(Box::new(|_, u| (200, u.to_string())), Duration::from_millis(40));
    let b = backend(&stub.url, 4, 0);
    let reqs: Vec<ChatRequest> = (0..16).map(|i| req(&format!("r{i}"))).collect();
    assert!(complete_batch(&b, &reqs).iter().all(|(_, r)| r.is_ok()));
    let iv = intervals(&stub);
    let max_overlap = iv
        .iter()
        .map(|&(s, _)| iv.iter().filter(|&&(s2, e2)| s2 <= s && s < e2).count())
        .max()
        .unwrap();
    assert!((2..=4).contains(&max_overlap), "max in flight {max_overlap}");
}
