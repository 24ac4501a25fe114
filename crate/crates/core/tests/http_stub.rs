//! HTTP backends against a local stub server: retry budget, concurrency cap,
//! wire format and fixture record/replay.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use tacitree::gateway::{prompts, vars, BackendProfile, FixtureMode, Gateway, GatewayError, Role};

/// What the stub answers for the n-th request (0-based).
type Responder = dyn Fn(usize, &str) -> (u16, String) + Send + Sync;

struct Stub {
    url: String,
    hits: Arc<AtomicUsize>,
    peak: Arc<AtomicUsize>,
    bodies: Arc<Mutex<Vec<String>>>,
}

fn read_request(stream: &mut TcpStream) -> Option<String> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut len = 0usize;
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
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().ok()?;
            }
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).ok()?;
    String::from_utf8(body).ok()
}

fn serve(delay: Duration, respond: Arc<Responder>) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let live = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let (h, p, b) = (hits.clone(), peak.clone(), bodies.clone());
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let (hits, live, peak, bodies, respond) = (h.clone(), live.clone(), p.clone(), b.clone(), respond.clone());
            thread::spawn(move || {
                let Some(body) = read_request(&mut stream) else { return };
                let n = hits.fetch_add(1, Ordering::SeqCst);
                let now = live.fetch_add(1, Ordering::SeqCst) + 1;
                peak.fetch_max(now, Ordering::SeqCst);
                thread::sleep(delay);
                bodies.lock().unwrap().push(body.clone());
                let (status, payload) = respond(n, &body);
                live.fetch_sub(1, Ordering::SeqCst);
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                    payload.len()
                );
                let _ = stream.write_all(reply.as_bytes());
            });
        }
    });
    Stub { url, hits, peak, bodies }
}

fn chat_body(text: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}], "usage": {"prompt_tokens": 7, "completion_tokens": 2}})
        .to_string()
}

fn gateway(url: &str, max_inflight: usize, max_retries: u32) -> Gateway {
    let profiles: Vec<BackendProfile> = Role::ALL
        .iter()
        .map(|&r| BackendProfile { max_retries, backoff_base_ms: 1, timeout_secs: 10.0, ..BackendProfile::http(r, url, "stub-model") })
        .collect();
    Gateway::from_profiles(&profiles, max_inflight).unwrap()
}

fn ask(gw: &Gateway, q: &str) -> Result<String, GatewayError> {
    Ok(gw.chat(Role::Framework, &prompts::ANSWER, &vars([("question", q.into()), ("context", "none".into())]))?.text)
}

#[test]
fn stubbed_body_is_returned_verbatim() {
    let stub = serve(Duration::ZERO, Arc::new(|_, _| (200, chat_body("  exact reply, with spacing  "))));
    let gw = gateway(&stub.url, 2, 0);
    assert_eq!(ask(&gw, "hello?").unwrap(), "  exact reply, with spacing  ");
    let sent: serde_json::Value = serde_json::from_str(&stub.bodies.lock().unwrap()[0]).unwrap();
    assert_eq!(sent["model"], "stub-model");
    assert_eq!(sent["temperature"], 0.0);
    assert!(sent["messages"][0]["content"].as_str().unwrap().contains("hello?"));
    let log = gw.call_log();
    assert_eq!((log[0].prompt_tokens, log[0].completion_tokens, log[0].retry_count), (7, 2, 0));
}

#[test]
fn retry_budget_is_respected() {
    let stub = serve(Duration::ZERO, Arc::new(|_, _| (503, "{}".into())));
    let gw = gateway(&stub.url, 2, 3);
    match ask(&gw, "q") {
        Err(GatewayError::BackendUnavailable { attempts, .. }) => assert_eq!(attempts, 4),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(stub.hits.load(Ordering::SeqCst), 4);
}

#[test]
fn transient_failures_then_success() {
    let stub = serve(Duration::ZERO, Arc::new(|n, _| if n < 2 { (429, "{}".into()) } else { (200, chat_body("ok")) }));
    let gw = gateway(&stub.url, 1, 3);
    assert_eq!(ask(&gw, "q").unwrap(), "ok");
    assert_eq!(stub.hits.load(Ordering::SeqCst), 3);
    assert_eq!(gw.call_log()[0].retry_count, 2);
}

#[test]
fn client_errors_are_not_retried() {
    let stub = serve(Duration::ZERO, Arc::new(|_, _| (400, "{\"error\":\"bad\"}".into())));
    let gw = gateway(&stub.url, 1, 5);
    assert!(ask(&gw, "q").is_err());
    assert_eq!(stub.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn inflight_cap_holds_under_parallel_load() {
    let stub = serve(Duration::from_millis(40), Arc::new(|_, _| (200, chat_body("fine"))));
    let gw = Arc::new(gateway(&stub.url, 3, 0));
    let handles: Vec<_> = (0..12)
        .map(|i| {
            let gw = gw.clone();
            thread::spawn(move || ask(&gw, &format!("question {i}")).unwrap())
        })
        .collect();
    for h in handles {
        assert_eq!(h.join().unwrap(), "fine");
    }
    let peak = stub.peak.load(Ordering::SeqCst);
    assert!(peak <= 3, "peak {peak}");
    assert!(peak >= 2, "requests never overlapped");
    assert_eq!(stub.hits.load(Ordering::SeqCst), 12);
}

#[test]
fn embeddings_reordered_and_normalized() {
    let body = r#"{"data":[{"index":1,"embedding":[0.0,2.0]},{"index":0,"embedding":[3.0,4.0]}]}"#;
    let stub = serve(Duration::ZERO, Arc::new(move |_, _| (200, body.to_string())));
    let gw = gateway(&stub.url, 1, 0);
    let v = gw.embed(&["a".into(), "b".into()]).unwrap();
    assert_eq!(v[0].values(), [0.6, 0.8]);
    assert_eq!(v[1].values(), [0.0, 1.0]);
    let sent: serde_json::Value = serde_json::from_str(&stub.bodies.lock().unwrap()[0]).unwrap();
    assert_eq!(sent["input"], serde_json::json!(["a", "b"]));
}

#[test]
fn fixtures_replay_without_the_server() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fx.json");
    let stub = serve(Duration::ZERO, Arc::new(|n, _| (200, chat_body(&format!("reply {n}")))));
    let rec = gateway(&stub.url, 1, 0).with_fixtures(&path, FixtureMode::Record).unwrap();
    let first = ask(&rec, "remember me").unwrap();
    rec.save_fixtures().unwrap();

    // Nothing listens here; replay must not touch the network.
    let replay = gateway("http://127.0.0.1:9/v1", 1, 0).with_fixtures(&path, FixtureMode::Replay).unwrap();
    assert_eq!(ask(&replay, "remember me").unwrap(), first);
    assert!(matches!(ask(&replay, "never recorded"), Err(GatewayError::FixtureMiss(_))));
    assert_eq!(stub.hits.load(Ordering::SeqCst), 1);
}
