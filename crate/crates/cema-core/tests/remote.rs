//! Wire-protocol tests for the remote victim and embedder adapters against
//! in-process mock HTTP servers.

use cema_core::represent::{Embedder, RemoteEmbedder};
use cema_core::text::normalize_and_tokenize;
use cema_core::victim::{QueryLedger, RemoteVictim, RetryPolicy, TaskKind, Victim};
use cema_core::CemaError;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

/// Minimal HTTP server: answers each connection with a canned body chosen
/// by request method, counting hits. Good enough for ureq's HTTP/1.1.
struct MockServer {
    url: String,
    hits: Arc<AtomicUsize>,
}

fn read_request(stream: &mut TcpStream) -> String {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 4096];
    stream.set_read_timeout(Some(Duration::from_secs(2))).ok();
    loop {
        match stream.read(&mut chunk) {
            Ok(0) => break,
            Ok(n) => {
                buf.extend_from_slice(&chunk[..n]);
                let s = String::from_utf8_lossy(&buf);
                if let Some(head_end) = s.find("\r\n\r\n") {
                    let head = &s[..head_end];
                    let content_len = head
                        .lines()
                        .find(|l| l.to_ascii_lowercase().starts_with("content-length:"))
                        .and_then(|l| l.split(':').nth(1))
                        .and_then(|v| v.trim().parse::<usize>().ok())
                        .unwrap_or(0);
                    if buf.len() >= head_end + 4 + content_len {
                        break;
                    }
                }
            }
            Err(_) => break,
        }
    }
    String::from_utf8_lossy(&buf).into_owned()
}

fn spawn_server(
    handler: impl Fn(&str, usize) -> (u16, String) + Send + Sync + 'static,
) -> MockServer {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let hits2 = hits.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let n = hits2.fetch_add(1, Ordering::SeqCst);
            let request = read_request(&mut stream);
            let method = request.split_whitespace().next().unwrap_or("").to_string();
            let (status, body) = handler(&method, n);
            let reason = if status == 200 { "OK" } else { "Error" };
            let resp = format!(
                "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            let _ = stream.write_all(resp.as_bytes());
        }
    });
    MockServer { url, hits }
}

fn tasks_decl() -> String {
    serde_json::json!({
        "tasks": [
            {"task_id": "cls", "kind": "classification", "labels": ["a", "b"]},
            {"task_id": "mt", "kind": "translation"}
        ]
    })
    .to_string()
}

fn good_outputs() -> String {
    serde_json::json!({
        "outputs": [
            {"task_id": "cls", "text": "a"},
            {"task_id": "mt", "text": "bonjour"}
        ]
    })
    .to_string()
}

fn victim_for(url: &str) -> RemoteVictim {
    RemoteVictim::new(
        url,
        Duration::from_secs(2),
        RetryPolicy {
            max_retries: 2,
            backoff_ms: 10,
        },
    )
}

#[test]
fn remote_victim_round_trip() {
    let server = spawn_server(|method, _| {
        if method == "GET" {
            (200, tasks_decl())
        } else {
            (200, good_outputs())
        }
    });
    let victim = victim_for(&server.url);
    let tasks = victim.declare_tasks().unwrap();
    assert_eq!(tasks.len(), 2);
    assert_eq!(tasks[0].kind, TaskKind::Classification);
    assert_eq!(tasks[1].kind, TaskKind::Translation);

    let ledger = QueryLedger::unbounded();
    let text = normalize_and_tokenize("hello there").unwrap();
    let resp = cema_core::victim::query(&victim, &text, &ledger).unwrap();
    assert_eq!(resp.output_for("cls"), Some("a"));
    assert_eq!(resp.output_for("mt"), Some("bonjour"));
    assert_eq!(ledger.total_queries(), 1);
}

#[test]
fn missing_output_is_protocol_error_not_retried() {
    let post_hits = Arc::new(AtomicUsize::new(0));
    let post_hits2 = post_hits.clone();
    let server = spawn_server(move |method, _| {
        if method == "GET" {
            (200, tasks_decl())
        } else {
            post_hits2.fetch_add(1, Ordering::SeqCst);
            (
                200,
                serde_json::json!({"outputs": [{"task_id": "cls", "text": "a"}]}).to_string(),
            )
        }
    });
    let victim = victim_for(&server.url);
    let text = normalize_and_tokenize("hello").unwrap();
    let err = victim.respond(&text).unwrap_err();
    assert!(matches!(err, CemaError::Protocol(_)), "got {err:?}");
    // output-count validation happens after transfer; exactly one POST
    assert_eq!(post_hits.load(Ordering::SeqCst), 1);
}

#[test]
fn http_500_retried_then_unavailable() {
    let post_hits = Arc::new(AtomicUsize::new(0));
    let post_hits2 = post_hits.clone();
    let server = spawn_server(move |method, _| {
        if method == "GET" {
            (200, tasks_decl())
        } else {
            post_hits2.fetch_add(1, Ordering::SeqCst);
            (500, "{}".to_string())
        }
    });
    let victim = victim_for(&server.url);
    let text = normalize_and_tokenize("hello").unwrap();
    let err = victim.respond(&text).unwrap_err();
    assert!(matches!(err, CemaError::VictimUnavailable(_)), "got {err:?}");
    // initial attempt plus two retries
    assert_eq!(post_hits.load(Ordering::SeqCst), 3);
}

#[test]
fn failed_query_does_not_consume_budget() {
    let server = spawn_server(|method, _| {
        if method == "GET" {
            (200, tasks_decl())
        } else {
            (500, "{}".to_string())
        }
    });
    let victim = victim_for(&server.url);
    let ledger = QueryLedger::with_budget(5);
    let text = normalize_and_tokenize("hello").unwrap();
    assert!(cema_core::victim::query(&victim, &text, &ledger).is_err());
    assert_eq!(ledger.total_queries(), 0);
}

#[test]
fn remote_embedder_round_trip_and_cache() {
    let server = spawn_server(|_, _| {
        (
            200,
            serde_json::json!({"vectors": [[1.0, 0.0, 0.0]], "dim": 3}).to_string(),
        )
    });
    let emb = RemoteEmbedder::connect(server.url.clone()).unwrap();
    assert_eq!(emb.dim(), 3);
    let after_probe = server.hits.load(Ordering::SeqCst);
    let v1 = emb.embed_raw("same text").unwrap();
    let hits_after_first = server.hits.load(Ordering::SeqCst);
    let v2 = emb.embed_raw("same  text").unwrap(); // normalizes identically
    assert_eq!(v1, v2);
    // the second call is a cache hit: no extra network traffic
    assert_eq!(server.hits.load(Ordering::SeqCst), hits_after_first);
    assert_eq!(hits_after_first, after_probe + 1);
}

#[test]
fn remote_embedder_wrong_length_is_protocol_error() {
    let server = spawn_server(|_, n| {
        if n == 0 {
            (
                200,
                serde_json::json!({"vectors": [[1.0, 0.0, 0.0]], "dim": 3}).to_string(),
            )
        } else {
            (
                200,
                serde_json::json!({"vectors": [[1.0, 0.0]], "dim": 3}).to_string(),
            )
        }
    });
    let emb = RemoteEmbedder::connect(server.url.clone()).unwrap();
    let err = emb.embed_raw("fresh text").unwrap_err();
    assert!(matches!(err, CemaError::Protocol(_)), "got {err:?}");
}

#[test]
fn remote_embedder_dim_drift_is_protocol_error() {
    let server = spawn_server(|_, n| {
        if n == 0 {
            (
                200,
                serde_json::json!({"vectors": [[1.0, 0.0, 0.0]], "dim": 3}).to_string(),
            )
        } else {
            (
                200,
                serde_json::json!({"vectors": [[1.0, 0.0]], "dim": 2}).to_string(),
            )
        }
    });
    let emb = RemoteEmbedder::connect(server.url.clone()).unwrap();
    let err = emb.embed_raw("fresh text").unwrap_err();
    assert!(matches!(err, CemaError::Protocol(_)), "got {err:?}");
}
