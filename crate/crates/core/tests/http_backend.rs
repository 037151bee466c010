//! The OpenAI-compatible client against a local stub server: response
//! extraction, retry-then-succeed, and permanent-error surfacing.

use std::io::{Read, Write};
use std::net::TcpListener;
use std::time::Duration;

use pfme_core::backends::{
    BackendError, ChatBackend, ChatRequest, EmbeddingBackend, HttpBackend, HttpBackendConfig,
};

/// Minimal one-shot HTTP server: answers `n` requests from the queue of
/// (status, body) responses, then exits.
fn stub_server(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub");
    let addr = listener.local_addr().unwrap();
    let handle = std::thread::spawn(move || {
        let mut seen_bodies = Vec::new();
        for (status, body) in responses {
            let (mut stream, _) = listener.accept().expect("accept");
            let mut buf = vec![0u8; 65536];
            let mut total = 0usize;
            // Read until the request body is complete (blocking, short).
            stream
                .set_read_timeout(Some(Duration::from_millis(500)))
                .unwrap();
            loop {
                match stream.read(&mut buf[total..]) {
                    Ok(0) => break,
                    Ok(n) => {
                        total += n;
                        let text = String::from_utf8_lossy(&buf[..total]);
                        if let Some(header_end) = text.find("\r\n\r\n") {
                            let content_length = text
                                .lines()
                                .find(|l| l.to_lowercase().starts_with("content-length:"))
                                .and_then(|l| l.split(':').nth(1))
                                .and_then(|v| v.trim().parse::<usize>().ok())
                                .unwrap_or(0);
                            if total >= header_end + 4 + content_length {
                                break;
                            }
                        }
                    }
                    Err(_) => break,
                }
            }
            let text = String::from_utf8_lossy(&buf[..total]).to_string();
            seen_bodies.push(text);
            let reason = if status == 200 { "OK" } else { "Error" };
            let response = format!(
                "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            let _ = stream.write_all(response.as_bytes());
        }
        seen_bodies
    });
    (format!("http://{addr}"), handle)
}

fn config(endpoint: String) -> HttpBackendConfig {
    HttpBackendConfig {
        endpoint,
        api_key: Some("test-key".to_string()),
        chat_model: "test-model".to_string(),
        embedding_model: "test-embed".to_string(),
        max_attempts: 3,
        retry_base_delay: Duration::from_millis(1),
        timeout: Duration::from_secs(5),
        rate: None,
    }
}

#[test]
fn chat_extracts_message_text() {
    let body = serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": "CONTRADICTED"}}]
    })
    .to_string();
    let (endpoint, handle) = stub_server(vec![(200, body)]);
    let backend = HttpBackend::new(config(endpoint)).unwrap();
    let answer = backend
        .chat_complete(&ChatRequest::new("sys", "classify this"))
        .unwrap();
    assert_eq!(answer, "CONTRADICTED");

    let seen = handle.join().unwrap();
    assert!(seen[0].starts_with("POST /v1/chat/completions"));
    assert!(seen[0].contains("authorization: Bearer test-key") || seen[0].contains("Authorization: Bearer test-key"));
    assert!(seen[0].contains("classify this"));
}

#[test]
fn transient_failure_retries_then_succeeds() {
    let good = serde_json::json!({
        "choices": [{"message": {"content": "OK"}}]
    })
    .to_string();
    let (endpoint, handle) = stub_server(vec![
        (500, "{\"error\":\"boom\"}".to_string()),
        (429, "{\"error\":\"slow down\"}".to_string()),
        (200, good),
    ]);
    let backend = HttpBackend::new(config(endpoint)).unwrap();
    let answer = backend.chat_complete(&ChatRequest::new("sys", "hello")).unwrap();
    assert_eq!(answer, "OK");
    assert_eq!(handle.join().unwrap().len(), 3);
}

#[test]
fn permanent_api_error_surfaces_immediately() {
    let (endpoint, handle) = stub_server(vec![(401, "{\"error\":\"bad key\"}".to_string())]);
    let backend = HttpBackend::new(config(endpoint)).unwrap();
    let err = backend
        .chat_complete(&ChatRequest::new("sys", "hello"))
        .unwrap_err();
    match err {
        BackendError::Api { status, body } => {
            assert_eq!(status, 401);
            assert!(body.contains("bad key"));
        }
        other => panic!("expected Api error, got {other:?}"),
    }
    assert_eq!(handle.join().unwrap().len(), 1);
}

#[test]
fn network_error_after_budget() {
    // Nothing listens here: connection refused on every attempt.
    let backend = HttpBackend::new(config("http://127.0.0.1:9".to_string())).unwrap();
    let err = backend
        .chat_complete(&ChatRequest::new("sys", "hello"))
        .unwrap_err();
    assert!(matches!(err, BackendError::Network { attempts: 3, .. }));
}

#[test]
fn embeddings_extract_vectors_in_order() {
    let body = serde_json::json!({
        "data": [
            {"embedding": [1.0, 0.0], "index": 0},
            {"embedding": [0.5, 0.5], "index": 1},
        ]
    })
    .to_string();
    let (endpoint, handle) = stub_server(vec![(200, body)]);
    let backend = HttpBackend::new(config(endpoint)).unwrap();
    let vectors = backend
        .embed(&["a".to_string(), "b".to_string()])
        .unwrap();
    assert_eq!(vectors.len(), 2);
    assert_eq!(vectors[0].values(), &[1.0, 0.0]);
    assert_eq!(vectors[1].values(), &[0.5, 0.5]);
    assert!(handle.join().unwrap()[0].starts_with("POST /v1/embeddings"));
}

#[test]
fn malformed_payload_is_bad_response() {
    let (endpoint, _handle) = stub_server(vec![(200, "{\"choices\": []}".to_string())]);
    let backend = HttpBackend::new(config(endpoint)).unwrap();
    let err = backend
        .chat_complete(&ChatRequest::new("sys", "hello"))
        .unwrap_err();
    assert!(matches!(err, BackendError::BadResponse(_)));
}
