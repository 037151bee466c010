//! Cache idempotence against a live (local) wiki endpoint: the first call
//! fetches, every identical call after it is served from disk.

use std::io::{Read, Write};
use std::net::TcpListener;

use pfme_core::retrieval::WikiClient;

/// Answers `n` GET requests with the same JSON body, counting them.
fn stub_wiki(body: String, max_requests: usize) -> (String, std::thread::JoinHandle<usize>) {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub");
    let addr = listener.local_addr().unwrap();
    listener
        .set_nonblocking(false)
        .expect("blocking listener");
    let handle = std::thread::spawn(move || {
        let mut served = 0usize;
        listener
            .set_nonblocking(true)
            .expect("nonblocking accept loop");
        let deadline = std::time::Instant::now() + std::time::Duration::from_secs(2);
        while served < max_requests && std::time::Instant::now() < deadline {
            match listener.accept() {
                Ok((mut stream, _)) => {
                    let mut buf = [0u8; 8192];
                    let _ = stream.read(&mut buf);
                    let response = format!(
                        "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                        body.len(),
                        body
                    );
                    let _ = stream.write_all(response.as_bytes());
                    served += 1;
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    std::thread::sleep(std::time::Duration::from_millis(5));
                }
                Err(_) => break,
            }
        }
        served
    });
    (format!("http://{addr}"), handle)
}

#[test]
fn second_identical_search_hits_cache() {
    let body = serde_json::json!({"query": {"search": [{"title": "Italo Calvino"}]}}).to_string();
    let (endpoint, handle) = stub_wiki(body, 8);
    let dir = tempfile::tempdir().unwrap();
    let client = WikiClient::with_api_url(endpoint, dir.path(), false);

    let first = client.search("Italo Calvino", 1).unwrap();
    assert_eq!(first, vec!["Italo Calvino"]);
    assert_eq!(client.network_call_count(), 1);

    let second = client.search("Italo Calvino", 1).unwrap();
    assert_eq!(second, first);
    assert_eq!(client.network_call_count(), 1, "second call must be cache-only");

    // A different limit is a different request key.
    let third = client.search("Italo Calvino", 3).unwrap();
    assert_eq!(third, first);
    assert_eq!(client.network_call_count(), 2);

    drop(client);
    assert_eq!(handle.join().unwrap(), 2, "server saw exactly two fetches");
}

#[test]
fn cache_survives_client_restart() {
    let body = serde_json::json!({"query": {"search": [{"title": "Turin"}]}}).to_string();
    let (endpoint, _handle) = stub_wiki(body, 4);
    let dir = tempfile::tempdir().unwrap();

    let client = WikiClient::with_api_url(endpoint.clone(), dir.path(), false);
    client.search("Turin", 1).unwrap();
    assert_eq!(client.network_call_count(), 1);
    drop(client);

    // A fresh client in fixture mode can replay the cached response.
    let offline = WikiClient::with_api_url(endpoint, dir.path(), true);
    let titles = offline.search("Turin", 1).unwrap();
    assert_eq!(titles, vec!["Turin"]);
    assert_eq!(offline.network_call_count(), 0);
}
