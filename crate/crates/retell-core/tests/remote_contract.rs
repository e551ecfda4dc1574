//! Wire-contract tests for the remote embedding and chat providers,
//! exercised against a minimal in-process HTTP server.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc;
use std::thread;

use retell_core::embed::{
    EmbeddingBackend, EmbeddingProvider, ProviderConfig, ProviderKind, RemoteBackend,
};
use retell_core::rater::{ChatMessage, ChatProvider, ChatRequest, HttpChatProvider, RaterError};

struct ReceivedRequest {
    body: serde_json::Value,
    headers: Vec<String>,
}

/// Serve `responses` (status, body) one per connection; captured request
/// bodies and headers are sent back over the channel.
fn serve(responses: Vec<(u16, String)>) -> (String, mpsc::Receiver<ReceivedRequest>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let endpoint = format!("http://{}/embed", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, body) in responses {
            let (mut stream, _) = listener.accept().unwrap();
            let request = read_request(&mut stream);
            tx.send(request).ok();
            let reason = if status == 200 { "OK" } else { "Error" };
            let response = format!(
                "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(response.as_bytes()).unwrap();
        }
    });
    (endpoint, rx)
}

fn read_request(stream: &mut TcpStream) -> ReceivedRequest {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 4096];
    let header_end;
    loop {
        let n = stream.read(&mut chunk).unwrap();
        buf.extend_from_slice(&chunk[..n]);
        if let Some(pos) = find_header_end(&buf) {
            header_end = pos;
            break;
        }
    }
    let header_text = String::from_utf8_lossy(&buf[..header_end]).to_string();
    let content_length: usize = header_text
        .lines()
        .find_map(|l| {
            let (name, value) = l.split_once(':')?;
            name.eq_ignore_ascii_case("content-length")
                .then(|| value.trim().parse().ok())?
        })
        .unwrap_or(0);
    let mut body = buf[header_end + 4..].to_vec();
    while body.len() < content_length {
        let n = stream.read(&mut chunk).unwrap();
        body.extend_from_slice(&chunk[..n]);
    }
    ReceivedRequest {
        body: serde_json::from_slice(&body).unwrap_or(serde_json::Value::Null),
        headers: header_text.lines().map(str::to_owned).collect(),
    }
}

fn find_header_end(buf: &[u8]) -> Option<usize> {
    buf.windows(4).position(|w| w == b"\r\n\r\n")
}

fn remote_config(endpoint: &str) -> ProviderConfig {
    ProviderConfig {
        kind: ProviderKind::Remote,
        endpoint: Some(endpoint.to_owned()),
        model_id: "test-embedder".to_owned(),
        dim: 3,
        max_in_flight: 2,
        retry_limit: 2,
        cache_dir: None,
        seed: 0,
    }
}

#[test]
fn embedding_request_and_response_shapes() {
    let body = serde_json::json!({
        "vectors": [[0.1, 0.2, 0.3], [0.4, 0.5, 0.6]]
    });
    let (endpoint, rx) = serve(vec![(200, body.to_string())]);
    let cfg = remote_config(&endpoint);
    let provider = EmbeddingProvider::from_config(cfg).unwrap();
    let vectors = provider
        .embed_batch(&["first text".to_owned(), "second text".to_owned()])
        .unwrap();
    assert_eq!(vectors.len(), 2);
    assert_eq!(vectors[0].values(), &[0.1, 0.2, 0.3]);
    assert_eq!(vectors[1].values(), &[0.4, 0.5, 0.6]);

    let seen = rx.recv().unwrap();
    assert_eq!(seen.body["model"], "test-embedder");
    assert_eq!(
        seen.body["texts"],
        serde_json::json!(["first text", "second text"])
    );
    // no token in the environment, no auth header on the wire
    assert!(!seen
        .headers
        .iter()
        .any(|h| h.to_ascii_lowercase().starts_with("authorization")));
}

#[test]
fn embedding_retries_transient_then_succeeds() {
    let good = serde_json::json!({"vectors": [[1.0, 2.0, 3.0]]});
    let (endpoint, _rx) = serve(vec![
        (500, "{}".to_owned()),
        (200, good.to_string()),
    ]);
    let backend = RemoteBackend::new(&remote_config(&endpoint)).unwrap();
    let vectors = backend.embed(&["one".to_owned()]).unwrap();
    assert_eq!(vectors[0].values(), &[1.0, 2.0, 3.0]);
}

#[test]
fn embedding_gives_up_after_retry_limit() {
    let (endpoint, _rx) = serve(vec![
        (500, "{}".to_owned()),
        (500, "{}".to_owned()),
        (500, "{}".to_owned()),
    ]);
    let backend = RemoteBackend::new(&remote_config(&endpoint)).unwrap();
    let err = backend.embed(&["one".to_owned()]).unwrap_err();
    let text = err.to_string();
    assert!(text.contains("unavailable"), "unexpected error: {text}");
}

#[test]
fn embedding_wrong_dim_is_fatal() {
    let body = serde_json::json!({"vectors": [[0.1, 0.2]]}); // dim 2, expected 3
    let (endpoint, _rx) = serve(vec![(200, body.to_string())]);
    let provider = EmbeddingProvider::from_config(remote_config(&endpoint)).unwrap();
    let err = provider.embed_batch(&["one".to_owned()]).unwrap_err();
    assert!(err.to_string().contains("length 2, expected 3"));
}

#[test]
fn embedding_count_mismatch_is_fatal() {
    let body = serde_json::json!({"vectors": [[0.1, 0.2, 0.3]]});
    let (endpoint, _rx) = serve(vec![(200, body.to_string())]);
    let backend = RemoteBackend::new(&remote_config(&endpoint)).unwrap();
    let err = backend
        .embed(&["one".to_owned(), "two".to_owned()])
        .unwrap_err();
    assert!(err.to_string().contains("1 vectors for 2 texts"));
}

#[test]
fn chat_request_and_response_shapes() {
    let body = serde_json::json!({"content": "87", "tokens": 12});
    let (endpoint, rx) = serve(vec![(200, body.to_string())]);
    let provider = HttpChatProvider::new(endpoint, 1).unwrap();
    let reply = provider
        .complete(&ChatRequest {
            model: "test-rater".to_owned(),
            temperature: 0.0,
            messages: vec![ChatMessage {
                role: "user".to_owned(),
                content: "rate this".to_owned(),
            }],
        })
        .unwrap();
    assert_eq!(reply.content, "87");
    assert_eq!(reply.tokens, Some(12));

    let seen = rx.recv().unwrap();
    assert_eq!(seen.body["model"], "test-rater");
    assert_eq!(seen.body["temperature"], 0.0);
    assert_eq!(seen.body["messages"][0]["role"], "user");
    assert_eq!(seen.body["messages"][0]["content"], "rate this");
}

#[test]
fn chat_non_success_status_is_a_provider_error() {
    let (endpoint, _rx) = serve(vec![(403, "{}".to_owned())]);
    let provider = HttpChatProvider::new(endpoint, 1).unwrap();
    let err = provider
        .complete(&ChatRequest {
            model: "m".to_owned(),
            temperature: 0.0,
            messages: vec![],
        })
        .unwrap_err();
    assert!(matches!(err, RaterError::Provider(_)));
}

#[test]
fn bearer_token_is_sent_when_configured() {
    // Env mutation is process-global; this is the only test touching the
    // chat token variable.
    std::env::set_var(retell_core::rater::CHAT_TOKEN_ENV, "secret-token");
    let body = serde_json::json!({"content": "1"});
    let (endpoint, rx) = serve(vec![(200, body.to_string())]);
    let provider = HttpChatProvider::new(endpoint, 0).unwrap();
    std::env::remove_var(retell_core::rater::CHAT_TOKEN_ENV);
    provider
        .complete(&ChatRequest {
            model: "m".to_owned(),
            temperature: 0.0,
            messages: vec![],
        })
        .unwrap();
    let seen = rx.recv().unwrap();
    assert!(seen
        .headers
        .iter()
        .any(|h| h.to_ascii_lowercase() == "authorization: bearer secret-token"));
}
