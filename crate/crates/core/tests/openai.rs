//! The HTTP client against a scripted local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use agent_hospital::llm::{Backend, BackendConfig, ChatRequest, LlmError, OpenAiBackend};

#[derive(Debug, Clone)]
struct Seen {
    path: String,
    authorization: String,
    body: String,
}

/// Serve one canned `(status, body)` per connection, in order.
fn serve(responses: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut len = 0usize;
            let mut authorization = String::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (k, v) = line.split_once(':').unwrap();
                match k.to_ascii_lowercase().as_str() {
                    "content-length" => len = v.trim().parse().unwrap(),
                    "authorization" => authorization = v.trim().to_string(),
                    _ => {}
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Seen {
                path: request_line.split_whitespace().nth(1).unwrap_or("").to_string(),
                authorization,
                body: String::from_utf8(buf).unwrap(),
            });
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (format!("http://{addr}/v1"), seen)
}

fn config(base_url: String, max_retries: u32) -> BackendConfig {
    BackendConfig {
        base_url,
        max_retries,
        backoff_initial_secs: 0.01,
        request_timeout_secs: 5.0,
        chat_model: "test-chat".into(),
        embedding_model: "test-embed".into(),
        ..Default::default()
    }
}

fn completion(text: &str) -> String {
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": text}}],
        "usage": {"prompt_tokens": 3, "completion_tokens": 1}
    })
    .to_string()
}

#[test]
fn rate_limits_are_retried() {
    let (url, seen) = serve(vec![
        (429, "{}".into()),
        (429, "{}".into()),
        (200, completion("Answer: B")),
    ]);
    let backend = OpenAiBackend::with_key(config(url, 3), "test-key").unwrap();
    let out = backend
        .chat(&ChatRequest::new("answer.diagnosis").user("Which one?"))
        .unwrap();
    assert_eq!(out, "Answer: B");
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    assert!(seen.iter().all(|s| s.path == "/v1/chat/completions"));
    assert_eq!(seen[0].authorization, "Bearer test-key");
    let body: serde_json::Value = serde_json::from_str(&seen[2].body).unwrap();
    assert_eq!(body["model"], "test-chat");
    assert_eq!(body["messages"][0]["content"], "Which one?");
}

#[test]
fn client_errors_are_not_retried() {
    let (url, seen) = serve(vec![(400, r#"{"error":"bad"}"#.into()), (200, completion("x"))]);
    let backend = OpenAiBackend::with_key(config(url, 3), "k").unwrap();
    let err = backend.chat(&ChatRequest::new("t").user("q")).unwrap_err();
    assert!(matches!(err, LlmError::Service { status: 400, .. }), "{err}");
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn retries_are_bounded() {
    let (url, seen) = serve(vec![(503, "{}".into()); 3]);
    let backend = OpenAiBackend::with_key(config(url, 2), "k").unwrap();
    let err = backend.chat(&ChatRequest::new("t").user("q")).unwrap_err();
    assert!(matches!(err, LlmError::Service { status: 503, .. }));
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn embeddings_keep_their_dimension() {
    let emb = |v: &[f64]| serde_json::json!({"data": [{"embedding": v}]}).to_string();
    let (url, seen) = serve(vec![(200, emb(&[0.1, 0.2, 0.3])), (200, emb(&[0.1, 0.2]))]);
    let backend = OpenAiBackend::with_key(config(url, 0), "k").unwrap();
    assert_eq!(backend.encoder_name(), "test-embed");
    assert_eq!(backend.embed("fever").unwrap().dim(), 3);
    assert!(matches!(backend.embed("cough"), Err(LlmError::Malformed(_))));
    assert!(matches!(backend.embed("  "), Err(LlmError::EmptyText)));
    assert_eq!(seen.lock().unwrap()[0].path, "/v1/embeddings");
}

#[test]
fn missing_key_names_the_variable() {
    let cfg = BackendConfig {
        api_key_env: "AGENT_HOSPITAL_TEST_UNSET_KEY".into(),
        ..Default::default()
    };
    let err = OpenAiBackend::from_env(cfg).err().unwrap();
    assert!(err.to_string().contains("AGENT_HOSPITAL_TEST_UNSET_KEY"));
}
