use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;

use persona_bench::session::{
    persona_tag, BackendConfig, BackendError, ChatBackend, ChatMessage, ChatRequest, HttpBackend,
    Role,
};

/// Serves the canned (status, body) replies in order, one per connection,
/// and forwards each request body.
fn serve(replies: Vec<(u16, &'static str)>) -> (String, mpsc::Receiver<String>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!(
        "http://{}/v1/chat/completions",
        listener.local_addr().unwrap()
    );
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut req = vec![0; len];
            reader.read_exact(&mut req).unwrap();
            tx.send(String::from_utf8(req).unwrap()).unwrap();
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, rx)
}

fn backend(url: &str) -> HttpBackend {
    let mut c = BackendConfig::http("gpt-test", url);
    c.api_key_env = None;
    c.backoff_ms = 1;
    c.timeout_secs = 5.0;
    HttpBackend::new(c).unwrap()
}

fn history() -> Vec<ChatMessage> {
    vec![
        ChatMessage::new(
            Role::System,
            format!("{}\nBe Alex.", persona_tag("opt-auth-ana")),
            0,
        ),
        ChatMessage::new(Role::Donor, "Hello", 1),
    ]
}

const OK: &str = r#"{"choices":[{"message":{"role":"assistant","content":"Please donate."}}]}"#;

#[test]
fn retries_server_errors_then_succeeds() {
    let (url, rx) = serve(vec![(503, "busy"), (200, OK)]);
    let msgs = history();
    let out = backend(&url)
        .complete(ChatRequest {
            messages: &msgs,
            seed: 0,
        })
        .unwrap();
    assert_eq!(out, "Please donate.");
    let first = rx.recv().unwrap();
    let second = rx.recv().unwrap();
    assert_eq!(first, second);
    let body: serde_json::Value = serde_json::from_str(&first).unwrap();
    assert_eq!(body["model"], "gpt-test");
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][0]["content"], "Be Alex.");
    assert_eq!(body["messages"][1]["role"], "user");
}

#[test]
fn client_errors_are_not_retried() {
    let (url, rx) = serve(vec![(400, "bad request"), (200, OK)]);
    let msgs = history();
    let err = backend(&url)
        .complete(ChatRequest {
            messages: &msgs,
            seed: 0,
        })
        .unwrap_err();
    assert!(
        matches!(err, BackendError::Status { status: 400, .. }),
        "{err:?}"
    );
    rx.recv().unwrap();
    assert!(rx.try_recv().is_err());
}

#[test]
fn malformed_body_is_reported() {
    let (url, _rx) = serve(vec![(200, "{\"choices\":[]}")]);
    let msgs = history();
    let err = backend(&url)
        .complete(ChatRequest {
            messages: &msgs,
            seed: 0,
        })
        .unwrap_err();
    assert!(matches!(err, BackendError::BadResponse(_)));
}
