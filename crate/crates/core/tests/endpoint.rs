use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::thread;

use masa_core::policy::{EndpointConfig, EndpointPolicy, HttpTransport};
use masa_core::textmeta::{Message, Role};

/// Serves one request with `body` and returns the raw request it saw.
fn serve_once(status: &'static str, body: String) -> (String, thread::JoinHandle<(String, String)>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}/v1", listener.local_addr().unwrap());
    let handle = thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut head = String::new();
        let mut length = 0;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                length = v.trim().parse().unwrap();
            }
            if line == "\r\n" {
                break;
            }
            head.push_str(&line);
        }
        let mut buf = vec![0; length];
        reader.read_exact(&mut buf).unwrap();
        let mut stream = stream;
        write!(
            stream,
            "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        )
        .unwrap();
        (head, String::from_utf8(buf).unwrap())
    });
    (base, handle)
}

fn messages() -> Vec<Message> {
    vec![Message {
        role: Role::User,
        content: "What is 6 times 7?".into(),
    }]
}

#[test]
fn solutions_over_http() {
    let body = serde_json::json!({
        "choices": [
            {"index": 1, "message": {"role": "assistant", "content": "\\boxed{41}"}, "finish_reason": "stop"},
            {"index": 0, "message": {"role": "assistant", "content": "so \\boxed{42}"}, "finish_reason": "stop"},
            {"index": 2, "message": {"role": "assistant", "content": "\\boxed{42}"}, "finish_reason": "length"}
        ]
    })
    .to_string();
    let (base, server) = serve_once("200 OK", body);
    let cfg = EndpointConfig {
        base_url: base,
        model: "tiny".into(),
        ..EndpointConfig::default()
    };
    let policy = EndpointPolicy::new(HttpTransport::with_token(&cfg, Some("secret".into())), cfg);
    let sols = policy.sample_solutions(messages(), "42", 3, 256).unwrap();
    let rewards: Vec<f64> = sols.iter().map(|s| s.reward).collect();
    assert_eq!(rewards, vec![1.0, 0.0, 0.0]);
    assert!(sols[2].truncated);

    let (head, request) = server.join().unwrap();
    assert!(head.starts_with("POST /v1/chat/completions"));
    assert!(head.to_ascii_lowercase().contains("authorization: bearer secret"));
    let request: serde_json::Value = serde_json::from_str(&request).unwrap();
    assert_eq!(request["model"], "tiny");
    assert_eq!(request["n"], 3);
    assert_eq!(request["max_tokens"], 256);
    assert_eq!(request["messages"][0]["role"], "user");
}

#[test]
fn error_status_is_reported() {
    let (base, server) = serve_once("503 Service Unavailable", "{\"error\":\"busy\"}".into());
    let cfg = EndpointConfig {
        base_url: base,
        ..EndpointConfig::default()
    };
    let policy = EndpointPolicy::new(HttpTransport::with_token(&cfg, None), cfg);
    let err = policy.sample_metas(messages(), 2, 1024).unwrap_err();
    assert!(err.to_string().contains("503"), "{err}");
    let (head, _) = server.join().unwrap();
    assert!(!head.to_ascii_lowercase().contains("authorization"));
}
