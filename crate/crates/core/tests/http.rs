#![cfg(feature = "http")]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;

use bias_audit::text::{ChatBackend, ChatClient, TextProviderConfig};
use bias_audit::AuditError;

/// Serves the given (status, body) replies in order and forwards each
/// request body it receives.
fn mock_server(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<String>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, body) in replies {
            let (mut stream, _) = listener.accept().unwrap();
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
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            tx.send(String::from_utf8(buf).unwrap()).unwrap();
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    (format!("http://{addr}/v1/chat/completions"), rx)
}

fn completion(text: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

#[test]
fn returns_payload_and_sends_system_first() {
    let (endpoint, requests) = mock_server(vec![(200, completion("mock payload"))]);
    let cfg = TextProviderConfig { endpoint, retries: 0, ..Default::default() };
    let client = ChatClient::with_key(cfg, "k".into()).unwrap();
    let text = client.generate("Explain tides", Some("Be concise.")).unwrap();
    assert_eq!(text, "mock payload");
    let body: serde_json::Value = serde_json::from_str(&requests.recv().unwrap()).unwrap();
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][0]["content"], "Be concise.");
    assert_eq!(body["messages"][1]["role"], "user");
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["top_p"], 0.0);
}

#[test]
fn retries_server_errors_then_gives_up() {
    let (endpoint, _rx) = mock_server(vec![(500, "{}".into()), (200, completion("second try"))]);
    let cfg = TextProviderConfig { endpoint, retries: 1, ..Default::default() };
    let client = ChatClient::with_key(cfg, "k".into()).unwrap();
    assert_eq!(client.generate("q", None).unwrap(), "second try");

    let (endpoint, _rx) = mock_server(vec![(503, "{}".into()), (503, "{}".into())]);
    let cfg = TextProviderConfig { endpoint, retries: 1, ..Default::default() };
    let err = ChatClient::with_key(cfg, "k".into()).unwrap().generate("q", None).unwrap_err();
    assert!(matches!(err, AuditError::Provider(_)));
}

#[test]
fn missing_credential_fails_before_network() {
    // the endpoint is unroutable; reaching it would hang or fail differently
    let cfg = TextProviderConfig { endpoint: "http://192.0.2.1:9/none".into(), ..Default::default() };
    std::env::remove_var(bias_audit::text::API_KEY_VAR);
    let err = ChatClient::from_env(cfg).err().unwrap();
    assert!(matches!(err, AuditError::Config(_)));
}
