//! HTTP clients against a throwaway local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use cinesynth::http::JsonClient;
use cinesynth::retrieval::{EmbeddingProvider, EndpointEmbedder, RetrievalError};
use cinesynth::synth::{ChatRequest, CompletionParams, LiveTransport, Retrying, Transport, TransportError};
use serde_json::{json, Value};

struct Seen {
    path: String,
    auth: Option<String>,
    body: Value,
}

fn read_request(stream: &mut TcpStream) -> Seen {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut line = String::new();
    reader.read_line(&mut line).unwrap();
    let path = line.split_whitespace().nth(1).unwrap().to_owned();
    let mut len = 0;
    let mut auth = None;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).unwrap();
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        let (name, value) = h.split_once(':').unwrap();
        match name.to_ascii_lowercase().as_str() {
            "content-length" => len = value.trim().parse().unwrap(),
            "authorization" => auth = Some(value.trim().to_owned()),
            _ => {}
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();
    Seen {
        path,
        auth,
        body: serde_json::from_slice(&body).unwrap(),
    }
}

/// Serves the scripted `(status, body)` replies in order, one per connection,
/// and reports each request it saw.
fn serve(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<Seen>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, body) in replies {
            let (mut stream, _) = listener.accept().unwrap();
            let seen = read_request(&mut stream);
            tx.send(seen).unwrap();
            let resp = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(resp.as_bytes()).unwrap();
        }
    });
    (base, rx)
}

fn client() -> JsonClient {
    JsonClient::new(Some("test-key".into()), Duration::from_secs(5))
}

fn completion(text: &str) -> String {
    json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

#[test]
fn retries_transient_status_then_succeeds() {
    let (base, seen) = serve(vec![
        (503, "{}".into()),
        (429, "{}".into()),
        (200, completion("Any good sci-fi with robots?")),
    ]);
    let t = Retrying::with_policy(LiveTransport::with_client(&base, client()), 3, Duration::from_millis(1));
    let req = ChatRequest::paraphrase("Recommend robot sci-fi", &CompletionParams::default());
    assert_eq!(t.complete(&req).unwrap(), "Any good sci-fi with robots?");

    let first = seen.recv().unwrap();
    assert_eq!(first.path, "/v1/chat/completions");
    assert_eq!(first.auth.as_deref(), Some("Bearer test-key"));
    assert_eq!(first.body, req.body());
    assert_eq!(first.body["messages"][1]["content"], "Recommend robot sci-fi");
    assert_eq!(seen.iter().count(), 2);
}

#[test]
fn client_errors_are_not_retried() {
    let (base, seen) = serve(vec![(400, "{\"error\": \"bad\"}".into())]);
    let t = Retrying::with_policy(LiveTransport::with_client(&base, client()), 3, Duration::from_millis(1));
    let req = ChatRequest::paraphrase("x", &CompletionParams::default());
    assert!(matches!(t.complete(&req), Err(TransportError::Permanent(_))));
    assert_eq!(seen.iter().count(), 1);
}

#[test]
fn gives_up_after_three_transient_failures() {
    let (base, seen) = serve(vec![(500, "{}".into()), (502, "{}".into()), (503, "{}".into())]);
    let t = Retrying::with_policy(LiveTransport::with_client(&base, client()), 3, Duration::from_millis(1));
    let req = ChatRequest::paraphrase("x", &CompletionParams::default());
    assert!(matches!(t.complete(&req), Err(TransportError::Transient(_))));
    assert_eq!(seen.iter().count(), 3);
}

#[test]
fn malformed_completion_is_permanent() {
    let (base, _seen) = serve(vec![(200, "{\"choices\": []}".into())]);
    let t = LiveTransport::with_client(&base, client());
    let req = ChatRequest::paraphrase("x", &CompletionParams::default());
    assert!(matches!(t.complete(&req), Err(TransportError::Permanent(_))));
}

#[test]
fn endpoint_embedder_normalizes_and_checks_dimension() {
    let reply = json!({"data": [{"embedding": [3.0, 0.0, 4.0, 0.0]}]}).to_string();
    let (base, seen) = serve(vec![(200, reply.clone()), (200, reply)]);

    let e = EndpointEmbedder::with_client(&base, "embed-small", 4, client());
    let v = e.embed("dire wolves").unwrap();
    assert_eq!(v, vec![0.6, 0.0, 0.8, 0.0]);
    let req = seen.recv().unwrap();
    assert_eq!(req.path, "/v1/embeddings");
    assert_eq!(req.body, json!({"model": "embed-small", "input": "dire wolves"}));

    let wrong = EndpointEmbedder::with_client(&base, "embed-small", 8, client());
    assert!(matches!(
        wrong.embed("dire wolves"),
        Err(RetrievalError::DimensionMismatch { expected: 8, got: 4 })
    ));
}

#[test]
fn unreachable_endpoint_is_transient() {
    // Bind then drop to get a port nobody listens on.
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let t = LiveTransport::with_client(&format!("http://127.0.0.1:{port}"), client());
    let req = ChatRequest::paraphrase("x", &CompletionParams::default());
    assert!(matches!(t.complete(&req), Err(TransportError::Transient(_))));
}
