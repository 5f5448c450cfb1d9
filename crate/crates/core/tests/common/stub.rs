//! Loopback HTTP stub of the embed/generate/judge service contract.
//!
//! Embeddings are a fixed function of the text (see [`embed_text`]), generation echoes the
//! last line of the prompt and declares token counts of `len(prompt)` and `len(answer)` bytes.

#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde_json::{json, Value};

pub const DIM: usize = 8;

/// Deterministic embedding: per-dimension counts of letters, plus a constant so no vector is zero.
pub fn embed_text(text: &str) -> Vec<f64> {
    let mut v = vec![0.0; DIM];
    for b in text.bytes().filter(u8::is_ascii_alphabetic) {
        v[usize::from(b.to_ascii_lowercase() - b'a') % DIM] += 1.0;
    }
    v[DIM - 1] += 0.5;
    v
}

pub fn echo_answer(prompt: &str) -> String {
    prompt.lines().last().unwrap_or("").to_string()
}

#[derive(Default)]
pub struct StubState {
    pub prompts: Mutex<Vec<(String, String)>>,
    pub embed_calls: AtomicUsize,
    pub generate_calls: AtomicUsize,
    /// Answer the next n requests with 503.
    pub fail_next: AtomicUsize,
    /// Answer every generate request with 503.
    pub generate_down: AtomicBool,
    /// Answer every request with 503.
    pub down: AtomicBool,
    /// Omit token counts from generate replies.
    pub omit_counts: AtomicBool,
    pub non_greedy_requests: AtomicUsize,
    pub auth_seen: Mutex<Vec<Option<String>>>,
}

pub struct Stub {
    pub url: String,
    pub state: Arc<StubState>,
}

impl Stub {
    pub fn start() -> Stub {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
        let url = format!("http://{}", listener.local_addr().unwrap());
        let state = Arc::new(StubState::default());
        let shared = Arc::clone(&state);
        std::thread::spawn(move || {
            for stream in listener.incoming().flatten() {
                let st = Arc::clone(&shared);
                std::thread::spawn(move || {
                    let _ = serve(stream, &st);
                });
            }
        });
        Stub { url, state }
    }
}

fn respond(mut stream: TcpStream, status: u16, body: &str) -> std::io::Result<()> {
    let reason = if status == 200 { "OK" } else { "Error" };
    write!(
        stream,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )?;
    stream.flush()
}

fn serve(stream: TcpStream, state: &StubState) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    let path = request_line.split_whitespace().nth(1).unwrap_or("/").to_string();
    let mut length = 0usize;
    let mut auth = None;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" {
            break;
        }
        let lower = line.to_ascii_lowercase();
        if let Some(v) = lower.strip_prefix("content-length:") {
            length = v.trim().parse().unwrap_or(0);
        }
        if lower.starts_with("authorization:") {
            auth = Some(line["authorization:".len()..].trim().to_string());
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body)?;
    state.auth_seen.lock().unwrap().push(auth);

    if state.down.load(Ordering::SeqCst)
        || state.fail_next.fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1)).is_ok()
    {
        return respond(stream, 503, r#"{"error":"unavailable"}"#);
    }
    let req: Value = match serde_json::from_slice(&body) {
        Ok(v) => v,
        Err(_) => return respond(stream, 400, r#"{"error":"bad json"}"#),
    };
    match path.as_str() {
        "/embed" => {
            state.embed_calls.fetch_add(1, Ordering::SeqCst);
            let vectors: Vec<Vec<f64>> =
                req["texts"].as_array().unwrap().iter().map(|t| embed_text(t.as_str().unwrap())).collect();
            respond(stream, 200, &json!({ "vectors": vectors }).to_string())
        }
        "/generate" => {
            if state.generate_down.load(Ordering::SeqCst) {
                return respond(stream, 503, r#"{"error":"unavailable"}"#);
            }
            state.generate_calls.fetch_add(1, Ordering::SeqCst);
            if req["params"]["temperature"] != json!(0.0) || req["params"]["greedy"] != json!(true) {
                state.non_greedy_requests.fetch_add(1, Ordering::SeqCst);
            }
            let model = req["model"].as_str().unwrap().to_string();
            let prompt = req["prompt"].as_str().unwrap().to_string();
            let text = echo_answer(&prompt);
            let reply = if state.omit_counts.load(Ordering::SeqCst) {
                json!({ "text": text })
            } else {
                json!({ "text": text, "input_tokens": prompt.len(), "output_tokens": text.len() })
            };
            state.prompts.lock().unwrap().push((model, prompt));
            respond(stream, 200, &reply.to_string())
        }
        "/judge" => respond(stream, 200, r#"{"score":0.5}"#),
        _ => respond(stream, 404, r#"{"error":"not found"}"#),
    }
}
