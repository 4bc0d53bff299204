//! Minimal single-threaded HTTP/1.1 server for exercising the client.

#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

pub struct Request {
    pub method: String,
    pub path: String,
    pub body: String,
}

pub struct MockServer {
    pub url: String,
    hits: Arc<AtomicUsize>,
}

impl MockServer {
    /// `handler` gets the request and the 0-based request counter and returns
    /// `(status, body)`.
    pub fn start<F>(handler: F) -> Self
    where
        F: Fn(&Request, usize) -> (u16, String) + Send + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let n = counter.fetch_add(1, Ordering::SeqCst);
                if let Some(req) = read_request(&stream) {
                    let (status, body) = handler(&req, n);
                    write_response(stream, status, &body);
                }
            }
        });
        MockServer { url, hits }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

fn read_request(stream: &TcpStream) -> Option<Request> {
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    let mut parts = line.split_whitespace();
    let method = parts.next()?.to_string();
    let path = parts.next()?.to_string();
    let mut content_length = 0;
    loop {
        let mut header = String::new();
        reader.read_line(&mut header).ok()?;
        let header = header.trim_end();
        if header.is_empty() {
            break;
        }
        if let Some((name, value)) = header.split_once(':') {
            if name.eq_ignore_ascii_case("content-length") {
                content_length = value.trim().parse().ok()?;
            }
        }
    }
    let mut body = vec![0; content_length];
    reader.read_exact(&mut body).ok()?;
    Some(Request {
        method,
        path,
        body: String::from_utf8(body).ok()?,
    })
}

fn write_response(mut stream: TcpStream, status: u16, body: &str) {
    let reason = match status {
        200 => "OK",
        400 => "Bad Request",
        503 => "Service Unavailable",
        _ => "Status",
    };
    let _ = write!(
        stream,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    let _ = stream.flush();
}

/// Deterministic "model": entailment grows with premise/hypothesis overlap.
pub fn score_pair(premise: &str, hypothesis: &str) -> (f64, f64, f64) {
    if premise == hypothesis {
        return (0.01, 0.04, 0.95);
    }
    let len = (premise.len() + hypothesis.len()) as f64;
    let e = ((premise.len() as f64 / len) * 0.5).min(0.9);
    let c = 0.1;
    (c, 1.0 - c - e, e)
}

pub fn nli_handler(req: &Request) -> (u16, String) {
    if req.method == "GET" && req.path == "/health" {
        return (200, r#"{"status":"ok","model":"mock-mnli"}"#.to_string());
    }
    if req.method != "POST" || req.path != "/nli" {
        return (404, r#"{"error":"not found"}"#.to_string());
    }
    let Ok(body) = serde_json::from_str::<serde_json::Value>(&req.body) else {
        return (400, r#"{"error":"malformed request"}"#.to_string());
    };
    let results: Vec<serde_json::Value> = body["pairs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| {
            let (c, n, e) = score_pair(
                p["premise"].as_str().unwrap(),
                p["hypothesis"].as_str().unwrap(),
            );
            serde_json::json!({"contradiction": c, "neutral": n, "entailment": e})
        })
        .collect();
    (200, serde_json::json!({ "results": results }).to_string())
}
