//! A minimal HTTP/1.1 server for oracle tests. Each connection carries one
//! request; the handler sees the request body and the 0-based request
//! number and returns (status, body, delay before replying).

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

pub type Handler = dyn Fn(&str, usize) -> (u16, String, Duration) + Send + Sync;

pub struct StubServer {
    pub url: String,
    pub requests: Arc<AtomicUsize>,
    pub bodies: Arc<Mutex<Vec<String>>>,
    pub auth: Arc<Mutex<Vec<Option<String>>>>,
}

impl StubServer {
    pub fn start(handler: impl Fn(&str, usize) -> (u16, String, Duration) + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(AtomicUsize::new(0));
        let bodies = Arc::new(Mutex::new(Vec::new()));
        let auth = Arc::new(Mutex::new(Vec::new()));
        let handler: Arc<Handler> = Arc::new(handler);
        let (r, b, a) = (requests.clone(), bodies.clone(), auth.clone());
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let n = r.fetch_add(1, Ordering::SeqCst);
                let (h, b, a) = (handler.clone(), b.clone(), a.clone());
                std::thread::spawn(move || {
                    let mut reader = BufReader::new(stream.try_clone().unwrap());
                    let mut len = 0usize;
                    let mut token = None;
                    loop {
                        let mut line = String::new();
                        if reader.read_line(&mut line).unwrap_or(0) == 0 {
                            return;
                        }
                        let line = line.trim_end();
                        if line.is_empty() {
                            break;
                        }
                        let lower = line.to_ascii_lowercase();
                        if let Some(v) = lower.strip_prefix("content-length:") {
                            len = v.trim().parse().unwrap_or(0);
                        }
                        if lower.starts_with("authorization:") {
                            token = Some(line["authorization:".len()..].trim().to_string());
                        }
                    }
                    let mut body = vec![0u8; len];
                    reader.read_exact(&mut body).unwrap();
                    let body = String::from_utf8(body).unwrap();
                    b.lock().unwrap().push(body.clone());
                    a.lock().unwrap().push(token);
                    let (status, reply, delay) = h(&body, n);
                    std::thread::sleep(delay);
                    let resp = format!(
                        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                        reply.len()
                    );
                    let _ = stream.write_all(resp.as_bytes());
                });
            }
        });
        Self {
            url,
            requests,
            bodies,
            auth,
        }
    }

    pub fn count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

pub fn ok_json(text: &str) -> (u16, String, Duration) {
    (200, serde_json::json!({ "text": text }).to_string(), Duration::ZERO)
}
