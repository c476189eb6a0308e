#![allow(dead_code)]

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const SYLLABLES: [&str; 16] = ["ka", "lo", "mi", "ren", "sta", "vo", "qua", "th", "el", "dor", "pi", "su", "ne", "ga", "ri", "ox"];

fn word(i: usize) -> String {
    let mut w = String::new();
    let mut v = i + 1;
    while v > 0 {
        w.push_str(SYLLABLES[v % SYLLABLES.len()]);
        v /= SYLLABLES.len();
    }
    w
}

/// Zipf-flavoured prose over a large vocabulary.
pub fn natural_texts(n_docs: usize, seed: u64) -> Vec<(String, String)> {
    let mut r = rng(seed);
    let vocab = 2000usize;
    let weights: Vec<f64> = (1..=vocab).map(|k| 1.0 / k as f64).collect();
    let total: f64 = weights.iter().sum();
    let cdf: Vec<f64> = weights
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w / total;
            Some(*acc)
        })
        .collect();
    (0..n_docs)
        .map(|d| {
            let sentences = r.gen_range(3..12);
            let mut text = String::new();
            for _ in 0..sentences {
                let len = r.gen_range(5..18);
                for i in 0..len {
                    let u: f64 = r.gen();
                    let k = cdf.partition_point(|&c| c < u).min(vocab - 1);
                    if i > 0 {
                        text.push(' ');
                    }
                    text.push_str(&word(k));
                    if i + 1 < len && r.gen_bool(0.08) {
                        text.push(',');
                    }
                }
                text.push_str(". ");
            }
            (format!("nat-{d:04}"), text.trim_end().to_string())
        })
        .collect()
}

/// Repetitive, low-entropy "rephrased" text: a small vocabulary walked by a
/// sparse first-order chain.
pub fn synthetic_texts(n_docs: usize, seed: u64) -> Vec<(String, String)> {
    let mut r = rng(seed);
    let vocab = 120usize;
    let next: Vec<[usize; 3]> = (0..vocab).map(|_| [r.gen_range(0..vocab), r.gen_range(0..vocab), r.gen_range(0..vocab)]).collect();
    (0..n_docs)
        .map(|d| {
            let len = r.gen_range(40..160);
            let mut cur = r.gen_range(0..vocab);
            let mut text = String::from("Question:");
            for i in 0..len {
                text.push(' ');
                text.push_str(&word(cur * 7));
                if i % 11 == 10 {
                    text.push('.');
                }
                cur = next[cur][r.gen_range(0..3)];
            }
            text.push('.');
            (format!("syn-{d:04}"), text)
        })
        .collect()
}

pub fn write_jsonl(path: &Path, docs: &[(String, String)]) {
    let mut out = String::new();
    for (id, text) in docs {
        out.push_str(&json!({ "id": id, "text": text }).to_string());
        out.push('\n');
    }
    std::fs::write(path, out).unwrap();
}

pub struct MockReply {
    pub status: u16,
    pub content: String,
}

pub type Script = dyn Fn(&str, usize) -> MockReply + Send + Sync;

/// A chat-completion server on an ephemeral port. Each request is handled on
/// its own thread; `max_in_flight` records peak concurrency.
pub struct MockServer {
    pub url: String,
    pub requests: Arc<AtomicUsize>,
    pub max_in_flight: Arc<AtomicUsize>,
    pub in_flight: Arc<AtomicUsize>,
    server: Arc<tiny_http::Server>,
    accept: Option<JoinHandle<()>>,
}

impl MockServer {
    /// `script(user_prompt, request_index)` decides the reply.
    pub fn start(script: Arc<Script>, delay: Duration) -> Self {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").unwrap());
        let port = server.server_addr().to_ip().unwrap().port();
        let requests = Arc::new(AtomicUsize::new(0));
        let max_in_flight = Arc::new(AtomicUsize::new(0));
        let in_flight = Arc::new(AtomicUsize::new(0));
        let accept = {
            let in_flight = in_flight.clone();
            let server = server.clone();
            let requests = requests.clone();
            let max_in_flight = max_in_flight.clone();
            std::thread::spawn(move || {
                for mut rq in server.incoming_requests() {
                    let script = script.clone();
                    let requests = requests.clone();
                    let max_in_flight = max_in_flight.clone();
                    let in_flight = in_flight.clone();
                    std::thread::spawn(move || {
                        let now = in_flight.fetch_add(1, Ordering::SeqCst) + 1;
                        max_in_flight.fetch_max(now, Ordering::SeqCst);
                        let idx = requests.fetch_add(1, Ordering::SeqCst);
                        let mut body = String::new();
                        rq.as_reader().read_to_string(&mut body).unwrap();
                        let v: serde_json::Value = serde_json::from_str(&body).unwrap_or_default();
                        let user = v["messages"][1]["content"].as_str().unwrap_or_default().to_string();
                        let reply = script(&user, idx);
                        std::thread::sleep(delay);
                        let payload = if reply.status == 200 {
                            json!({ "choices": [{ "index": 0, "message": { "role": "assistant", "content": reply.content } }] }).to_string()
                        } else {
                            json!({ "error": reply.content }).to_string()
                        };
                        in_flight.fetch_sub(1, Ordering::SeqCst);
                        let header = tiny_http::Header::from_bytes("Content-Type", "application/json").unwrap();
                        let _ = rq.respond(tiny_http::Response::from_string(payload).with_status_code(reply.status).with_header(header));
                    });
                }
            })
        };
        Self { url: format!("http://127.0.0.1:{port}/v1/chat/completions"), requests, max_in_flight, in_flight, server, accept: Some(accept) }
    }
}

impl MockServer {
    /// Wait for outstanding requests to finish, then clear the peak counter.
    pub fn drain_and_reset_peak(&self) {
        while self.in_flight.load(Ordering::SeqCst) > 0 {
            std::thread::sleep(Duration::from_millis(1));
        }
        self.max_in_flight.store(0, Ordering::SeqCst);
    }

    pub fn peak(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

fn fnv(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Deterministic reply keyed by the prompt. About one prompt in five gets a
/// reply shorter than 50 tokens.
pub fn scripted_reply(user: &str) -> String {
    let h = fnv(user);
    let len = if h.is_multiple_of(5) { 10 + (h >> 8) as usize % 30 } else { 60 + (h >> 8) as usize % 200 };
    let mut out = Vec::with_capacity(len);
    let mut x = h;
    for _ in 0..len {
        x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        out.push(word((x >> 33) as usize % 300));
    }
    out.join(" ")
}

pub fn scripted() -> Arc<Script> {
    Arc::new(|user: &str, _| MockReply { status: 200, content: scripted_reply(user) })
}
