//! Loopback HTTP server for tests and offline runs.
//!
//! Three modes: a canned reply queue, an arbitrary handler closure, and
//! record/replay (record forwards to a real upstream and keeps every
//! exchange; replay answers from such a recording by request equality).

use std::collections::VecDeque;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::ClientError;

/// What the mock answers to one request.
#[derive(Debug, Clone, PartialEq)]
pub enum MockReply {
    /// HTTP 200 with a JSON body.
    Json(Value),
    /// Any status with a raw body.
    Status(u16, String),
    /// Sleep, then answer.
    Delay(Duration, Box<MockReply>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedExchange {
    pub path: String,
    pub request: Value,
    pub status: u16,
    pub response: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Recording {
    pub exchanges: Vec<RecordedExchange>,
}

impl Recording {
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).expect("serializable"))
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }
}

type Handler = Box<dyn Fn(&str, &Value) -> MockReply + Send + Sync>;

pub struct MockServer {
    url: String,
    server: Arc<tiny_http::Server>,
    hits: Arc<AtomicUsize>,
    requests: Arc<Mutex<Vec<(String, Value)>>>,
    recording: Arc<Mutex<Recording>>,
    worker: Option<JoinHandle<()>>,
}

impl std::fmt::Debug for MockServer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockServer").field("url", &self.url).finish()
    }
}

impl MockServer {
    /// Serves `replies` in order; once exhausted, answers HTTP 500.
    pub fn canned(replies: impl IntoIterator<Item = MockReply>) -> Result<Self, ClientError> {
        let queue = Mutex::new(replies.into_iter().collect::<VecDeque<_>>());
        Self::with_handler(move |_, _| {
            queue
                .lock()
                .expect("mock queue lock")
                .pop_front()
                .unwrap_or_else(|| MockReply::Status(500, "mock reply queue exhausted".into()))
        })
    }

    /// Answers every request with `handler(path, json_body)`.
    pub fn with_handler(
        handler: impl Fn(&str, &Value) -> MockReply + Send + Sync + 'static,
    ) -> Result<Self, ClientError> {
        Self::start(Box::new(handler), Arc::new(Mutex::new(Recording::default())))
    }

    /// Replays a recording: each request gets the first unused exchange with
    /// the same path and an equal request body, or HTTP 404.
    pub fn replay(recording: Recording) -> Result<Self, ClientError> {
        let pending = Mutex::new(recording.exchanges);
        Self::with_handler(move |path, body| {
            let mut pending = pending.lock().expect("replay lock");
            match pending.iter().position(|e| e.path == path && e.request == *body) {
                Some(i) => {
                    let e = pending.remove(i);
                    MockReply::Status(e.status, e.response)
                }
                None => MockReply::Status(404, "no recorded exchange matches".into()),
            }
        })
    }

    /// Forwards every request to `upstream` (a base URL) and records it.
    pub fn record(upstream: impl Into<String>) -> Result<Self, ClientError> {
        let upstream = upstream.into();
        let recording = Arc::new(Mutex::new(Recording::default()));
        let sink = recording.clone();
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into();
        let handler = move |path: &str, body: &Value| {
            let url = format!("{}{}", upstream.trim_end_matches('/'), path);
            let (status, response) = match agent.post(&url).send_json(body) {
                Ok(mut r) => (
                    r.status().as_u16(),
                    r.body_mut().read_to_string().unwrap_or_default(),
                ),
                Err(e) => (502, format!("upstream failure: {e}")),
            };
            sink.lock()
                .expect("recording lock")
                .exchanges
                .push(RecordedExchange {
                    path: path.to_string(),
                    request: body.clone(),
                    status,
                    response: response.clone(),
                });
            MockReply::Status(status, response)
        };
        Self::start(Box::new(handler), recording)
    }

    fn start(handler: Handler, recording: Arc<Mutex<Recording>>) -> Result<Self, ClientError> {
        let server = tiny_http::Server::http("127.0.0.1:0")
            .map_err(|e| ClientError::Transport(format!("mock server bind: {e}")))?;
        let port = server
            .server_addr()
            .to_ip()
            .map(|a| a.port())
            .ok_or_else(|| ClientError::Transport("mock server has no IP address".into()))?;
        let server = Arc::new(server);
        let hits = Arc::new(AtomicUsize::new(0));
        let requests = Arc::new(Mutex::new(Vec::new()));
        let worker = {
            let (server, hits, requests) = (server.clone(), hits.clone(), requests.clone());
            std::thread::spawn(move || {
                for mut req in server.incoming_requests() {
                    hits.fetch_add(1, Ordering::SeqCst);
                    let mut raw = String::new();
                    let _ = req.as_reader().read_to_string(&mut raw);
                    let body: Value = serde_json::from_str(&raw).unwrap_or(Value::String(raw));
                    let path = req.url().to_string();
                    requests
                        .lock()
                        .expect("request log")
                        .push((path.clone(), body.clone()));
                    let reply = handler(&path, &body);
                    if matches!(reply, MockReply::Delay(..)) {
                        // Keep serving while this reply waits, so a client that
                        // timed out can retry against the same server.
                        std::thread::spawn(move || respond(req, reply));
                    } else {
                        respond(req, reply);
                    }
                }
            })
        };
        Ok(Self {
            url: format!("http://127.0.0.1:{port}"),
            server,
            hits,
            requests,
            recording,
            worker: Some(worker),
        })
    }

    /// Base URL, e.g. `http://127.0.0.1:PORT`.
    pub fn url(&self) -> &str {
        &self.url
    }

    /// Number of requests received so far.
    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    /// Every `(path, body)` received so far.
    pub fn requests(&self) -> Vec<(String, Value)> {
        self.requests.lock().expect("request log").clone()
    }

    /// Exchanges captured in record mode.
    pub fn recording(&self) -> Recording {
        self.recording.lock().expect("recording lock").clone()
    }
}

fn respond(req: tiny_http::Request, mut reply: MockReply) {
    while let MockReply::Delay(d, inner) = reply {
        std::thread::sleep(d);
        reply = *inner;
    }
    let (status, text) = match reply {
        MockReply::Json(v) => (200, v.to_string()),
        MockReply::Status(s, t) => (s, t),
        MockReply::Delay(..) => unreachable!("delays unwrapped above"),
    };
    let header = tiny_http::Header::from_bytes("Content-Type", "application/json").expect("static header");
    let resp = tiny_http::Response::from_string(text)
        .with_status_code(status)
        .with_header(header);
    // The client may have timed out and gone away.
    let _ = req.respond(resp);
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}
