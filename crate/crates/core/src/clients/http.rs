use std::thread::sleep;

use log::{debug, warn};
use serde_json::Value;

use super::wire::{ChatRequest, ChatResponse, WireResponse};
use super::{ApiKey, ClientConfig, ClientError};

/// Blocking chat-completions client. Cloning is cheap and clones share the
/// connection pool, so one handle can serve concurrent rollouts.
#[derive(Debug, Clone)]
pub struct ChatClient {
    cfg: ClientConfig,
    agent: ureq::Agent,
    key: Option<ApiKey>,
}

enum Attempt {
    Done(String),
    Retry(String),
    Fatal(ClientError),
}

impl ChatClient {
    pub fn new(cfg: ClientConfig) -> Result<Self, ClientError> {
        let key = cfg.api_key_env.as_deref().map(ApiKey::from_env).transpose()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { cfg, agent, key })
    }

    pub fn config(&self) -> &ClientConfig {
        &self.cfg
    }

    /// Sends `req` to `<base_url>/chat/completions`.
    pub fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, ClientError> {
        self.chat_counted(req).map(|(r, _)| r)
    }

    /// Like [`chat`](Self::chat), also returning how many HTTP attempts it took.
    pub fn chat_counted(&self, req: &ChatRequest) -> Result<(ChatResponse, u32), ClientError> {
        req.validate()?;
        let body = serde_json::to_value(req).expect("requests serialize");
        let (text, attempts) = self.post_with_retries("chat/completions", &body)?;
        let resp = WireResponse::parse(&text)?.to_response()?;
        Ok((resp, attempts))
    }

    /// POSTs JSON to `<base_url>/<path>` (or `base_url` itself when `path` is
    /// empty) with retries on timeouts, connection failures, 429 and 5xx.
    pub fn post_with_retries(&self, path: &str, body: &Value) -> Result<(String, u32), ClientError> {
        let url = if path.is_empty() {
            self.cfg.base_url.clone()
        } else {
            format!("{}/{}", self.cfg.base_url.trim_end_matches('/'), path)
        };
        let mut last = String::new();
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 && !self.cfg.backoff.is_empty() {
                let i = (attempt as usize - 1).min(self.cfg.backoff.len() - 1);
                sleep(self.cfg.backoff[i]);
            }
            debug!("POST {url} (attempt {})", attempt + 1);
            match self.attempt(&url, body) {
                Attempt::Done(text) => return Ok((text, attempt + 1)),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(reason) => {
                    warn!("POST {url} failed: {reason}");
                    last = reason;
                }
            }
        }
        Err(ClientError::RetriesExhausted {
            attempts: self.cfg.max_retries + 1,
            last,
        })
    }

    fn attempt(&self, url: &str, body: &Value) -> Attempt {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = &self.key {
            req = req.header("Authorization", format!("Bearer {}", key.expose()));
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(format!("transport: {e}")),
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(format!("reading body: {e}")),
        };
        match status {
            200..=299 => Attempt::Done(text),
            401 | 403 => Attempt::Fatal(ClientError::Auth(status)),
            429 | 500..=599 => Attempt::Retry(format!("HTTP {status}")),
            _ => Attempt::Fatal(ClientError::Http { status, body: text }),
        }
    }
}
