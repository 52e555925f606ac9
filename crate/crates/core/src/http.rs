//! Blocking JSON-over-HTTP client shared by the remote linker, knowledge
//! store and embedding provider.

use std::{
    sync::atomic::{AtomicBool, AtomicU64, Ordering},
    time::Duration,
};

use serde::Serialize;

use crate::error::{Error, Result};

const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

pub struct HttpResponse {
    pub status: u16,
    pub body: Vec<u8>,
}

impl HttpResponse {
    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

pub struct HttpClient {
    agent: ureq::Agent,
    requests: AtomicU64,
    offline: AtomicBool,
}

impl Default for HttpClient {
    fn default() -> Self {
        Self::new(DEFAULT_TIMEOUT)
    }
}

impl HttpClient {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .new_agent();
        Self {
            agent,
            requests: AtomicU64::new(0),
            offline: AtomicBool::new(false),
        }
    }

    /// Number of requests that actually reached the network layer.
    pub fn requests_issued(&self) -> u64 {
        self.requests.load(Ordering::SeqCst)
    }

    /// While offline every request fails with a transport error before any
    /// socket is opened.
    pub fn set_offline(&self, offline: bool) {
        self.offline.store(offline, Ordering::SeqCst);
    }

    fn guard(&self, url: &str) -> Result<()> {
        if self.offline.load(Ordering::SeqCst) {
            return Err(Error::Transport(format!("network disabled, refusing {url}")));
        }
        self.requests.fetch_add(1, Ordering::SeqCst);
        Ok(())
    }

    pub fn post_json(&self, url: &str, body: &impl Serialize) -> Result<HttpResponse> {
        self.guard(url)?;
        let payload = serde_json::to_vec(body).map_err(|e| Error::Input(e.to_string()))?;
        let resp = self
            .agent
            .post(url)
            .header("content-type", "application/json")
            .send(&payload[..])
            .map_err(|e| Error::Transport(format!("POST {url}: {e}")))?;
        read(url, resp)
    }

    pub fn get(&self, url: &str, query: &[(&str, &str)]) -> Result<HttpResponse> {
        self.guard(url)?;
        let resp = self
            .agent
            .get(url)
            .query_pairs(query.iter().copied())
            .call()
            .map_err(|e| Error::Transport(format!("GET {url}: {e}")))?;
        read(url, resp)
    }
}

fn read(url: &str, resp: ureq::http::Response<ureq::Body>) -> Result<HttpResponse> {
    let status = resp.status().as_u16();
    let body = resp
        .into_body()
        .with_config()
        .limit(256 * 1024 * 1024)
        .read_to_vec()
        .map_err(|e| Error::Transport(format!("reading body of {url}: {e}")))?;
    Ok(HttpResponse { status, body })
}

/// Maps a non-success status to an error: 5xx is retryable transport
/// trouble, anything else is a protocol violation.
pub(crate) fn status_error(what: &str, resp: &HttpResponse) -> Error {
    let snippet = String::from_utf8_lossy(&resp.body[..resp.body.len().min(200)]).into_owned();
    if resp.status >= 500 {
        Error::Transport(format!("{what}: HTTP {}: {snippet}", resp.status))
    } else {
        Error::Protocol(format!("{what}: HTTP {}: {snippet}", resp.status))
    }
}

pub(crate) fn join(endpoint: &str, path: &str) -> String {
    format!("{}/{}", endpoint.trim_end_matches('/'), path.trim_start_matches('/'))
}
