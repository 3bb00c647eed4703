//! The single network boundary.

use std::sync::Mutex;
use std::time::Duration;

use super::IngestError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

pub trait Transport: Send + Sync {
    fn get(&self, url: &str) -> Result<HttpResponse, IngestError>;
}

/// Blocking HTTPS client.
pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        Self { agent: config.into() }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(60))
    }
}

impl Transport for UreqTransport {
    fn get(&self, url: &str) -> Result<HttpResponse, IngestError> {
        let mut resp = self.agent.get(url).call().map_err(|e| IngestError::Network(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| IngestError::Network(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

/// Refuses every request.
#[derive(Debug, Default, Clone, Copy)]
pub struct OfflineTransport;

impl Transport for OfflineTransport {
    fn get(&self, url: &str) -> Result<HttpResponse, IngestError> {
        Err(IngestError::Network(format!("network disabled, refused {}", redact(url))))
    }
}

/// Canned responses keyed by URL substring; records every request.
#[derive(Debug, Default)]
pub struct RecordingTransport {
    routes: Vec<(String, HttpResponse)>,
    calls: Mutex<Vec<String>>,
}

impl RecordingTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn respond(mut self, url_contains: impl Into<String>, status: u16, body: impl Into<String>) -> Self {
        self.routes.push((url_contains.into(), HttpResponse { status, body: body.into() }));
        self
    }

    pub fn calls(&self) -> Vec<String> {
        self.calls.lock().expect("transport log poisoned").clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().expect("transport log poisoned").len()
    }
}

impl Transport for RecordingTransport {
    fn get(&self, url: &str) -> Result<HttpResponse, IngestError> {
        self.calls.lock().expect("transport log poisoned").push(url.to_string());
        self.routes
            .iter()
            .find(|(pat, _)| url.contains(pat.as_str()))
            .map(|(_, r)| r.clone())
            .ok_or_else(|| IngestError::Network(format!("no canned response for {}", redact(url))))
    }
}

/// Drops any `api_key` query parameter.
pub fn redact(url: &str) -> String {
    let Some((base, query)) = url.split_once('?') else {
        return url.to_string();
    };
    let kept: Vec<&str> = query.split('&').filter(|kv| !kv.starts_with("api_key=")).collect();
    if kept.is_empty() {
        base.to_string()
    } else {
        format!("{base}?{}", kept.join("&"))
    }
}
