//! Minimal JSON-over-HTTP client shared by the remote backends.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

struct Slots {
    used: Mutex<usize>,
    freed: Condvar,
    max: usize,
}

struct Permit<'a>(&'a Slots);

impl Slots {
    fn acquire(&self) -> Permit<'_> {
        let mut used = self.used.lock().unwrap_or_else(|e| e.into_inner());
        while *used >= self.max {
            used = self.freed.wait(used).unwrap_or_else(|e| e.into_inner());
        }
        *used += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut used = self.0.used.lock().unwrap_or_else(|e| e.into_inner());
        *used -= 1;
        self.0.freed.notify_one();
    }
}

/// Cheap to clone; clones share the in-flight limit.
#[derive(Clone)]
pub struct JsonClient {
    endpoint: String,
    agent: ureq::Agent,
    slots: Arc<Slots>,
    retries: usize,
}

impl std::fmt::Debug for JsonClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JsonClient")
            .field("endpoint", &self.endpoint)
            .field("max_in_flight", &self.slots.max)
            .finish()
    }
}

impl JsonClient {
    pub fn new(endpoint: &str) -> Self {
        Self::with_limits(endpoint, DEFAULT_TIMEOUT, DEFAULT_MAX_IN_FLIGHT)
    }

    pub fn with_limits(endpoint: &str, timeout: Duration, max_in_flight: usize) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        JsonClient {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            agent,
            slots: Arc::new(Slots {
                used: Mutex::new(0),
                freed: Condvar::new(),
                max: max_in_flight.max(1),
            }),
            retries: 1,
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    /// POSTs `body` to `path`, retrying once on any failure.
    pub fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R> {
        let payload = serde_json::to_string(body)?;
        let url = format!("{}{}", self.endpoint, path);
        let mut last = None;
        for _ in 0..=self.retries {
            match self.once(&url, &payload) {
                Ok(text) => match serde_json::from_str(&text) {
                    Ok(v) => return Ok(v),
                    Err(e) => last = Some(Error::Protocol(format!("{url}: malformed response: {e}"))),
                },
                Err(e) => last = Some(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }

    fn once(&self, url: &str, payload: &str) -> Result<String> {
        let _permit = self.slots.acquire();
        let mut resp = self
            .agent
            .post(url)
            .header("content-type", "application/json")
            .send(payload)
            .map_err(|e| Error::Protocol(format!("{url}: {e}")))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::Protocol(format!("{url}: {e}")))?;
        if !(200..300).contains(&status) {
            return Err(Error::Protocol(format!("{url}: status {status}")));
        }
        Ok(text)
    }
}
