//! Summary delivery to a chat webhook.

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::summary::DiagnosticSummary;
use crate::time::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NotificationPayload {
    pub incident_id: String,
    pub text: String,
    pub findings: BTreeMap<String, String>,
    pub posted_at: Timestamp,
}

impl NotificationPayload {
    pub fn from_summary(s: &DiagnosticSummary, posted_at: Timestamp) -> Self {
        NotificationPayload {
            incident_id: s.incident_id.clone(),
            text: s.render_text(),
            findings: s.findings.clone(),
            posted_at,
        }
    }
}

pub trait Notifier: Send + Sync {
    fn deliver(&self, payload: &NotificationPayload) -> Result<(), String>;
}

/// POSTs the payload as JSON.
pub struct WebhookNotifier {
    url: String,
    agent: ureq::Agent,
}

impl WebhookNotifier {
    pub fn new(url: &str, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        WebhookNotifier { url: url.to_string(), agent }
    }
}

impl Notifier for WebhookNotifier {
    fn deliver(&self, payload: &NotificationPayload) -> Result<(), String> {
        self.agent.post(&self.url).send_json(payload).map(|_| ()).map_err(|e| e.to_string())
    }
}

/// Keeps delivered payloads in memory; can be told to fail the next N calls.
#[derive(Default)]
pub struct MemoryNotifier {
    inner: Mutex<(Vec<NotificationPayload>, u32)>,
}

impl MemoryNotifier {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn failing(n: u32) -> Self {
        MemoryNotifier { inner: Mutex::new((Vec::new(), n)) }
    }

    pub fn delivered(&self) -> Vec<NotificationPayload> {
        self.inner.lock().unwrap().0.clone()
    }
}

impl Notifier for MemoryNotifier {
    fn deliver(&self, payload: &NotificationPayload) -> Result<(), String> {
        let mut g = self.inner.lock().unwrap();
        if g.1 > 0 {
            g.1 -= 1;
            return Err("sink unavailable".into());
        }
        g.0.push(payload.clone());
        Ok(())
    }
}
