//! Alert intake: wire parsing, normalization and deduplication.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Severity {
    Info,
    Warn,
    Error,
    Critical,
}

impl FromStr for Severity {
    type Err = GatewayError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "INFO" => Ok(Severity::Info),
            "WARN" => Ok(Severity::Warn),
            "ERROR" => Ok(Severity::Error),
            "CRITICAL" => Ok(Severity::Critical),
            other => Err(GatewayError::UnknownSeverity(other.to_string())),
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Info => "INFO",
            Severity::Warn => "WARN",
            Severity::Error => "ERROR",
            Severity::Critical => "CRITICAL",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alert {
    pub alert_id: String,
    pub service: String,
    pub alert_type: String,
    pub severity: Severity,
    pub fired_at: Timestamp,
    /// Identifier kind (`session_id`, `request_id`, ...) to value.
    #[serde(default)]
    pub correlation: BTreeMap<String, String>,
    #[serde(default)]
    pub payload: BTreeMap<String, String>,
    pub monitor: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GatewayError {
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("unknown severity `{0}`")]
    UnknownSeverity(String),
}

impl GatewayError {
    pub fn code(&self) -> &'static str {
        match self {
            GatewayError::MalformedPayload(_) => "MALFORMED_PAYLOAD",
            GatewayError::SchemaViolation(_) => "SCHEMA_VIOLATION",
            GatewayError::UnknownSeverity(_) => "UNKNOWN_SEVERITY",
        }
    }
}

/// Where `fired_at` comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockSource {
    /// Use the payload value (replay).
    Payload,
    /// Stamp with the given time (live intake).
    Stamp(Timestamp),
}

fn required_str<'a>(obj: &'a serde_json::Map<String, Value>, key: &str) -> Result<&'a str, GatewayError> {
    match obj.get(key) {
        Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.trim()),
        Some(Value::String(_)) | None | Some(Value::Null) => {
            Err(GatewayError::SchemaViolation(format!("missing required field `{key}`")))
        }
        Some(_) => Err(GatewayError::SchemaViolation(format!("field `{key}` must be a string"))),
    }
}

fn value_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn string_map(obj: &serde_json::Map<String, Value>, key: &str) -> Result<BTreeMap<String, String>, GatewayError> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(BTreeMap::new()),
        Some(Value::Object(m)) => {
            Ok(m.iter().filter(|(_, v)| !v.is_null()).map(|(k, v)| (k.clone(), value_text(v))).collect())
        }
        Some(_) => Err(GatewayError::SchemaViolation(format!("field `{key}` must be an object"))),
    }
}

/// Parses and validates one wire alert. A missing `alert_id` is synthesized
/// from monitor, service, fired_at and a random suffix drawn from `rng`.
pub fn ingest_alert(raw: &[u8], clock: ClockSource, rng: &mut impl Rng) -> Result<Alert, GatewayError> {
    let doc: Value = serde_json::from_slice(raw).map_err(|e| GatewayError::MalformedPayload(e.to_string()))?;
    let Value::Object(obj) = doc else {
        return Err(GatewayError::MalformedPayload("expected a JSON object".into()));
    };
    let service = required_str(&obj, "service")?.to_string();
    let alert_type = required_str(&obj, "alert_type")?.to_string();
    let severity: Severity = required_str(&obj, "severity")?.parse()?;
    let v = obj
        .get("fired_at")
        .filter(|v| !v.is_null())
        .ok_or_else(|| GatewayError::SchemaViolation("missing required field `fired_at`".into()))?;
    let sent_at =
        Timestamp::from_wire(v).ok_or_else(|| GatewayError::SchemaViolation(format!("unparseable fired_at {v}")))?;
    let fired_at = match clock {
        ClockSource::Stamp(now) => now,
        ClockSource::Payload => sent_at,
    };
    let monitor = match obj.get("monitor") {
        Some(Value::String(s)) if !s.trim().is_empty() => s.trim().to_string(),
        _ => format!("{service}/{alert_type}"),
    };
    let correlation = string_map(&obj, "correlation")?;
    let payload = string_map(&obj, "payload")?;
    let alert_id = match obj.get("alert_id") {
        Some(Value::String(s)) if !s.trim().is_empty() => s.trim().to_string(),
        None | Some(Value::Null) | Some(Value::String(_)) => {
            format!("{monitor}:{service}:{}:{:08x}", fired_at.0, rng.random::<u32>())
        }
        Some(_) => return Err(GatewayError::SchemaViolation("field `alert_id` must be a string".into())),
    };
    Ok(Alert { alert_id, service, alert_type, severity, fired_at, correlation, payload, monitor })
}

impl Alert {
    /// Wire encoding accepted by [`ingest_alert`].
    pub fn to_wire(&self) -> Value {
        serde_json::json!({
            "alert_id": self.alert_id,
            "service": self.service,
            "alert_type": self.alert_type,
            "severity": self.severity,
            "fired_at": self.fired_at.to_rfc3339(),
            "monitor": self.monitor,
            "correlation": self.correlation,
            "payload": self.payload,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DedupRule {
    Independent,
    Windowed { window_seconds: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupPolicy {
    #[serde(default = "default_rule")]
    pub default: DedupRule,
    #[serde(default)]
    pub per_alert_type: BTreeMap<String, DedupRule>,
}

fn default_rule() -> DedupRule {
    DedupRule::Windowed { window_seconds: 300 }
}

impl Default for DedupPolicy {
    fn default() -> Self {
        DedupPolicy { default: default_rule(), per_alert_type: BTreeMap::new() }
    }
}

impl DedupPolicy {
    pub fn with_rule(mut self, alert_type: &str, rule: DedupRule) -> Self {
        self.per_alert_type.insert(alert_type.to_string(), rule);
        self
    }

    pub fn rule_for(&self, alert_type: &str) -> DedupRule {
        self.per_alert_type.get(alert_type).copied().unwrap_or(self.default)
    }
}

/// What dedup needs to know about an open incident.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpenIncident {
    pub incident_id: String,
    pub service: String,
    pub alert_type: String,
    pub first_fired_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DedupDecision {
    NewIncident,
    Attach(String),
}

/// Attaches to the first listed open incident with the same
/// `(service, alert_type)` whose first alert fired no more than the window
/// before this one.
pub fn deduplicate(alert: &Alert, policy: &DedupPolicy, open: &[OpenIncident]) -> DedupDecision {
    let DedupRule::Windowed { window_seconds } = policy.rule_for(&alert.alert_type) else {
        return DedupDecision::NewIncident;
    };
    let window_ms = (window_seconds as i64).saturating_mul(1000);
    open.iter()
        .find(|o| {
            o.service == alert.service
                && o.alert_type == alert.alert_type
                && alert.fired_at >= o.first_fired_at
                && alert.fired_at.0 - o.first_fired_at.0 <= window_ms
        })
        .map(|o| DedupDecision::Attach(o.incident_id.clone()))
        .unwrap_or(DedupDecision::NewIncident)
}

/// Thread-safe front door owning the id-synthesis RNG.
pub struct Gateway {
    rng: Mutex<ChaCha8Rng>,
}

impl Gateway {
    pub fn new(seed: u64) -> Self {
        Gateway { rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)) }
    }

    pub fn ingest(&self, raw: &[u8], clock: ClockSource) -> Result<Alert, GatewayError> {
        ingest_alert(raw, clock, &mut *self.rng.lock().unwrap())
    }
}
