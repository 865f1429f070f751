use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum LogLevel {
    Debug,
    Info,
    Warn,
    Error,
}

impl LogLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            LogLevel::Debug => "DEBUG",
            LogLevel::Info => "INFO",
            LogLevel::Warn => "WARN",
            LogLevel::Error => "ERROR",
        }
    }
}

impl fmt::Display for LogLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LogLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "DEBUG" => Ok(LogLevel::Debug),
            "INFO" => Ok(LogLevel::Info),
            "WARN" | "WARNING" => Ok(LogLevel::Warn),
            "ERROR" => Ok(LogLevel::Error),
            other => Err(format!("unknown log level `{other}`")),
        }
    }
}

/// One structured log line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEvent {
    pub ts: Timestamp,
    pub service: String,
    pub level: LogLevel,
    pub message: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub correlation: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub fields: BTreeMap<String, String>,
}

impl LogEvent {
    pub fn new(ts: Timestamp, service: &str, level: LogLevel, message: &str) -> Self {
        LogEvent {
            ts,
            service: service.to_string(),
            level,
            message: message.to_string(),
            correlation: BTreeMap::new(),
            fields: BTreeMap::new(),
        }
    }

    pub fn with_id(mut self, kind: &str, value: &str) -> Self {
        self.correlation.insert(kind.to_string(), value.to_string());
        self
    }

    pub fn with_field(mut self, key: &str, value: &str) -> Self {
        self.fields.insert(key.to_string(), value.to_string());
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.service.trim().is_empty() {
            return Err("log event service must be non-empty".into());
        }
        Ok(())
    }
}

/// Position of an event in the append-only store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EventId(pub u64);

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "log:{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredEvent {
    pub id: EventId,
    pub event: LogEvent,
}

impl StoredEvent {
    /// Single-line rendering used in prompts and as grounding evidence.
    pub fn render(&self) -> String {
        let e = &self.event;
        let mut line = format!("[{}] {} {} {} {}", self.id, e.ts, e.service, e.level, e.message);
        for (k, v) in &e.correlation {
            line.push_str(&format!(" {k}={v}"));
        }
        for (k, v) in &e.fields {
            line.push_str(&format!(" {k}={v}"));
        }
        line
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogQuery {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub services: Option<BTreeSet<String>>,
    pub start: Timestamp,
    pub end: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_level: Option<LogLevel>,
    /// `(identifier kind, value)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation: Option<(String, String)>,
    /// Case-sensitive substring of the message.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_match: Option<String>,
    pub limit: usize,
    /// Number of matches to skip; used for result paging.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub offset: usize,
}

fn is_zero(v: &usize) -> bool {
    *v == 0
}

impl LogQuery {
    pub fn range(start: Timestamp, end: Timestamp) -> Self {
        LogQuery {
            services: None,
            start,
            end,
            min_level: None,
            correlation: None,
            text_match: None,
            limit: 1000,
            offset: 0,
        }
    }

    pub fn service(mut self, service: &str) -> Self {
        self.services.get_or_insert_with(BTreeSet::new).insert(service.to_string());
        self
    }

    pub fn min_level(mut self, level: LogLevel) -> Self {
        self.min_level = Some(level);
        self
    }

    pub fn correlated(mut self, kind: &str, value: &str) -> Self {
        self.correlation = Some((kind.to_string(), value.to_string()));
        self
    }

    pub fn text(mut self, needle: &str) -> Self {
        self.text_match = Some(needle.to_string());
        self
    }

    pub fn limit(mut self, limit: usize) -> Self {
        self.limit = limit;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.start > self.end {
            return Err(format!("query start {} is after end {}", self.start.0, self.end.0));
        }
        if self.limit < 1 {
            return Err("query limit must be at least 1".into());
        }
        Ok(())
    }

    /// Conjunction of every present filter.
    pub fn matches(&self, e: &LogEvent) -> bool {
        if e.ts < self.start || e.ts > self.end {
            return false;
        }
        if let Some(services) = &self.services {
            if !services.contains(&e.service) {
                return false;
            }
        }
        if let Some(min) = self.min_level {
            if e.level < min {
                return false;
            }
        }
        if let Some((kind, value)) = &self.correlation {
            if e.correlation.get(kind) != Some(value) {
                return false;
            }
        }
        if let Some(needle) = &self.text_match {
            if !e.message.contains(needle.as_str()) {
                return false;
            }
        }
        true
    }
}

/// Events for one identifier across services, ordered by timestamp.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceChain {
    pub kind: String,
    pub value: String,
    pub events: Vec<StoredEvent>,
    /// Distinct services in order of first appearance.
    pub hops: Vec<String>,
}

impl TraceChain {
    pub fn from_events(kind: &str, value: &str, events: Vec<StoredEvent>) -> Self {
        let mut hops: Vec<String> = Vec::new();
        for e in &events {
            if !hops.contains(&e.event.service) {
                hops.push(e.event.service.clone());
            }
        }
        TraceChain { kind: kind.to_string(), value: value.to_string(), events, hops }
    }

    pub fn depth(&self) -> usize {
        self.hops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}
