//! Incident records, lifecycle states and the incident store.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{deduplicate, Alert, DedupDecision, DedupPolicy, OpenIncident};
use crate::summary::DiagnosticSummary;
use crate::time::Timestamp;

pub const MAX_REFLECTION_CYCLES: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IncidentState {
    Received,
    LogRetrieval,
    Planning,
    Executing,
    Reflecting,
    Summarized,
    Notified,
    Closed,
    Failed,
}

impl IncidentState {
    pub const ALL: [IncidentState; 9] = [
        IncidentState::Received,
        IncidentState::LogRetrieval,
        IncidentState::Planning,
        IncidentState::Executing,
        IncidentState::Reflecting,
        IncidentState::Summarized,
        IncidentState::Notified,
        IncidentState::Closed,
        IncidentState::Failed,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, IncidentState::Closed | IncidentState::Failed)
    }

    pub fn can_transition(self, to: IncidentState) -> bool {
        use IncidentState::*;
        if self.is_terminal() {
            return false;
        }
        if to == Failed {
            return true;
        }
        matches!(
            (self, to),
            (Received, LogRetrieval)
                | (LogRetrieval, Planning)
                | (Planning, Executing)
                | (Executing, Reflecting)
                | (Reflecting, Planning)
                | (Reflecting, Summarized)
                | (Summarized, Notified)
                | (Notified, Closed)
        )
    }

    pub fn as_str(self) -> &'static str {
        use IncidentState::*;
        match self {
            Received => "RECEIVED",
            LogRetrieval => "LOG_RETRIEVAL",
            Planning => "PLANNING",
            Executing => "EXECUTING",
            Reflecting => "REFLECTING",
            Summarized => "SUMMARIZED",
            Notified => "NOTIFIED",
            Closed => "CLOSED",
            Failed => "FAILED",
        }
    }
}

impl fmt::Display for IncidentState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for IncidentState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_uppercase();
        IncidentState::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown incident state `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseEntry {
    pub state: IncidentState,
    pub entered_at: Timestamp,
}

/// Who triaged the incident. Manual records only carry the
/// RECEIVED, SUMMARIZED, CLOSED milestones of a human investigation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    #[default]
    Agent,
    Manual,
}

/// One triage step with the minutes it cost and whether the agent did it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageStep {
    pub label: String,
    pub minutes: f64,
    pub automated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NotificationReceipt {
    pub attempts: u32,
    pub delivered: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posted_at: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentRecord {
    pub incident_id: String,
    #[serde(default)]
    pub origin: Origin,
    /// The opening alert first, then any attached by dedup.
    pub alerts: Vec<Alert>,
    pub state: IncidentState,
    pub phase_timeline: Vec<PhaseEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<DiagnosticSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verified_root_cause: Option<String>,
    pub reflection_cycles_used: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub triage_steps: Vec<TriageStep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notification: Option<NotificationReceipt>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl IncidentRecord {
    pub fn new(incident_id: String, alert: Alert, opened_at: Timestamp) -> Self {
        IncidentRecord {
            incident_id,
            origin: Origin::Agent,
            alerts: vec![alert],
            state: IncidentState::Received,
            phase_timeline: vec![PhaseEntry { state: IncidentState::Received, entered_at: opened_at }],
            summary: None,
            verified_root_cause: None,
            reflection_cycles_used: 0,
            triage_steps: Vec::new(),
            notification: None,
            failure: None,
            notes: Vec::new(),
        }
    }

    pub fn first_alert(&self) -> &Alert {
        &self.alerts[0]
    }

    pub fn fired_at(&self) -> Timestamp {
        self.first_alert().fired_at
    }

    pub fn alert_ids(&self) -> Vec<&str> {
        self.alerts.iter().map(|a| a.alert_id.as_str()).collect()
    }

    pub fn entered_at(&self, state: IncidentState) -> Option<Timestamp> {
        self.phase_timeline.iter().find(|p| p.state == state).map(|p| p.entered_at)
    }

    /// Applies one transition, enforcing legality and timeline monotonicity.
    pub fn advance(&mut self, to: IncidentState, at: Timestamp) -> Result<(), IncidentError> {
        if self.state.is_terminal() {
            return Err(IncidentError::TerminalState(self.incident_id.clone()));
        }
        if !self.state.can_transition(to) {
            return Err(IncidentError::IllegalTransition { from: self.state, to });
        }
        if to == IncidentState::Summarized && self.summary.is_none() {
            return Err(IncidentError::Invariant("SUMMARIZED without a summary".into()));
        }
        let last = self.phase_timeline.last().map(|p| p.entered_at).unwrap_or(Timestamp::MIN);
        if at < last {
            return Err(IncidentError::Invariant(format!("timeline would go backwards ({at} < {last})")));
        }
        self.state = to;
        self.phase_timeline.push(PhaseEntry { state: to, entered_at: at });
        Ok(())
    }

    pub fn fail(&mut self, reason: &str, at: Timestamp) {
        if self.state.is_terminal() {
            return;
        }
        let last = self.phase_timeline.last().map(|p| p.entered_at).unwrap_or(at);
        self.state = IncidentState::Failed;
        self.phase_timeline.push(PhaseEntry { state: IncidentState::Failed, entered_at: at.max(last) });
        self.failure = Some(reason.to_string());
    }

    /// Checks the record-level invariants. Transition legality is checked for
    /// agent records only.
    pub fn check_invariants(&self) -> Result<(), String> {
        let Some(first) = self.phase_timeline.first() else {
            return Err("empty timeline".into());
        };
        if first.state != IncidentState::Received {
            return Err(format!("first timeline state is {}", first.state));
        }
        if self.alerts.is_empty() {
            return Err("no alerts".into());
        }
        for w in self.phase_timeline.windows(2) {
            if w[1].entered_at < w[0].entered_at {
                return Err(format!("timeline decreases at {}", w[1].state));
            }
            if self.origin == Origin::Agent && !w[0].state.can_transition(w[1].state) {
                return Err(format!("illegal transition {} -> {}", w[0].state, w[1].state));
            }
        }
        if self.phase_timeline.last().map(|p| p.state) != Some(self.state) {
            return Err("state disagrees with timeline".into());
        }
        let reached_summary = self.phase_timeline.iter().any(|p| p.state == IncidentState::Summarized);
        if reached_summary && self.summary.is_none() {
            return Err("SUMMARIZED without summary".into());
        }
        if self.reflection_cycles_used > MAX_REFLECTION_CYCLES {
            return Err(format!("{} reflection cycles", self.reflection_cycles_used));
        }
        if let Some(s) = &self.summary {
            if s.produced_at < self.fired_at() {
                return Err("summary produced before the alert fired".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IncidentError {
    #[error("unknown incident `{0}`")]
    UnknownIncident(String),
    #[error("incident `{0}` is in a terminal state")]
    TerminalState(String),
    #[error("illegal transition {from} -> {to}")]
    IllegalTransition { from: IncidentState, to: IncidentState },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("storage failure: {0}")]
    StorageFailure(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdmissionKind {
    Opened,
    Attached,
    /// The alert_id was already admitted; nothing changed.
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Admission {
    pub incident_id: String,
    pub kind: AdmissionKind,
}

#[derive(Default)]
struct Inner {
    records: BTreeMap<String, IncidentRecord>,
    by_alert: HashMap<String, String>,
    next_seq: u64,
}

/// All incident records. Admission (idempotency check, dedup decision and
/// open/attach) happens under one lock so concurrent alerts for the same key
/// cannot both open an incident.
#[derive(Default)]
pub struct IncidentStore {
    inner: Mutex<Inner>,
}

impl IncidentStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn admit(&self, alert: Alert, policy: &DedupPolicy, at: Timestamp) -> Admission {
        let mut inner = self.inner.lock().unwrap();
        if let Some(id) = inner.by_alert.get(&alert.alert_id) {
            return Admission { incident_id: id.clone(), kind: AdmissionKind::Duplicate };
        }
        let open: Vec<OpenIncident> = inner
            .records
            .values()
            .filter(|r| !r.state.is_terminal() && r.origin == Origin::Agent)
            .map(|r| OpenIncident {
                incident_id: r.incident_id.clone(),
                service: r.first_alert().service.clone(),
                alert_type: r.first_alert().alert_type.clone(),
                first_fired_at: r.fired_at(),
            })
            .collect();
        match deduplicate(&alert, policy, &open) {
            DedupDecision::Attach(id) => {
                inner.by_alert.insert(alert.alert_id.clone(), id.clone());
                inner.records.get_mut(&id).expect("open incident exists").alerts.push(alert);
                Admission { incident_id: id, kind: AdmissionKind::Attached }
            }
            DedupDecision::NewIncident => {
                let id = Self::open_locked(&mut inner, alert, at);
                Admission { incident_id: id, kind: AdmissionKind::Opened }
            }
        }
    }

    /// Opens an incident without dedup.
    pub fn open_incident(&self, alert: Alert, at: Timestamp) -> Result<String, IncidentError> {
        let mut inner = self.inner.lock().unwrap();
        if inner.by_alert.contains_key(&alert.alert_id) {
            return Err(IncidentError::StorageFailure(format!("alert `{}` already admitted", alert.alert_id)));
        }
        Ok(Self::open_locked(&mut inner, alert, at))
    }

    fn open_locked(inner: &mut Inner, alert: Alert, at: Timestamp) -> String {
        inner.next_seq += 1;
        let id = format!("inc-{:06}", inner.next_seq);
        inner.by_alert.insert(alert.alert_id.clone(), id.clone());
        inner.records.insert(id.clone(), IncidentRecord::new(id.clone(), alert, at));
        id
    }

    /// Inserts a prebuilt record (imports, manual cohorts).
    pub fn insert(&self, record: IncidentRecord) -> Result<(), IncidentError> {
        record.check_invariants().map_err(IncidentError::Invariant)?;
        let mut inner = self.inner.lock().unwrap();
        for a in &record.alerts {
            inner.by_alert.insert(a.alert_id.clone(), record.incident_id.clone());
        }
        inner.records.insert(record.incident_id.clone(), record);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<IncidentRecord> {
        self.inner.lock().unwrap().records.get(id).cloned()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Snapshots in incident_id order, optionally filtered by state.
    pub fn list(&self, state: Option<IncidentState>) -> Vec<IncidentRecord> {
        self.inner.lock().unwrap().records.values().filter(|r| state.is_none_or(|s| r.state == s)).cloned().collect()
    }

    pub fn update<T>(
        &self,
        id: &str,
        f: impl FnOnce(&mut IncidentRecord) -> Result<T, IncidentError>,
    ) -> Result<T, IncidentError> {
        let mut inner = self.inner.lock().unwrap();
        let rec = inner.records.get_mut(id).ok_or_else(|| IncidentError::UnknownIncident(id.to_string()))?;
        f(rec)
    }

    pub fn transition(&self, id: &str, to: IncidentState, at: Timestamp) -> Result<(), IncidentError> {
        self.update(id, |r| r.advance(to, at))
    }

    pub fn write_ndjson(&self, path: &Path) -> Result<(), IncidentError> {
        write_ndjson(path, &self.list(None))
    }
}

pub fn to_ndjson(records: &[IncidentRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_ndjson(path: &Path, records: &[IncidentRecord]) -> Result<(), IncidentError> {
    let io = |e: std::io::Error| IncidentError::StorageFailure(format!("{}: {e}", path.display()));
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(to_ndjson(records).as_bytes()).map_err(io)?;
    w.flush().map_err(io)
}

pub fn read_ndjson(path: &Path) -> Result<Vec<IncidentRecord>, IncidentError> {
    let io = |e: std::io::Error| IncidentError::StorageFailure(format!("{}: {e}", path.display()));
    let file = File::open(path).map_err(io)?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: IncidentRecord = serde_json::from_str(&line)
            .map_err(|e| IncidentError::StorageFailure(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}
