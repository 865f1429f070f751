//! Incident workflow engine and operator API.

mod notify;
mod server;
mod workflow;

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::action::ActionRuntime;
use crate::gateway::{Alert, DedupPolicy};
use crate::incident::{Admission, AdmissionKind, IncidentState, IncidentStore, TriageStep};
use crate::knowledge::KnowledgeStore;
use crate::log_agent::AnomalyReport;
use crate::log_agent::LogAgentConfig;
use crate::planner::{ActionPlan, ReasoningTrace};
use crate::reasoner::Reasoner;
use crate::runtime::{Runtime, Semaphore, Task};
use crate::telemetry::TelemetryStore;
use crate::time::SECOND_MS;

pub use notify::{MemoryNotifier, NotificationPayload, Notifier, WebhookNotifier};
pub use server::{router, serve};
pub use workflow::Workflow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FetchMode {
    /// Downstream fetches run as a side task while planning proceeds.
    #[default]
    Parallel,
    /// Downstream fetches run inline during LOG_RETRIEVAL.
    Sequential,
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub workers: usize,
    pub fetch_mode: FetchMode,
    pub approval_poll_ms: i64,
    pub notify_attempts: u32,
    pub notify_backoff_ms: i64,
    pub log: LogAgentConfig,
    pub dedup: DedupPolicy,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            workers: 8,
            fetch_mode: FetchMode::Parallel,
            approval_poll_ms: 5 * SECOND_MS,
            notify_attempts: 3,
            notify_backoff_ms: SECOND_MS,
            log: LogAgentConfig::default(),
            dedup: DedupPolicy::default(),
        }
    }
}

/// Where simulated effort is charged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase<'a> {
    LogRetrieval,
    Planning,
    Tool(&'a str),
}

impl Phase<'_> {
    /// The charge key a cost-model step names to bind to this phase.
    pub fn key(&self) -> String {
        match self {
            Phase::LogRetrieval => "log_retrieval".into(),
            Phase::Planning => "planning".into(),
            Phase::Tool(t) => format!("tool:{t}"),
        }
    }
}

/// Charges modeled effort to the clock. Live deployments charge nothing.
pub trait Pacing: Send + Sync {
    fn charge_ms(&self, incident_id: &str, phase: Phase<'_>) -> i64;
    /// Step list recorded on the incident for effort accounting.
    fn triage_steps(&self, incident_id: &str) -> Vec<TriageStep>;
}

pub struct NoPacing;

impl Pacing for NoPacing {
    fn charge_ms(&self, _: &str, _: Phase<'_>) -> i64 {
        0
    }

    fn triage_steps(&self, _: &str) -> Vec<TriageStep> {
        Vec::new()
    }
}

/// Plan revisions and the final evidence of one incident.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IncidentArtifacts {
    pub plans: Vec<ActionPlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<AnomalyReport>,
}

/// Everything a workflow reads or writes, shared across incidents.
pub struct Services {
    pub telemetry: Arc<TelemetryStore>,
    pub knowledge: Arc<KnowledgeStore>,
    pub actions: Arc<ActionRuntime>,
    pub incidents: Arc<IncidentStore>,
    pub reasoner: Arc<dyn Reasoner>,
    pub notifier: Arc<dyn Notifier>,
    pub pacing: Arc<dyn Pacing>,
    pub config: EngineConfig,
    traces: Mutex<BTreeMap<String, ReasoningTrace>>,
    artifacts: Mutex<BTreeMap<String, IncidentArtifacts>>,
}

impl Services {
    pub fn new(
        telemetry: Arc<TelemetryStore>,
        knowledge: Arc<KnowledgeStore>,
        actions: Arc<ActionRuntime>,
        reasoner: Arc<dyn Reasoner>,
        notifier: Arc<dyn Notifier>,
        config: EngineConfig,
    ) -> Self {
        Services {
            telemetry,
            knowledge,
            actions,
            incidents: Arc::new(IncidentStore::new()),
            reasoner,
            notifier,
            pacing: Arc::new(NoPacing),
            config,
            traces: Mutex::new(BTreeMap::new()),
            artifacts: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn with_pacing(mut self, pacing: Arc<dyn Pacing>) -> Self {
        self.pacing = pacing;
        self
    }

    pub fn trace(&self, incident_id: &str) -> Option<ReasoningTrace> {
        self.traces.lock().unwrap().get(incident_id).cloned()
    }

    fn store_trace(&self, incident_id: &str, trace: &ReasoningTrace) {
        self.traces.lock().unwrap().insert(incident_id.to_string(), trace.clone());
    }

    pub fn artifacts(&self, incident_id: &str) -> Option<IncidentArtifacts> {
        self.artifacts.lock().unwrap().get(incident_id).cloned()
    }

    /// Keeps one entry per plan revision (the latest state of each).
    fn store_artifacts(&self, incident_id: &str, plan: Option<&ActionPlan>, report: Option<&AnomalyReport>) {
        let mut all = self.artifacts.lock().unwrap();
        let a = all.entry(incident_id.to_string()).or_default();
        if let Some(p) = plan {
            match a.plans.last_mut() {
                Some(last) if last.revision == p.revision => *last = p.clone(),
                _ => a.plans.push(p.clone()),
            }
        }
        if let Some(r) = report {
            a.report = Some(r.clone());
        }
    }
}

/// Admits alerts and drives each new incident on its own task, at most
/// `workers` at a time.
pub struct Engine {
    pub services: Arc<Services>,
    rt: Arc<dyn Runtime>,
    slots: Arc<dyn Semaphore>,
}

impl Engine {
    pub fn new(services: Services, rt: Arc<dyn Runtime>) -> Self {
        let slots = rt.semaphore(services.config.workers.max(1));
        Engine { services: Arc::new(services), rt, slots }
    }

    pub fn runtime(&self) -> &Arc<dyn Runtime> {
        &self.rt
    }

    /// Admits the alert and, for a new incident, starts its workflow.
    pub fn handle_alert(&self, alert: Alert) -> Admission {
        self.admit(alert).0
    }

    /// Like [`Engine::handle_alert`], also returning the workflow task.
    pub fn admit(&self, alert: Alert) -> (Admission, Option<Task>) {
        let adm = self.services.incidents.admit(alert, &self.services.config.dedup, self.rt.now());
        let mut task = None;
        if adm.kind == AdmissionKind::Opened {
            let svc = self.services.clone();
            let rt = self.rt.clone();
            let slots = self.slots.clone();
            let id = adm.incident_id.clone();
            task = Some(self.rt.spawn(
                &format!("workflow {id}"),
                Box::new(move || {
                    slots.acquire();
                    drive(&svc, &rt, &id, Some(slots.as_ref()));
                    slots.release();
                }),
            ));
        }
        (adm, task)
    }
}

/// Steps the incident until it is terminal.
pub fn drive(svc: &Services, rt: &Arc<dyn Runtime>, incident_id: &str, slot: Option<&dyn Semaphore>) -> IncidentState {
    let mut wf = Workflow::new(incident_id);
    loop {
        match wf.step(svc, rt, slot) {
            Ok(s) if s.is_terminal() => return s,
            Ok(_) => {}
            Err(_) => return svc.incidents.get(incident_id).map(|r| r.state).unwrap_or(IncidentState::Failed),
        }
    }
}
