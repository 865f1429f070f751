//! Drives a generated scenario through the engine on the simulated clock.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use thiserror::Error;

use crate::action::{audit, ActionRuntime, AuditEntry, AuditReport, Decision, Risk};
use crate::gateway::{ClockSource, Gateway};
use crate::incident::{IncidentRecord, IncidentState, Origin, PhaseEntry};
use crate::knowledge::{KnowledgeDoc, KnowledgeStore};
use crate::orchestrator::{Engine, EngineConfig, FetchMode, IncidentArtifacts, MemoryNotifier, Services};
use crate::planner::ReasoningTrace;
use crate::reasoner::{RuleTable, ScriptedReasoner};
use crate::runtime::{Runtime, SimRuntime, Task};
use crate::scenario::{generate, manual_cost, register_scenario_tools, Corpus, CostPacing, ScenarioSpec, World};
use crate::summary::{DiagnosticSummary, Hypothesis, HypothesisKind, RecommendedAction};
use crate::telemetry::{RateLimitConfig, TelemetryStore};
use crate::time::SECOND_MS;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Scenario(#[from] crate::scenario::ScenarioError),
    #[error("rules: {0}")]
    Rules(String),
    #[error("knowledge: {0}")]
    Knowledge(String),
    #[error("setup: {0}")]
    Setup(String),
    #[error("simulation: {0}")]
    Simulation(String),
}

/// Scenario plus everything it references, loaded up front.
#[derive(Clone)]
pub struct ReplayInputs {
    pub spec: ScenarioSpec,
    pub rules: RuleTable,
    pub docs: Vec<KnowledgeDoc>,
}

impl ReplayInputs {
    /// Loads the scenario file and resolves its rule table and knowledge
    /// directory relative to it.
    pub fn load(path: &Path) -> Result<Self, ReplayError> {
        let spec = ScenarioSpec::load(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
        let rules = RuleTable::load(&base.join(&spec.reasoner_rules)).map_err(|e| ReplayError::Rules(e.to_string()))?;
        let mut docs = Vec::new();
        if let Some(dir) = &spec.knowledge {
            let kb = KnowledgeStore::new();
            kb.load_dir(&base.join(dir)).map_err(|e| ReplayError::Knowledge(e.to_string()))?;
            docs = kb.docs();
        }
        Ok(ReplayInputs { spec, rules, docs })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ApprovalMode {
    /// A simulated operator approves every request `delay_ms` after it is
    /// raised.
    Auto { delay_ms: i64, actor: String },
    /// Nobody answers; requests expire.
    Disabled,
}

impl Default for ApprovalMode {
    fn default() -> Self {
        ApprovalMode::Auto { delay_ms: 30 * SECOND_MS, actor: "sim-oncall".into() }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ReplayOptions {
    /// Overrides the scenario's seed.
    pub seed: Option<u64>,
    pub fetch_mode: FetchMode,
    pub rate_limit: Option<RateLimitConfig>,
    pub approval: ApprovalMode,
    /// Overrides the default worker count.
    pub workers: Option<usize>,
}

pub struct ReplayOutcome {
    pub seed: u64,
    pub corpus: Corpus,
    /// Agent cohort, in incident-id order.
    pub agent: Vec<IncidentRecord>,
    /// Manual baseline: one record per alert that fired.
    pub manual: Vec<IncidentRecord>,
    pub artifacts: BTreeMap<String, IncidentArtifacts>,
    pub traces: BTreeMap<String, ReasoningTrace>,
    pub audit_log: Vec<AuditEntry>,
    pub tool_risks: BTreeMap<String, Risk>,
    /// Alerts not sent because a remediation had already silenced them.
    pub suppressed: usize,
    pub wall_ms: u128,
}

impl ReplayOutcome {
    pub fn audit(&self) -> AuditReport {
        audit(&self.audit_log, &self.tool_risks)
    }
}

pub fn replay(inputs: &ReplayInputs, opts: &ReplayOptions) -> Result<ReplayOutcome, ReplayError> {
    let started = Instant::now();
    let spec = &inputs.spec;
    let seed = opts.seed.unwrap_or(spec.seed);
    let corpus = generate(spec, seed)?;

    let telemetry = Arc::new(TelemetryStore::new());
    telemetry.append_events(corpus.events.clone()).map_err(|e| ReplayError::Setup(e.to_string()))?;
    telemetry.set_rate_limit(opts.rate_limit);

    let knowledge = Arc::new(KnowledgeStore::new());
    for d in inputs.docs.iter().chain(&corpus.deployments) {
        knowledge.index_doc(d.clone()).map_err(|e| ReplayError::Knowledge(e.to_string()))?;
    }

    let world = Arc::new(World::new(corpus.faults.clone()));
    let actions = Arc::new(ActionRuntime::default());
    register_scenario_tools(&actions, world.clone()).map_err(|e| ReplayError::Setup(e.to_string()))?;

    let mut config = EngineConfig { fetch_mode: opts.fetch_mode, dedup: spec.dedup.clone(), ..Default::default() };
    if let Some(w) = opts.workers {
        config.workers = w;
    }
    if let Some(p) = spec.page_size {
        config.log.page_size = p;
    }
    let services = Services::new(
        telemetry,
        knowledge,
        actions.clone(),
        Arc::new(ScriptedReasoner::new(inputs.rules.clone())),
        Arc::new(MemoryNotifier::new()),
        config,
    )
    .with_pacing(Arc::new(CostPacing::new(spec.agent_model.clone(), seed)));

    let sim = SimRuntime::new(spec.start);
    let rt: Arc<dyn Runtime> = Arc::new(sim.clone());
    let engine = Arc::new(Engine::new(services, rt.clone()));
    let gateway = Gateway::new(seed);

    let alerts = corpus.alerts.clone();
    let truth = corpus.ground_truth.clone();
    let approval = opts.approval.clone();
    let fired = Arc::new(std::sync::Mutex::new(Vec::<usize>::new()));
    let fired_out = fired.clone();
    let eng = engine.clone();
    sim.run(move || {
        let mut tasks: Vec<Task> = Vec::new();
        for (i, sa) in alerts.iter().enumerate() {
            let wait = sa.fired_at.0 - rt.now().0;
            if wait > 0 {
                rt.sleep(wait);
            }
            if !world.fires(sa.fault, sa.fired_at) {
                continue;
            }
            let raw = serde_json::to_vec(&sa.raw).expect("alert serializes");
            let alert = gateway.ingest(&raw, ClockSource::Payload).expect("generated alerts are valid");
            fired_out.lock().unwrap().push(i);
            let (adm, task) = eng.admit(alert);
            let Some(task) = task else { continue };
            let root = truth.get(&sa.alert_id).cloned();
            let _ = eng.services.incidents.update(&adm.incident_id, |r| {
                r.verified_root_cause = root;
                Ok(())
            });
            if let ApprovalMode::Auto { delay_ms, actor } = &approval {
                tasks.push(spawn_approver(&eng, &adm.incident_id, task.clone(), *delay_ms, actor));
            }
            tasks.push(task);
        }
        for t in &tasks {
            rt.join(t);
        }
    })
    .map_err(|e| ReplayError::Simulation(e.to_string()))?;

    let svc = &engine.services;
    let agent = svc.incidents.list(None);
    let mut traces = BTreeMap::new();
    let mut artifacts = BTreeMap::new();
    for r in &agent {
        if let Some(t) = svc.trace(&r.incident_id) {
            traces.insert(r.incident_id.clone(), t);
        }
        if let Some(a) = svc.artifacts(&r.incident_id) {
            artifacts.insert(r.incident_id.clone(), a);
        }
    }
    let fired = fired.lock().unwrap().clone();
    let manual = manual_cohort(spec, seed, &corpus, &fired);
    let tool_risks = actions.tool_names().into_iter().filter_map(|n| actions.spec(&n).map(|s| (n, s.risk))).collect();
    Ok(ReplayOutcome {
        seed,
        suppressed: corpus.alerts.len() - fired.len(),
        corpus,
        agent,
        manual,
        artifacts,
        traces,
        audit_log: actions.audit_log(),
        tool_risks,
        wall_ms: started.elapsed().as_millis(),
    })
}

/// Approves this incident's pending requests once they are `delay_ms` old,
/// until the workflow finishes.
fn spawn_approver(engine: &Arc<Engine>, incident_id: &str, workflow: Task, delay_ms: i64, actor: &str) -> Task {
    let eng = engine.clone();
    let id = incident_id.to_string();
    let actor = actor.to_string();
    let rt = engine.runtime().clone();
    let poll = eng.services.config.approval_poll_ms.max(1);
    rt.clone().spawn(
        &format!("approver {id}"),
        Box::new(move || {
            while !workflow.is_finished() {
                let actions = &eng.services.actions;
                let now = rt.now();
                for req in actions.approvals(Some(Decision::Pending)) {
                    if req.incident_id == id && now.0 - req.requested_at.0 >= delay_ms {
                        let _ = actions.resolve_approval(&req.approval_id, true, &actor, rt.as_ref());
                    }
                }
                rt.sleep(poll);
            }
        }),
    )
}

/// Human-only baseline: the same alerts, each triaged by hand with durations
/// sampled from the scenario's manual cost model.
pub fn manual_cohort(spec: &ScenarioSpec, seed: u64, corpus: &Corpus, fired: &[usize]) -> Vec<IncidentRecord> {
    fired
        .iter()
        .enumerate()
        .map(|(n, &i)| {
            let sa = &corpus.alerts[i];
            let id = format!("man-{:06}", n + 1);
            let (minutes, _) = manual_cost(&spec.manual_model, seed, &id);
            let done = sa.fired_at.plus_ms((minutes * 60_000.0).round() as i64);
            let truth = corpus.ground_truth[&sa.alert_id].clone();
            let alert = crate::gateway::ingest_alert(
                &serde_json::to_vec(&sa.raw).expect("alert serializes"),
                ClockSource::Payload,
                &mut crate::scenario::keyed_rng(seed, &id),
            )
            .expect("generated alerts are valid");
            let mut r = IncidentRecord::new(id.clone(), alert, sa.fired_at);
            r.origin = Origin::Manual;
            r.state = IncidentState::Closed;
            r.phase_timeline.push(PhaseEntry { state: IncidentState::Summarized, entered_at: done });
            r.phase_timeline.push(PhaseEntry { state: IncidentState::Closed, entered_at: done });
            r.summary = Some(DiagnosticSummary {
                incident_id: id,
                headline: format!("manual triage: {truth}"),
                fault_component: truth.clone(),
                hypothesis: Hypothesis {
                    statement: "identified by the on-call engineer".into(),
                    fault_component: truth.clone(),
                    kind: HypothesisKind::Unknown,
                    confidence: 1.0,
                    evidence_refs: Vec::new(),
                },
                findings: BTreeMap::new(),
                recommended_action: RecommendedAction { text: "manual remediation".into(), tool: None, doc_id: None },
                out_of_path: Vec::new(),
                uncertainty_tag: None,
                produced_at: done,
            });
            r.verified_root_cause = Some(truth);
            r
        })
        .collect()
}
