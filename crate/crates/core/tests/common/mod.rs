//! Fixtures and brute-force oracles shared by the integration suites.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use triage_core::action::{ActionRuntime, DEFAULT_APPROVAL_TTL_MS};
use triage_core::gateway::{Alert, ClockSource, DedupPolicy, DedupRule, Gateway, Severity};
use triage_core::incident::{IncidentRecord, IncidentState, PhaseEntry, TriageStep};
use triage_core::knowledge::KnowledgeStore;
use triage_core::orchestrator::{Engine, EngineConfig, MemoryNotifier, Notifier, Services};
use triage_core::reasoner::{RuleTable, ScriptedReasoner};
use triage_core::replay::ReplayInputs;
use triage_core::runtime::{Runtime, SimRuntime};
use triage_core::scenario::{generate, register_scenario_tools, Corpus, World};
use triage_core::summary::{DiagnosticSummary, Hypothesis, HypothesisKind, RecommendedAction};
use triage_core::telemetry::{LogEvent, LogLevel, LogQuery, StoredEvent, TelemetryStore};
use triage_core::time::{Timestamp, MINUTE_MS};

pub fn repo_path(rel: &str) -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../..")).join(rel)
}

pub fn alert(id: &str, service: &str, alert_type: &str, fired_at: i64) -> Alert {
    Alert {
        alert_id: id.into(),
        service: service.into(),
        alert_type: alert_type.into(),
        severity: Severity::Error,
        fired_at: Timestamp(fired_at),
        correlation: BTreeMap::new(),
        payload: BTreeMap::new(),
        monitor: "test".into(),
    }
}

pub fn summary(incident_id: &str, component: &str, confidence: f64, produced_at: i64) -> DiagnosticSummary {
    DiagnosticSummary {
        incident_id: incident_id.into(),
        headline: format!("{component} failing"),
        fault_component: component.into(),
        hypothesis: Hypothesis {
            statement: format!("{component} failing"),
            fault_component: component.into(),
            kind: HypothesisKind::Unknown,
            confidence,
            evidence_refs: Vec::new(),
        },
        findings: BTreeMap::new(),
        recommended_action: RecommendedAction { text: "look".into(), tool: None, doc_id: None },
        out_of_path: Vec::new(),
        uncertainty_tag: None,
        produced_at: Timestamp(produced_at),
    }
}

const COMPONENTS: [&str; 4] = ["aem-publish", "pricing-svc", "payment-gw", "none"];

/// A random incident set: some unsummarized, some with wrong components,
/// varying case and padding in labels, mixed automated steps.
pub fn random_incidents(seed: u64) -> Vec<IncidentRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=60);
    (0..n)
        .map(|i| {
            let id = format!("inc-{i:04}");
            let fired = rng.random_range(0..10_000_000i64);
            let mut r = IncidentRecord::new(id.clone(), alert(&format!("a{i}"), "svc", "t", fired), Timestamp(fired));
            let truth = COMPONENTS[rng.random_range(0..COMPONENTS.len())];
            r.verified_root_cause = Some(truth.to_string());
            let n_steps = rng.random_range(1..=6);
            r.triage_steps = (0..n_steps)
                .map(|k| TriageStep {
                    label: format!("s{k}"),
                    minutes: rng.random_range(0.1..3.0),
                    automated: rng.random_bool(0.6),
                })
                .collect();
            if rng.random_bool(0.85) {
                let mut t = fired;
                for st in [
                    IncidentState::LogRetrieval,
                    IncidentState::Planning,
                    IncidentState::Executing,
                    IncidentState::Reflecting,
                ] {
                    t += rng.random_range(0..90_000);
                    r.phase_timeline.push(PhaseEntry { state: st, entered_at: Timestamp(t) });
                }
                t += rng.random_range(0..8 * MINUTE_MS);
                r.phase_timeline.push(PhaseEntry { state: IncidentState::Summarized, entered_at: Timestamp(t) });
                r.state = IncidentState::Summarized;
                let guess = if rng.random_bool(0.8) {
                    truth.to_string()
                } else {
                    COMPONENTS[rng.random_range(0..4)].to_string()
                };
                let guess = match rng.random_range(0..3) {
                    0 => guess.to_uppercase(),
                    1 => format!("  {guess} "),
                    _ => guess,
                };
                r.summary = Some(summary(&id, &guess, 0.5, t));
            }
            r
        })
        .collect()
}

fn summarized_at(r: &IncidentRecord) -> Option<i64> {
    r.phase_timeline.iter().find(|p| p.state == IncidentState::Summarized).map(|p| p.entered_at.0)
}

pub fn oracle_mtti(rs: &[IncidentRecord]) -> Option<f64> {
    let mut total = 0i64;
    let mut n = 0i64;
    for r in rs {
        if let Some(t) = summarized_at(r) {
            total += t - r.alerts[0].fired_at.0;
            n += 1;
        }
    }
    (n > 0).then(|| total as f64 / n as f64 / MINUTE_MS as f64)
}

pub fn oracle_ela(rs: &[IncidentRecord]) -> f64 {
    let hits = rs
        .iter()
        .filter(|r| {
            let want = r.verified_root_cause.clone().unwrap().trim().to_lowercase();
            r.summary.as_ref().map(|s| s.fault_component.trim().to_lowercase()) == Some(want)
        })
        .count();
    hits as f64 / rs.len() as f64
}

pub fn oracle_eer(rs: &[IncidentRecord]) -> f64 {
    let mut acc = 0.0;
    for r in rs {
        let auto = r.triage_steps.iter().filter(|s| s.automated).count();
        acc += auto as f64 / r.triage_steps.len() as f64;
    }
    acc / rs.len() as f64
}

pub fn oracle_ar(rs: &[IncidentRecord], threshold_ms: i64) -> f64 {
    let ok = rs.iter().filter(|r| summarized_at(r).is_some_and(|t| t - r.alerts[0].fired_at.0 <= threshold_ms)).count();
    ok as f64 / rs.len() as f64
}

pub const SERVICES: [&str; 4] = ["web", "api", "db", "cache"];
const WORDS: [&str; 5] = ["timeout", "failed", "retry", "ok", "validation"];

pub fn random_events(seed: u64, max: usize) -> Vec<LogEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(0..=max);
    (0..n)
        .map(|_| {
            let level = [LogLevel::Debug, LogLevel::Info, LogLevel::Warn, LogLevel::Error][rng.random_range(0..4)];
            let msg = format!("{} {}", WORDS[rng.random_range(0..5)], WORDS[rng.random_range(0..5)]);
            let mut e =
                LogEvent::new(Timestamp(rng.random_range(0..100_000)), SERVICES[rng.random_range(0..4)], level, &msg);
            if rng.random_bool(0.5) {
                e = e.with_id("session_id", &format!("s{}", rng.random_range(0..20)));
            }
            if rng.random_bool(0.2) {
                e = e.with_id("request_id", &format!("r{}", rng.random_range(0..20)));
            }
            e
        })
        .collect()
}

pub fn random_query(rng: &mut impl Rng) -> LogQuery {
    let a = rng.random_range(0..110_000);
    let b = rng.random_range(0..110_000);
    let mut q = LogQuery::range(Timestamp(a.min(b)), Timestamp(a.max(b))).limit(rng.random_range(1..200));
    if rng.random_bool(0.5) {
        let k = rng.random_range(1..=3);
        q.services = Some((0..k).map(|_| SERVICES[rng.random_range(0..4)].to_string()).collect::<BTreeSet<_>>());
    }
    if rng.random_bool(0.4) {
        q.min_level = Some([LogLevel::Info, LogLevel::Warn, LogLevel::Error][rng.random_range(0..3)]);
    }
    if rng.random_bool(0.4) {
        q.correlation = Some(("session_id".into(), format!("s{}", rng.random_range(0..20))));
    }
    if rng.random_bool(0.3) {
        q.text_match = Some(WORDS[rng.random_range(0..5)].to_string());
    }
    if rng.random_bool(0.3) {
        q.offset = rng.random_range(0..20);
    }
    q
}

/// Linear scan over insertion-ordered events: filter each predicate by hand,
/// order by (ts, id), then page.
pub fn oracle_query(events: &[LogEvent], q: &LogQuery) -> Vec<(u64, LogEvent)> {
    let mut hits: Vec<(u64, LogEvent)> = Vec::new();
    for (i, e) in events.iter().enumerate() {
        let in_range = e.ts.0 >= q.start.0 && e.ts.0 <= q.end.0;
        let svc = q.services.as_ref().is_none_or(|s| s.iter().any(|x| *x == e.service));
        let lvl = q.min_level.is_none_or(|m| e.level >= m);
        let cor = q.correlation.as_ref().is_none_or(|(k, v)| e.correlation.get(k) == Some(v));
        let txt = q.text_match.as_ref().is_none_or(|t| e.message.contains(t.as_str()));
        if in_range && svc && lvl && cor && txt {
            hits.push((i as u64, e.clone()));
        }
    }
    hits.sort_by_key(|(i, e)| (e.ts.0, *i));
    hits.into_iter().skip(q.offset).take(q.limit).collect()
}

pub fn as_pairs(got: &[StoredEvent]) -> Vec<(u64, LogEvent)> {
    got.iter().map(|s| (s.id.0, s.event.clone())).collect()
}

/// A generated scenario wired into an engine without pacing. Alerts are
/// driven by hand, so each test picks the ones it wants.
pub struct Rig {
    pub corpus: Corpus,
    pub engine: Arc<Engine>,
    pub rt: Arc<dyn Runtime>,
    gateway: Gateway,
}

pub struct RigOptions {
    pub rules: Option<RuleTable>,
    pub notifier: Arc<dyn Notifier>,
    pub config: EngineConfig,
    pub approval_ttl_ms: i64,
}

impl Default for RigOptions {
    fn default() -> Self {
        RigOptions {
            rules: None,
            notifier: Arc::new(MemoryNotifier::new()),
            config: EngineConfig::default(),
            approval_ttl_ms: DEFAULT_APPROVAL_TTL_MS,
        }
    }
}

pub fn generic_scenario() -> ReplayInputs {
    ReplayInputs::load(&repo_path("scenarios/generic.json")).expect("generic scenario loads")
}

impl Rig {
    pub fn new(inputs: &ReplayInputs, opts: RigOptions, rt: Arc<dyn Runtime>) -> Rig {
        let corpus = generate(&inputs.spec, inputs.spec.seed).expect("scenario generates");
        let telemetry = Arc::new(TelemetryStore::new());
        telemetry.append_events(corpus.events.clone()).expect("events append");
        let knowledge = Arc::new(KnowledgeStore::new());
        for d in inputs.docs.iter().chain(&corpus.deployments) {
            knowledge.index_doc(d.clone()).expect("doc indexes");
        }
        let actions = Arc::new(ActionRuntime::new(opts.approval_ttl_ms));
        register_scenario_tools(&actions, Arc::new(World::new(corpus.faults.clone()))).expect("tools register");
        let rules = opts.rules.unwrap_or_else(|| inputs.rules.clone());
        let mut config = opts.config;
        config.dedup = DedupPolicy { default: DedupRule::Independent, per_alert_type: BTreeMap::new() };
        let services =
            Services::new(telemetry, knowledge, actions, Arc::new(ScriptedReasoner::new(rules)), opts.notifier, config);
        let engine = Arc::new(Engine::new(services, rt.clone()));
        Rig { corpus, engine, rt, gateway: Gateway::new(inputs.spec.seed) }
    }

    /// First alerts of the first `n` faults built from `template`.
    pub fn alerts_of(&self, template: &str, n: usize) -> Vec<Alert> {
        let mut seen = BTreeSet::new();
        self.corpus
            .alerts
            .iter()
            .filter(|sa| self.corpus.faults[sa.fault].template() == template && seen.insert(sa.fault))
            .take(n)
            .map(|sa| {
                let raw = serde_json::to_vec(&sa.raw).unwrap();
                self.gateway.ingest(&raw, ClockSource::Payload).expect("generated alert is valid")
            })
            .collect()
    }

    pub fn alert_of(&self, template: &str) -> Alert {
        self.alerts_of(template, 1).pop().unwrap_or_else(|| panic!("scenario has no {template} fault"))
    }
}

/// Side task run alongside the engine, e.g. a simulated on-call.
pub type Operator = Box<dyn FnOnce(Arc<Engine>, Arc<dyn Runtime>) + Send>;

/// Runs `alerts` through the engine on a fresh simulated clock, one at its
/// fire time each, with `operator` as a side task. Returns the incident ids.
pub fn simulate(
    inputs: &ReplayInputs,
    opts: RigOptions,
    pick: impl FnOnce(&Rig) -> Vec<Alert>,
    operator: Option<Operator>,
) -> (Rig, Vec<String>) {
    let sim = SimRuntime::new(inputs.spec.start);
    let rig = Rig::new(inputs, opts, Arc::new(sim.clone()));
    let alerts = pick(&rig);
    let engine = rig.engine.clone();
    let rt = rig.rt.clone();
    let ids = Arc::new(std::sync::Mutex::new(Vec::new()));
    let out = ids.clone();
    sim.run(move || {
        let op = operator.map(|f| {
            let (e, r) = (engine.clone(), rt.clone());
            rt.spawn("operator", Box::new(move || f(e, r)))
        });
        let mut tasks = Vec::new();
        for a in alerts {
            let wait = a.fired_at.0 - rt.now().0;
            if wait > 0 {
                rt.sleep(wait);
            }
            let (adm, task) = engine.admit(a);
            out.lock().unwrap().push(adm.incident_id);
            tasks.extend(task);
        }
        for t in tasks.iter().chain(op.iter()) {
            rt.join(t);
        }
    })
    .expect("simulation completes");
    let ids = ids.lock().unwrap().clone();
    (rig, ids)
}
