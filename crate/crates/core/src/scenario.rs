//! Synthetic incident corpora with ground truth, and triage cost models.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::{Arc, Mutex};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Value};
use thiserror::Error;

use crate::action::{ActionError, ActionRuntime, Binding, Invocation, ParamSchema, Risk, ToolOutput, ToolSpec};
use crate::gateway::DedupPolicy;
use crate::incident::TriageStep;
use crate::knowledge::{DocKind, KnowledgeDoc};
use crate::orchestrator::{Pacing, Phase};
use crate::telemetry::{LogEvent, LogLevel};
use crate::time::{Timestamp, MINUTE_MS, SECOND_MS};

mod wire_ts {
    use super::*;

    pub fn serialize<S: Serializer>(t: &Timestamp, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.to_rfc3339())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Timestamp, D::Error> {
        let v = Value::deserialize(d)?;
        Timestamp::from_wire(&v).ok_or_else(|| serde::de::Error::custom(format!("invalid timestamp {v}")))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error("io: {0}")]
    Io(String),
}

// ---------------------------------------------------------------------------
// Cost models

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostStep {
    pub label: String,
    /// Duration range in minutes, inclusive.
    pub range: [f64; 2],
    pub automated: bool,
    /// Phase key this step is charged to during replay (`log_retrieval`,
    /// `planning`, `tool:<name>`). Uncharged steps only count for effort.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub charge: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub steps: Vec<CostStep>,
}

impl CostModel {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.steps.is_empty() {
            return Err(ScenarioError::InvalidSpec("cost model has no steps".into()));
        }
        for s in &self.steps {
            let [lo, hi] = s.range;
            if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi) {
                return Err(ScenarioError::InvalidSpec(format!("step `{}` has range [{lo}, {hi}]", s.label)));
            }
        }
        Ok(())
    }

    /// One uniform draw per step, at millisecond resolution.
    pub fn sample(&self, rng: &mut impl Rng) -> Vec<TriageStep> {
        self.steps
            .iter()
            .map(|s| {
                let lo = (s.range[0] * MINUTE_MS as f64).round() as i64;
                let hi = (s.range[1] * MINUTE_MS as f64).round() as i64;
                let ms = if hi > lo { rng.random_range(lo..=hi) } else { lo };
                TriageStep { label: s.label.clone(), minutes: ms as f64 / MINUTE_MS as f64, automated: s.automated }
            })
            .collect()
    }

    pub fn midpoint_minutes(&self) -> f64 {
        self.steps.iter().map(|s| (s.range[0] + s.range[1]) / 2.0).sum()
    }

    pub fn automated_fraction(&self) -> f64 {
        self.steps.iter().filter(|s| s.automated).count() as f64 / self.steps.len() as f64
    }
}

fn step(label: &str, lo: f64, hi: f64, automated: bool, charge: Option<&str>) -> CostStep {
    CostStep { label: label.into(), range: [lo, hi], automated, charge: charge.map(str::to_owned) }
}

/// Manual triage of a content-validation alert.
pub fn case_study_manual_model() -> CostModel {
    CostModel {
        steps: vec![
            step("inspect logs to locate the affected fragment", 5.0, 8.0, false, None),
            step("identify variant and locale", 1.0, 2.0, false, None),
            step("run the validation script", 2.0, 3.0, false, None),
            step("correct and re-publish", 1.0, 2.0, false, None),
        ],
    }
}

/// Agent-assisted triage: three automated steps and the residual manual fix.
pub fn agent_cost_model() -> CostModel {
    CostModel {
        steps: vec![
            step("retrieve and filter logs", 0.5, 0.75, true, Some("log_retrieval")),
            step("infer variant and locale", 1.0 / 3.0, 0.5, true, Some("planning")),
            step("run the validation script", 1.0 / 3.0, 0.5, true, Some("tool:validate_content")),
            step("modify and re-publish", 1.0, 2.0, false, None),
        ],
    }
}

/// Stable 64-bit FNV-1a, used to derive per-key RNG streams.
fn fnv1a(key: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn keyed_rng(seed: u64, key: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a(key))
}

/// Total minutes and the sampled steps for one incident.
pub fn manual_cost(model: &CostModel, seed: u64, incident: &str) -> (f64, Vec<TriageStep>) {
    let steps = model.sample(&mut keyed_rng(seed, incident));
    (steps.iter().map(|s| s.minutes).sum(), steps)
}

/// Charges agent cost-model steps to the simulated clock, sampled once per
/// incident.
pub struct CostPacing {
    model: CostModel,
    seed: u64,
    cache: Mutex<BTreeMap<String, Vec<TriageStep>>>,
}

impl CostPacing {
    pub fn new(model: CostModel, seed: u64) -> Self {
        CostPacing { model, seed, cache: Mutex::new(BTreeMap::new()) }
    }

    fn steps(&self, incident_id: &str) -> Vec<TriageStep> {
        self.cache
            .lock()
            .unwrap()
            .entry(incident_id.to_string())
            .or_insert_with(|| self.model.sample(&mut keyed_rng(self.seed, incident_id)))
            .clone()
    }
}

impl Pacing for CostPacing {
    fn charge_ms(&self, incident_id: &str, phase: Phase<'_>) -> i64 {
        let key = phase.key();
        let Some(i) = self.model.steps.iter().position(|s| s.charge.as_deref() == Some(key.as_str())) else {
            return 0;
        };
        (self.steps(incident_id)[i].minutes * MINUTE_MS as f64).round() as i64
    }

    fn triage_steps(&self, incident_id: &str) -> Vec<TriageStep> {
        self.steps(incident_id)
    }
}

// ---------------------------------------------------------------------------
// Scenario spec

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceSpec {
    pub name: String,
    #[serde(default)]
    pub depends_on: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaultSpec {
    /// Malformed CMS content; the alert repeats every minute until corrected.
    ContentValidation {
        fragment: String,
        variant: String,
        locale: String,
        error_line: u32,
        error_type: String,
        #[serde(with = "wire_ts")]
        injected_at: Timestamp,
        #[serde(with = "wire_ts")]
        corrected_at: Timestamp,
        /// Alerts per tick (simultaneous sessions hitting the fragment).
        #[serde(default = "one")]
        burst: u32,
    },
    /// A bad deploy followed by an error burst.
    CodeRegression {
        service: String,
        commit_id: String,
        change_summary: String,
        #[serde(with = "wire_ts")]
        deployed_at: Timestamp,
        #[serde(with = "wire_ts")]
        alert_at: Timestamp,
        exception: String,
    },
    /// A failing dependency surfacing as upstream errors in its caller.
    DependencyFailure {
        caller: String,
        dependency: String,
        symptom: String,
        #[serde(with = "wire_ts")]
        alert_at: Timestamp,
    },
    /// An alert with no supporting telemetry.
    Spurious {
        service: String,
        alert_type: String,
        #[serde(with = "wire_ts")]
        alert_at: Timestamp,
    },
}

fn one() -> u32 {
    1
}

impl FaultSpec {
    pub fn ground_truth(&self) -> String {
        match self {
            FaultSpec::ContentValidation { fragment, .. } => fragment.clone(),
            FaultSpec::CodeRegression { service, .. } => service.clone(),
            FaultSpec::DependencyFailure { dependency, .. } => dependency.clone(),
            FaultSpec::Spurious { .. } => "none".into(),
        }
    }

    pub fn template(&self) -> &'static str {
        match self {
            FaultSpec::ContentValidation { .. } => "content_validation",
            FaultSpec::CodeRegression { .. } => "code_regression",
            FaultSpec::DependencyFailure { .. } => "dependency_failure",
            FaultSpec::Spurious { .. } => "spurious",
        }
    }

    fn first_alert(&self) -> Timestamp {
        match self {
            FaultSpec::ContentValidation { injected_at, .. } => *injected_at,
            FaultSpec::CodeRegression { alert_at, .. }
            | FaultSpec::DependencyFailure { alert_at, .. }
            | FaultSpec::Spurious { alert_at, .. } => *alert_at,
        }
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        match self {
            FaultSpec::ContentValidation { injected_at, corrected_at, burst, fragment, .. } => {
                if corrected_at <= injected_at {
                    return Err(ScenarioError::InvalidSpec(format!(
                        "fault `{fragment}`: corrected_at must follow injected_at"
                    )));
                }
                if *burst == 0 {
                    return Err(ScenarioError::InvalidSpec(format!("fault `{fragment}`: burst must be at least 1")));
                }
            }
            FaultSpec::CodeRegression { deployed_at, alert_at, service, .. } if alert_at < deployed_at => {
                return Err(ScenarioError::InvalidSpec(format!("regression in `{service}` alerts before its deploy")));
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub minutes: u32,
    #[serde(default = "one")]
    pub burst: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "template", rename_all = "snake_case")]
pub enum GeneratorSpec {
    /// Content-validation faults placed one per equal slot of the duration.
    ContentValidation {
        episodes: Vec<Episode>,
        fragments: Vec<String>,
        variants: Vec<String>,
        locales: Vec<String>,
        error_types: Vec<String>,
    },
    /// Generic faults in the given proportions.
    Mix { count: u32, code_regression: u32, dependency_failure: u32, spurious: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Unrelated ERROR lines in the alerting service before each alert.
    #[serde(default)]
    pub errors_per_alert: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario_id: String,
    pub seed: u64,
    #[serde(with = "wire_ts")]
    pub start: Timestamp,
    pub duration_minutes: i64,
    #[serde(default)]
    pub services: Vec<ServiceSpec>,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    #[serde(default)]
    pub generators: Vec<GeneratorSpec>,
    #[serde(default)]
    pub noise: NoiseSpec,
    pub manual_model: CostModel,
    pub agent_model: CostModel,
    /// Rule table path, relative to the scenario file.
    pub reasoner_rules: String,
    /// Knowledge-base directory, relative to the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knowledge: Option<String>,
    #[serde(default)]
    pub dedup: DedupPolicy,
    /// Log API page size for replay.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub page_size: Option<usize>,
}

impl ScenarioSpec {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
        let spec: ScenarioSpec =
            serde_json::from_str(&text).map_err(|e| ScenarioError::InvalidSpec(format!("{}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.duration_minutes <= 0 {
            return Err(ScenarioError::InvalidSpec("duration_minutes must be positive".into()));
        }
        self.manual_model.validate()?;
        self.agent_model.validate()?;
        for f in &self.faults {
            f.validate()?;
        }
        for g in &self.generators {
            match g {
                GeneratorSpec::ContentValidation { episodes, fragments, variants, locales, error_types } => {
                    if [fragments, variants, locales, error_types].iter().any(|p| p.is_empty()) {
                        return Err(ScenarioError::InvalidSpec("content_validation pools must be non-empty".into()));
                    }
                    if episodes.iter().any(|e| e.minutes == 0 || e.burst == 0) {
                        return Err(ScenarioError::InvalidSpec("episodes need minutes and burst of at least 1".into()));
                    }
                }
                GeneratorSpec::Mix { code_regression, dependency_failure, spurious, .. } => {
                    if code_regression + dependency_failure + spurious == 0 {
                        return Err(ScenarioError::InvalidSpec("mix weights sum to zero".into()));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn end(&self) -> Timestamp {
        self.start.plus_ms(self.duration_minutes * MINUTE_MS)
    }
}

// ---------------------------------------------------------------------------
// Generation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledAlert {
    pub alert_id: String,
    #[serde(with = "wire_ts")]
    pub fired_at: Timestamp,
    pub fault: usize,
    /// Gateway wire form.
    pub raw: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub faults: Vec<FaultSpec>,
    pub alerts: Vec<ScheduledAlert>,
    pub events: Vec<LogEvent>,
    pub deployments: Vec<KnowledgeDoc>,
    /// alert_id -> fault component.
    pub ground_truth: BTreeMap<String, String>,
}

const CODE_SERVICES: [(&str, &str); 3] = [
    ("pricing-svc", "NullPointerException in PriceCalculator.applyDiscount"),
    ("cart-svc", "IllegalStateException in CartMerger.merge"),
    ("search-svc", "IndexOutOfBoundsException in FacetBuilder.build"),
];
const DEPENDENCIES: [(&str, &str, &str); 3] = [
    ("checkout-api", "inventory-svc", "connection pool exhausted"),
    ("checkout-api", "payment-gw", "TLS handshake timeout"),
    ("profile-api", "session-store", "READONLY replica cannot accept writes"),
];
const SPURIOUS: [(&str, &str); 2] = [("search-svc", "latency_blip"), ("cdn-edge", "synthetic_probe_flap")];
const CHANGES: [&str; 4] = [
    "refactor discount rounding and null handling",
    "bump logging library",
    "tune connection pool sizes",
    "add feature flag for new banner layout",
];

fn hex_id(rng: &mut impl Rng, len: usize) -> String {
    (0..len).map(|_| char::from_digit(rng.random_range(0..16), 16).unwrap()).collect()
}

/// Start minute of each of `n` items, one per equal slot, at least an hour
/// clear of the slot end so episodes never overlap.
fn slot_starts(rng: &mut impl Rng, n: usize, duration_minutes: i64, lengths: &[i64]) -> Vec<i64> {
    let slot = duration_minutes / n.max(1) as i64;
    (0..n)
        .map(|i| {
            let room = (slot - lengths[i] - 60).max(1);
            i as i64 * slot + rng.random_range(0..room)
        })
        .collect()
}

fn expand_generators(spec: &ScenarioSpec, rng: &mut ChaCha8Rng) -> Vec<FaultSpec> {
    let mut out = Vec::new();
    for g in &spec.generators {
        match g {
            GeneratorSpec::ContentValidation { episodes, fragments, variants, locales, error_types } => {
                let lengths: Vec<i64> = episodes.iter().map(|e| e.minutes as i64).collect();
                let starts = slot_starts(rng, episodes.len(), spec.duration_minutes, &lengths);
                for (e, start) in episodes.iter().zip(starts) {
                    let injected_at = spec.start.plus_ms(start * MINUTE_MS);
                    out.push(FaultSpec::ContentValidation {
                        fragment: fragments.choose(rng).unwrap().clone(),
                        variant: variants.choose(rng).unwrap().clone(),
                        locale: locales.choose(rng).unwrap().clone(),
                        error_line: rng.random_range(2..400),
                        error_type: error_types.choose(rng).unwrap().clone(),
                        injected_at,
                        corrected_at: injected_at.plus_ms(e.minutes as i64 * MINUTE_MS),
                        burst: e.burst,
                    });
                }
            }
            GeneratorSpec::Mix { count, code_regression, dependency_failure, spurious } => {
                let n = *count as usize;
                let starts = slot_starts(rng, n, spec.duration_minutes, &vec![30; n]);
                let total = code_regression + dependency_failure + spurious;
                for start in starts {
                    let at = spec.start.plus_ms(start * MINUTE_MS + rng.random_range(0..60) * SECOND_MS);
                    let pick = rng.random_range(0..total);
                    out.push(if pick < *code_regression {
                        let (service, exception) = *CODE_SERVICES.choose(rng).unwrap();
                        FaultSpec::CodeRegression {
                            service: service.into(),
                            commit_id: hex_id(rng, 7),
                            change_summary: CHANGES[0].into(),
                            deployed_at: at.minus_ms(rng.random_range(5..20) * MINUTE_MS),
                            alert_at: at,
                            exception: exception.into(),
                        }
                    } else if pick < code_regression + dependency_failure {
                        let (caller, dep, symptom) = *DEPENDENCIES.choose(rng).unwrap();
                        FaultSpec::DependencyFailure {
                            caller: caller.into(),
                            dependency: dep.into(),
                            symptom: symptom.into(),
                            alert_at: at,
                        }
                    } else {
                        let (service, alert_type) = *SPURIOUS.choose(rng).unwrap();
                        FaultSpec::Spurious { service: service.into(), alert_type: alert_type.into(), alert_at: at }
                    });
                }
            }
        }
    }
    out
}

struct Builder<'a> {
    spec: &'a ScenarioSpec,
    rng: ChaCha8Rng,
    corpus: Corpus,
}

impl Builder<'_> {
    fn alert(&mut self, fault: usize, fired_at: Timestamp, raw: Value) {
        let alert_id = format!("{}-a{:05}", self.spec.scenario_id, self.corpus.alerts.len() + 1);
        let mut raw = raw;
        raw["alert_id"] = json!(alert_id);
        raw["fired_at"] = json!(fired_at.to_rfc3339());
        self.corpus.ground_truth.insert(alert_id.clone(), self.corpus.faults[fault].ground_truth());
        self.corpus.alerts.push(ScheduledAlert { alert_id, fired_at, fault, raw });
    }

    fn session(&mut self, prefix: &str) -> String {
        format!("{prefix}-{}", hex_id(&mut self.rng, 10))
    }

    fn noise(&mut self, service: &str, fired_at: Timestamp) {
        for _ in 0..self.spec.noise.errors_per_alert {
            let ts = fired_at.minus_ms(self.rng.random_range(30..15 * 60) * SECOND_MS);
            let code = self.rng.random_range(1000..9999);
            self.corpus.events.push(LogEvent::new(
                ts,
                service,
                LogLevel::Error,
                &format!("replication agent queue retry code={code}"),
            ));
        }
    }

    fn content_validation(&mut self, idx: usize) {
        let FaultSpec::ContentValidation { fragment, variant, locale, injected_at, corrected_at, burst, .. } =
            self.corpus.faults[idx].clone()
        else {
            unreachable!()
        };
        let mut tick = injected_at;
        while tick < corrected_at {
            for _ in 0..burst {
                let session = self.session("s");
                let t0 = tick.minus_ms(20 * SECOND_MS);
                self.corpus.events.push(
                    LogEvent::new(t0, "checkout-web", LogLevel::Info, "render request path=/checkout")
                        .with_id("session_id", &session),
                );
                self.corpus.events.push(
                    LogEvent::new(
                        t0.plus_ms(40),
                        "aem-publish",
                        LogLevel::Error,
                        "Content validation failed while rendering fragment",
                    )
                    .with_id("session_id", &session)
                    .with_field("fragment", &fragment)
                    .with_field("variant", &variant)
                    .with_field("locale", &locale),
                );
                self.corpus.events.push(
                    LogEvent::new(
                        t0.plus_ms(80),
                        "checkout-web",
                        LogLevel::Warn,
                        "Invalid content from AEM; falling back to static cached content",
                    )
                    .with_id("session_id", &session)
                    .with_field("fragment", &fragment),
                );
                self.corpus.events.push(
                    LogEvent::new(t0.plus_ms(120), "cdn-edge", LogLevel::Info, "served cached content")
                        .with_id("session_id", &session),
                );
                self.noise("aem-publish", tick);
                let raw = json!({
                    "service": "aem-publish",
                    "alert_type": "content_validation_error",
                    "severity": "WARN",
                    "monitor": "splunk/content-validation",
                    "correlation": {"session_id": session},
                    "payload": {
                        "alert_name": "Content Validation Error - WARN",
                        "search": "index=aem sourcetype=publish \"Content validation failed\""
                    }
                });
                self.alert(idx, tick, raw);
            }
            tick = tick.plus_ms(MINUTE_MS);
        }
    }

    fn code_regression(&mut self, idx: usize) {
        let FaultSpec::CodeRegression { service, commit_id, change_summary, deployed_at, alert_at, exception } =
            self.corpus.faults[idx].clone()
        else {
            unreachable!()
        };
        let doc = |id: String, commit: &str, summary: &str, at: Timestamp| KnowledgeDoc {
            doc_id: id,
            kind: DocKind::Deployment,
            service: Some(service.clone()),
            title: format!("deploy {commit} to {service}"),
            body: format!("commit {commit} deployed to {service}: {summary}"),
            meta: BTreeMap::from([
                ("commit_id".to_string(), commit.to_string()),
                ("deployed_at".to_string(), at.0.to_string()),
                ("change_summary".to_string(), summary.to_string()),
            ]),
        };
        let n = self.corpus.deployments.len();
        self.corpus.deployments.push(doc(format!("deploy-{commit_id}"), &commit_id, &change_summary, deployed_at));
        for k in 1..=2 {
            let old = hex_id(&mut self.rng, 7);
            let at = deployed_at.minus_ms(k * 26 * 60 * MINUTE_MS);
            let summary = CHANGES[1 + (n + k as usize) % (CHANGES.len() - 1)];
            self.corpus.deployments.push(doc(format!("deploy-{old}"), &old, summary, at));
        }
        let request = self.session("r");
        let first = deployed_at.plus_ms(2 * MINUTE_MS);
        self.corpus.events.push(
            LogEvent::new(first, &service, LogLevel::Error, &exception)
                .with_id("request_id", &request)
                .with_field("commit", &commit_id),
        );
        for i in 1..6 {
            let ts = first.plus_ms(i * 50 * SECOND_MS);
            if ts <= alert_at {
                let r = self.session("r");
                self.corpus
                    .events
                    .push(LogEvent::new(ts, &service, LogLevel::Error, &exception).with_id("request_id", &r));
            }
        }
        let raw = json!({
            "service": service,
            "alert_type": "error_rate_spike",
            "severity": "ERROR",
            "monitor": "apm/error-rate",
            "correlation": {"request_id": request},
            "payload": {"alert_name": "Error rate spike", "threshold": "5%"}
        });
        self.alert(idx, alert_at, raw);
    }

    fn dependency_failure(&mut self, idx: usize) {
        let FaultSpec::DependencyFailure { caller, dependency, symptom, alert_at } = self.corpus.faults[idx].clone()
        else {
            unreachable!()
        };
        let request = self.session("r");
        let t0 = alert_at.minus_ms(45 * SECOND_MS);
        self.corpus.events.push(
            LogEvent::new(t0, &caller, LogLevel::Info, &format!("calling {dependency}"))
                .with_id("request_id", &request),
        );
        self.corpus.events.push(
            LogEvent::new(t0.plus_ms(200), &dependency, LogLevel::Error, &symptom).with_id("request_id", &request),
        );
        self.corpus.events.push(
            LogEvent::new(
                t0.plus_ms(5200),
                &caller,
                LogLevel::Error,
                &format!("upstream timeout calling {dependency}"),
            )
            .with_id("request_id", &request),
        );
        let raw = json!({
            "service": caller,
            "alert_type": "upstream_error_rate",
            "severity": "ERROR",
            "monitor": "apm/upstream-errors",
            "correlation": {"request_id": request},
            "payload": {"alert_name": "Upstream error rate"}
        });
        self.alert(idx, alert_at, raw);
    }

    fn spurious(&mut self, idx: usize) {
        let FaultSpec::Spurious { service, alert_type, alert_at } = self.corpus.faults[idx].clone() else {
            unreachable!()
        };
        let raw = json!({
            "service": service,
            "alert_type": alert_type,
            "severity": "INFO",
            "monitor": "synthetics",
            "payload": {"alert_name": "Synthetic probe"}
        });
        self.alert(idx, alert_at, raw);
    }
}

/// Deterministic under `(spec, seed)`.
pub fn generate(spec: &ScenarioSpec, seed: u64) -> Result<Corpus, ScenarioError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut faults = spec.faults.clone();
    faults.extend(expand_generators(spec, &mut rng));
    faults.sort_by_key(|f| f.first_alert());
    for f in &faults {
        f.validate()?;
    }
    let mut b = Builder {
        spec,
        rng,
        corpus: Corpus {
            faults,
            alerts: Vec::new(),
            events: Vec::new(),
            deployments: Vec::new(),
            ground_truth: BTreeMap::new(),
        },
    };
    for i in 0..b.corpus.faults.len() {
        match &b.corpus.faults[i] {
            FaultSpec::ContentValidation { .. } => b.content_validation(i),
            FaultSpec::CodeRegression { .. } => b.code_regression(i),
            FaultSpec::DependencyFailure { .. } => b.dependency_failure(i),
            FaultSpec::Spurious { .. } => b.spurious(i),
        }
    }
    let mut corpus = b.corpus;
    corpus.alerts.sort_by(|a, b| (a.fired_at, &a.alert_id).cmp(&(b.fired_at, &b.alert_id)));
    corpus.events.sort_by_key(|e| e.ts);
    Ok(corpus)
}

// ---------------------------------------------------------------------------
// Scenario tools

/// Mutable world state the scenario tools act on.
#[derive(Default)]
pub struct World {
    faults: Vec<FaultSpec>,
    republished: Mutex<BTreeMap<(String, String, String), Timestamp>>,
    restarted: Mutex<Vec<(String, Timestamp)>>,
}

impl World {
    pub fn new(faults: Vec<FaultSpec>) -> Self {
        World { faults, ..Default::default() }
    }

    /// Whether an alert of `fault` at `at` still fires (republishing the
    /// content silences it).
    pub fn fires(&self, fault: usize, at: Timestamp) -> bool {
        match &self.faults[fault] {
            FaultSpec::ContentValidation { fragment, variant, locale, .. } => {
                let key = (fragment.clone(), variant.clone(), locale.clone());
                self.republished.lock().unwrap().get(&key).is_none_or(|t| at <= *t)
            }
            _ => true,
        }
    }

    pub fn restarts(&self) -> Vec<(String, Timestamp)> {
        self.restarted.lock().unwrap().clone()
    }

    fn validate_content(&self, fragment: &str, variant: &str, locale: &str, now: Timestamp) -> ToolOutput {
        let key = (fragment.to_string(), variant.to_string(), locale.to_string());
        let fixed_at = self.republished.lock().unwrap().get(&key).copied();
        let hit = self
            .faults
            .iter()
            .filter_map(|f| match f {
                FaultSpec::ContentValidation {
                    fragment: fr,
                    variant: v,
                    locale: l,
                    error_line,
                    error_type,
                    injected_at,
                    ..
                } if fr == fragment && v == variant && l == locale && *injected_at <= now => {
                    Some((*injected_at, *error_line, error_type.clone()))
                }
                _ => None,
            })
            .filter(|(inj, _, _)| fixed_at.is_none_or(|t| *inj > t))
            .max_by_key(|(inj, _, _)| *inj);
        match hit {
            Some((_, line, kind)) => BTreeMap::from([
                ("status".into(), "invalid".into()),
                ("line_number".into(), line.to_string()),
                ("error_description".into(), kind),
            ]),
            None => BTreeMap::from([("status".into(), "valid".into())]),
        }
    }
}

fn arg<'a>(call: &'a Invocation<'_>, key: &str) -> Result<&'a str, String> {
    call.args.get(key).map(String::as_str).ok_or_else(|| format!("missing `{key}`"))
}

fn internal(name: &str, description: &str, risk: Risk, required: &[&str]) -> ToolSpec {
    ToolSpec {
        name: name.into(),
        description: description.into(),
        risk,
        params: ParamSchema::new(&format!("{name}.args"), required),
        binding: Binding::Internal { name: name.into() },
        timeout_seconds: 60,
    }
}

/// Registers validate_content, clear_cache, restart_job, republish_content
/// and rollback_deployment against `world`.
pub fn register_scenario_tools(actions: &ActionRuntime, world: Arc<World>) -> Result<BTreeSet<String>, ActionError> {
    let w = world.clone();
    actions.register_tool(
        internal(
            "validate_content",
            "run the content validation script on a fragment",
            Risk::Low,
            &["fragment", "variant", "locale"],
        ),
        Arc::new(move |c: &Invocation<'_>| {
            Ok(w.validate_content(arg(c, "fragment")?, arg(c, "variant")?, arg(c, "locale")?, c.rt.now()))
        }),
    )?;
    actions.register_tool(
        internal("clear_cache", "purge the CDN cache for a service", Risk::Low, &["service"]),
        Arc::new(|c: &Invocation<'_>| Ok(BTreeMap::from([("purged".to_string(), arg(c, "service")?.to_string())]))),
    )?;
    let w = world.clone();
    actions.register_tool(
        internal("restart_job", "restart a service's worker pool", Risk::High, &["service"]),
        Arc::new(move |c: &Invocation<'_>| {
            let svc = arg(c, "service")?.to_string();
            w.restarted.lock().unwrap().push((svc.clone(), c.rt.now()));
            Ok(BTreeMap::from([("restarted".to_string(), svc)]))
        }),
    )?;
    let w = world;
    actions.register_tool(
        internal(
            "republish_content",
            "re-publish a corrected fragment",
            Risk::High,
            &["fragment", "variant", "locale"],
        ),
        Arc::new(move |c: &Invocation<'_>| {
            let key = (arg(c, "fragment")?.to_string(), arg(c, "variant")?.to_string(), arg(c, "locale")?.to_string());
            w.republished.lock().unwrap().insert(key, c.rt.now());
            Ok(BTreeMap::from([("republished".to_string(), "true".to_string())]))
        }),
    )?;
    actions.register_tool(
        internal("rollback_deployment", "roll a service back past a commit", Risk::High, &["service", "commit_id"]),
        Arc::new(|c: &Invocation<'_>| {
            Ok(BTreeMap::from([(
                "rolled_back".to_string(),
                format!("{}@{}", arg(c, "service")?, arg(c, "commit_id")?),
            )]))
        }),
    )?;
    Ok(actions.tool_names().into_iter().collect())
}
