//! Log agent: turns an alert into log queries and an anomaly report.
//!
//! Retrieval happens in two parts. [`initial_evidence`] runs the queries from
//! [`build_queries`]. The downstream part ([`downstream_targets`] and
//! [`fetch_target`]) traces each identifier across services and pulls
//! error-level logs from every downstream service it reaches; the
//! orchestrator may run it while planning proceeds. [`merge_fetches`] folds
//! fetch results in and is insensitive to their order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::gateway::Alert;
use crate::reasoner::ContextBlock;
use crate::runtime::Runtime;
use crate::telemetry::{
    query_paged, with_backoff, EventId, LogLevel, LogQuery, RetryPolicy, StoredEvent, TelemetryError, TelemetryStore,
    ThrottleStats, TraceChain,
};
use crate::time::{Timestamp, MINUTE_MS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogAgentConfig {
    pub lookback_ms: i64,
    pub lookahead_ms: i64,
    #[serde(default)]
    pub lookback_by_alert_type: BTreeMap<String, i64>,
    /// Payload keys promoted into identifiers (after camelCase folding).
    pub identifier_keys: Vec<String>,
    pub page_size: usize,
    pub query_limit: usize,
    pub max_retries: u32,
}

impl Default for LogAgentConfig {
    fn default() -> Self {
        LogAgentConfig {
            lookback_ms: 15 * MINUTE_MS,
            lookahead_ms: MINUTE_MS,
            lookback_by_alert_type: BTreeMap::new(),
            identifier_keys: vec!["session_id".into(), "request_id".into(), "trace_id".into()],
            page_size: 50,
            query_limit: 1000,
            max_retries: RetryPolicy::default().max_retries,
        }
    }
}

impl LogAgentConfig {
    pub fn retry(&self) -> RetryPolicy {
        RetryPolicy { max_retries: self.max_retries }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlertContext {
    pub incident_id: String,
    pub service: String,
    pub alert_type: String,
    pub fired_at: Timestamp,
    pub identifiers: BTreeMap<String, String>,
    pub window_start: Timestamp,
    pub window_end: Timestamp,
}

/// `sessionId` -> `session_id`; snake_case input is unchanged.
pub fn fold_key(key: &str) -> String {
    let mut out = String::with_capacity(key.len() + 4);
    for (i, c) in key.chars().enumerate() {
        if c.is_ascii_uppercase() {
            if i > 0 {
                out.push('_');
            }
            out.push(c.to_ascii_lowercase());
        } else if c == '-' {
            out.push('_');
        } else {
            out.push(c);
        }
    }
    out
}

pub fn extract_metadata(alert: &Alert, incident_id: &str, cfg: &LogAgentConfig) -> AlertContext {
    let mut identifiers: BTreeMap<String, String> =
        alert.correlation.iter().map(|(k, v)| (fold_key(k), v.clone())).collect();
    for (k, v) in &alert.payload {
        let folded = fold_key(k);
        if cfg.identifier_keys.contains(&folded) && !v.trim().is_empty() {
            identifiers.entry(folded).or_insert_with(|| v.trim().to_string());
        }
    }
    let lookback = cfg.lookback_by_alert_type.get(&alert.alert_type).copied().unwrap_or(cfg.lookback_ms);
    AlertContext {
        incident_id: incident_id.to_string(),
        service: alert.service.clone(),
        alert_type: alert.alert_type.clone(),
        fired_at: alert.fired_at,
        identifiers,
        window_start: alert.fired_at.minus_ms(lookback.max(0)),
        window_end: alert.fired_at.plus_ms(cfg.lookahead_ms.max(0)),
    }
}

/// Service-scoped error query first, then one unscoped query per identifier.
pub fn build_queries(ctx: &AlertContext, limit: usize) -> Vec<LogQuery> {
    let mut out = vec![LogQuery::range(ctx.window_start, ctx.window_end)
        .service(&ctx.service)
        .min_level(LogLevel::Error)
        .limit(limit)];
    for (kind, value) in &ctx.identifiers {
        out.push(LogQuery::range(ctx.window_start, ctx.window_end).correlated(kind, value).limit(limit));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AnomalyClass {
    ErrorEvent,
    CorrelatedDownstream,
    PatternMatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anomaly {
    pub event: StoredEvent,
    pub class: AnomalyClass,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CausalCandidate {
    pub event_id: EventId,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Coverage {
    pub services_queried: BTreeSet<String>,
    pub services_reachable: BTreeSet<String>,
    /// Retrieval that failed outright (backoff exhausted, invalid query).
    pub gaps: Vec<String>,
    /// Downstream fetches that finished after synthesis began.
    pub late: Vec<String>,
}

impl Coverage {
    pub fn note(&self) -> String {
        let unqueried: Vec<&String> = self.services_reachable.difference(&self.services_queried).collect();
        let mut s = format!(
            "queried {} of {} reachable services",
            self.services_reachable.intersection(&self.services_queried).count(),
            self.services_reachable.len()
        );
        if !unqueried.is_empty() {
            s.push_str(&format!("; not queried: {}", join(unqueried.iter().map(|s| s.as_str()))));
        }
        if !self.gaps.is_empty() {
            s.push_str(&format!("; gaps: {}", self.gaps.join("; ")));
        }
        if !self.late.is_empty() {
            s.push_str(&format!("; late: {}", self.late.join(", ")));
        }
        s
    }
}

fn join<'a>(items: impl Iterator<Item = &'a str>) -> String {
    items.collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalyReport {
    pub incident_id: String,
    pub alert_service: String,
    pub anomalies: Vec<Anomaly>,
    pub causal_candidates: Vec<CausalCandidate>,
    pub trace_chains: Vec<TraceChain>,
    pub coverage: Coverage,
}

impl AnomalyReport {
    fn empty(ctx: &AlertContext) -> Self {
        AnomalyReport {
            incident_id: ctx.incident_id.clone(),
            alert_service: ctx.service.clone(),
            anomalies: Vec::new(),
            causal_candidates: Vec::new(),
            trace_chains: Vec::new(),
            coverage: Coverage::default(),
        }
    }

    pub fn event(&self, id: EventId) -> Option<&StoredEvent> {
        self.anomalies.iter().map(|a| &a.event).find(|e| e.id == id)
    }

    pub fn services(&self) -> BTreeSet<String> {
        self.anomalies.iter().map(|a| a.event.event.service.clone()).collect()
    }

    fn add(&mut self, event: StoredEvent, class: AnomalyClass) {
        match self.anomalies.iter_mut().find(|a| a.event.id == event.id) {
            // ERROR_EVENT outranks the other classes so the outcome does not
            // depend on which query saw the event first.
            Some(a) => a.class = a.class.min(class),
            None => self.anomalies.push(Anomaly { event, class }),
        }
    }

    /// Sorts everything into canonical order and recomputes the causal ranking.
    fn normalize(&mut self) {
        self.anomalies.sort_by_key(|a| (a.event.event.ts, a.event.id));
        self.trace_chains.sort_by(|a, b| (&a.kind, &a.value).cmp(&(&b.kind, &b.value)));
        self.trace_chains.dedup_by(|a, b| a.kind == b.kind && a.value == b.value);
        self.coverage.gaps.sort();
        self.coverage.gaps.dedup();
        self.coverage.late.sort();
        self.coverage.late.dedup();
        for c in &self.trace_chains {
            self.coverage.services_reachable.extend(c.hops.iter().cloned());
        }
        self.causal_candidates = rank_candidates(self);
    }

    /// Evidence blocks for prompts.
    pub fn context_blocks(&self) -> Vec<ContextBlock> {
        let mut anomalies = String::new();
        for a in &self.anomalies {
            anomalies.push_str(&format!("{} {}\n", a.event.render(), class_tag(a.class)));
        }
        if anomalies.is_empty() {
            anomalies.push_str("none\n");
        }
        let mut candidates = String::new();
        for (i, c) in self.causal_candidates.iter().enumerate() {
            candidates.push_str(&format!("{}. {} {}\n", i + 1, c.event_id, c.rationale));
        }
        if candidates.is_empty() {
            candidates.push_str("none\n");
        }
        let mut chains = String::new();
        for c in &self.trace_chains {
            chains.push_str(&format!("{}={}: {}\n", c.kind, c.value, c.hops.join(" -> ")));
        }
        if chains.is_empty() {
            chains.push_str("none\n");
        }
        vec![
            ContextBlock::new("anomalies", anomalies),
            ContextBlock::new("causal candidates", candidates),
            ContextBlock::new("trace chains", chains),
            ContextBlock::new("coverage", self.coverage.note()),
        ]
    }
}

fn class_tag(c: AnomalyClass) -> &'static str {
    match c {
        AnomalyClass::ErrorEvent => "#ERROR_EVENT",
        AnomalyClass::CorrelatedDownstream => "#CORRELATED_DOWNSTREAM",
        AnomalyClass::PatternMatch => "#PATTERN_MATCH",
    }
}

fn chain_depth(report: &AnomalyReport, id: EventId) -> usize {
    report.trace_chains.iter().filter(|c| c.events.iter().any(|e| e.id == id)).map(TraceChain::depth).max().unwrap_or(0)
}

fn service_distance(report: &AnomalyReport, service: &str) -> usize {
    if service == report.alert_service {
        return 0;
    }
    report
        .trace_chains
        .iter()
        .filter_map(|c| {
            let a = c.hops.iter().position(|h| h == &report.alert_service)?;
            let b = c.hops.iter().position(|h| h == service)?;
            Some(a.abs_diff(b))
        })
        .min()
        .unwrap_or(usize::MAX / 2)
}

/// Error-level anomalies, earliest first; ties prefer the longer trace chain,
/// then the service closest to the alerting one, then the lower event id.
fn rank_candidates(report: &AnomalyReport) -> Vec<CausalCandidate> {
    let mut errors: Vec<(Timestamp, std::cmp::Reverse<usize>, usize, EventId, &StoredEvent)> = report
        .anomalies
        .iter()
        .filter(|a| a.event.event.level == LogLevel::Error)
        .map(|a| {
            let depth = chain_depth(report, a.event.id);
            let dist = service_distance(report, &a.event.event.service);
            (a.event.event.ts, std::cmp::Reverse(depth), dist, a.event.id, &a.event)
        })
        .collect();
    errors.sort_by_key(|(ts, depth, dist, id, _)| (*ts, *depth, *dist, *id));
    errors
        .into_iter()
        .enumerate()
        .map(|(i, (_, depth, _, id, e))| CausalCandidate {
            event_id: id,
            rationale: format!(
                "{} error in {} at {}; chain depth {}",
                if i == 0 { "earliest" } else { "later" },
                e.event.service,
                e.event.ts,
                depth.0
            ),
        })
        .collect()
}

fn classify(ctx: &AlertContext, e: &StoredEvent) -> AnomalyClass {
    if e.event.level == LogLevel::Error {
        AnomalyClass::ErrorEvent
    } else if e.event.service == ctx.service {
        AnomalyClass::PatternMatch
    } else {
        AnomalyClass::CorrelatedDownstream
    }
}

/// Runs [`build_queries`] with paging and backoff.
pub fn initial_evidence(
    ctx: &AlertContext,
    store: &TelemetryStore,
    rt: &dyn Runtime,
    cfg: &LogAgentConfig,
    stats: &mut ThrottleStats,
) -> AnomalyReport {
    let mut report = AnomalyReport::empty(ctx);
    report.coverage.services_queried.insert(ctx.service.clone());
    report.coverage.services_reachable.insert(ctx.service.clone());
    for (i, q) in build_queries(ctx, cfg.query_limit).iter().enumerate() {
        match query_paged(store, rt, q, cfg.page_size, cfg.retry(), stats) {
            Ok(events) => {
                for e in events {
                    report.coverage.services_reachable.insert(e.event.service.clone());
                    let class = classify(ctx, &e);
                    report.add(e, class);
                }
            }
            Err(err) => report.coverage.gaps.push(format!("query {i}: {err}")),
        }
    }
    report.normalize();
    report
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FetchTarget {
    Trace { kind: String, value: String },
    Service { service: String },
}

impl fmt::Display for FetchTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FetchTarget::Trace { kind, value } => write!(f, "trace {kind}={value}"),
            FetchTarget::Service { service } => write!(f, "service {service}"),
        }
    }
}

/// Traces for every identifier plus every non-alerting service seen so far.
pub fn downstream_targets(ctx: &AlertContext, report: &AnomalyReport) -> Vec<FetchTarget> {
    let mut out: Vec<FetchTarget> =
        ctx.identifiers.iter().map(|(k, v)| FetchTarget::Trace { kind: k.clone(), value: v.clone() }).collect();
    let services: BTreeSet<&String> =
        report.anomalies.iter().map(|a| &a.event.event.service).filter(|s| **s != ctx.service).collect();
    out.extend(services.into_iter().map(|s| FetchTarget::Service { service: s.clone() }));
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchResult {
    pub target: FetchTarget,
    pub outcome: Result<Vec<StoredEvent>, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<TraceChain>,
}

pub fn fetch_target(
    ctx: &AlertContext,
    target: &FetchTarget,
    store: &TelemetryStore,
    rt: &dyn Runtime,
    cfg: &LogAgentConfig,
    stats: &mut ThrottleStats,
) -> FetchResult {
    match target {
        FetchTarget::Trace { kind, value } => {
            let r = with_backoff(rt, cfg.retry(), stats, |now| {
                store.trace_correlation(kind, value, ctx.window_start, ctx.window_end, now)
            });
            match r {
                Ok(chain) => {
                    FetchResult { target: target.clone(), outcome: Ok(chain.events.clone()), chain: Some(chain) }
                }
                Err(e) => FetchResult { target: target.clone(), outcome: Err(e.to_string()), chain: None },
            }
        }
        FetchTarget::Service { service } => {
            let q = LogQuery::range(ctx.window_start, ctx.window_end)
                .service(service)
                .min_level(LogLevel::Error)
                .limit(cfg.query_limit);
            let outcome = query_paged(store, rt, &q, cfg.page_size, cfg.retry(), stats)
                .map_err(|e: TelemetryError| e.to_string());
            FetchResult { target: target.clone(), outcome, chain: None }
        }
    }
}

/// Folds fetch results into `report`. The result does not depend on the order
/// of `results`.
pub fn merge_fetches(ctx: &AlertContext, report: &mut AnomalyReport, results: Vec<FetchResult>) {
    for r in results {
        if let FetchTarget::Service { service } = &r.target {
            report.coverage.services_queried.insert(service.clone());
        }
        match r.outcome {
            Ok(events) => {
                for e in events {
                    report.coverage.services_reachable.insert(e.event.service.clone());
                    let class = classify(ctx, &e);
                    report.add(e, class);
                }
                if let Some(chain) = r.chain {
                    report.trace_chains.push(chain);
                }
            }
            Err(e) => report.coverage.gaps.push(format!("{}: {e}", r.target)),
        }
    }
    report.normalize();
}

/// Records downstream fetches that missed the synthesis cutoff.
pub fn mark_late(report: &mut AnomalyReport, targets: &[FetchTarget]) {
    report.coverage.late.extend(targets.iter().map(|t| t.to_string()));
    report.normalize();
}

/// The whole retrieval inline: initial queries, then every downstream fetch.
pub fn collect_and_correlate(
    ctx: &AlertContext,
    store: &TelemetryStore,
    rt: &dyn Runtime,
    cfg: &LogAgentConfig,
    stats: &mut ThrottleStats,
) -> AnomalyReport {
    let mut report = initial_evidence(ctx, store, rt, cfg, stats);
    let results: Vec<FetchResult> =
        downstream_targets(ctx, &report).iter().map(|t| fetch_target(ctx, t, store, rt, cfg, stats)).collect();
    merge_fetches(ctx, &mut report, results);
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::Severity;
    use crate::runtime::ManualRuntime;
    use crate::telemetry::{LogEvent, RateLimitConfig};

    fn alert(service: &str, at: i64) -> Alert {
        Alert {
            alert_id: "a".into(),
            service: service.into(),
            alert_type: "content_validation_error".into(),
            severity: Severity::Warn,
            fired_at: Timestamp(at),
            correlation: BTreeMap::new(),
            payload: BTreeMap::new(),
            monitor: "m".into(),
        }
    }

    fn ctx_with_session(at: i64) -> AlertContext {
        let mut a = alert("aem-publish", at);
        a.correlation.insert("session_id".into(), "s-42".into());
        extract_metadata(&a, "inc-1", &LogAgentConfig::default())
    }

    #[test]
    fn metadata_extraction() {
        let cfg = LogAgentConfig::default();
        let mut a = alert("svc", 1_000_000);
        assert!(extract_metadata(&a, "i", &cfg).identifiers.is_empty());
        a.correlation.insert("sessionId".into(), "s-42".into());
        a.payload.insert("requestId".into(), "r-7".into());
        a.payload.insert("other".into(), "zzz".into());
        let ctx = extract_metadata(&a, "i", &cfg);
        assert_eq!(ctx.identifiers.get("session_id").map(String::as_str), Some("s-42"));
        assert_eq!(ctx.identifiers.get("request_id").map(String::as_str), Some("r-7"));
        assert_eq!(ctx.identifiers.len(), 2);
        assert!(ctx.window_start <= ctx.fired_at && ctx.fired_at <= ctx.window_end);
        assert_eq!(ctx.window_start, Timestamp(1_000_000 - 15 * MINUTE_MS));
    }

    #[test]
    fn query_counts() {
        let cfg = LogAgentConfig::default();
        let mut a = alert("svc", 0);
        assert_eq!(build_queries(&extract_metadata(&a, "i", &cfg), 10).len(), 1);
        a.correlation.insert("session_id".into(), "s".into());
        let qs = build_queries(&extract_metadata(&a, "i", &cfg), 10);
        assert_eq!(qs.len(), 2);
        assert_eq!(qs[0].min_level, Some(LogLevel::Error));
        assert!(qs[1].services.is_none());
        a.correlation.insert("request_id".into(), "r".into());
        assert_eq!(build_queries(&extract_metadata(&a, "i", &cfg), 10).len(), 3);
    }

    fn case_store(at: i64) -> TelemetryStore {
        let store = TelemetryStore::new();
        store
            .append_events(vec![
                LogEvent::new(Timestamp(at - 30_000), "checkout-web", LogLevel::Info, "render")
                    .with_id("session_id", "s-42"),
                LogEvent::new(Timestamp(at - 29_000), "aem-publish", LogLevel::Error, "Content validation failed")
                    .with_id("session_id", "s-42")
                    .with_field("fragment", "promo-hero")
                    .with_field("variant", "summer")
                    .with_field("locale", "de-DE"),
                LogEvent::new(Timestamp(at - 28_000), "checkout-web", LogLevel::Warn, "fallback to cached")
                    .with_id("session_id", "s-42"),
                LogEvent::new(Timestamp(at - 27_000), "cdn-edge", LogLevel::Info, "served static")
                    .with_id("session_id", "s-42"),
                LogEvent::new(Timestamp(at - 26_000), "cdn-edge", LogLevel::Info, "unrelated")
                    .with_id("session_id", "s-99"),
            ])
            .unwrap();
        store
    }

    #[test]
    fn case_study_report() {
        let at = 10 * MINUTE_MS * 100;
        let store = case_store(at);
        let rt = ManualRuntime::new(Timestamp(at));
        let ctx = ctx_with_session(at);
        let report =
            collect_and_correlate(&ctx, &store, &rt, &LogAgentConfig::default(), &mut ThrottleStats::default());
        assert_eq!(report.causal_candidates.len(), 1);
        assert_eq!(report.trace_chains.len(), 1);
        assert_eq!(report.trace_chains[0].hops, ["checkout-web", "aem-publish", "cdn-edge"]);
        let cand = report.event(report.causal_candidates[0].event_id).unwrap();
        for f in ["fragment", "variant", "locale"] {
            assert!(cand.event.fields.contains_key(f));
        }
        assert_eq!(report.anomalies.len(), 4);
        for a in &report.anomalies {
            assert_eq!(store.get(a.event.id).as_ref(), Some(&a.event));
        }
        let classes: Vec<AnomalyClass> = report.anomalies.iter().map(|a| a.class).collect();
        assert_eq!(
            classes,
            [
                AnomalyClass::CorrelatedDownstream,
                AnomalyClass::ErrorEvent,
                AnomalyClass::CorrelatedDownstream,
                AnomalyClass::CorrelatedDownstream
            ]
        );
    }

    #[test]
    fn no_errors_means_no_candidates() {
        let store = TelemetryStore::new();
        store
            .append_events(vec![
                LogEvent::new(Timestamp(0), "down", LogLevel::Warn, "slow").with_id("session_id", "s-42")
            ])
            .unwrap();
        let rt = ManualRuntime::new(Timestamp(0));
        let ctx = ctx_with_session(60_000);
        let report =
            collect_and_correlate(&ctx, &store, &rt, &LogAgentConfig::default(), &mut ThrottleStats::default());
        assert!(report.causal_candidates.is_empty());
        assert_eq!(report.anomalies[0].class, AnomalyClass::CorrelatedDownstream);
    }

    #[test]
    fn merge_order_insensitive() {
        let at = 1_000_000;
        let store = case_store(at);
        let rt = ManualRuntime::new(Timestamp(at));
        let ctx = ctx_with_session(at);
        let cfg = LogAgentConfig::default();
        let mut stats = ThrottleStats::default();
        let base = initial_evidence(&ctx, &store, &rt, &cfg, &mut stats);
        let results: Vec<FetchResult> = downstream_targets(&ctx, &base)
            .iter()
            .map(|t| fetch_target(&ctx, t, &store, &rt, &cfg, &mut stats))
            .collect();
        assert!(results.len() >= 2);
        let mut forward = base.clone();
        merge_fetches(&ctx, &mut forward, results.clone());
        let mut backward = base;
        merge_fetches(&ctx, &mut backward, results.into_iter().rev().collect());
        assert_eq!(serde_json::to_string(&forward).unwrap(), serde_json::to_string(&backward).unwrap());
    }

    #[test]
    fn throttling_changes_nothing_but_time() {
        let at = 1_000_000;
        let cfg = LogAgentConfig { page_size: 1, ..LogAgentConfig::default() };
        let ctx = ctx_with_session(at);
        let free = case_store(at);
        let rt = ManualRuntime::new(Timestamp(at));
        let a = collect_and_correlate(&ctx, &free, &rt, &cfg, &mut ThrottleStats::default());
        let slow = case_store(at);
        slow.set_rate_limit(Some(RateLimitConfig::new(1, 1.0).unwrap()));
        let rt2 = ManualRuntime::new(Timestamp(at));
        let mut stats = ThrottleStats::default();
        let b = collect_and_correlate(&ctx, &slow, &rt2, &cfg, &mut stats);
        assert_eq!(a, b);
        assert!(stats.retries > 0);
        assert!(rt2.now() > Timestamp(at));
    }

    #[test]
    fn exhausted_backoff_is_a_coverage_gap() {
        let at = 1_000_000;
        let store = case_store(at);
        store.set_rate_limit(Some(RateLimitConfig::new(1, 0.001).unwrap()));
        let rt = ManualRuntime::new(Timestamp(at));
        let cfg = LogAgentConfig { max_retries: 0, ..LogAgentConfig::default() };
        let report = collect_and_correlate(&ctx_with_session(at), &store, &rt, &cfg, &mut ThrottleStats::default());
        assert!(!report.coverage.gaps.is_empty());
        assert!(report.coverage.note().contains("gaps"));
    }

    #[test]
    fn earliest_first_then_depth() {
        let store = TelemetryStore::new();
        store
            .append_events(vec![
                LogEvent::new(Timestamp(100), "a", LogLevel::Error, "x"),
                LogEvent::new(Timestamp(100), "a", LogLevel::Error, "y").with_id("session_id", "s-42"),
                LogEvent::new(Timestamp(101), "b", LogLevel::Info, "z").with_id("session_id", "s-42"),
                LogEvent::new(Timestamp(50), "a", LogLevel::Error, "first"),
            ])
            .unwrap();
        let mut al = alert("a", 1000);
        al.correlation.insert("session_id".into(), "s-42".into());
        let ctx = extract_metadata(&al, "i", &LogAgentConfig::default());
        let rt = ManualRuntime::new(Timestamp(1000));
        let report =
            collect_and_correlate(&ctx, &store, &rt, &LogAgentConfig::default(), &mut ThrottleStats::default());
        let order: Vec<&str> =
            report.causal_candidates.iter().map(|c| report.event(c.event_id).unwrap().event.message.as_str()).collect();
        assert_eq!(order, ["first", "y", "x"]);
    }
}
