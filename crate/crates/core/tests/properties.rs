//! Randomized checks of the engine's invariants.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use triage_core::action::{
    audit, replay_decisions, ActionRuntime, Binding, Decision, Execution, Invocation, ParamSchema, Risk, ToolSpec,
};
use triage_core::gateway::{Alert, DedupPolicy, DedupRule};
use triage_core::incident::{AdmissionKind, IncidentState, IncidentStore};
use triage_core::knowledge::{DocKind, KnowledgeDoc, KnowledgeStore};
use triage_core::log_agent::{build_queries, extract_metadata, initial_evidence, LogAgentConfig};
use triage_core::metrics::{compute_ar, compute_eer, compute_ela, compute_mtti};
use triage_core::reasoner::{render_prompt, AgentRole, ContextBlock, Reasoner, RuleTable, ScriptedReasoner};
use triage_core::reflection::most_confident;
use triage_core::replay::{replay, ApprovalMode, ReplayInputs, ReplayOptions};
use triage_core::runtime::{ManualRuntime, Runtime};
use triage_core::scenario::{generate, GeneratorSpec};
use triage_core::telemetry::{query_paged, LogLevel, RateLimitConfig, RetryPolicy, TelemetryStore, ThrottleStats};
use triage_core::time::{Timestamp, MINUTE_MS, SECOND_MS};

use common::*;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, failure_persistence: None, ..ProptestConfig::default() }
}

// ---------------------------------------------------------------------------
// Admission

fn arb_alerts() -> impl Strategy<Value = Vec<Alert>> {
    prop::collection::vec((0usize..12, 0usize..2, 0usize..2, 0i64..1_200_000), 1..40).prop_map(|raw| {
        raw.into_iter()
            .map(|(id, svc, ty, t)| alert(&format!("a{id}"), ["web", "db"][svc], ["spike", "down"][ty], t))
            .collect()
    })
}

fn arb_policy() -> impl Strategy<Value = DedupPolicy> {
    let rule =
        prop_oneof![Just(DedupRule::Independent), (0u64..900).prop_map(|w| DedupRule::Windowed { window_seconds: w })];
    (rule.clone(), prop::option::of(rule)).prop_map(|(default, spike)| {
        let p = DedupPolicy { default, per_alert_type: BTreeMap::new() };
        match spike {
            Some(r) => p.with_rule("spike", r),
            None => p,
        }
    })
}

proptest! {
    #![proptest_config(config(128))]

    #[test]
    fn admission_respects_dedup(alerts in arb_alerts(), policy in arb_policy()) {
        let store = IncidentStore::new();
        let mut first_seen: BTreeMap<String, String> = BTreeMap::new();
        for a in &alerts {
            let adm = store.admit(a.clone(), &policy, a.fired_at);
            match first_seen.get(&a.alert_id) {
                Some(id) => {
                    prop_assert_eq!(adm.kind, AdmissionKind::Duplicate);
                    prop_assert_eq!(&adm.incident_id, id);
                }
                None => {
                    prop_assert_ne!(adm.kind, AdmissionKind::Duplicate);
                    first_seen.insert(a.alert_id.clone(), adm.incident_id);
                }
            }
        }
        let unique = first_seen.len();
        let records = store.list(None);
        prop_assert!(records.len() <= unique);
        let independent = alerts.iter().all(|a| policy.rule_for(&a.alert_type) == DedupRule::Independent);
        if independent {
            prop_assert_eq!(records.len(), unique);
        }
        let attached: usize = records.iter().map(|r| r.alerts.len()).sum();
        prop_assert_eq!(attached, unique);
        for r in &records {
            prop_assert_eq!(r.phase_timeline[0].state, IncidentState::Received);
            let head = r.first_alert();
            for a in &r.alerts[1..] {
                prop_assert_eq!((&a.service, &a.alert_type), (&head.service, &head.alert_type));
                let DedupRule::Windowed { window_seconds } = policy.rule_for(&a.alert_type) else {
                    return Err(TestCaseError::fail("attached under INDEPENDENT"));
                };
                prop_assert!(a.fired_at >= head.fired_at);
                prop_assert!(a.fired_at.0 - head.fired_at.0 <= window_seconds as i64 * 1000);
            }
        }
        // Re-ingesting everything changes nothing.
        let before = store.list(None);
        for a in &alerts {
            prop_assert_eq!(store.admit(a.clone(), &policy, a.fired_at).kind, AdmissionKind::Duplicate);
        }
        prop_assert_eq!(store.list(None), before);
    }
}

// ---------------------------------------------------------------------------
// Telemetry under throttling

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn throttled_queries_eventually_return_the_same_rows(
        seed in any::<u64>(),
        capacity in 1u32..4,
        rate in 0.2f64..5.0,
        page in 1usize..8,
    ) {
        let events = random_events(seed, 120);
        let free = TelemetryStore::new();
        free.append_events(events.clone()).unwrap();
        let slow = TelemetryStore::new();
        slow.append_events(events).unwrap();
        slow.set_rate_limit(Some(RateLimitConfig::new(capacity, rate).unwrap()));
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let rt_free = ManualRuntime::new(Timestamp(0));
        let rt_slow = ManualRuntime::new(Timestamp(0));
        let policy = RetryPolicy { max_retries: u32::MAX };
        let mut stats = ThrottleStats::default();
        for _ in 0..6 {
            let q = random_query(&mut rng);
            let a = query_paged(&free, &rt_free, &q, page, policy, &mut ThrottleStats::default()).unwrap();
            let b = query_paged(&slow, &rt_slow, &q, page, policy, &mut stats).unwrap();
            prop_assert_eq!(a, b);
        }
        prop_assert_eq!(rt_free.now(), Timestamp(0));
        prop_assert!(stats.waited_ms >= 0);
        prop_assert_eq!(rt_slow.now().0, stats.waited_ms);
    }
}

// ---------------------------------------------------------------------------
// Knowledge retrieval

const VOCAB: [&str; 10] =
    ["cache", "deploy", "timeout", "pool", "banner", "locale", "rollback", "quota", "tls", "queue"];

fn arb_doc(i: usize) -> impl Strategy<Value = KnowledgeDoc> {
    (prop::collection::vec(0usize..VOCAB.len(), 1..12), 0usize..3, 0usize..2, 0i64..1_000_000).prop_map(
        move |(words, kind, svc, at)| {
            let kind = [DocKind::Runbook, DocKind::Wiki, DocKind::Deployment][kind];
            let mut meta = BTreeMap::new();
            if kind == DocKind::Deployment {
                meta.insert("commit_id".into(), format!("c{i}"));
                meta.insert("deployed_at".into(), at.to_string());
            }
            KnowledgeDoc {
                doc_id: format!("d{i:03}"),
                kind,
                service: Some(["web", "db"][svc].to_string()),
                title: format!("doc {i}"),
                body: words.iter().map(|w| VOCAB[*w]).collect::<Vec<_>>().join(" "),
                meta,
            }
        },
    )
}

fn arb_docs() -> impl Strategy<Value = Vec<KnowledgeDoc>> {
    (1usize..25).prop_flat_map(|n| (0..n).map(arb_doc).collect::<Vec<_>>())
}

fn index(docs: &[KnowledgeDoc]) -> KnowledgeStore {
    let kb = KnowledgeStore::new();
    for d in docs {
        kb.index_doc(d.clone()).unwrap();
    }
    kb
}

proptest! {
    #![proptest_config(config(128))]

    #[test]
    fn search_is_deterministic_and_ignores_irrelevant_docs(
        docs in arb_docs(),
        query in prop::collection::vec(0usize..VOCAB.len(), 1..4),
        k in 1usize..10,
    ) {
        let query: Vec<&str> = query.iter().map(|w| VOCAB[*w]).collect();
        let query = query.join(" ");
        let kb = index(&docs);
        let hits = kb.search(&query, None, None, k).unwrap();
        prop_assert_eq!(&hits, &kb.search(&query, None, None, k).unwrap());
        let mut reversed = docs.clone();
        reversed.reverse();
        prop_assert_eq!(&hits, &index(&reversed).search(&query, None, None, k).unwrap());
        prop_assert!(hits.windows(2).all(|w| w[0].score > w[1].score
            || (w[0].score == w[1].score && w[0].doc_id < w[1].doc_id)));
        let noisy = KnowledgeStore::new();
        for d in &docs {
            noisy.index_doc(d.clone()).unwrap();
        }
        noisy.index_doc(KnowledgeDoc {
            doc_id: "zz-unrelated".into(),
            kind: DocKind::Wiki,
            service: None,
            title: "unrelated".into(),
            body: "lunch menu parking garage".into(),
            meta: BTreeMap::new(),
        }).unwrap();
        prop_assert_eq!(&hits, &noisy.search(&query, None, None, k).unwrap());
    }

    #[test]
    fn recent_deployments_since_the_beginning_lists_all(docs in arb_docs()) {
        let kb = index(&docs);
        for svc in ["web", "db"] {
            let got = kb.recent_deployments(svc, Timestamp::MIN);
            let want: BTreeSet<&str> = docs
                .iter()
                .filter(|d| d.kind == DocKind::Deployment && d.service.as_deref() == Some(svc))
                .map(|d| d.doc_id.as_str())
                .collect();
            let ids: BTreeSet<&str> = got.iter().map(|d| d.doc_id.as_str()).collect();
            prop_assert_eq!(ids, want);
            prop_assert!(got.windows(2).all(|w| w[0].deployed_at() >= w[1].deployed_at()));
        }
    }
}

// ---------------------------------------------------------------------------
// Reasoner and prompts

fn generic_rules() -> RuleTable {
    RuleTable::load(&repo_path("rules/generic.json")).unwrap()
}

const SNIPPETS: [&str; 8] = [
    "alert_type=error_rate_spike",
    "alert_type=upstream_error_rate",
    "service=pricing-svc",
    "upstream timeout calling inventory-svc",
    "NullPointerException",
    "[doc:deploy-abc123]",
    "[log:17] 2025-01-01T00:00:00Z pricing-svc ERROR boom",
    "g-deploy g-dep",
];

proptest! {
    #![proptest_config(config(128))]

    #[test]
    fn scripted_reasoner_is_deterministic(
        picks in prop::collection::vec(prop::collection::vec(0usize..SNIPPETS.len(), 0..5), 1..4),
        role in 0usize..3,
        schema in 0usize..4,
    ) {
        let blocks: Vec<ContextBlock> = picks
            .iter()
            .enumerate()
            .map(|(i, p)| ContextBlock::new(format!("b{i}"), p.iter().map(|j| SNIPPETS[*j]).collect::<Vec<_>>().join("\n")))
            .collect();
        let role = [AgentRole::LogAgent, AgentRole::Planner, AgentRole::Reflector][role];
        let schema = ["gaps.v1", "plan.v1", "summary.v1", "verdict.v1"][schema];
        let prompt = render_prompt(role, "triage", blocks, schema, 32 * 1024);
        let a = ScriptedReasoner::new(generic_rules()).complete(&prompt);
        let b = ScriptedReasoner::new(generic_rules()).complete(&prompt);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn rendered_prompt_fits_the_budget(
        sizes in prop::collection::vec(0usize..400, 0..12),
        budget in 0usize..2000,
    ) {
        let blocks: Vec<ContextBlock> =
            sizes.iter().enumerate().map(|(i, n)| ContextBlock::new(format!("block-{i}"), "x".repeat(*n))).collect();
        let total: usize = blocks.iter().map(|b| b.label.len() + b.text.len()).sum();
        let prompt = render_prompt(AgentRole::Planner, "", blocks.clone(), "plan.v1", budget);
        prop_assert!(prompt.context_size() <= budget);
        if total <= budget {
            prop_assert_eq!(prompt.context_blocks, blocks);
        } else {
            // What survives is a suffix of the input, after the marker.
            let kept = &prompt.context_blocks;
            if let Some((marker, rest)) = kept.split_first() {
                prop_assert_eq!(marker.label.as_str(), "[truncated]");
                if let Some(last) = rest.last() {
                    prop_assert_eq!(&last.label, &blocks.last().unwrap().label);
                    prop_assert!(blocks.last().unwrap().text.ends_with(&last.text));
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Log agent

proptest! {
    #![proptest_config(config(128))]

    #[test]
    fn log_agent_reports_only_stored_events(
        seed in any::<u64>(),
        svc in 0usize..SERVICES.len(),
        fired in 0i64..100_000,
        session in prop::option::of(0u32..20),
        lookback in 0i64..60_000,
    ) {
        let events = random_events(seed, 150);
        let store = TelemetryStore::new();
        store.append_events(events.clone()).unwrap();
        let mut a = alert("a", SERVICES[svc], "spike", fired);
        if let Some(s) = session {
            a.correlation.insert("session_id".into(), format!("s{s}"));
        }
        let cfg = LogAgentConfig { lookback_ms: lookback, lookahead_ms: 5_000, page_size: 7, ..LogAgentConfig::default() };
        let ctx = extract_metadata(&a, "inc-1", &cfg);
        let rt = ManualRuntime::new(a.fired_at);
        let report = initial_evidence(&ctx, &store, &rt, &cfg, &mut ThrottleStats::default());

        let mut want: BTreeSet<u64> = BTreeSet::new();
        for q in build_queries(&ctx, cfg.query_limit) {
            want.extend(oracle_query(&events, &q).into_iter().map(|(id, _)| id));
        }
        let got: BTreeSet<u64> = report.anomalies.iter().map(|x| x.event.id.0).collect();
        prop_assert_eq!(got, want);
        for x in &report.anomalies {
            prop_assert_eq!(Some(x.event.clone()), store.get(x.event.id));
        }
        prop_assert!(report.anomalies.windows(2).all(|w| (w[0].event.event.ts, w[0].event.id) < (w[1].event.event.ts, w[1].event.id)));

        let errors: BTreeSet<u64> = report
            .anomalies
            .iter()
            .filter(|x| x.event.event.level == LogLevel::Error)
            .map(|x| x.event.id.0)
            .collect();
        let ranked: Vec<u64> = report.causal_candidates.iter().map(|c| c.event_id.0).collect();
        prop_assert_eq!(ranked.iter().copied().collect::<BTreeSet<_>>(), errors);
        let ts: Vec<Timestamp> = ranked.iter().map(|id| report.event(triage_core::telemetry::EventId(*id)).unwrap().event.ts).collect();
        prop_assert!(ts.windows(2).all(|w| w[0] <= w[1]));
    }
}

// ---------------------------------------------------------------------------
// Approval gating

#[derive(Debug, Clone)]
enum Op {
    Low,
    High,
    Decide { pick: usize, approve: bool },
    Advance(i64),
    Expire,
}

fn arb_op() -> impl Strategy<Value = Op> {
    prop_oneof![
        Just(Op::Low),
        Just(Op::High),
        (any::<usize>(), any::<bool>()).prop_map(|(pick, approve)| Op::Decide { pick, approve }),
        (0i64..120_000).prop_map(Op::Advance),
        Just(Op::Expire),
    ]
}

fn tool(name: &str, risk: Risk) -> ToolSpec {
    ToolSpec {
        name: name.into(),
        description: name.into(),
        risk,
        params: ParamSchema::new(name, &["target"]),
        binding: Binding::Internal { name: name.into() },
        timeout_seconds: 5,
    }
}

proptest! {
    #![proptest_config(config(256))]

    #[test]
    fn approval_sequences_audit_clean(ops in prop::collection::vec(arb_op(), 1..60), ttl in 1i64..300) {
        let actions = ActionRuntime::new(ttl * SECOND_MS);
        let ok = Arc::new(|_: &Invocation<'_>| Ok(BTreeMap::new()));
        actions.register_tool(tool("low", Risk::Low), ok.clone()).unwrap();
        actions.register_tool(tool("high", Risk::High), ok).unwrap();
        let rt = ManualRuntime::new(Timestamp(0));
        let args = BTreeMap::from([("target".to_string(), "x".to_string())]);
        let mut ids = Vec::new();
        let (mut lows, mut approved) = (0, 0);
        for op in ops {
            match op {
                Op::Low => {
                    let r = actions.request_execution("inc", "low", &args, &rt).unwrap();
                    prop_assert!(matches!(r, Execution::Executed(_)));
                    lows += 1;
                }
                Op::High => match actions.request_execution("inc", "high", &args, &rt).unwrap() {
                    Execution::PendingApproval(id) => ids.push(id),
                    Execution::Executed(_) => return Err(TestCaseError::fail("HIGH ran without approval")),
                },
                Op::Decide { pick, approve } if !ids.is_empty() => {
                    let id = &ids[pick % ids.len()];
                    let before = actions.approval(id).unwrap().decision;
                    let r = actions.resolve_approval(id, approve, "op", &rt);
                    prop_assert_eq!(r.is_ok(), before == Decision::Pending);
                    if r.is_ok() && approve {
                        approved += 1;
                    }
                }
                Op::Decide { .. } => {}
                Op::Advance(ms) => rt.sleep(ms),
                Op::Expire => {
                    actions.expire_stale(rt.now());
                }
            }
        }
        let log = actions.audit_log();
        let risks = BTreeMap::from([("low".to_string(), Risk::Low), ("high".to_string(), Risk::High)]);
        let report = audit(&log, &risks);
        prop_assert!(report.violations.is_empty(), "{:?}", report.violations);
        prop_assert_eq!(report.high_risk_executions, approved);
        prop_assert_eq!(report.low_risk_executions, lows);
        let all = actions.approvals(None);
        prop_assert!(all.iter().all(|r| r.tool == "high"));
        let book: BTreeMap<String, Decision> = all.into_iter().map(|r| (r.approval_id, r.decision)).collect();
        prop_assert_eq!(replay_decisions(&log), book);
    }
}

// ---------------------------------------------------------------------------
// Reflection

proptest! {
    #![proptest_config(config(256))]

    #[test]
    fn most_confident_is_the_last_maximum(conf in prop::collection::vec(0u8..5, 0..8)) {
        let history: Vec<_> =
            conf.iter().enumerate().map(|(i, c)| summary("inc", "x", *c as f64 / 4.0, i as i64)).collect();
        let want = conf.iter().copied().max().map(|m| conf.iter().rposition(|c| *c == m).unwrap());
        prop_assert_eq!(most_confident(&history), want);
    }
}

// ---------------------------------------------------------------------------
// Whole replays

fn small_generic(count: u32) -> ReplayInputs {
    let mut inputs = generic_scenario();
    inputs.spec.generators = vec![GeneratorSpec::Mix { count, code_regression: 3, dependency_failure: 2, spurious: 1 }];
    inputs
}

proptest! {
    #![proptest_config(config(8))]

    #[test]
    fn replayed_incidents_keep_their_invariants(seed in any::<u64>(), approve in any::<bool>(), workers in 1usize..6) {
        let inputs = small_generic(12);
        let approval = if approve { ApprovalMode::default() } else { ApprovalMode::Disabled };
        let out = replay(&inputs, &ReplayOptions { seed: Some(seed), approval, workers: Some(workers), ..Default::default() })
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        for r in &out.agent {
            prop_assert!(r.check_invariants().is_ok(), "{}: {:?}", r.incident_id, r.check_invariants());
            for w in r.phase_timeline.windows(2) {
                prop_assert!(w[0].state.can_transition(w[1].state));
            }
            if r.state == IncidentState::Closed {
                let receipt = r.notification.as_ref();
                prop_assert!(receipt.is_some_and(|n| n.attempts >= 1));
                let notified = r.phase_timeline.iter().filter(|p| p.state == IncidentState::Notified).count();
                prop_assert_eq!(notified, 1);
            }
            for plan in &out.artifacts[&r.incident_id].plans {
                prop_assert!(plan.validate().is_ok(), "{:?}", plan.validate());
            }
        }
        let report = out.audit();
        prop_assert!(report.violations.is_empty());
        if !approve {
            prop_assert_eq!(report.high_risk_executions, 0);
        }
    }

    #[test]
    fn throttling_only_changes_timing(seed in any::<u64>()) {
        let inputs = small_generic(8);
        let free = replay(&inputs, &ReplayOptions { seed: Some(seed), ..Default::default() }).unwrap();
        let rate = RateLimitConfig::new(1, 2.0).unwrap();
        let slow = replay(&inputs, &ReplayOptions { seed: Some(seed), rate_limit: Some(rate), ..Default::default() }).unwrap();
        prop_assert_eq!(free.agent.len(), slow.agent.len());
        for (a, b) in free.agent.iter().zip(&slow.agent) {
            prop_assert_eq!(a.state, b.state);
            prop_assert_eq!(a.summary.as_ref().map(|s| s.content()), b.summary.as_ref().map(|s| s.content()));
        }
    }

    #[test]
    fn generated_scenarios_are_reproducible(seed in any::<u64>(), count in 1u32..40) {
        let mut inputs = ReplayInputs::load(&repo_path("scenarios/case_study.json")).unwrap();
        inputs.spec.generators.push(GeneratorSpec::Mix { count, code_regression: 1, dependency_failure: 1, spurious: 1 });
        let a = generate(&inputs.spec, seed).unwrap();
        prop_assert_eq!(&a, &generate(&inputs.spec, seed).unwrap());
        let ids: BTreeSet<&String> = a.alerts.iter().map(|s| &s.alert_id).collect();
        prop_assert_eq!(ids.len(), a.alerts.len());
        prop_assert_eq!(ids, a.ground_truth.keys().collect::<BTreeSet<_>>());
        let end = inputs.spec.start.plus_ms(inputs.spec.duration_minutes * MINUTE_MS);
        prop_assert!(a.alerts.iter().all(|s| s.fired_at >= inputs.spec.start && s.fired_at < end));
        prop_assert!(a.alerts.windows(2).all(|w| w[0].fired_at <= w[1].fired_at));
        // Repeating alerts tick once a minute.
        let mut ticks: BTreeMap<usize, BTreeSet<i64>> = BTreeMap::new();
        for s in &a.alerts {
            if a.faults[s.fault].template() == "content_validation" {
                ticks.entry(s.fault).or_default().insert(s.fired_at.0);
            }
        }
        prop_assert!(!ticks.is_empty());
        for t in ticks.values() {
            let t: Vec<i64> = t.iter().copied().collect();
            prop_assert!(t.windows(2).all(|w| w[1] - w[0] == MINUTE_MS));
        }
    }
}

// ---------------------------------------------------------------------------
// Metrics

proptest! {
    #![proptest_config(config(256))]

    #[test]
    fn metrics_ignore_record_order(seed in any::<u64>()) {
        let records = random_incidents(seed);
        let mut shuffled = records.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let close = |a: f64, b: f64| (a - b).abs() < 1e-9;
        match (compute_mtti(&records), compute_mtti(&shuffled)) {
            (Ok(a), Ok(b)) => prop_assert!(close(a, b)),
            (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
        }
        prop_assert!(close(compute_ela(&records).unwrap(), compute_ela(&shuffled).unwrap()));
        prop_assert!(close(compute_eer(&records).unwrap(), compute_eer(&shuffled).unwrap()));
        prop_assert_eq!(compute_ar(&records, 5 * MINUTE_MS), compute_ar(&shuffled, 5 * MINUTE_MS));
    }

    #[test]
    fn unbounded_ar_is_the_summarized_fraction(seed in any::<u64>()) {
        let records = random_incidents(seed);
        let summarized = records.iter().filter(|r| r.summary.is_some()).count();
        prop_assert_eq!(compute_ar(&records, i64::MAX), summarized as f64 / records.len() as f64);
        prop_assert_eq!(compute_ar(&[], 5 * MINUTE_MS), 0.0);
    }
}
