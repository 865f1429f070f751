//! Workflow engine behavior on the simulated clock.

mod common;

use std::sync::Arc;

use triage_core::action::{audit, Decision, ToolStatus};
use triage_core::incident::{IncidentRecord, IncidentState, MAX_REFLECTION_CYCLES};
use triage_core::orchestrator::{EngineConfig, MemoryNotifier};
use triage_core::reasoner::RuleTable;
use triage_core::time::SECOND_MS;

use common::*;

fn record(rig: &Rig, id: &str) -> IncidentRecord {
    rig.engine.services.incidents.get(id).expect("incident exists")
}

fn states(r: &IncidentRecord) -> Vec<IncidentState> {
    r.phase_timeline.iter().map(|p| p.state).collect()
}

fn high_risk_tool_results(rig: &Rig, id: &str) -> Vec<(String, ToolStatus)> {
    let arts = rig.engine.services.artifacts(id).expect("artifacts kept");
    arts.plans
        .iter()
        .flat_map(|p| &p.steps)
        .filter_map(|s| s.outcome.as_ref()?.tool_result.as_ref())
        .filter(|t| t.approval_id.is_some())
        .map(|t| (t.tool.clone(), t.status))
        .collect()
}

/// Operator that answers every pending request `delay_ms` after it sees it,
/// until `incidents` incidents exist and all are terminal.
fn operator(approve: bool, delay_ms: i64, incidents: usize) -> Operator {
    Box::new(move |engine, rt| loop {
        let all = engine.services.incidents.list(None);
        if all.len() == incidents && all.iter().all(|r| r.state.is_terminal()) {
            return;
        }
        let pending = engine.services.actions.approvals(Some(Decision::Pending));
        rt.sleep(if pending.is_empty() { SECOND_MS } else { delay_ms });
        for req in pending {
            let _ = engine.services.actions.resolve_approval(&req.approval_id, approve, "oncall", rt.as_ref());
        }
    })
}

#[test]
fn each_template_walks_the_happy_path() {
    let inputs = generic_scenario();
    let templates = ["code_regression", "dependency_failure", "spurious"];
    let (rig, ids) = simulate(
        &inputs,
        RigOptions::default(),
        |rig| templates.iter().map(|t| rig.alert_of(t)).collect(),
        Some(operator(true, 30 * SECOND_MS, 3)),
    );
    use IncidentState::*;
    for id in &ids {
        let r = record(&rig, id);
        r.check_invariants().unwrap();
        assert_eq!(r.state, Closed, "{id}: {:?}", r.failure);
        let s = states(&r);
        assert_eq!(&s[..5], &[Received, LogRetrieval, Planning, Executing, Reflecting]);
        assert_eq!(&s[s.len() - 3..], &[Summarized, Notified, Closed]);
        let receipt = r.notification.as_ref().unwrap();
        assert!(receipt.delivered && receipt.attempts == 1);
        assert!(rig.engine.services.trace(id).is_some_and(|t| !t.entries.is_empty()));
    }
}

#[test]
fn notification_retries_then_delivers() {
    let inputs = generic_scenario();
    let notifier = Arc::new(MemoryNotifier::failing(2));
    let opts = RigOptions { notifier: notifier.clone(), ..Default::default() };
    let (rig, ids) = simulate(&inputs, opts, |rig| vec![rig.alert_of("code_regression")], None);
    let r = record(&rig, &ids[0]);
    let receipt = r.notification.clone().unwrap();
    assert_eq!((receipt.attempts, receipt.delivered, receipt.note), (3, true, None));
    assert_eq!(notifier.delivered().len(), 1);
    let waited = r.entered_at(IncidentState::Notified).unwrap().0 - r.entered_at(IncidentState::Summarized).unwrap().0;
    assert_eq!(waited, 2 * EngineConfig::default().notify_backoff_ms);
}

#[test]
fn undeliverable_notification_still_closes() {
    let inputs = generic_scenario();
    let opts = RigOptions { notifier: Arc::new(MemoryNotifier::failing(5)), ..Default::default() };
    let (rig, ids) = simulate(&inputs, opts, |rig| vec![rig.alert_of("code_regression")], None);
    let r = record(&rig, &ids[0]);
    assert_eq!(r.state, IncidentState::Closed);
    let receipt = r.notification.unwrap();
    assert_eq!(receipt.attempts, 3);
    assert!(!receipt.delivered);
    assert!(receipt.note.unwrap().starts_with("NOTIFIED_DEGRADED"));
}

#[test]
fn reasoner_without_rules_fails_the_incident() {
    let inputs = generic_scenario();
    let opts = RigOptions { rules: Some(RuleTable::from_json(r#"{"rules": []}"#).unwrap()), ..Default::default() };
    let (rig, ids) = simulate(&inputs, opts, |rig| vec![rig.alert_of("code_regression")], None);
    let r = record(&rig, &ids[0]);
    r.check_invariants().unwrap();
    assert_eq!(r.state, IncidentState::Failed);
    assert!(r.failure.is_some());
    assert!(r.summary.is_none() && r.notification.is_none());
}

#[test]
fn denied_approval_yields_denied_result() {
    let inputs = generic_scenario();
    let (rig, ids) = simulate(
        &inputs,
        RigOptions::default(),
        |rig| vec![rig.alert_of("dependency_failure")],
        Some(operator(false, 30 * SECOND_MS, 1)),
    );
    let results = high_risk_tool_results(&rig, &ids[0]);
    assert!(!results.is_empty(), "dependency failures request a HIGH-risk restart");
    assert!(results.iter().all(|(_, s)| *s == ToolStatus::Denied), "{results:?}");
    let actions = &rig.engine.services.actions;
    let specs = actions.tool_names().into_iter().map(|t| (t.clone(), actions.spec(&t).unwrap().risk)).collect();
    let report = audit(&actions.audit_log(), &specs);
    assert_eq!(report.high_risk_executions, 0);
    assert!(report.violations.is_empty());
    assert_eq!(record(&rig, &ids[0]).state, IncidentState::Closed);
}

#[test]
fn unanswered_approval_expires_and_the_incident_moves_on() {
    let inputs = generic_scenario();
    let opts = RigOptions { approval_ttl_ms: 60 * SECOND_MS, ..Default::default() };
    let (rig, ids) = simulate(&inputs, opts, |rig| vec![rig.alert_of("dependency_failure")], None);
    let r = record(&rig, &ids[0]);
    assert!(r.state.is_terminal());
    r.check_invariants().unwrap();
    let reqs = rig.engine.services.actions.approvals(None);
    assert!(!reqs.is_empty());
    assert!(reqs.iter().all(|q| q.decision == Decision::Expired && q.result.is_none()));
}

#[test]
fn waiting_for_approval_frees_the_worker() {
    let inputs = generic_scenario();
    let config = EngineConfig { workers: 1, ..Default::default() };
    let opts = RigOptions { config, ..Default::default() };
    // The operator only answers after ten minutes.
    let (rig, ids) = simulate(
        &inputs,
        opts,
        |rig| {
            let mut dep = rig.alert_of("dependency_failure");
            let mut other = rig.alert_of("code_regression");
            let t = dep.fired_at.max(other.fired_at);
            dep.fired_at = t;
            other.fired_at = t.plus_ms(1);
            vec![dep, other]
        },
        Some(operator(true, 10 * 60 * SECOND_MS, 2)),
    );
    let dep = record(&rig, &ids[0]);
    let other = record(&rig, &ids[1]);
    assert_eq!(other.state, IncidentState::Closed);
    let approved = rig.engine.services.actions.approvals(Some(Decision::Approved));
    assert!(!approved.is_empty());
    let decided = approved[0].decided_at.unwrap();
    assert!(other.entered_at(IncidentState::Closed).unwrap() < decided, "second incident waited on the first");
    assert_eq!(dep.state, IncidentState::Closed);
}

#[test]
fn reflection_never_exceeds_the_bound() {
    let inputs = generic_scenario();
    let rules = RuleTable::load(&repo_path("rules/always_revise.json")).unwrap();
    let opts = RigOptions { rules: Some(rules), ..Default::default() };
    let (rig, ids) = simulate(&inputs, opts, |rig| rig.alerts_of("code_regression", 3), None);
    for id in &ids {
        let r = record(&rig, id);
        assert_eq!(r.reflection_cycles_used, MAX_REFLECTION_CYCLES);
        let planning = states(&r).iter().filter(|s| **s == IncidentState::Planning).count();
        assert_eq!(planning as u32, MAX_REFLECTION_CYCLES);
        let arts = rig.engine.services.artifacts(id).unwrap();
        assert_eq!(arts.plans.len() as u32, MAX_REFLECTION_CYCLES);
    }
}

#[test]
fn duplicate_alert_starts_no_second_workflow() {
    let inputs = generic_scenario();
    let (rig, ids) = simulate(
        &inputs,
        RigOptions::default(),
        |rig| {
            let a = rig.alert_of("spurious");
            vec![a.clone(), a]
        },
        None,
    );
    assert_eq!(ids[0], ids[1]);
    assert_eq!(rig.engine.services.incidents.len(), 1);
    assert_eq!(record(&rig, &ids[0]).alerts.len(), 1);
}
