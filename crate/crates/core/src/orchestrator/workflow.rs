//! Per-incident state machine. One transition per [`Workflow::step`].

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use super::{FetchMode, NotificationPayload, Phase, Services};
use crate::action::{Decision, Execution, ToolResult, ToolStatus};
use crate::incident::{IncidentError, IncidentRecord, IncidentState, NotificationReceipt};
use crate::knowledge::{DocKind, KnowledgeDoc};
use crate::log_agent::{
    downstream_targets, extract_metadata, fetch_target, initial_evidence, mark_late, merge_fetches, AlertContext,
    AnomalyReport, FetchResult, FetchTarget,
};
use crate::planner::{
    alert_block, formulate_plan, identify_gaps, synthesize_summary, ActionPlan, Evidence, PlanStep, PlannerError,
    ReasoningTrace, StepAction, StepOutcome, StepStatus, TraceKind,
};
use crate::reasoner::ContextBlock;
use crate::reflection::{evaluate, most_confident, should_iterate, Iterate, ReflectionVerdict};
use crate::runtime::{Runtime, Semaphore, Task};
use crate::summary::{DiagnosticSummary, Hypothesis};
use crate::telemetry::{query_paged, ThrottleStats};
use crate::time::{Timestamp, MINUTE_MS};

const DEPLOYMENT_LOOKBACK_MS: i64 = 7 * 24 * 60 * MINUTE_MS;
const RETRIEVAL_K: usize = 3;

type FetchSlot = Arc<Mutex<Option<(Vec<FetchResult>, ThrottleStats)>>>;

struct PendingFetch {
    targets: Vec<FetchTarget>,
    task: Option<Task>,
    slot: FetchSlot,
}

/// Single-owner workflow state for one incident.
pub struct Workflow {
    incident_id: String,
    ctx: Option<AlertContext>,
    payload: BTreeMap<String, String>,
    /// Evidence available when planning first starts.
    initial: Option<AnomalyReport>,
    /// Evidence after downstream fetches were folded in.
    merged: Option<AnomalyReport>,
    fetch: Option<PendingFetch>,
    plan: Option<ActionPlan>,
    hypothesis: Option<Hypothesis>,
    directives: Vec<String>,
    cycle: u32,
    current: Option<DiagnosticSummary>,
    history: Vec<DiagnosticSummary>,
    verdict: Option<ReflectionVerdict>,
    trace: ReasoningTrace,
    stats: ThrottleStats,
}

impl Workflow {
    pub fn new(incident_id: &str) -> Self {
        Workflow {
            incident_id: incident_id.to_string(),
            ctx: None,
            payload: BTreeMap::new(),
            initial: None,
            merged: None,
            fetch: None,
            plan: None,
            hypothesis: None,
            directives: Vec::new(),
            cycle: 0,
            current: None,
            history: Vec::new(),
            verdict: None,
            trace: ReasoningTrace::default(),
            stats: ThrottleStats::default(),
        }
    }

    pub fn plan(&self) -> Option<&ActionPlan> {
        self.plan.as_ref()
    }

    pub fn report(&self) -> Option<&AnomalyReport> {
        self.merged.as_ref().or(self.initial.as_ref())
    }

    pub fn trace(&self) -> &ReasoningTrace {
        &self.trace
    }

    pub fn last_verdict(&self) -> Option<&ReflectionVerdict> {
        self.verdict.as_ref()
    }

    fn alert(&self) -> ContextBlock {
        alert_block(self.ctx.as_ref().expect("context extracted"), &self.payload)
    }

    /// Advances exactly one transition. Failures are recorded on the incident
    /// (state FAILED) and returned as `Ok(Failed)`.
    pub fn step(
        &mut self,
        svc: &Services,
        rt: &Arc<dyn Runtime>,
        slot: Option<&dyn Semaphore>,
    ) -> Result<IncidentState, IncidentError> {
        let rec = svc
            .incidents
            .get(&self.incident_id)
            .ok_or_else(|| IncidentError::UnknownIncident(self.incident_id.clone()))?;
        if rec.state.is_terminal() {
            return Err(IncidentError::TerminalState(self.incident_id.clone()));
        }
        let outcome = match rec.state {
            IncidentState::Received => self.on_received(svc, rt, &rec),
            IncidentState::LogRetrieval => self.on_log_retrieval(svc, rt),
            IncidentState::Planning => self.on_planning(svc, rt),
            IncidentState::Executing => self.on_executing(svc, rt, slot),
            IncidentState::Reflecting => self.on_reflecting(svc, rt),
            IncidentState::Summarized => self.on_summarized(svc, rt),
            IncidentState::Notified => self.on_notified(svc, rt),
            IncidentState::Closed | IncidentState::Failed => unreachable!("terminal handled above"),
        };
        let state = match outcome {
            Ok(next) => next,
            Err(reason) => {
                let now = rt.now();
                self.trace.push(TraceKind::Thought, format!("failed: {reason}"), now, None);
                svc.incidents.update(&self.incident_id, |r| {
                    r.fail(&reason, now);
                    Ok(())
                })?;
                IncidentState::Failed
            }
        };
        svc.store_trace(&self.incident_id, &self.trace);
        svc.store_artifacts(&self.incident_id, self.plan.as_ref(), self.merged.as_ref());
        Ok(state)
    }

    fn go(&self, svc: &Services, to: IncidentState, at: Timestamp) -> Result<IncidentState, String> {
        svc.incidents.transition(&self.incident_id, to, at).map_err(|e| e.to_string())?;
        Ok(to)
    }

    fn charge(&self, svc: &Services, rt: &Arc<dyn Runtime>, phase: Phase<'_>) {
        let ms = svc.pacing.charge_ms(&self.incident_id, phase);
        if ms > 0 {
            rt.sleep(ms);
        }
    }

    fn on_received(
        &mut self,
        svc: &Services,
        rt: &Arc<dyn Runtime>,
        rec: &IncidentRecord,
    ) -> Result<IncidentState, String> {
        let alert = rec.first_alert();
        let ctx = extract_metadata(alert, &self.incident_id, &svc.config.log);
        let ids: Vec<String> = ctx.identifiers.iter().map(|(k, v)| format!("{k}={v}")).collect();
        self.trace.push(
            TraceKind::Thought,
            format!(
                "{} alert `{}` on {}; identifiers: {}",
                alert.severity,
                alert.alert_type,
                alert.service,
                if ids.is_empty() { "none".into() } else { ids.join(", ") }
            ),
            rt.now(),
            None,
        );
        self.payload = alert.payload.clone();
        self.ctx = Some(ctx);
        self.go(svc, IncidentState::LogRetrieval, rt.now())
    }

    fn on_log_retrieval(&mut self, svc: &Services, rt: &Arc<dyn Runtime>) -> Result<IncidentState, String> {
        let ctx = self.ctx.clone().expect("context extracted");
        self.trace.push(TraceKind::Action, "collect logs for the alert window", rt.now(), Some("log-retrieval"));
        let report = initial_evidence(&ctx, &svc.telemetry, rt.as_ref(), &svc.config.log, &mut self.stats);
        self.charge(svc, rt, Phase::LogRetrieval);
        self.trace.push(
            TraceKind::Observation,
            format!(
                "{} anomalies, {} causal candidates{}",
                report.anomalies.len(),
                report.causal_candidates.len(),
                report.causal_candidates.first().map(|c| format!("; top {}", c.event_id)).unwrap_or_default()
            ),
            rt.now(),
            Some("log-retrieval"),
        );

        let targets = downstream_targets(&ctx, &report);
        let slot: FetchSlot = Arc::new(Mutex::new(None));
        let task = match svc.config.fetch_mode {
            FetchMode::Sequential => {
                let mut stats = ThrottleStats::default();
                let results = targets
                    .iter()
                    .map(|t| fetch_target(&ctx, t, &svc.telemetry, rt.as_ref(), &svc.config.log, &mut stats))
                    .collect();
                *slot.lock().unwrap() = Some((results, stats));
                None
            }
            FetchMode::Parallel if targets.is_empty() => {
                *slot.lock().unwrap() = Some((Vec::new(), ThrottleStats::default()));
                None
            }
            FetchMode::Parallel => {
                let store = svc.telemetry.clone();
                let cfg = svc.config.log.clone();
                let rt2 = rt.clone();
                let out = slot.clone();
                let ts = targets.clone();
                let c = ctx.clone();
                Some(rt.spawn(
                    &format!("fetch {}", self.incident_id),
                    Box::new(move || {
                        let mut stats = ThrottleStats::default();
                        let results =
                            ts.iter().map(|t| fetch_target(&c, t, &store, rt2.as_ref(), &cfg, &mut stats)).collect();
                        *out.lock().unwrap() = Some((results, stats));
                    }),
                ))
            }
        };
        if !targets.is_empty() {
            let names: Vec<String> = targets.iter().map(|t| t.to_string()).collect();
            self.trace.push(TraceKind::Thought, format!("downstream fetch: {}", names.join("; ")), rt.now(), None);
        }
        self.fetch = Some(PendingFetch { targets, task, slot });
        self.initial = Some(report);
        self.go(svc, IncidentState::Planning, rt.now())
    }

    fn on_planning(&mut self, svc: &Services, rt: &Arc<dyn Runtime>) -> Result<IncidentState, String> {
        let report = self.report().cloned().expect("evidence collected");
        let (gaps, prelim) =
            identify_gaps(svc.reasoner.as_ref(), self.alert(), &report, &self.directives).map_err(|e| e.to_string())?;
        if let Some(h) = prelim {
            self.hypothesis = Some(h);
        }
        let gap_text: Vec<String> = gaps.iter().map(|g| format!("{}: {}", g.gap_id, g.description)).collect();
        self.trace.push(
            TraceKind::Thought,
            if gap_text.is_empty() {
                "no information gaps".to_string()
            } else {
                format!("gaps: {}", gap_text.join("; "))
            },
            rt.now(),
            None,
        );
        let revision = self.plan.as_ref().map(|p| p.revision + 1).unwrap_or(0);
        let mut plan = formulate_plan(
            svc.reasoner.as_ref(),
            self.alert(),
            &self.incident_id,
            &gaps,
            self.hypothesis.as_ref(),
            revision,
        )
        .map_err(|e| e.to_string())?;
        if let Some(prev) = &self.plan {
            let reused = plan.reuse_from(prev);
            if !reused.is_empty() {
                self.trace.push(
                    TraceKind::Thought,
                    format!("reusing outcomes of {}", reused.join(", ")),
                    rt.now(),
                    None,
                );
            }
        }
        let labels: Vec<String> = plan.steps.iter().map(|s| format!("{}: {}", s.step_id, s.action.label())).collect();
        self.trace.push(TraceKind::Thought, format!("plan r{}: {}", plan.revision, labels.join(" | ")), rt.now(), None);
        self.charge(svc, rt, Phase::Planning);
        self.plan = Some(plan);
        self.go(svc, IncidentState::Executing, rt.now())
    }

    fn on_executing(
        &mut self,
        svc: &Services,
        rt: &Arc<dyn Runtime>,
        slot: Option<&dyn Semaphore>,
    ) -> Result<IncidentState, String> {
        let n = self.plan.as_ref().expect("plan formed").steps.len();
        for i in 0..n {
            let step = self.plan.as_ref().unwrap().steps[i].clone();
            if step.status.is_terminal() || step.action == StepAction::Synthesize {
                continue;
            }
            if let Some(c) = &step.condition {
                if !c.holds(self.plan.as_ref().unwrap()) {
                    let s = &mut self.plan.as_mut().unwrap().steps[i];
                    s.status = StepStatus::Skipped;
                    s.reason = Some(format!("condition on `{}` not met", c.step()));
                    self.trace.push(
                        TraceKind::Thought,
                        format!("skip {}: condition not met", step.step_id),
                        rt.now(),
                        None,
                    );
                    continue;
                }
            }
            self.trace.push(TraceKind::Action, step.action.label(), rt.now(), Some(&step.step_id));
            let (status, outcome, reason) = self.execute(svc, rt, slot, &step);
            let obs = match (&outcome, &reason) {
                (_, Some(r)) => format!("{status:?}: {r}"),
                (Some(o), None) => {
                    let first = o.evidence.lines().next().unwrap_or("").to_string();
                    format!("{status:?}: {first}")
                }
                (None, None) => format!("{status:?}"),
            };
            self.trace.push(TraceKind::Observation, obs, rt.now(), Some(&step.step_id));
            let s = &mut self.plan.as_mut().unwrap().steps[i];
            s.status = status;
            s.outcome = outcome;
            s.reason = reason;
        }
        self.synthesize(svc, rt)?;
        self.go(svc, IncidentState::Reflecting, rt.now())
    }

    fn execute(
        &mut self,
        svc: &Services,
        rt: &Arc<dyn Runtime>,
        slot: Option<&dyn Semaphore>,
        step: &PlanStep,
    ) -> (StepStatus, Option<StepOutcome>, Option<String>) {
        let ctx = self.ctx.clone().expect("context extracted");
        match &step.action {
            StepAction::InvokeTool { tool, args } => {
                self.charge(svc, rt, Phase::Tool(tool));
                let result = match svc.actions.request_execution(&self.incident_id, tool, args, rt.as_ref()) {
                    Ok(Execution::Executed(r)) => r,
                    Ok(Execution::PendingApproval(id)) => {
                        self.trace.push(
                            TraceKind::Thought,
                            format!("awaiting approval {id} for {tool}"),
                            rt.now(),
                            Some(&step.step_id),
                        );
                        match wait_for_approval(svc, rt, slot, &id) {
                            Ok(r) => r,
                            Err(reason) => return (StepStatus::Failed, None, Some(reason)),
                        }
                    }
                    Err(e) => return (StepStatus::Failed, None, Some(e.to_string())),
                };
                let ok = result.status == ToolStatus::Ok;
                let outcome = StepOutcome {
                    ok,
                    output: result.output.clone(),
                    evidence: result.render(),
                    tool_result: Some(result.clone()),
                    ..Default::default()
                };
                if ok {
                    (StepStatus::Done, Some(outcome), None)
                } else {
                    (StepStatus::Failed, Some(outcome), Some(format!("{tool} returned {:?}", result.status)))
                }
            }
            StepAction::QueryKnowledge { kind, query, service } => {
                let docs = self.retrieve(svc, &ctx, *kind, query, service.as_deref());
                let mut evidence = String::new();
                for d in &docs {
                    evidence.push_str(&format!("[doc:{}] {}: {}\n", d.doc_id, d.title, d.body));
                }
                let ids: Vec<String> = docs.iter().map(|d| d.doc_id.clone()).collect();
                let mut output = BTreeMap::from([("count".to_string(), ids.len().to_string())]);
                if let Some(first) = ids.first() {
                    output.insert("top".into(), first.clone());
                }
                output.insert("doc_ids".into(), ids.join(","));
                let outcome = StepOutcome { ok: !ids.is_empty(), output, evidence, docs: ids, ..Default::default() };
                (StepStatus::Done, Some(outcome), None)
            }
            StepAction::QueryLogs { query } => {
                self.await_fetch(rt);
                let q = query.to_query(&ctx, svc.config.log.query_limit);
                match query_paged(
                    &svc.telemetry,
                    rt.as_ref(),
                    &q,
                    svc.config.log.page_size,
                    svc.config.log.retry(),
                    &mut self.stats,
                ) {
                    Ok(events) => {
                        let evidence: Vec<String> = events.iter().map(|e| e.render()).collect();
                        let output = BTreeMap::from([("count".to_string(), events.len().to_string())]);
                        let outcome = StepOutcome {
                            ok: true,
                            output,
                            evidence: evidence.join("\n"),
                            events,
                            ..Default::default()
                        };
                        (StepStatus::Done, Some(outcome), None)
                    }
                    Err(e) => (StepStatus::Failed, None, Some(e.to_string())),
                }
            }
            StepAction::Synthesize => unreachable!("synthesis runs after the other steps"),
        }
    }

    fn retrieve(
        &self,
        svc: &Services,
        ctx: &AlertContext,
        kind: DocKind,
        query: &str,
        service: Option<&str>,
    ) -> Vec<KnowledgeDoc> {
        let kb = &svc.knowledge;
        if kind == DocKind::Deployment {
            let Some(service) = service else {
                return Vec::new();
            };
            let recent: Vec<KnowledgeDoc> = kb
                .recent_deployments(service, ctx.fired_at.minus_ms(DEPLOYMENT_LOOKBACK_MS))
                .into_iter()
                .filter(|d| d.deployed_at().is_some_and(|t| t <= ctx.fired_at))
                .collect();
            let scores: BTreeMap<String, f64> = kb
                .search(query, Some(DocKind::Deployment), Some(service), recent.len().max(1))
                .unwrap_or_default()
                .into_iter()
                .map(|h| (h.doc_id, h.score))
                .collect();
            let mut ranked: Vec<(f64, usize, KnowledgeDoc)> = recent
                .into_iter()
                .enumerate()
                .map(|(i, d)| (scores.get(&d.doc_id).copied().unwrap_or(0.0), i, d))
                .collect();
            // Relevance first, then recency (recent_deployments is newest first).
            ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            ranked.into_iter().take(RETRIEVAL_K).map(|(_, _, d)| d).collect()
        } else {
            kb.search(query, Some(kind), service, RETRIEVAL_K)
                .unwrap_or_default()
                .into_iter()
                .filter_map(|h| kb.get(&h.doc_id))
                .collect()
        }
    }

    /// Blocks until the downstream fetch has finished (log queries share one
    /// session per incident).
    fn await_fetch(&mut self, rt: &Arc<dyn Runtime>) {
        if let Some(f) = &self.fetch {
            if let Some(t) = &f.task {
                rt.join(t);
            }
        }
    }

    /// Cutoff: fetches that finished are merged, the rest are marked late.
    fn merge_pending(&mut self, rt: &Arc<dyn Runtime>) {
        if self.merged.is_some() {
            return;
        }
        let ctx = self.ctx.clone().expect("context extracted");
        let mut report = self.initial.clone().expect("evidence collected");
        if let Some(f) = self.fetch.take() {
            let finished = f.task.as_ref().is_none_or(|t| t.is_finished());
            let done = if finished { f.slot.lock().unwrap().take() } else { None };
            match done {
                Some((results, stats)) => {
                    self.stats.calls += stats.calls;
                    self.stats.retries += stats.retries;
                    self.stats.waited_ms += stats.waited_ms;
                    merge_fetches(&ctx, &mut report, results);
                }
                None => {
                    mark_late(&mut report, &f.targets);
                    self.trace.push(TraceKind::Thought, "downstream fetch missed the synthesis cutoff", rt.now(), None);
                }
            }
        }
        self.merged = Some(report);
    }

    fn synthesize(&mut self, svc: &Services, rt: &Arc<dyn Runtime>) -> Result<(), String> {
        self.merge_pending(rt);
        let report = self.merged.clone().expect("merged above");
        let plan = self.plan.clone().expect("plan formed");
        let ev = Evidence { report: &report, plan: &plan, kb: &svc.knowledge };
        self.trace.push(TraceKind::Action, "SYNTHESIZE", rt.now(), Some(crate::planner::SYNTHESIZE_STEP_ID));
        match synthesize_summary(svc.reasoner.as_ref(), self.alert(), &ev, &self.directives, rt.now()) {
            Ok((h, s)) => {
                self.trace.push(
                    TraceKind::Observation,
                    format!("{} ({}, confidence {:.2})", s.headline, h.kind, h.confidence),
                    rt.now(),
                    Some(crate::planner::SYNTHESIZE_STEP_ID),
                );
                self.hypothesis = Some(h);
                self.history.push(s.clone());
                self.current = Some(s);
                self.set_synth_status(StepStatus::Done, None);
                Ok(())
            }
            Err(e @ (PlannerError::GroundingViolation { .. } | PlannerError::UnresolvedRef(_))) => {
                self.trace.push(
                    TraceKind::Observation,
                    format!("rejected: {e}"),
                    rt.now(),
                    Some(crate::planner::SYNTHESIZE_STEP_ID),
                );
                self.current = None;
                self.set_synth_status(StepStatus::Failed, Some(e.to_string()));
                Ok(())
            }
            Err(e) => Err(e.to_string()),
        }
    }

    fn set_synth_status(&mut self, status: StepStatus, reason: Option<String>) {
        if let Some(s) = self.plan.as_mut().and_then(|p| p.steps.last_mut()) {
            s.status = status;
            s.reason = reason;
        }
    }

    fn on_reflecting(&mut self, svc: &Services, rt: &Arc<dyn Runtime>) -> Result<IncidentState, String> {
        self.cycle += 1;
        let cycle = self.cycle;
        svc.incidents
            .update(&self.incident_id, |r| {
                r.reflection_cycles_used = cycle;
                Ok(())
            })
            .map_err(|e| e.to_string())?;
        let verdict = match &self.current {
            Some(s) => {
                let report = self.merged.clone().expect("merged");
                let plan = self.plan.clone().expect("plan");
                let ev = Evidence { report: &report, plan: &plan, kb: &svc.knowledge };
                let tools = svc.actions.tool_names().into_iter().collect();
                let fired = self.ctx.as_ref().expect("context").fired_at;
                evaluate(svc.reasoner.as_ref(), s, &ev, &tools, fired, cycle).map_err(|e| e.to_string())?
            }
            None => rejected_verdict(cycle, self.plan.as_ref()),
        };
        self.trace.push(TraceKind::Reflection, verdict.render(), rt.now(), None);
        let next = should_iterate(&verdict, cycle);
        self.verdict = Some(verdict);
        match next {
            Iterate::Continue(directives) => {
                self.directives = directives;
                self.go(svc, IncidentState::Planning, rt.now())
            }
            Iterate::Finalize(tag) => {
                let chosen = match tag {
                    None => self.current.clone(),
                    Some(_) => most_confident(&self.history).map(|i| self.history[i].clone()),
                };
                let Some(mut summary) = chosen else {
                    return Err("no grounded summary after the reflection limit".into());
                };
                summary.uncertainty_tag = tag;
                summary.produced_at = rt.now();
                let now = rt.now();
                svc.incidents
                    .update(&self.incident_id, |r| {
                        r.summary = Some(summary);
                        r.advance(IncidentState::Summarized, now)
                    })
                    .map_err(|e| e.to_string())?;
                Ok(IncidentState::Summarized)
            }
        }
    }

    fn on_summarized(&mut self, svc: &Services, rt: &Arc<dyn Runtime>) -> Result<IncidentState, String> {
        let rec = svc.incidents.get(&self.incident_id).ok_or("incident vanished")?;
        let summary = rec.summary.clone().ok_or("summarized without summary")?;
        let attempts_allowed = svc.config.notify_attempts.max(1);
        let mut receipt = NotificationReceipt { attempts: 0, delivered: false, posted_at: None, note: None };
        let mut last_err = String::new();
        while receipt.attempts < attempts_allowed {
            receipt.attempts += 1;
            let payload = NotificationPayload::from_summary(&summary, rt.now());
            match svc.notifier.deliver(&payload) {
                Ok(()) => {
                    receipt.delivered = true;
                    receipt.posted_at = Some(payload.posted_at);
                    break;
                }
                Err(e) => {
                    last_err = e;
                    if receipt.attempts < attempts_allowed {
                        rt.sleep(svc.config.notify_backoff_ms);
                    }
                }
            }
        }
        if !receipt.delivered {
            receipt.note = Some(format!("NOTIFIED_DEGRADED: {last_err}"));
        }
        let stats = self.stats;
        let now = rt.now();
        svc.incidents
            .update(&self.incident_id, |r| {
                r.notification = Some(receipt);
                if stats.retries > 0 {
                    r.notes
                        .push(format!("log API throttled: {} retries, {} ms waited", stats.retries, stats.waited_ms));
                }
                r.advance(IncidentState::Notified, now)
            })
            .map_err(|e| e.to_string())?;
        Ok(IncidentState::Notified)
    }

    fn on_notified(&mut self, svc: &Services, rt: &Arc<dyn Runtime>) -> Result<IncidentState, String> {
        let steps = svc.pacing.triage_steps(&self.incident_id);
        let now = rt.now();
        svc.incidents
            .update(&self.incident_id, |r| {
                if r.triage_steps.is_empty() {
                    r.triage_steps = steps;
                }
                r.advance(IncidentState::Closed, now)
            })
            .map_err(|e| e.to_string())?;
        Ok(IncidentState::Closed)
    }
}

/// Verdict for a cycle whose synthesis failed the grounding check.
fn rejected_verdict(cycle: u32, plan: Option<&ActionPlan>) -> ReflectionVerdict {
    use crate::reflection::{Criterion, Overall};
    let reason =
        plan.and_then(|p| p.steps.last()).and_then(|s| s.reason.clone()).unwrap_or_else(|| "no summary".into());
    let fail = Criterion { pass: false, rationale: reason.clone() };
    ReflectionVerdict {
        cycle,
        completeness: fail.clone(),
        causality: fail.clone(),
        actionability: fail,
        overall: Overall::Revise,
        revision_directives: vec![format!("cite only values present in the evidence ({reason})")],
    }
}

/// Polls the approval until it is decided or expires. The worker slot is
/// released for the duration so other incidents keep moving.
fn wait_for_approval(
    svc: &Services,
    rt: &Arc<dyn Runtime>,
    slot: Option<&dyn Semaphore>,
    approval_id: &str,
) -> Result<ToolResult, String> {
    if let Some(s) = slot {
        s.release();
    }
    let outcome = loop {
        svc.actions.expire_stale(rt.now());
        let Some(req) = svc.actions.approval(approval_id) else {
            break Err(format!("approval {approval_id} vanished"));
        };
        match (req.decision, req.result) {
            (Decision::Expired, _) => break Err(format!("approval {approval_id} expired")),
            (Decision::Approved | Decision::Denied, Some(r)) => break Ok(r),
            _ => rt.sleep(svc.config.approval_poll_ms.max(1)),
        }
    };
    if let Some(s) = slot {
        s.acquire();
    }
    outcome
}
