//! Planner: information gaps, condition-guarded plans, retrieval routing and
//! summary synthesis with a mechanical grounding check.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::action::{ToolArgs, ToolResult};
use crate::knowledge::{DocKind, KnowledgeDoc, KnowledgeStore};
use crate::log_agent::{AlertContext, AnomalyReport};
use crate::reasoner::schema::{GAPS_V1, PLAN_V1, SUMMARY_V1};
use crate::reasoner::{render_prompt, AgentRole, ContextBlock, Reasoner, ReasonerError, DEFAULT_PROMPT_BUDGET};
use crate::summary::{DiagnosticSummary, Hypothesis, HypothesisKind, RecommendedAction};
use crate::telemetry::{EventId, LogLevel, LogQuery, StoredEvent};
use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Resolver {
    Tool,
    Runbook,
    Wiki,
    DeploymentMetadata,
    Logs,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfoGap {
    pub gap_id: String,
    pub description: String,
    pub resolvable_by: Resolver,
}

/// A log query relative to the incident's alert window.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LogSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub services: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_level: Option<LogLevel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    /// Restrict to events carrying one of the alert's identifiers (the first
    /// identifier in key order).
    #[serde(default)]
    pub correlated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
}

impl LogSpec {
    pub fn to_query(&self, ctx: &AlertContext, default_limit: usize) -> LogQuery {
        let mut q = LogQuery::range(ctx.window_start, ctx.window_end).limit(self.limit.unwrap_or(default_limit).max(1));
        if let Some(services) = &self.services {
            q.services = Some(services.iter().cloned().collect());
        }
        q.min_level = self.min_level;
        q.text_match = self.text.clone();
        if self.correlated {
            if let Some((k, v)) = ctx.identifiers.iter().next() {
                q.correlation = Some((k.clone(), v.clone()));
            }
        }
        q
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StepAction {
    InvokeTool {
        tool: String,
        #[serde(default)]
        args: ToolArgs,
    },
    QueryKnowledge {
        kind: DocKind,
        query: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        service: Option<String>,
    },
    QueryLogs {
        #[serde(default)]
        query: LogSpec,
    },
    Synthesize,
}

impl StepAction {
    pub fn label(&self) -> String {
        match self {
            StepAction::InvokeTool { tool, args } => {
                let a: Vec<String> = args.iter().map(|(k, v)| format!("{k}={v}")).collect();
                format!("INVOKE_TOOL {tool}({})", a.join(", "))
            }
            StepAction::QueryKnowledge { kind, query, .. } => {
                format!("QUERY_KNOWLEDGE {kind} \"{query}\"")
            }
            StepAction::QueryLogs { query } => {
                format!("QUERY_LOGS {}", serde_json::to_string(query).unwrap_or_default())
            }
            StepAction::Synthesize => "SYNTHESIZE".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Condition {
    Equals { step: String, key: String, value: String },
    Contains { step: String, key: String, value: String },
    Succeeded { step: String },
}

impl Condition {
    pub fn step(&self) -> &str {
        match self {
            Condition::Equals { step, .. } | Condition::Contains { step, .. } | Condition::Succeeded { step } => step,
        }
    }

    pub fn holds(&self, plan: &ActionPlan) -> bool {
        let Some(prior) = plan.steps.iter().find(|s| s.step_id == self.step()) else {
            return false;
        };
        let Some(out) = prior.outcome.as_ref().filter(|_| prior.status == StepStatus::Done) else {
            return false;
        };
        match self {
            Condition::Succeeded { .. } => out.ok,
            Condition::Equals { key, value, .. } => out.output.get(key) == Some(value),
            Condition::Contains { key, value, .. } => out.output.get(key).is_some_and(|v| v.contains(value.as_str())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StepStatus {
    Pending,
    Running,
    Done,
    Skipped,
    Failed,
}

impl StepStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, StepStatus::Done | StepStatus::Skipped | StepStatus::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StepOutcome {
    pub ok: bool,
    #[serde(default)]
    pub output: BTreeMap<String, String>,
    /// Text body the step contributes as evidence (`step:<id>` refs).
    #[serde(default)]
    pub evidence: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<StoredEvent>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub docs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_result: Option<ToolResult>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    pub step_id: String,
    pub goal: String,
    pub action: StepAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<Condition>,
    pub status: StepStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<StepOutcome>,
    /// Why the step failed or was skipped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl PlanStep {
    pub fn new(step_id: &str, goal: &str, action: StepAction) -> Self {
        PlanStep {
            step_id: step_id.to_string(),
            goal: goal.to_string(),
            action,
            condition: None,
            status: StepStatus::Pending,
            outcome: None,
            reason: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionPlan {
    pub incident_id: String,
    pub steps: Vec<PlanStep>,
    pub revision: u32,
}

pub const SYNTHESIZE_STEP_ID: &str = "synthesize";

impl ActionPlan {
    /// Unique ids, exactly one SYNTHESIZE as the last step, conditions that
    /// only look backwards.
    pub fn validate(&self) -> Result<(), String> {
        let mut seen = BTreeSet::new();
        for (i, s) in self.steps.iter().enumerate() {
            if !seen.insert(s.step_id.as_str()) {
                return Err(format!("duplicate step id `{}`", s.step_id));
            }
            if let Some(c) = &s.condition {
                if !self.steps[..i].iter().any(|p| p.step_id == c.step()) {
                    return Err(format!("step `{}` conditions on `{}` which is not earlier", s.step_id, c.step()));
                }
            }
        }
        let synth: Vec<usize> =
            self.steps.iter().enumerate().filter(|(_, s)| s.action == StepAction::Synthesize).map(|(i, _)| i).collect();
        match synth.as_slice() {
            [i] if *i + 1 == self.steps.len() => Ok(()),
            [_] => Err("SYNTHESIZE is not the final step".into()),
            [] => Err("no SYNTHESIZE step".into()),
            _ => Err("more than one SYNTHESIZE step".into()),
        }
    }

    pub fn step(&self, id: &str) -> Option<&PlanStep> {
        self.steps.iter().find(|s| s.step_id == id)
    }

    pub fn step_mut(&mut self, id: &str) -> Option<&mut PlanStep> {
        self.steps.iter_mut().find(|s| s.step_id == id)
    }

    pub fn knowledge_queries(&self) -> Vec<DocKind> {
        self.steps
            .iter()
            .filter_map(|s| match &s.action {
                StepAction::QueryKnowledge { kind, .. } => Some(*kind),
                _ => None,
            })
            .collect()
    }

    /// Carries over finished outcomes from `previous` for steps whose id,
    /// action and condition are unchanged.
    pub fn reuse_from(&mut self, previous: &ActionPlan) -> Vec<String> {
        let mut reused = Vec::new();
        for s in &mut self.steps {
            if s.action == StepAction::Synthesize {
                continue;
            }
            if let Some(old) = previous.step(&s.step_id) {
                if old.status == StepStatus::Done && old.action == s.action && old.condition == s.condition {
                    s.status = StepStatus::Done;
                    s.outcome = old.outcome.clone();
                    reused.push(s.step_id.clone());
                }
            }
        }
        reused
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TraceKind {
    Thought,
    Action,
    Observation,
    Reflection,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub kind: TraceKind,
    pub text: String,
    pub ts: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReasoningTrace {
    pub entries: Vec<TraceEntry>,
}

impl ReasoningTrace {
    pub fn push(&mut self, kind: TraceKind, text: impl Into<String>, ts: Timestamp, step_id: Option<&str>) {
        self.entries.push(TraceEntry { kind, text: text.into(), ts, step_id: step_id.map(str::to_owned) });
    }

    /// Every ACTION is followed later by an OBSERVATION for the same step.
    pub fn check_pairing(&self) -> Result<(), String> {
        for (i, e) in self.entries.iter().enumerate() {
            if e.kind != TraceKind::Action {
                continue;
            }
            let paired =
                self.entries[i + 1..].iter().any(|o| o.kind == TraceKind::Observation && o.step_id == e.step_id);
            if !paired {
                return Err(format!("ACTION for step {:?} has no OBSERVATION", e.step_id));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlannerError {
    #[error(transparent)]
    Reasoner(#[from] ReasonerError),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("grounding violation: finding `{finding}` = `{value}` is not in any referenced evidence")]
    GroundingViolation { finding: String, value: String },
    #[error("unresolvable evidence ref `{0}`")]
    UnresolvedRef(String),
    #[error("invalid response: {0}")]
    InvalidResponse(String),
}

/// One line describing the alert, the first context block of every prompt.
pub fn alert_block(ctx: &AlertContext, payload: &BTreeMap<String, String>) -> ContextBlock {
    let mut text = format!(
        "incident={} service={} alert_type={} fired_at={}",
        ctx.incident_id, ctx.service, ctx.alert_type, ctx.fired_at
    );
    for (k, v) in &ctx.identifiers {
        text.push_str(&format!(" {k}={v}"));
    }
    for (k, v) in payload {
        text.push_str(&format!("\n{k}: {v}"));
    }
    ContextBlock::new("alert", text)
}

fn hypothesis_block(h: &Hypothesis) -> ContextBlock {
    ContextBlock::new(
        "hypothesis",
        format!(
            "kind={} component={} confidence={:.2} statement={} refs={}",
            h.kind,
            h.fault_component,
            h.confidence,
            h.statement,
            h.evidence_refs.join(",")
        ),
    )
}

fn parse<T: serde::de::DeserializeOwned>(v: &Value, what: &str) -> Result<T, PlannerError> {
    serde_json::from_value(v.clone()).map_err(|e| PlannerError::InvalidResponse(format!("{what}: {e}")))
}

pub fn identify_gaps(
    reasoner: &dyn Reasoner,
    alert: ContextBlock,
    report: &AnomalyReport,
    directives: &[String],
) -> Result<(Vec<InfoGap>, Option<Hypothesis>), PlannerError> {
    let mut blocks = vec![alert];
    blocks.extend(report.context_blocks());
    if !directives.is_empty() {
        blocks.push(ContextBlock::new("revision directives", directives.join("\n")));
    }
    let prompt = render_prompt(
        AgentRole::Planner,
        "Identify the information gaps that block a root-cause finding.",
        blocks,
        GAPS_V1,
        DEFAULT_PROMPT_BUDGET,
    );
    let resp = reasoner.complete(&prompt)?;
    let gaps: Vec<InfoGap> = parse(&resp.body["gaps"], "gaps")?;
    let hyp: Option<Hypothesis> = match resp.body.get("hypothesis") {
        Some(v) if !v.is_null() => Some(parse(v, "hypothesis")?),
        _ => None,
    };
    if let Some(h) = &hyp {
        h.validate().map_err(PlannerError::InvalidResponse)?;
    }
    Ok((gaps, hyp))
}

#[derive(Deserialize)]
struct RawStep {
    step_id: String,
    goal: String,
    action: StepAction,
    #[serde(default)]
    condition: Option<Condition>,
}

/// One step per gap from the reasoner, then any retrieval routed from the
/// working hypothesis, then the terminal SYNTHESIZE. No gaps means a
/// single-step plan and no reasoner call.
pub fn formulate_plan(
    reasoner: &dyn Reasoner,
    alert: ContextBlock,
    incident_id: &str,
    gaps: &[InfoGap],
    hypothesis: Option<&Hypothesis>,
    revision: u32,
) -> Result<ActionPlan, PlannerError> {
    let mut steps = Vec::new();
    if !gaps.is_empty() {
        let mut gap_text = String::new();
        for g in gaps {
            gap_text.push_str(&format!("{} [{:?}] {}\n", g.gap_id, g.resolvable_by, g.description));
        }
        let mut blocks = vec![alert, ContextBlock::new("gaps", gap_text)];
        if let Some(h) = hypothesis {
            blocks.push(hypothesis_block(h));
        }
        let prompt = render_prompt(
            AgentRole::Planner,
            "Plan one step per gap. Use conditions when a step depends on an earlier outcome.",
            blocks,
            PLAN_V1,
            DEFAULT_PROMPT_BUDGET,
        );
        let resp = reasoner.complete(&prompt)?;
        let raw: Vec<RawStep> = parse(&resp.body["steps"], "steps")?;
        for r in raw {
            if r.action == StepAction::Synthesize {
                continue;
            }
            let mut s = PlanStep::new(&r.step_id, &r.goal, r.action);
            s.condition = r.condition;
            steps.push(s);
        }
    }
    if let Some(h) = hypothesis {
        let present: BTreeSet<DocKind> = steps
            .iter()
            .filter_map(|s| match &s.action {
                StepAction::QueryKnowledge { kind, .. } => Some(*kind),
                _ => None,
            })
            .collect();
        steps.extend(route_retrieval(h).into_iter().filter(|s| match &s.action {
            StepAction::QueryKnowledge { kind, .. } => !present.contains(kind),
            _ => true,
        }));
    }
    steps.push(PlanStep::new(SYNTHESIZE_STEP_ID, "synthesize the diagnostic summary", StepAction::Synthesize));
    let plan = ActionPlan { incident_id: incident_id.to_string(), steps, revision };
    plan.validate().map_err(PlannerError::InvalidPlan)?;
    Ok(plan)
}

/// Knowledge retrieval by hypothesis kind. UNKNOWN retrieves nothing.
pub fn route_retrieval(h: &Hypothesis) -> Vec<PlanStep> {
    let query = format!("{} {}", h.fault_component, h.statement).trim().to_string();
    let service = (!h.fault_component.is_empty()).then(|| h.fault_component.clone());
    let step = |kind: DocKind, svc: Option<String>| {
        let id = format!("rag-{}", kind.to_string().to_ascii_lowercase());
        PlanStep::new(
            &id,
            &format!("retrieve {kind} context"),
            StepAction::QueryKnowledge { kind, query: query.clone(), service: svc },
        )
    };
    match h.kind {
        HypothesisKind::CodeRegression => vec![step(DocKind::Deployment, service)],
        HypothesisKind::DataContent => vec![step(DocKind::Runbook, None)],
        HypothesisKind::Config | HypothesisKind::DependencyFailure => {
            vec![step(DocKind::Runbook, None), step(DocKind::Wiki, None)]
        }
        HypothesisKind::Infra | HypothesisKind::Unknown => Vec::new(),
    }
}

/// Everything a summary may cite.
pub struct Evidence<'a> {
    pub report: &'a AnomalyReport,
    pub plan: &'a ActionPlan,
    pub kb: &'a KnowledgeStore,
}

impl Evidence<'_> {
    pub fn log_event(&self, id: EventId) -> Option<StoredEvent> {
        if let Some(e) = self.report.event(id) {
            return Some(e.clone());
        }
        self.plan
            .steps
            .iter()
            .filter_map(|s| s.outcome.as_ref())
            .flat_map(|o| o.events.iter())
            .find(|e| e.id == id)
            .cloned()
    }

    /// Text body behind a `log:`, `step:` or `doc:` ref.
    pub fn body(&self, reference: &str) -> Option<String> {
        let (kind, id) = reference.split_once(':')?;
        match kind {
            "log" => self.log_event(EventId(id.parse().ok()?)).map(|e| e.render()),
            "step" => self.plan.step(id)?.outcome.as_ref().map(|o| o.evidence.clone()),
            "doc" => self.kb.get(id).map(|d| format!("{}\n{}", d.title, d.body)),
            _ => None,
        }
    }

    fn blocks(&self) -> Vec<ContextBlock> {
        let mut blocks = self.report.context_blocks();
        let mut steps = String::new();
        let mut docs: Vec<KnowledgeDoc> = Vec::new();
        for s in &self.plan.steps {
            if s.action == StepAction::Synthesize {
                continue;
            }
            steps.push_str(&format!("[step:{}] {:?} {}\n", s.step_id, s.status, s.action.label()));
            if let Some(o) = &s.outcome {
                for line in o.evidence.lines() {
                    steps.push_str(&format!("  {line}\n"));
                }
                for d in &o.docs {
                    if let Some(doc) = self.kb.get(d) {
                        if !docs.iter().any(|x| x.doc_id == doc.doc_id) {
                            docs.push(doc);
                        }
                    }
                }
            }
            if let Some(r) = &s.reason {
                steps.push_str(&format!("  reason: {r}\n"));
            }
        }
        if steps.is_empty() {
            steps.push_str("none\n");
        }
        blocks.push(ContextBlock::new("step outcomes", steps));
        if !docs.is_empty() {
            let mut text = String::new();
            for d in docs {
                let svc = d.service.as_deref().unwrap_or("-");
                text.push_str(&format!("[doc:{}] {} {} {}: {}\n", d.doc_id, d.kind, svc, d.title, d.body));
            }
            blocks.push(ContextBlock::new("knowledge", text));
        }
        blocks
    }
}

#[derive(Deserialize)]
struct RawSummary {
    headline: String,
    hypothesis: Hypothesis,
    findings: BTreeMap<String, String>,
    recommended_action: RecommendedAction,
    #[serde(default)]
    out_of_path: Vec<String>,
}

/// Every findings value must occur verbatim in the body of at least one of
/// the hypothesis' evidence refs, and every ref must resolve.
pub fn check_grounding(summary: &DiagnosticSummary, evidence: &Evidence<'_>) -> Result<(), PlannerError> {
    let mut bodies = Vec::new();
    for r in &summary.hypothesis.evidence_refs {
        bodies.push(evidence.body(r).ok_or_else(|| PlannerError::UnresolvedRef(r.clone()))?);
    }
    for (k, v) in &summary.findings {
        if !bodies.iter().any(|b| b.contains(v.as_str())) {
            return Err(PlannerError::GroundingViolation { finding: k.clone(), value: v.clone() });
        }
    }
    Ok(())
}

pub fn synthesize_summary(
    reasoner: &dyn Reasoner,
    alert: ContextBlock,
    evidence: &Evidence<'_>,
    directives: &[String],
    now: Timestamp,
) -> Result<(Hypothesis, DiagnosticSummary), PlannerError> {
    let mut blocks = vec![alert];
    blocks.extend(evidence.blocks());
    if !directives.is_empty() {
        blocks.push(ContextBlock::new("revision directives", directives.join("\n")));
    }
    let prompt = render_prompt(
        AgentRole::Planner,
        "Write the diagnostic summary. Cite evidence refs for every finding.",
        blocks,
        SUMMARY_V1,
        DEFAULT_PROMPT_BUDGET,
    );
    let resp = reasoner.complete(&prompt)?;
    let raw: RawSummary = parse(&resp.body, "summary")?;
    raw.hypothesis.validate().map_err(PlannerError::InvalidResponse)?;
    let summary = DiagnosticSummary {
        incident_id: evidence.report.incident_id.clone(),
        headline: raw.headline,
        fault_component: raw.hypothesis.fault_component.clone(),
        hypothesis: raw.hypothesis.clone(),
        findings: raw.findings,
        recommended_action: raw.recommended_action,
        out_of_path: raw.out_of_path,
        uncertainty_tag: None,
        produced_at: now,
    };
    check_grounding(&summary, evidence)?;
    Ok((raw.hypothesis, summary))
}
