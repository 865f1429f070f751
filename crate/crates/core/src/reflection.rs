//! Bounded self-review of a synthesized summary.
//!
//! Mechanical checks run first and set hard floors; the reasoner's verdict can
//! only turn a pass into a failure.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::incident::MAX_REFLECTION_CYCLES;
use crate::knowledge::DocKind;
use crate::planner::Evidence;
use crate::reasoner::schema::VERDICT_V1;
use crate::reasoner::{render_prompt, AgentRole, ContextBlock, Reasoner, ReasonerError, DEFAULT_PROMPT_BUDGET};
use crate::summary::{DiagnosticSummary, UncertaintyTag};
use crate::telemetry::EventId;
use crate::time::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Criterion {
    pub pass: bool,
    pub rationale: String,
}

impl Criterion {
    fn pass(rationale: impl Into<String>) -> Self {
        Criterion { pass: true, rationale: rationale.into() }
    }

    fn fail(rationale: impl Into<String>) -> Self {
        Criterion { pass: false, rationale: rationale.into() }
    }

    /// Model judgment may add a failure, never remove one.
    fn downgrade(&mut self, model: Criterion) {
        if self.pass && !model.pass {
            *self = Criterion::fail(format!("reviewer: {}", model.rationale));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Overall {
    Accept,
    Revise,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionVerdict {
    pub cycle: u32,
    pub completeness: Criterion,
    pub causality: Criterion,
    pub actionability: Criterion,
    pub overall: Overall,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub revision_directives: Vec<String>,
}

impl ReflectionVerdict {
    pub fn criteria(&self) -> [(&'static str, &Criterion); 3] {
        [("completeness", &self.completeness), ("causality", &self.causality), ("actionability", &self.actionability)]
    }

    pub fn render(&self) -> String {
        let mut out = format!("cycle {} {:?}:", self.cycle, self.overall);
        for (name, c) in self.criteria() {
            out.push_str(&format!(" {name}={}", if c.pass { "pass" } else { "fail" }));
        }
        out
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReflectionError {
    #[error(transparent)]
    Reasoner(#[from] ReasonerError),
    #[error("cycle {0} outside 1..=5")]
    CycleOutOfRange(u32),
    #[error("invalid verdict: {0}")]
    InvalidVerdict(String),
}

/// Every anomaly service is named in the findings, is the fault component,
/// or is listed as out of path.
pub fn check_completeness(summary: &DiagnosticSummary, evidence: &Evidence<'_>) -> Criterion {
    let missing: Vec<String> = evidence
        .report
        .services()
        .into_iter()
        .filter(|svc| {
            summary.fault_component != *svc
                && !summary.out_of_path.contains(svc)
                && !summary.findings.iter().any(|(k, v)| k == svc || v.contains(svc.as_str()))
        })
        .collect();
    if missing.is_empty() {
        Criterion::pass("every anomalous service is accounted for")
    } else {
        Criterion::fail(format!("services neither explained nor marked out of path: {}", missing.join(", ")))
    }
}

/// At least one log ref, and every timestamped ref (log events, deployments)
/// at or before the alert.
pub fn check_causality(summary: &DiagnosticSummary, evidence: &Evidence<'_>, fired_at: Timestamp) -> Criterion {
    let refs = &summary.hypothesis.evidence_refs;
    if refs.is_empty() {
        return Criterion::fail("hypothesis cites no evidence");
    }
    let mut logs = 0;
    for r in refs {
        let (kind, id) = r.split_once(':').unwrap_or((r.as_str(), ""));
        let ts = match kind {
            "log" => {
                let Some(e) = id.parse().ok().and_then(|n| evidence.log_event(EventId(n))) else {
                    return Criterion::fail(format!("{r} does not resolve"));
                };
                logs += 1;
                Some(e.event.ts)
            }
            "doc" => match evidence.kb.get(id) {
                Some(d) => d.deployed_at(),
                None => return Criterion::fail(format!("{r} does not resolve")),
            },
            "step" => None,
            _ => return Criterion::fail(format!("{r} is not a known evidence kind")),
        };
        if let Some(ts) = ts.filter(|ts| *ts > fired_at) {
            return Criterion::fail(format!("{r} at {ts} is after the alert at {fired_at}"));
        }
    }
    if logs == 0 {
        return Criterion::fail("no log evidence supports the hypothesis");
    }
    Criterion::pass(format!("{logs} log event(s) precede the alert"))
}

/// The recommendation names a registered tool or a runbook.
pub fn check_actionability(
    summary: &DiagnosticSummary,
    evidence: &Evidence<'_>,
    tools: &BTreeSet<String>,
) -> Criterion {
    let action = &summary.recommended_action;
    if let Some(t) = &action.tool {
        if !tools.contains(t) {
            return Criterion::fail(format!("tool `{t}` is not registered"));
        }
        return Criterion::pass(format!("names registered tool `{t}`"));
    }
    match &action.doc_id {
        Some(d) => match evidence.kb.get(d) {
            Some(doc) if doc.kind == DocKind::Runbook => Criterion::pass(format!("names runbook `{d}`")),
            Some(_) => Criterion::fail(format!("`{d}` is not a runbook")),
            None => Criterion::fail(format!("runbook `{d}` does not exist")),
        },
        None => Criterion::fail("recommendation names neither a tool nor a runbook"),
    }
}

#[derive(Deserialize)]
struct RawVerdict {
    completeness: Criterion,
    causality: Criterion,
    actionability: Criterion,
    #[serde(default)]
    directives: Vec<String>,
}

pub fn evaluate(
    reasoner: &dyn Reasoner,
    summary: &DiagnosticSummary,
    evidence: &Evidence<'_>,
    tools: &BTreeSet<String>,
    fired_at: Timestamp,
    cycle: u32,
) -> Result<ReflectionVerdict, ReflectionError> {
    if !(1..=MAX_REFLECTION_CYCLES).contains(&cycle) {
        return Err(ReflectionError::CycleOutOfRange(cycle));
    }
    let mut completeness = check_completeness(summary, evidence);
    let mut causality = check_causality(summary, evidence, fired_at);
    let mut actionability = check_actionability(summary, evidence, tools);

    let mut checks = String::new();
    for (name, c) in [("completeness", &completeness), ("causality", &causality), ("actionability", &actionability)] {
        checks.push_str(&format!("{name}: {} ({})\n", if c.pass { "PASS" } else { "FAIL" }, c.rationale));
    }
    let mut blocks = vec![
        ContextBlock::new("summary", summary.render_text()),
        ContextBlock::new("mechanical checks", checks),
        ContextBlock::new("cycle", format!("{cycle} of {MAX_REFLECTION_CYCLES}")),
    ];
    blocks.extend(evidence.report.context_blocks());
    let prompt = render_prompt(
        AgentRole::Reflector,
        "Judge completeness, causality and actionability of the summary.",
        blocks,
        VERDICT_V1,
        DEFAULT_PROMPT_BUDGET,
    );
    let resp = reasoner.complete(&prompt)?;
    let raw: RawVerdict =
        serde_json::from_value(resp.body).map_err(|e| ReflectionError::InvalidVerdict(e.to_string()))?;
    completeness.downgrade(raw.completeness);
    causality.downgrade(raw.causality);
    actionability.downgrade(raw.actionability);

    let all = completeness.pass && causality.pass && actionability.pass;
    let mut directives = Vec::new();
    if !all {
        for (name, c) in [("completeness", &completeness), ("causality", &causality), ("actionability", &actionability)]
        {
            if !c.pass {
                directives.push(format!("{name}: {}", c.rationale));
            }
        }
        directives.extend(raw.directives);
    }
    Ok(ReflectionVerdict {
        cycle,
        completeness,
        causality,
        actionability,
        overall: if all { Overall::Accept } else { Overall::Revise },
        revision_directives: directives,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Iterate {
    Continue(Vec<String>),
    Finalize(Option<UncertaintyTag>),
}

pub fn should_iterate(verdict: &ReflectionVerdict, cycle: u32) -> Iterate {
    match verdict.overall {
        Overall::Accept => Iterate::Finalize(None),
        Overall::Revise if cycle < MAX_REFLECTION_CYCLES => Iterate::Continue(verdict.revision_directives.clone()),
        Overall::Revise => Iterate::Finalize(Some(UncertaintyTag::LowConfidenceTimeout)),
    }
}

/// Index of the most confident summary; ties go to the latest.
pub fn most_confident(history: &[DiagnosticSummary]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in history.iter().enumerate() {
        if best.is_none_or(|b| s.hypothesis.confidence >= history[b].hypothesis.confidence) {
            best = Some(i);
        }
    }
    best
}
