//! Hypotheses and diagnostic summaries shared by the planner, the reflection
//! loop, the incident store and metrics.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum HypothesisKind {
    CodeRegression,
    Config,
    DependencyFailure,
    DataContent,
    Infra,
    Unknown,
}

impl fmt::Display for HypothesisKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        f.write_str(&s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub statement: String,
    #[serde(default)]
    pub fault_component: String,
    pub kind: HypothesisKind,
    pub confidence: f64,
    /// `log:<id>`, `doc:<doc_id>` or `step:<step_id>`.
    #[serde(default)]
    pub evidence_refs: Vec<String>,
}

impl Hypothesis {
    pub fn unknown(statement: &str, confidence: f64) -> Self {
        Hypothesis {
            statement: statement.to_string(),
            fault_component: String::new(),
            kind: HypothesisKind::Unknown,
            confidence,
            evidence_refs: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.confidence) || self.confidence.is_nan() {
            return Err(format!("confidence {} outside [0, 1]", self.confidence));
        }
        if self.kind != HypothesisKind::Unknown && self.fault_component.trim().is_empty() {
            return Err("fault_component is empty".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecommendedAction {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_id: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum UncertaintyTag {
    LowConfidenceTimeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticSummary {
    pub incident_id: String,
    pub headline: String,
    pub fault_component: String,
    pub hypothesis: Hypothesis,
    pub findings: BTreeMap<String, String>,
    pub recommended_action: RecommendedAction,
    /// Services seen in the anomaly report that the summary deliberately
    /// leaves outside the causal path.
    #[serde(default)]
    pub out_of_path: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uncertainty_tag: Option<UncertaintyTag>,
    pub produced_at: Timestamp,
}

impl DiagnosticSummary {
    /// Content-only comparison key: everything except `produced_at`.
    pub fn content(&self) -> DiagnosticSummary {
        DiagnosticSummary { produced_at: Timestamp(0), ..self.clone() }
    }

    /// Plain-text rendering used for notifications.
    pub fn render_text(&self) -> String {
        let mut out = format!("[{}] {}\n", self.incident_id, self.headline);
        if let Some(UncertaintyTag::LowConfidenceTimeout) = self.uncertainty_tag {
            out.push_str("uncertainty: LOW_CONFIDENCE_TIMEOUT\n");
        }
        out.push_str(&format!(
            "hypothesis ({}, confidence {:.2}): {}\n",
            self.hypothesis.kind, self.hypothesis.confidence, self.hypothesis.statement
        ));
        for (k, v) in &self.findings {
            out.push_str(&format!("  {k}: {v}\n"));
        }
        out.push_str(&format!("action: {}", self.recommended_action.text));
        if let Some(tool) = &self.recommended_action.tool {
            out.push_str(&format!(" (tool {tool})"));
        }
        out
    }
}
