//! Triage efficiency metrics over incident sets, and their tabular report.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::incident::IncidentRecord;
use crate::time::MINUTE_MS;

/// Alert responsiveness threshold.
pub const AR_THRESHOLD_MS: i64 = 5 * MINUTE_MS;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no summarized incidents")]
    NoSummarizedIncidents,
    #[error("incident `{0}` has no verified root cause")]
    MissingGroundTruth(String),
    #[error("incident `{0}` has no triage steps")]
    EmptySteps(String),
    #[error("empty cohort")]
    EmptyCohort,
}

/// Minutes from first alert to summary, for summarized incidents.
pub fn time_to_insight(r: &IncidentRecord) -> Option<f64> {
    r.summary.as_ref().map(|s| (s.produced_at.0 - r.fired_at().0) as f64 / MINUTE_MS as f64)
}

/// Mean time to insight, in minutes.
pub fn compute_mtti(incidents: &[IncidentRecord]) -> Result<f64, MetricsError> {
    let deltas: Vec<f64> = incidents.iter().filter_map(time_to_insight).collect();
    if deltas.is_empty() {
        return Err(MetricsError::NoSummarizedIncidents);
    }
    Ok(deltas.iter().sum::<f64>() / deltas.len() as f64)
}

fn normalize(label: &str) -> String {
    label.trim().to_lowercase()
}

/// Fraction of incidents whose summary names the verified root cause.
/// Unsummarized incidents count as misses.
pub fn compute_ela(incidents: &[IncidentRecord]) -> Result<f64, MetricsError> {
    if incidents.is_empty() {
        return Err(MetricsError::EmptyCohort);
    }
    let mut hits = 0usize;
    for r in incidents {
        let truth =
            r.verified_root_cause.as_deref().ok_or_else(|| MetricsError::MissingGroundTruth(r.incident_id.clone()))?;
        if r.summary.as_ref().is_some_and(|s| normalize(&s.fault_component) == normalize(truth)) {
            hits += 1;
        }
    }
    Ok(hits as f64 / incidents.len() as f64)
}

/// Mean per-incident share of automated triage steps.
pub fn compute_eer(incidents: &[IncidentRecord]) -> Result<f64, MetricsError> {
    if incidents.is_empty() {
        return Err(MetricsError::EmptyCohort);
    }
    let mut sum = 0.0;
    for r in incidents {
        if r.triage_steps.is_empty() {
            return Err(MetricsError::EmptySteps(r.incident_id.clone()));
        }
        sum += r.triage_steps.iter().filter(|s| s.automated).count() as f64 / r.triage_steps.len() as f64;
    }
    Ok(sum / incidents.len() as f64)
}

/// Fraction of incidents summarized within `threshold_ms` of the first
/// alert. An empty cohort yields 0.
pub fn compute_ar(incidents: &[IncidentRecord], threshold_ms: i64) -> f64 {
    if incidents.is_empty() {
        return 0.0;
    }
    let within = incidents
        .iter()
        .filter(|r| r.summary.as_ref().is_some_and(|s| s.produced_at.0 - r.fired_at().0 <= threshold_ms))
        .count();
    within as f64 / incidents.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cohort: String,
    pub n_alerts: usize,
    pub n_incidents: usize,
    pub mtti_minutes: Option<f64>,
    pub mtti_per_incident: Vec<(String, f64)>,
    pub ela: Option<f64>,
    pub eer: Option<f64>,
    pub ar: f64,
    pub notes: Vec<String>,
}

impl MetricsReport {
    pub fn compute(cohort: &str, incidents: &[IncidentRecord]) -> Self {
        let mut notes = Vec::new();
        let unsummarized = incidents.iter().filter(|r| r.summary.is_none()).count();
        if unsummarized > 0 {
            notes.push(format!("{unsummarized} incident(s) without summary"));
        }
        let mtti = compute_mtti(incidents).ok();
        let ela = if incidents.iter().any(|r| r.verified_root_cause.is_some()) {
            let known: Vec<IncidentRecord> =
                incidents.iter().filter(|r| r.verified_root_cause.is_some()).cloned().collect();
            if known.len() < incidents.len() {
                notes.push(format!(
                    "{} incident(s) without ground truth excluded from ELA",
                    incidents.len() - known.len()
                ));
            }
            compute_ela(&known).ok()
        } else {
            None
        };
        let stepped: Vec<IncidentRecord> = incidents.iter().filter(|r| !r.triage_steps.is_empty()).cloned().collect();
        if !stepped.is_empty() && stepped.len() < incidents.len() {
            notes.push(format!(
                "{} incident(s) without triage steps excluded from EER",
                incidents.len() - stepped.len()
            ));
        }
        if incidents.is_empty() {
            notes.push("empty cohort".into());
        }
        MetricsReport {
            cohort: cohort.to_string(),
            n_alerts: incidents.iter().map(|r| r.alerts.len()).sum(),
            n_incidents: incidents.len(),
            mtti_minutes: mtti,
            mtti_per_incident: incidents
                .iter()
                .filter_map(|r| time_to_insight(r).map(|m| (r.incident_id.clone(), m)))
                .collect(),
            ela,
            eer: compute_eer(&stepped).ok(),
            ar: compute_ar(incidents, AR_THRESHOLD_MS),
            notes,
        }
    }
}

/// Percentage truncated (not rounded) to one decimal: 66/72 renders as
/// `91.6%`.
pub fn format_percent(fraction: f64) -> String {
    let tenths = (fraction * 1000.0 + 1e-9).floor() as i64;
    format!("{}.{}%", tenths / 10, tenths % 10)
}

fn format_minutes(m: Option<f64>) -> String {
    m.map(|v| format!("{v:.2} min")).unwrap_or_else(|| "N/A".into())
}

fn format_opt_percent(f: Option<f64>) -> String {
    f.map(format_percent).unwrap_or_else(|| "N/A".into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown format `{other}` (table, csv, json)")),
        }
    }
}

/// Rows are metrics, columns are cohorts. ELA appears when any cohort has
/// ground truth.
fn rows(cohorts: &[MetricsReport]) -> Vec<Vec<String>> {
    let mut header = vec!["Metric".to_string()];
    header.extend(cohorts.iter().map(|c| c.cohort.clone()));
    let mut out = vec![header];
    let mut row = |name: &str, f: &dyn Fn(&MetricsReport) -> String| {
        let mut r = vec![name.to_string()];
        r.extend(cohorts.iter().map(f));
        out.push(r);
    };
    row("Alerts", &|c| c.n_alerts.to_string());
    row("MTTI", &|c| format_minutes(c.mtti_minutes));
    if cohorts.iter().any(|c| c.ela.is_some()) {
        row("ELA", &|c| format_opt_percent(c.ela));
    }
    row("EER", &|c| format_opt_percent(c.eer));
    row("AR", &|c| format_percent(c.ar));
    out
}

pub fn render_report(cohorts: &[MetricsReport], format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(cohorts).expect("reports serialize") + "\n",
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in rows(cohorts) {
                w.write_record(&r).expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
        }
        ReportFormat::Table => {
            let rows = rows(cohorts);
            let widths: Vec<usize> =
                (0..rows[0].len()).map(|i| rows.iter().map(|r| r[i].chars().count()).max().unwrap_or(0)).collect();
            let mut out = String::new();
            for (n, r) in rows.iter().enumerate() {
                let cells: Vec<String> = r.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
                out.push_str(cells.join(" | ").trim_end());
                out.push('\n');
                if n == 0 {
                    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
                    out.push_str(&rule.join("-+-"));
                    out.push('\n');
                }
            }
            for c in cohorts {
                for note in &c.notes {
                    out.push_str(&format!("note ({}): {note}\n", c.cohort));
                }
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Alert, Severity};
    use crate::incident::{IncidentState, TriageStep};
    use crate::summary::{DiagnosticSummary, Hypothesis, RecommendedAction};
    use crate::time::Timestamp;
    use std::collections::BTreeMap;

    fn rec(
        id: &str,
        delta_min: Option<f64>,
        found: &str,
        truth: Option<&str>,
        steps: (usize, usize),
    ) -> IncidentRecord {
        let alert = Alert {
            alert_id: format!("a-{id}"),
            service: "svc".into(),
            alert_type: "t".into(),
            severity: Severity::Warn,
            fired_at: Timestamp(1_000_000),
            correlation: BTreeMap::new(),
            payload: BTreeMap::new(),
            monitor: "m".into(),
        };
        let mut r = IncidentRecord::new(id.into(), alert, Timestamp(1_000_000));
        if let Some(d) = delta_min {
            let at = Timestamp(1_000_000 + (d * MINUTE_MS as f64) as i64);
            r.state = IncidentState::Closed;
            r.summary = Some(DiagnosticSummary {
                incident_id: id.into(),
                headline: String::new(),
                fault_component: found.into(),
                hypothesis: Hypothesis::unknown("", 0.1),
                findings: BTreeMap::new(),
                recommended_action: RecommendedAction { text: String::new(), tool: None, doc_id: None },
                out_of_path: vec![],
                uncertainty_tag: None,
                produced_at: at,
            });
        }
        r.verified_root_cause = truth.map(str::to_owned);
        r.triage_steps =
            (0..steps.1).map(|i| TriageStep { label: format!("s{i}"), minutes: 1.0, automated: i < steps.0 }).collect();
        r
    }

    #[test]
    fn mtti_mean() {
        let v = vec![
            rec("1", Some(1.0), "x", None, (0, 0)),
            rec("2", Some(2.0), "x", None, (0, 0)),
            rec("3", Some(3.0), "x", None, (0, 0)),
            rec("4", None, "x", None, (0, 0)),
        ];
        assert_eq!(compute_mtti(&v).unwrap(), 2.0);
        assert_eq!(compute_mtti(&v[3..]), Err(MetricsError::NoSummarizedIncidents));
    }

    #[test]
    fn ela_cases() {
        let v = vec![
            rec("1", Some(1.0), " Promo-Banner ", Some("promo-banner"), (0, 0)),
            rec("2", Some(1.0), "x", Some("x"), (0, 0)),
            rec("3", Some(1.0), "x", Some("x"), (0, 0)),
            rec("4", Some(1.0), "y", Some("x"), (0, 0)),
        ];
        assert_eq!(compute_ela(&v).unwrap(), 0.75);
        assert_eq!(compute_ela(&v[..3]).unwrap(), 1.0);
        let missing = vec![rec("5", Some(1.0), "x", None, (0, 0))];
        assert_eq!(compute_ela(&missing), Err(MetricsError::MissingGroundTruth("5".into())));
        assert_eq!(compute_ela(&[rec("6", None, "", Some("x"), (0, 0))]).unwrap(), 0.0);
    }

    #[test]
    fn eer_cases() {
        assert_eq!(compute_eer(&[rec("1", None, "", None, (3, 4))]).unwrap(), 0.75);
        assert_eq!(compute_eer(&[rec("1", None, "", None, (0, 4))]).unwrap(), 0.0);
        let mixed = [rec("1", None, "", None, (3, 4)), rec("2", None, "", None, (1, 2))];
        assert_eq!(compute_eer(&mixed).unwrap(), 0.625);
        assert_eq!(compute_eer(&[rec("1", None, "", None, (0, 0))]), Err(MetricsError::EmptySteps("1".into())));
    }

    #[test]
    fn ar_cases() {
        let mut v: Vec<IncidentRecord> = (0..66).map(|i| rec(&i.to_string(), Some(2.0), "", None, (0, 0))).collect();
        v.extend((66..72).map(|i| rec(&i.to_string(), Some(6.0), "", None, (0, 0))));
        let ar = compute_ar(&v, AR_THRESHOLD_MS);
        assert_eq!(ar, 66.0 / 72.0);
        assert_eq!(format_percent(ar), "91.6%");
        assert_eq!(compute_ar(&v[..66], AR_THRESHOLD_MS), 1.0);
        assert_eq!(compute_ar(&[rec("e", Some(5.0), "", None, (0, 0))], AR_THRESHOLD_MS), 1.0);
        assert_eq!(compute_ar(&[], AR_THRESHOLD_MS), 0.0);
    }

    #[test]
    fn percent_truncates() {
        assert_eq!(format_percent(0.75), "75.0%");
        assert_eq!(format_percent(0.884), "88.4%");
        assert_eq!(format_percent(0.29), "29.0%");
        assert_eq!(format_percent(1.0), "100.0%");
        assert_eq!(format_percent(0.0), "0.0%");
    }

    #[test]
    fn report_shapes() {
        let agent = MetricsReport::compute("Agent", &[rec("1", Some(1.5), "x", Some("x"), (3, 4))]);
        let manual = MetricsReport::compute("Manual, on-call", &[rec("2", Some(12.0), "x", Some("x"), (0, 0))]);
        let table = render_report(&[manual.clone(), agent.clone()], ReportFormat::Table);
        let eer_line = table.lines().find(|l| l.starts_with("EER")).unwrap();
        assert!(eer_line.contains("N/A") && eer_line.contains("75.0%"), "{table}");
        assert_eq!(table.lines().next().unwrap().split('|').count(), 3);
        let csv = render_report(&[manual, agent], ReportFormat::Csv);
        assert!(csv.starts_with("Metric,\"Manual, on-call\",Agent\n"), "{csv}");
        assert!(csv.contains("MTTI,12.00 min,1.50 min\n"));
    }
}
