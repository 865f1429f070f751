//! Response schemas. Required fields are enforced exactly; unknown fields
//! pass through untouched.

use serde_json::Value;

use super::ReasonerError;

pub const GAPS_V1: &str = "gaps.v1";
pub const PLAN_V1: &str = "plan.v1";
pub const SUMMARY_V1: &str = "summary.v1";
pub const VERDICT_V1: &str = "verdict.v1";

pub const SCHEMA_IDS: [&str; 4] = [GAPS_V1, PLAN_V1, SUMMARY_V1, VERDICT_V1];

const RESOLVERS: &[&str] = &["TOOL", "RUNBOOK", "WIKI", "DEPLOYMENT_METADATA", "LOGS"];
const KINDS: &[&str] = &["CODE_REGRESSION", "CONFIG", "DEPENDENCY_FAILURE", "DATA_CONTENT", "INFRA", "UNKNOWN"];
const ACTIONS: &[&str] = &["INVOKE_TOOL", "QUERY_KNOWLEDGE", "QUERY_LOGS", "SYNTHESIZE"];
const CONDITIONS: &[&str] = &["equals", "contains", "succeeded"];

enum Shape {
    Str,
    NonEmpty,
    Bool,
    Unit,
    OneOf(&'static [&'static str]),
    List(Box<Shape>),
    StrMap,
    Fields(Vec<(&'static str, bool, Shape)>),
}

use Shape::*;

fn req(name: &'static str, s: Shape) -> (&'static str, bool, Shape) {
    (name, true, s)
}

fn opt(name: &'static str, s: Shape) -> (&'static str, bool, Shape) {
    (name, false, s)
}

fn hypothesis() -> Shape {
    Fields(vec![
        req("statement", Str),
        opt("fault_component", Str),
        req("kind", OneOf(KINDS)),
        req("confidence", Unit),
        opt("evidence_refs", List(Box::new(Str))),
    ])
}

fn criterion() -> Shape {
    Fields(vec![req("pass", Bool), req("rationale", Str)])
}

fn shape_for(schema_id: &str) -> Option<Shape> {
    Some(match schema_id {
        GAPS_V1 => Fields(vec![
            req(
                "gaps",
                List(Box::new(Fields(vec![
                    req("gap_id", NonEmpty),
                    req("description", NonEmpty),
                    req("resolvable_by", OneOf(RESOLVERS)),
                ]))),
            ),
            opt("hypothesis", hypothesis()),
        ]),
        PLAN_V1 => Fields(vec![req(
            "steps",
            List(Box::new(Fields(vec![
                req("step_id", NonEmpty),
                req("goal", Str),
                req("action", Fields(vec![req("type", OneOf(ACTIONS))])),
                opt("condition", Fields(vec![req("type", OneOf(CONDITIONS)), req("step", NonEmpty)])),
            ]))),
        )]),
        SUMMARY_V1 => Fields(vec![
            req("headline", NonEmpty),
            req("hypothesis", hypothesis()),
            req("findings", StrMap),
            req("recommended_action", Fields(vec![req("text", NonEmpty), opt("tool", Str), opt("doc_id", Str)])),
            opt("out_of_path", List(Box::new(Str))),
        ]),
        VERDICT_V1 => Fields(vec![
            req("completeness", criterion()),
            req("causality", criterion()),
            req("actionability", criterion()),
            opt("directives", List(Box::new(Str))),
        ]),
        _ => return None,
    })
}

fn fail(path: &str, detail: impl Into<String>) -> ReasonerError {
    ReasonerError::MalformedModelOutput {
        path: if path.is_empty() { ".".into() } else { path.into() },
        detail: detail.into(),
    }
}

fn check(v: &Value, shape: &Shape, path: &str) -> Result<(), ReasonerError> {
    match shape {
        Str => v.as_str().map(|_| ()).ok_or_else(|| fail(path, "expected a string")),
        NonEmpty => match v.as_str() {
            Some(s) if !s.trim().is_empty() => Ok(()),
            Some(_) => Err(fail(path, "must be non-empty")),
            None => Err(fail(path, "expected a string")),
        },
        Bool => v.as_bool().map(|_| ()).ok_or_else(|| fail(path, "expected a boolean")),
        Unit => match v.as_f64() {
            Some(x) if (0.0..=1.0).contains(&x) => Ok(()),
            Some(x) => Err(fail(path, format!("{x} outside [0, 1]"))),
            None => Err(fail(path, "expected a number")),
        },
        OneOf(allowed) => match v.as_str() {
            Some(s) if allowed.contains(&s) => Ok(()),
            Some(s) => Err(fail(path, format!("`{s}` is not one of {allowed:?}"))),
            None => Err(fail(path, "expected a string")),
        },
        List(item) => {
            let arr = v.as_array().ok_or_else(|| fail(path, "expected an array"))?;
            for (i, x) in arr.iter().enumerate() {
                check(x, item, &format!("{path}[{i}]"))?;
            }
            Ok(())
        }
        StrMap => {
            let obj = v.as_object().ok_or_else(|| fail(path, "expected an object"))?;
            for (k, x) in obj {
                if !x.is_string() {
                    return Err(fail(&format!("{path}.{k}"), "expected a string"));
                }
            }
            Ok(())
        }
        Fields(fields) => {
            let obj = v.as_object().ok_or_else(|| fail(path, "expected an object"))?;
            for (name, required, s) in fields {
                let p = format!("{path}.{name}");
                match obj.get(*name) {
                    None | Some(Value::Null) if *required => return Err(fail(&p, "missing required field")),
                    None | Some(Value::Null) => {}
                    Some(x) => check(x, s, &p)?,
                }
            }
            Ok(())
        }
    }
}

/// Validates an already-parsed document.
pub fn validate_value(body: &Value, schema_id: &str) -> Result<(), ReasonerError> {
    let shape = shape_for(schema_id).ok_or_else(|| ReasonerError::UnknownSchema(schema_id.to_string()))?;
    check(body, &shape, "")
}

/// Parses raw model text (tolerating a surrounding code fence) and checks it
/// against `schema_id`.
pub fn validate_response(raw_text: &str, schema_id: &str) -> Result<Value, ReasonerError> {
    if shape_for(schema_id).is_none() {
        return Err(ReasonerError::UnknownSchema(schema_id.to_string()));
    }
    let body: Value = serde_json::from_str(strip_fence(raw_text)).map_err(|e| fail("", format!("not JSON: {e}")))?;
    validate_value(&body, schema_id)?;
    Ok(body)
}

fn strip_fence(raw: &str) -> &str {
    let t = raw.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    let rest = rest.split_once('\n').map(|(_, r)| r).unwrap_or("");
    rest.trim_end().strip_suffix("```").unwrap_or(rest).trim()
}
