//! Deterministic reasoner driven by a JSON rule table.
//!
//! A rule fires when its role and schema match the prompt, every `when`
//! substring occurs in the prompt context, no `unless` substring does, and
//! every `capture` regex matches. Among firing rules the highest priority
//! wins, ties going to the earliest rule. The response is the rule's
//! `respond` template with `{{name}}` replaced by the first match of capture
//! `name`; a string that is exactly `{{@name}}` becomes the array of all
//! distinct matches of collector `name`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use regex::Regex;
use serde::Deserialize;
use serde_json::Value;

use super::schema::validate_value;
use super::{AgentPrompt, AgentRole, Reasoner, ReasonerError, StructuredResponse};

#[derive(Debug, Clone, Deserialize)]
struct RawRule {
    #[serde(default)]
    name: String,
    role: AgentRole,
    schema: String,
    #[serde(default)]
    when: Vec<String>,
    #[serde(default)]
    unless: Vec<String>,
    #[serde(default)]
    capture: BTreeMap<String, String>,
    #[serde(default)]
    collect: BTreeMap<String, String>,
    #[serde(default)]
    priority: i64,
    respond: Value,
}

#[derive(Debug, Deserialize)]
struct RawTable {
    rules: Vec<RawRule>,
}

#[derive(Debug, Clone)]
pub struct RuleEntry {
    pub name: String,
    pub role: AgentRole,
    pub schema: String,
    pub when: Vec<String>,
    pub unless: Vec<String>,
    pub capture: Vec<(String, Regex)>,
    pub collect: Vec<(String, Regex)>,
    pub priority: i64,
    pub respond: Value,
}

#[derive(Debug, Clone, Default)]
pub struct RuleTable {
    pub rules: Vec<RuleEntry>,
}

fn compile(name: &str, key: &str, pattern: &str) -> Result<Regex, ReasonerError> {
    Regex::new(pattern).map_err(|e| ReasonerError::RuleTable(format!("rule `{name}` capture `{key}`: {e}")))
}

impl RuleTable {
    pub fn from_json(text: &str) -> Result<Self, ReasonerError> {
        let raw: RawTable = serde_json::from_str(text).map_err(|e| ReasonerError::RuleTable(e.to_string()))?;
        let mut rules = Vec::with_capacity(raw.rules.len());
        for (i, r) in raw.rules.into_iter().enumerate() {
            let name = if r.name.is_empty() { format!("rule-{i}") } else { r.name };
            if !super::schema::SCHEMA_IDS.contains(&r.schema.as_str()) {
                return Err(ReasonerError::RuleTable(format!("rule `{name}`: unknown schema `{}`", r.schema)));
            }
            let capture = r
                .capture
                .iter()
                .map(|(k, p)| Ok((k.clone(), compile(&name, k, p)?)))
                .collect::<Result<Vec<_>, ReasonerError>>()?;
            let collect = r
                .collect
                .iter()
                .map(|(k, p)| Ok((k.clone(), compile(&name, k, p)?)))
                .collect::<Result<Vec<_>, ReasonerError>>()?;
            rules.push(RuleEntry {
                name,
                role: r.role,
                schema: r.schema,
                when: r.when,
                unless: r.unless,
                capture,
                collect,
                priority: r.priority,
                respond: r.respond,
            });
        }
        Ok(RuleTable { rules })
    }

    pub fn load(path: &Path) -> Result<Self, ReasonerError> {
        let text =
            fs::read_to_string(path).map_err(|e| ReasonerError::RuleTable(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

fn first_match(re: &Regex, text: &str) -> Option<String> {
    let caps = re.captures(text)?;
    let m = caps.name("v").or_else(|| caps.get(1)).or_else(|| caps.get(0))?;
    Some(m.as_str().to_string())
}

fn all_matches(re: &Regex, text: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for caps in re.captures_iter(text) {
        if let Some(m) = caps.name("v").or_else(|| caps.get(1)).or_else(|| caps.get(0)) {
            let s = m.as_str().to_string();
            if !out.contains(&s) {
                out.push(s);
            }
        }
    }
    out
}

struct Bindings {
    single: BTreeMap<String, String>,
    lists: BTreeMap<String, Vec<String>>,
}

impl RuleEntry {
    fn bind(&self, prompt: &AgentPrompt, text: &str) -> Option<Bindings> {
        if self.role != prompt.agent_role || self.schema != prompt.response_schema_id {
            return None;
        }
        if !self.when.iter().all(|w| text.contains(w.as_str())) || self.unless.iter().any(|u| text.contains(u.as_str()))
        {
            return None;
        }
        let mut single = BTreeMap::new();
        for (k, re) in &self.capture {
            single.insert(k.clone(), first_match(re, text)?);
        }
        let lists = self.collect.iter().map(|(k, re)| (k.clone(), all_matches(re, text))).collect();
        Some(Bindings { single, lists })
    }
}

fn fill(template: &Value, b: &Bindings, rule: &str) -> Result<Value, ReasonerError> {
    Ok(match template {
        Value::String(s) => {
            if let Some(name) = s.strip_prefix("{{@").and_then(|r| r.strip_suffix("}}")) {
                let list = b
                    .lists
                    .get(name)
                    .ok_or_else(|| ReasonerError::RuleTable(format!("rule `{rule}`: unknown collector `{name}`")))?;
                return Ok(Value::Array(list.iter().cloned().map(Value::String).collect()));
            }
            Value::String(interpolate(s, b, rule)?)
        }
        Value::Array(items) => Value::Array(items.iter().map(|v| fill(v, b, rule)).collect::<Result<_, _>>()?),
        Value::Object(map) => {
            let mut out = serde_json::Map::new();
            for (k, v) in map {
                out.insert(k.clone(), fill(v, b, rule)?);
            }
            Value::Object(out)
        }
        other => other.clone(),
    })
}

fn interpolate(s: &str, b: &Bindings, rule: &str) -> Result<String, ReasonerError> {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after
            .find("}}")
            .ok_or_else(|| ReasonerError::RuleTable(format!("rule `{rule}`: unterminated placeholder")))?;
        let name = after[..end].trim();
        let value = b
            .single
            .get(name)
            .ok_or_else(|| ReasonerError::RuleTable(format!("rule `{rule}`: unknown placeholder `{name}`")))?;
        out.push_str(value);
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Stateless after construction; safe to share across workflows.
pub struct ScriptedReasoner {
    table: RuleTable,
}

impl ScriptedReasoner {
    pub fn new(table: RuleTable) -> Self {
        ScriptedReasoner { table }
    }

    pub fn table(&self) -> &RuleTable {
        &self.table
    }

    /// Index of the rule that would fire for `prompt`.
    pub fn select(&self, prompt: &AgentPrompt) -> Option<usize> {
        let text = prompt.context_text();
        let mut best: Option<(i64, usize)> = None;
        for (i, r) in self.table.rules.iter().enumerate() {
            if r.bind(prompt, &text).is_some() && best.is_none_or(|(p, _)| r.priority > p) {
                best = Some((r.priority, i));
            }
        }
        best.map(|(_, i)| i)
    }
}

impl Reasoner for ScriptedReasoner {
    fn complete(&self, prompt: &AgentPrompt) -> Result<StructuredResponse, ReasonerError> {
        let no_match =
            || ReasonerError::NoRuleMatched { role: prompt.agent_role, schema: prompt.response_schema_id.clone() };
        let idx = self.select(prompt).ok_or_else(no_match)?;
        let rule = &self.table.rules[idx];
        let text = prompt.context_text();
        let bindings = rule.bind(prompt, &text).ok_or_else(no_match)?;
        let body = fill(&rule.respond, &bindings, &rule.name)?;
        validate_value(&body, &prompt.response_schema_id)?;
        let raw_text = serde_json::to_string(&body).expect("json value serializes");
        Ok(StructuredResponse { schema_id: prompt.response_schema_id.clone(), body, raw_text })
    }
}
