//! Chat-completion HTTP backend.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde_json::{json, Value};

use super::schema::validate_response;
use super::{AgentPrompt, Reasoner, ReasonerError, StructuredResponse};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteConfig {
    pub url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub max_in_flight: usize,
    pub transport_attempts: u32,
    pub timeout: Duration,
}

impl RemoteConfig {
    pub fn new(url: &str, model: &str) -> Self {
        RemoteConfig {
            url: url.to_string(),
            model: model.to_string(),
            api_key: None,
            max_in_flight: 4,
            transport_attempts: 3,
            timeout: Duration::from_secs(60),
        }
    }
}

struct Gate {
    used: Mutex<usize>,
    cv: Condvar,
    cap: usize,
}

impl Gate {
    fn enter(&self) -> GateGuard<'_> {
        let mut used = self.used.lock().unwrap();
        while *used >= self.cap {
            used = self.cv.wait(used).unwrap();
        }
        *used += 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().unwrap() -= 1;
        self.0.cv.notify_one();
    }
}

pub struct RemoteReasoner {
    cfg: RemoteConfig,
    agent: ureq::Agent,
    gate: Gate,
}

impl RemoteReasoner {
    pub fn new(cfg: RemoteConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder().timeout_global(Some(cfg.timeout)).build().into();
        let cap = cfg.max_in_flight.max(1);
        RemoteReasoner { cfg, agent, gate: Gate { used: Mutex::new(0), cv: Condvar::new(), cap } }
    }

    fn system_text(prompt: &AgentPrompt) -> String {
        format!(
            "{}\n\nRole: {}. Reply with a single JSON document conforming to schema `{}` and nothing else.",
            prompt.instructions, prompt.agent_role, prompt.response_schema_id
        )
    }

    fn post(&self, messages: &[Value]) -> Result<String, ReasonerError> {
        let body = json!({"model": self.cfg.model, "temperature": 0, "messages": messages});
        let mut last = String::new();
        for _ in 0..self.cfg.transport_attempts.max(1) {
            let _slot = self.gate.enter();
            let mut req = self.agent.post(&self.cfg.url);
            if let Some(key) = &self.cfg.api_key {
                req = req.header("Authorization", &format!("Bearer {key}"));
            }
            match req.send_json(&body) {
                Ok(mut resp) => {
                    let doc: Value = resp
                        .body_mut()
                        .read_json()
                        .map_err(|e| ReasonerError::BackendUnavailable(format!("unreadable response: {e}")))?;
                    return doc["choices"][0]["message"]["content"].as_str().map(str::to_owned).ok_or_else(|| {
                        ReasonerError::MalformedModelOutput {
                            path: ".choices[0].message.content".into(),
                            detail: "missing completion text".into(),
                        }
                    });
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(ReasonerError::BackendUnavailable(last))
    }
}

impl Reasoner for RemoteReasoner {
    /// One request, then at most one repair request that quotes the
    /// schema violation back to the model.
    fn complete(&self, prompt: &AgentPrompt) -> Result<StructuredResponse, ReasonerError> {
        let mut messages = vec![
            json!({"role": "system", "content": Self::system_text(prompt)}),
            json!({"role": "user", "content": prompt.context_text()}),
        ];
        let raw = self.post(&messages)?;
        let err = match validate_response(&raw, &prompt.response_schema_id) {
            Ok(body) => {
                return Ok(StructuredResponse { schema_id: prompt.response_schema_id.clone(), body, raw_text: raw })
            }
            Err(e @ ReasonerError::UnknownSchema(_)) => return Err(e),
            Err(e) => e,
        };
        messages.push(json!({"role": "assistant", "content": raw}));
        messages.push(json!({"role": "user", "content": format!("That reply was rejected: {err}. Send a corrected JSON document only.")}));
        let repaired = self.post(&messages)?;
        let body = validate_response(&repaired, &prompt.response_schema_id)?;
        Ok(StructuredResponse { schema_id: prompt.response_schema_id.clone(), body, raw_text: repaired })
    }
}
