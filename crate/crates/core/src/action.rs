//! Tool registry and executor with approval gating for high-risk tools.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::runtime::Runtime;
use crate::time::{Timestamp, SECOND_MS};

pub const DEFAULT_APPROVAL_TTL_MS: i64 = 900 * SECOND_MS;

pub type ToolArgs = BTreeMap<String, String>;
pub type ToolOutput = BTreeMap<String, String>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Risk {
    Low,
    High,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSchema {
    pub id: String,
    pub required: Vec<String>,
}

impl ParamSchema {
    pub fn new(id: &str, required: &[&str]) -> Self {
        ParamSchema { id: id.to_string(), required: required.iter().map(|s| s.to_string()).collect() }
    }

    /// Required keys must be present and non-empty; extra keys are allowed.
    pub fn check(&self, args: &ToolArgs) -> Result<(), String> {
        for r in &self.required {
            if args.get(r).is_none_or(|v| v.trim().is_empty()) {
                return Err(format!("missing required argument `{r}` ({})", self.id));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Binding {
    Internal {
        name: String,
    },
    /// Runs `program args...`; the tool arguments arrive as a JSON object on
    /// stdin and stdout must be a JSON object of strings.
    Command {
        program: String,
        args: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub risk: Risk,
    pub params: ParamSchema,
    pub binding: Binding,
    pub timeout_seconds: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ToolStatus {
    Ok,
    Failed,
    Timeout,
    Denied,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolResult {
    pub tool: String,
    pub status: ToolStatus,
    pub output: ToolOutput,
    pub started_at: Timestamp,
    pub finished_at: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub approval_id: Option<String>,
}

impl ToolResult {
    /// Text used for grounding checks and prompts.
    pub fn render(&self) -> String {
        let mut s = format!("{} {:?}", self.tool, self.status).to_uppercase();
        for (k, v) in &self.output {
            s.push_str(&format!(" {k}={v}"));
        }
        s
    }
}

/// What an executor sees.
pub struct Invocation<'a> {
    pub incident_id: &'a str,
    pub args: &'a ToolArgs,
    pub rt: &'a dyn Runtime,
}

pub trait ToolExecutor: Send + Sync {
    fn execute(&self, call: &Invocation<'_>) -> Result<ToolOutput, String>;
}

impl<F> ToolExecutor for F
where
    F: Fn(&Invocation<'_>) -> Result<ToolOutput, String> + Send + Sync,
{
    fn execute(&self, call: &Invocation<'_>) -> Result<ToolOutput, String> {
        self(call)
    }
}

/// Executor for [`Binding::Command`]; enforces the timeout on the wall clock.
pub struct CommandExecutor {
    pub program: String,
    pub args: Vec<String>,
    pub timeout: Duration,
}

impl ToolExecutor for CommandExecutor {
    fn execute(&self, call: &Invocation<'_>) -> Result<ToolOutput, String> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| format!("spawn {}: {e}", self.program))?;
        let input = serde_json::to_vec(call.args).expect("args serialize");
        if let Some(mut stdin) = child.stdin.take() {
            stdin.write_all(&input).map_err(|e| e.to_string())?;
        }
        let deadline = Instant::now() + self.timeout;
        loop {
            match child.try_wait().map_err(|e| e.to_string())? {
                Some(status) => {
                    let mut out = String::new();
                    if let Some(mut stdout) = child.stdout.take() {
                        stdout.read_to_string(&mut out).map_err(|e| e.to_string())?;
                    }
                    if !status.success() {
                        return Err(format!("exit status {status}"));
                    }
                    return serde_json::from_str(out.trim()).map_err(|e| format!("bad tool output: {e}"));
                }
                None if Instant::now() >= deadline => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(TIMEOUT_MARKER.into());
                }
                None => std::thread::sleep(Duration::from_millis(5)),
            }
        }
    }
}

const TIMEOUT_MARKER: &str = "__timeout__";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Decision {
    Pending,
    Approved,
    Denied,
    Expired,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApprovalRequest {
    pub approval_id: String,
    pub incident_id: String,
    pub tool: String,
    pub args: ToolArgs,
    pub risk: Risk,
    pub requested_at: Timestamp,
    pub decision: Decision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decided_by: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decided_at: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<ToolResult>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AuditEvent {
    Requested { approval_id: String },
    Approved { approval_id: String, actor: String },
    Denied { approval_id: String, actor: String },
    Expired { approval_id: String },
    Executed { approval_id: Option<String>, risk: Risk, started_at: Timestamp, status: ToolStatus },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: u64,
    pub at: Timestamp,
    pub incident_id: String,
    pub tool: String,
    #[serde(flatten)]
    pub event: AuditEvent,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ActionError {
    #[error("tool `{0}` is already registered")]
    DuplicateTool(String),
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("argument schema violation: {0}")]
    ArgSchemaViolation(String),
    #[error("unknown approval `{0}`")]
    UnknownApproval(String),
    #[error("approval `{0}` is already decided")]
    AlreadyDecided(String),
    #[error("invalid tool spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Execution {
    Executed(ToolResult),
    PendingApproval(String),
}

struct Registered {
    spec: ToolSpec,
    exec: Arc<dyn ToolExecutor>,
}

#[derive(Default)]
struct Book {
    requests: BTreeMap<String, ApprovalRequest>,
    audit: Vec<AuditEntry>,
    next_id: u64,
}

impl Book {
    fn log(&mut self, at: Timestamp, incident_id: &str, tool: &str, event: AuditEvent) {
        let seq = self.audit.len() as u64;
        self.audit.push(AuditEntry { seq, at, incident_id: incident_id.into(), tool: tool.into(), event });
    }
}

pub struct ActionRuntime {
    tools: RwLock<BTreeMap<String, Registered>>,
    book: Mutex<Book>,
    ttl_ms: i64,
}

impl Default for ActionRuntime {
    fn default() -> Self {
        Self::new(DEFAULT_APPROVAL_TTL_MS)
    }
}

impl ActionRuntime {
    pub fn new(ttl_ms: i64) -> Self {
        ActionRuntime { tools: RwLock::new(BTreeMap::new()), book: Mutex::new(Book::default()), ttl_ms }
    }

    pub fn ttl_ms(&self) -> i64 {
        self.ttl_ms
    }

    pub fn register_tool(&self, spec: ToolSpec, exec: Arc<dyn ToolExecutor>) -> Result<(), ActionError> {
        if spec.timeout_seconds == 0 {
            return Err(ActionError::InvalidSpec(format!("{}: timeout must be positive", spec.name)));
        }
        let mut tools = self.tools.write().unwrap();
        if tools.contains_key(&spec.name) {
            return Err(ActionError::DuplicateTool(spec.name));
        }
        tools.insert(spec.name.clone(), Registered { spec, exec });
        Ok(())
    }

    /// Registers a spec with a [`Binding::Command`] binding.
    pub fn register_command_tool(&self, spec: ToolSpec) -> Result<(), ActionError> {
        let Binding::Command { program, args } = &spec.binding else {
            return Err(ActionError::InvalidSpec(format!("{}: not a command binding", spec.name)));
        };
        let exec = CommandExecutor {
            program: program.clone(),
            args: args.clone(),
            timeout: Duration::from_secs(spec.timeout_seconds),
        };
        self.register_tool(spec, Arc::new(exec))
    }

    pub fn is_registered(&self, name: &str) -> bool {
        self.tools.read().unwrap().contains_key(name)
    }

    pub fn spec(&self, name: &str) -> Option<ToolSpec> {
        self.tools.read().unwrap().get(name).map(|r| r.spec.clone())
    }

    pub fn tool_names(&self) -> Vec<String> {
        self.tools.read().unwrap().keys().cloned().collect()
    }

    fn run(
        &self,
        incident_id: &str,
        tool: &str,
        args: &ToolArgs,
        approval_id: Option<String>,
        rt: &dyn Runtime,
    ) -> Result<ToolResult, ActionError> {
        let (spec, exec) = {
            let tools = self.tools.read().unwrap();
            let r = tools.get(tool).ok_or_else(|| ActionError::UnknownTool(tool.to_string()))?;
            (r.spec.clone(), r.exec.clone())
        };
        let started_at = rt.now();
        let outcome = exec.execute(&Invocation { incident_id, args, rt });
        let finished_at = rt.now();
        let over_time = finished_at.0 - started_at.0 > spec.timeout_seconds as i64 * SECOND_MS;
        let (status, output) = match outcome {
            Err(e) if e == TIMEOUT_MARKER => (ToolStatus::Timeout, ToolOutput::new()),
            _ if over_time => (ToolStatus::Timeout, ToolOutput::new()),
            Ok(out) => (ToolStatus::Ok, out),
            Err(e) => (ToolStatus::Failed, BTreeMap::from([("error".to_string(), e)])),
        };
        let result = ToolResult {
            tool: tool.to_string(),
            status,
            output,
            started_at,
            finished_at,
            approval_id: approval_id.clone(),
        };
        self.book.lock().unwrap().log(
            finished_at,
            incident_id,
            tool,
            AuditEvent::Executed { approval_id, risk: spec.risk, started_at, status },
        );
        Ok(result)
    }

    /// Low-risk tools run now; high-risk tools are queued for approval.
    pub fn request_execution(
        &self,
        incident_id: &str,
        tool: &str,
        args: &ToolArgs,
        rt: &dyn Runtime,
    ) -> Result<Execution, ActionError> {
        let spec = self.spec(tool).ok_or_else(|| ActionError::UnknownTool(tool.to_string()))?;
        spec.params.check(args).map_err(ActionError::ArgSchemaViolation)?;
        match spec.risk {
            Risk::Low => Ok(Execution::Executed(self.run(incident_id, tool, args, None, rt)?)),
            Risk::High => {
                let now = rt.now();
                let mut book = self.book.lock().unwrap();
                book.next_id += 1;
                let id = format!("apr-{:06}", book.next_id);
                book.requests.insert(
                    id.clone(),
                    ApprovalRequest {
                        approval_id: id.clone(),
                        incident_id: incident_id.to_string(),
                        tool: tool.to_string(),
                        args: args.clone(),
                        risk: Risk::High,
                        requested_at: now,
                        decision: Decision::Pending,
                        decided_by: None,
                        decided_at: None,
                        result: None,
                    },
                );
                book.log(now, incident_id, tool, AuditEvent::Requested { approval_id: id.clone() });
                Ok(Execution::PendingApproval(id))
            }
        }
    }

    /// Records an operator decision. Approval runs the tool immediately.
    pub fn resolve_approval(
        &self,
        approval_id: &str,
        approve: bool,
        actor: &str,
        rt: &dyn Runtime,
    ) -> Result<ToolResult, ActionError> {
        let now = rt.now();
        let (incident_id, tool, args) = {
            let mut book = self.book.lock().unwrap();
            let req = book
                .requests
                .get_mut(approval_id)
                .ok_or_else(|| ActionError::UnknownApproval(approval_id.to_string()))?;
            if req.decision != Decision::Pending {
                return Err(ActionError::AlreadyDecided(approval_id.to_string()));
            }
            req.decision = if approve { Decision::Approved } else { Decision::Denied };
            req.decided_by = Some(actor.to_string());
            req.decided_at = Some(now);
            let (inc, tool, args) = (req.incident_id.clone(), req.tool.clone(), req.args.clone());
            let event = if approve {
                AuditEvent::Approved { approval_id: approval_id.to_string(), actor: actor.to_string() }
            } else {
                AuditEvent::Denied { approval_id: approval_id.to_string(), actor: actor.to_string() }
            };
            book.log(now, &inc, &tool, event);
            (inc, tool, args)
        };
        let result = if approve {
            self.run(&incident_id, &tool, &args, Some(approval_id.to_string()), rt)?
        } else {
            ToolResult {
                tool: tool.clone(),
                status: ToolStatus::Denied,
                output: BTreeMap::from([("decided_by".to_string(), actor.to_string())]),
                started_at: now,
                finished_at: now,
                approval_id: Some(approval_id.to_string()),
            }
        };
        if let Some(req) = self.book.lock().unwrap().requests.get_mut(approval_id) {
            req.result = Some(result.clone());
        }
        Ok(result)
    }

    /// Moves pending requests older than the TTL to EXPIRED.
    pub fn expire_stale(&self, now: Timestamp) -> Vec<String> {
        let mut book = self.book.lock().unwrap();
        let stale: Vec<String> = book
            .requests
            .values()
            .filter(|r| r.decision == Decision::Pending && now.0 - r.requested_at.0 > self.ttl_ms)
            .map(|r| r.approval_id.clone())
            .collect();
        for id in &stale {
            let req = book.requests.get_mut(id).expect("listed above");
            req.decision = Decision::Expired;
            req.decided_at = Some(now);
            let (inc, tool) = (req.incident_id.clone(), req.tool.clone());
            book.log(now, &inc, &tool, AuditEvent::Expired { approval_id: id.clone() });
        }
        stale
    }

    pub fn approval(&self, id: &str) -> Option<ApprovalRequest> {
        self.book.lock().unwrap().requests.get(id).cloned()
    }

    /// Requests in a given state, oldest first.
    pub fn approvals(&self, state: Option<Decision>) -> Vec<ApprovalRequest> {
        let mut out: Vec<ApprovalRequest> = self
            .book
            .lock()
            .unwrap()
            .requests
            .values()
            .filter(|r| state.is_none_or(|s| r.decision == s))
            .cloned()
            .collect();
        out.sort_by(|a, b| (a.requested_at, &a.approval_id).cmp(&(b.requested_at, &b.approval_id)));
        out
    }

    pub fn audit_log(&self) -> Vec<AuditEntry> {
        self.book.lock().unwrap().audit.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AuditReport {
    pub high_risk_executions: usize,
    pub low_risk_executions: usize,
    pub violations: Vec<String>,
}

/// Checks the approval safety rules over an audit log:
/// every high-risk execution has exactly one APPROVED record for its
/// approval id, decided no later than the execution started, and low-risk
/// tools never appear in approval records.
pub fn audit(log: &[AuditEntry], specs: &BTreeMap<String, Risk>) -> AuditReport {
    let mut report = AuditReport::default();
    let mut approved: BTreeMap<&str, Vec<Timestamp>> = BTreeMap::new();
    let mut executed_with: BTreeMap<&str, usize> = BTreeMap::new();
    for e in log {
        let approval_id = match &e.event {
            AuditEvent::Requested { approval_id }
            | AuditEvent::Denied { approval_id, .. }
            | AuditEvent::Expired { approval_id } => Some(approval_id),
            AuditEvent::Approved { approval_id, .. } => {
                approved.entry(approval_id).or_default().push(e.at);
                Some(approval_id)
            }
            AuditEvent::Executed { .. } => None,
        };
        if approval_id.is_some() && specs.get(&e.tool) == Some(&Risk::Low) {
            report.violations.push(format!("low-risk tool {} has approval record #{}", e.tool, e.seq));
        }
        let AuditEvent::Executed { approval_id, risk, started_at, .. } = &e.event else {
            continue;
        };
        match risk {
            Risk::Low => report.low_risk_executions += 1,
            Risk::High => {
                report.high_risk_executions += 1;
                let Some(id) = approval_id else {
                    report.violations.push(format!("high-risk {} executed without approval (#{})", e.tool, e.seq));
                    continue;
                };
                *executed_with.entry(id).or_default() += 1;
                match approved.get(id.as_str()).map(Vec::as_slice) {
                    Some([at]) if at <= started_at => {}
                    Some([_]) => report.violations.push(format!("{id}: approved after execution started")),
                    Some(v) => report.violations.push(format!("{id}: {} approval records", v.len())),
                    None => report.violations.push(format!("{id}: executed with no prior approval")),
                }
            }
        }
    }
    for (id, n) in executed_with {
        if n > 1 {
            report.violations.push(format!("{id}: executed {n} times"));
        }
    }
    report
}

/// Rebuilds every request's decision from the audit log alone.
pub fn replay_decisions(log: &[AuditEntry]) -> BTreeMap<String, Decision> {
    let mut out = BTreeMap::new();
    for e in log {
        match &e.event {
            AuditEvent::Requested { approval_id } => {
                out.insert(approval_id.clone(), Decision::Pending);
            }
            AuditEvent::Approved { approval_id, .. } => {
                out.insert(approval_id.clone(), Decision::Approved);
            }
            AuditEvent::Denied { approval_id, .. } => {
                out.insert(approval_id.clone(), Decision::Denied);
            }
            AuditEvent::Expired { approval_id } => {
                out.insert(approval_id.clone(), Decision::Expired);
            }
            AuditEvent::Executed { .. } => {}
        }
    }
    out
}
