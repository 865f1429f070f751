//! Command-line entry point: `serve`, `replay`, `report` and `seed`.
//!
//! Exit codes: 0 on success, 2 on configuration errors, 1 on runtime
//! failures. Diagnostics go to standard error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use crate::action::ActionRuntime;
use crate::config::{env_layer, load_config, ConfigError, Layer, Mode, ReasonerMode, RunConfig};
use crate::gateway::Gateway;
use crate::incident::{read_ndjson, write_ndjson};
use crate::knowledge::{render_doc, KnowledgeStore};
use crate::metrics::{render_report, MetricsReport, ReportFormat};
use crate::orchestrator::{
    serve, Engine, EngineConfig, FetchMode, MemoryNotifier, Notifier, Services, WebhookNotifier,
};
use crate::reasoner::{Reasoner, RemoteConfig, RemoteReasoner, RuleTable, ScriptedReasoner};
use crate::replay::{replay, ApprovalMode, ReplayError, ReplayInputs, ReplayOptions};
use crate::runtime::LiveRuntime;
use crate::scenario::{generate, register_scenario_tools, ScenarioSpec, World};
use crate::telemetry::{RateLimitConfig, TelemetryStore};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "triage", version, about = "Alert triage engine and incident replay")]
struct Cli {
    /// TOML file of `key = value` settings; flags and env override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the HTTP API and triage live alerts.
    Serve(ServeArgs),
    /// Generate a scenario and drive it through the engine on a simulated clock.
    Replay(ReplayArgs),
    /// Recompute metrics from incident files.
    Report(ReportArgs),
    /// Load (and optionally generate) telemetry and knowledge stores.
    Seed(SeedArgs),
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long)]
    listen: Option<String>,
    #[arg(long)]
    rules: Option<PathBuf>,
    /// Event store (NDJSON); created if missing, appended to.
    #[arg(long)]
    events: Option<PathBuf>,
    #[arg(long)]
    kb: Option<PathBuf>,
    /// `scripted` or `remote`.
    #[arg(long)]
    reasoner: Option<String>,
    #[arg(long)]
    notify_url: Option<String>,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Agent cohort incidents (NDJSON).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Manual baseline incidents (NDJSON).
    #[arg(long)]
    manual_out: Option<PathBuf>,
    /// Replaces the scenario's rule table.
    #[arg(long)]
    rules: Option<PathBuf>,
    /// Telemetry query budget as `CAPACITY/PER_SECOND`, e.g. `1/1`.
    #[arg(long)]
    rate_limit: Option<String>,
    /// Fetch downstream logs inline instead of beside planning.
    #[arg(long)]
    sequential: bool,
    /// Leave approval requests unanswered.
    #[arg(long)]
    no_approval: bool,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// `NAME=PATH` of an incidents file; repeat for more columns.
    #[arg(long = "cohort", required = true)]
    cohorts: Vec<String>,
    #[arg(long, default_value = "table")]
    format: String,
}

#[derive(Args, Debug)]
struct SeedArgs {
    #[arg(long)]
    events: Option<PathBuf>,
    #[arg(long)]
    kb: Option<PathBuf>,
    /// Generate the scenario's events and deployment docs into the stores.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

fn conflict(key: &str, reason: impl ToString) -> CliError {
    CliError::Config(ConfigError::ConfigConflict { key: key.into(), reason: reason.to_string() }.to_string())
}

fn runtime(e: impl ToString) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Runs with the process environment.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with_env(args, env_layer(std::env::vars()))
}

pub fn run_with_env<I, T>(args: I, env: Layer) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Serve(a) => cmd_serve(cli.config.as_deref(), &env, a),
        Command::Replay(a) => cmd_replay(cli.config.as_deref(), &env, a),
        Command::Report(a) => cmd_report(a),
        Command::Seed(a) => cmd_seed(cli.config.as_deref(), &env, a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(CliError::Config(m)) => {
            eprintln!("error: {m}");
            EXIT_CONFIG
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            EXIT_RUNTIME
        }
    }
}

fn put(layer: &mut Layer, key: &str, value: Option<impl ToString>) {
    if let Some(v) = value {
        layer.insert(key.into(), v.to_string());
    }
}

fn path_str(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn cmd_serve(file: Option<&Path>, env: &Layer, a: ServeArgs) -> Result<(), CliError> {
    let mut flags = Layer::new();
    put(&mut flags, "listen", a.listen);
    put(&mut flags, "rules", path_str(&a.rules));
    put(&mut flags, "events", path_str(&a.events));
    put(&mut flags, "kb", path_str(&a.kb));
    put(&mut flags, "reasoner_mode", a.reasoner);
    put(&mut flags, "notify_url", a.notify_url);
    let cfg = load_config(Mode::Serve, file, env, &flags)?;
    let engine = Arc::new(build_live_engine(&cfg)?);
    let gateway = Arc::new(Gateway::new(cfg.seed.unwrap_or_else(rand::random)));
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(runtime)?;
    rt.block_on(serve(cfg.listen, engine, gateway, async {
        let _ = tokio::signal::ctrl_c().await;
    }))
    .map_err(|e| runtime(format!("listen on {}: {e}", cfg.listen)))
}

/// Wires the stores, tools, reasoner and notifier for a live engine.
fn build_live_engine(cfg: &RunConfig) -> Result<Engine, CliError> {
    let telemetry = match &cfg.events {
        Some(p) => TelemetryStore::open(p).map_err(runtime)?,
        None => TelemetryStore::new(),
    };
    let knowledge = KnowledgeStore::new();
    if let Some(dir) = &cfg.kb {
        knowledge.load_dir(dir).map_err(|e| conflict("kb", e))?;
    }
    let actions = ActionRuntime::default();
    register_scenario_tools(&actions, Arc::new(World::new(Vec::new()))).map_err(runtime)?;
    let reasoner: Arc<dyn Reasoner> = match cfg.reasoner.mode {
        ReasonerMode::Scripted => {
            let path = cfg.rules.as_deref().ok_or_else(|| conflict("rules", "required"))?;
            Arc::new(ScriptedReasoner::new(RuleTable::load(path).map_err(|e| conflict("rules", e))?))
        }
        ReasonerMode::Remote => {
            let mut rc = RemoteConfig::new(
                cfg.reasoner.url.as_deref().unwrap_or_default(),
                cfg.reasoner.model.as_deref().unwrap_or_default(),
            );
            rc.api_key = cfg.reasoner.api_key.clone();
            Arc::new(RemoteReasoner::new(rc))
        }
    };
    let notifier: Arc<dyn Notifier> = match &cfg.notify_url {
        Some(url) => Arc::new(WebhookNotifier::new(url, Duration::from_secs(10))),
        None => Arc::new(MemoryNotifier::new()),
    };
    let services = Services::new(
        Arc::new(telemetry),
        Arc::new(knowledge),
        Arc::new(actions),
        reasoner,
        notifier,
        EngineConfig::default(),
    );
    Ok(Engine::new(services, Arc::new(LiveRuntime::new())))
}

fn parse_rate_limit(text: &str) -> Result<RateLimitConfig, CliError> {
    let (cap, rate) = text.split_once('/').ok_or_else(|| conflict("rate_limit", "expected CAPACITY/PER_SECOND"))?;
    let cap: u32 = cap.trim().parse().map_err(|_| conflict("rate_limit", format!("bad capacity `{cap}`")))?;
    let rate: f64 = rate.trim().parse().map_err(|_| conflict("rate_limit", format!("bad rate `{rate}`")))?;
    RateLimitConfig::new(cap, rate).map_err(|e| conflict("rate_limit", e))
}

fn load_inputs(scenario: &Path) -> Result<ReplayInputs, CliError> {
    if !scenario.is_file() {
        return Err(conflict("scenario", format!("no such file: {}", scenario.display())));
    }
    ReplayInputs::load(scenario).map_err(|e| match e {
        ReplayError::Scenario(_) | ReplayError::Rules(_) | ReplayError::Knowledge(_) => conflict("scenario", e),
        other => runtime(other),
    })
}

fn cmd_replay(file: Option<&Path>, env: &Layer, a: ReplayArgs) -> Result<(), CliError> {
    let mut flags = Layer::new();
    put(&mut flags, "scenario", path_str(&a.scenario));
    put(&mut flags, "seed", a.seed);
    put(&mut flags, "out", path_str(&a.out));
    put(&mut flags, "rules", path_str(&a.rules));
    let cfg = load_config(Mode::Replay, file, env, &flags)?;
    let scenario = cfg.scenario.as_deref().expect("checked by load_config");
    let mut inputs = load_inputs(scenario)?;
    if let Some(rules) = &cfg.rules {
        inputs.rules = RuleTable::load(rules).map_err(|e| conflict("rules", e))?;
    }
    let opts = ReplayOptions {
        seed: cfg.seed,
        fetch_mode: if a.sequential { FetchMode::Sequential } else { FetchMode::Parallel },
        rate_limit: a.rate_limit.as_deref().map(parse_rate_limit).transpose()?,
        approval: if a.no_approval { ApprovalMode::Disabled } else { ApprovalMode::default() },
        workers: a.workers,
    };
    let outcome = replay(&inputs, &opts).map_err(runtime)?;
    write_ndjson(&cfg.out, &outcome.agent).map_err(runtime)?;
    eprintln!("wrote {} agent incidents to {}", outcome.agent.len(), cfg.out.display());
    if let Some(p) = &a.manual_out {
        write_ndjson(p, &outcome.manual).map_err(runtime)?;
        eprintln!("wrote {} manual incidents to {}", outcome.manual.len(), p.display());
    }
    let reports = [MetricsReport::compute("Agent", &outcome.agent), MetricsReport::compute("Manual", &outcome.manual)];
    print!("{}", render_report(&reports, ReportFormat::Table));
    for r in &reports {
        for n in &r.notes {
            eprintln!("note ({}): {n}", r.cohort);
        }
    }
    let audit = outcome.audit();
    if !audit.violations.is_empty() {
        return Err(runtime(format!("{} approval-gate violations in audit log", audit.violations.len())));
    }
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<(), CliError> {
    let format: ReportFormat = a.format.parse().map_err(|e| conflict("format", e))?;
    let mut reports = Vec::new();
    for spec in &a.cohorts {
        let (name, path) =
            spec.split_once('=').ok_or_else(|| conflict("cohort", format!("expected NAME=PATH, got `{spec}`")))?;
        let path = Path::new(path);
        if !path.is_file() {
            return Err(conflict("cohort", format!("no such file: {}", path.display())));
        }
        let records = read_ndjson(path).map_err(runtime)?;
        reports.push(MetricsReport::compute(name, &records));
    }
    print!("{}", render_report(&reports, format));
    Ok(())
}

fn cmd_seed(file: Option<&Path>, env: &Layer, a: SeedArgs) -> Result<(), CliError> {
    let mut flags = Layer::new();
    put(&mut flags, "events", path_str(&a.events));
    put(&mut flags, "kb", path_str(&a.kb));
    put(&mut flags, "scenario", path_str(&a.scenario));
    put(&mut flags, "seed", a.seed);
    let cfg = load_config(Mode::Seed, file, env, &flags)?;
    if let Some(scenario) = &cfg.scenario {
        if !scenario.is_file() {
            return Err(conflict("scenario", format!("no such file: {}", scenario.display())));
        }
        let spec = ScenarioSpec::load(scenario).map_err(|e| conflict("scenario", e))?;
        let events = cfg.events.as_deref().ok_or_else(|| conflict("events", "required with --scenario"))?;
        let corpus = generate(&spec, cfg.seed.unwrap_or(spec.seed)).map_err(runtime)?;
        let store = TelemetryStore::open(events).map_err(runtime)?;
        if !store.is_empty() {
            return Err(runtime(format!("{} already holds events", events.display())));
        }
        store.append_events(corpus.events).map_err(runtime)?;
        if let Some(dir) = &cfg.kb {
            std::fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
            for d in &corpus.deployments {
                let p = dir.join(format!("{}.md", d.doc_id));
                std::fs::write(&p, render_doc(d)).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
            }
        }
    }
    if let Some(p) = &cfg.events {
        if !p.is_file() {
            return Err(conflict("events", format!("no such file: {}", p.display())));
        }
        let store = TelemetryStore::open(p).map_err(runtime)?;
        println!("events: {} ({})", store.len(), p.display());
    }
    if let Some(dir) = &cfg.kb {
        let kb = KnowledgeStore::new();
        let n = kb.load_dir(dir).map_err(runtime)?;
        println!("knowledge docs: {n} ({})", dir.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> i32 {
        run_with_env(std::iter::once("triage").chain(args.iter().copied()), Layer::new())
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run(&["replay", "--scenario", "/nonexistent/scenario.json"]), EXIT_CONFIG);
        assert_eq!(run(&["replay"]), EXIT_CONFIG);
        assert_eq!(run(&["bogus"]), EXIT_CONFIG);
        assert_eq!(run(&["--help"]), EXIT_OK);
        assert_eq!(run(&["report", "--cohort", "a=/nonexistent.ndjson"]), EXIT_CONFIG);
        assert_eq!(run(&["serve"]), EXIT_CONFIG);
    }

    #[test]
    fn rate_limit_flag() {
        let r = parse_rate_limit("2/0.5").unwrap();
        assert_eq!((r.capacity, r.refill_per_sec), (2, 0.5));
        assert!(parse_rate_limit("2").is_err());
        assert!(parse_rate_limit("x/1").is_err());
    }

    #[test]
    fn report_on_malformed_file_is_runtime_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.ndjson");
        std::fs::write(&p, "{not json}\n").unwrap();
        assert_eq!(run(&["report", "--cohort", &format!("a={}", p.display())]), EXIT_RUNTIME);
    }
}
