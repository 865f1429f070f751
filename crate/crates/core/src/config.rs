//! Run configuration assembled from a config file, the environment and
//! command-line flags, in increasing order of precedence.

use std::collections::BTreeMap;
use std::fmt;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

/// One source of settings, keyed by config key.
pub type Layer = BTreeMap<String, String>;

pub const KEYS: &[&str] = &[
    "reasoner_mode",
    "reasoner_url",
    "reasoner_model",
    "reasoner_api_key",
    "notify_url",
    "listen",
    "rules",
    "events",
    "kb",
    "scenario",
    "seed",
    "out",
];

/// Environment variables and the keys they set.
pub const ENV_KEYS: &[(&str, &str)] = &[
    ("REASONER_MODE", "reasoner_mode"),
    ("REASONER_URL", "reasoner_url"),
    ("REASONER_MODEL", "reasoner_model"),
    ("REASONER_API_KEY", "reasoner_api_key"),
    ("NOTIFY_URL", "notify_url"),
];

pub const DEFAULT_LISTEN: &str = "127.0.0.1:8080";
pub const DEFAULT_OUT: &str = "incidents.ndjson";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("config conflict on `{key}`: {reason}")]
    ConfigConflict { key: String, reason: String },
    #[error("config file {path}: {reason}")]
    Io { path: String, reason: String },
}

impl ConfigError {
    fn conflict(key: &str, reason: impl ToString) -> Self {
        ConfigError::ConfigConflict { key: key.to_string(), reason: reason.to_string() }
    }

    /// Offending key, when the error names one.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::ConfigConflict { key, .. } => Some(key),
            ConfigError::Io { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Serve,
    Replay,
    Report,
    Seed,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Serve => "serve",
            Mode::Replay => "replay",
            Mode::Report => "report",
            Mode::Seed => "seed",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReasonerMode {
    #[default]
    Scripted,
    Remote,
}

impl FromStr for ReasonerMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "scripted" => Ok(ReasonerMode::Scripted),
            "remote" => Ok(ReasonerMode::Remote),
            other => Err(format!("expected scripted or remote, got `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ReasonerSettings {
    pub mode: ReasonerMode,
    pub url: Option<String>,
    pub model: Option<String>,
    pub api_key: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    pub mode: Mode,
    pub events: Option<PathBuf>,
    pub kb: Option<PathBuf>,
    pub rules: Option<PathBuf>,
    pub scenario: Option<PathBuf>,
    pub listen: SocketAddr,
    pub notify_url: Option<String>,
    pub reasoner: ReasonerSettings,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

/// Picks the known variables out of an environment listing.
pub fn env_layer<I: IntoIterator<Item = (String, String)>>(vars: I) -> Layer {
    let mut layer = Layer::new();
    for (name, value) in vars {
        if let Some((_, key)) = ENV_KEYS.iter().find(|(n, _)| *n == name) {
            layer.insert(key.to_string(), value);
        }
    }
    layer
}

/// Parses a TOML config file of flat `key = value` pairs.
pub fn file_layer(text: &str) -> Result<Layer, ConfigError> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
        let key = e.span().map(|s| key_at(text, s.start)).unwrap_or_default();
        ConfigError::conflict(if key.is_empty() { "<file>" } else { &key }, e.message())
    })?;
    let mut layer = Layer::new();
    for (key, value) in table {
        if !KEYS.contains(&key.as_str()) {
            return Err(ConfigError::conflict(&key, "unknown key"));
        }
        let text = match value {
            toml::Value::String(s) => s,
            toml::Value::Integer(i) => i.to_string(),
            toml::Value::Float(f) => f.to_string(),
            toml::Value::Boolean(b) => b.to_string(),
            _ => return Err(ConfigError::conflict(&key, "expected a scalar value")),
        };
        layer.insert(key, text);
    }
    Ok(layer)
}

/// Key named on the line containing byte offset `at`.
fn key_at(text: &str, at: usize) -> String {
    let start = text[..at.min(text.len())].rfind('\n').map_or(0, |i| i + 1);
    let line = text[start..].lines().next().unwrap_or("");
    line.split('=').next().unwrap_or("").trim().trim_matches('"').to_string()
}

/// Merges file, env and flag layers over the defaults and checks what
/// `mode` requires.
pub fn load_config(mode: Mode, file: Option<&Path>, env: &Layer, flags: &Layer) -> Result<RunConfig, ConfigError> {
    let file_settings = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| ConfigError::Io { path: p.display().to_string(), reason: e.to_string() })?;
            file_layer(&text)?
        }
        None => Layer::new(),
    };
    let mut merged = Layer::new();
    for layer in [&file_settings, env, flags] {
        for (k, v) in layer {
            if !KEYS.contains(&k.as_str()) {
                return Err(ConfigError::conflict(k, "unknown key"));
            }
            merged.insert(k.clone(), v.clone());
        }
    }
    resolve(mode, &merged)
}

fn resolve(mode: Mode, m: &Layer) -> Result<RunConfig, ConfigError> {
    let text = |k: &str| m.get(k).map(|v| v.trim().to_string()).filter(|v| !v.is_empty());
    let path = |k: &str| text(k).map(PathBuf::from);
    let reasoner_mode = match text("reasoner_mode") {
        Some(v) => v.parse().map_err(|e| ConfigError::conflict("reasoner_mode", e))?,
        None => ReasonerMode::default(),
    };
    let listen = text("listen").unwrap_or_else(|| DEFAULT_LISTEN.into());
    let listen =
        listen.parse().map_err(|_| ConfigError::conflict("listen", format!("not a socket address: `{listen}`")))?;
    let seed = match text("seed") {
        Some(v) => Some(v.parse::<u64>().map_err(|_| ConfigError::conflict("seed", format!("not an integer: `{v}`")))?),
        None => None,
    };
    let cfg = RunConfig {
        mode,
        events: path("events"),
        kb: path("kb"),
        rules: path("rules"),
        scenario: path("scenario"),
        listen,
        notify_url: text("notify_url"),
        reasoner: ReasonerSettings {
            mode: reasoner_mode,
            url: text("reasoner_url"),
            model: text("reasoner_model"),
            api_key: text("reasoner_api_key"),
        },
        seed,
        out: path("out").unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
    };
    check_required(&cfg)?;
    Ok(cfg)
}

fn check_required(cfg: &RunConfig) -> Result<(), ConfigError> {
    let needs = |key: &str, present: bool| {
        if present {
            Ok(())
        } else {
            Err(ConfigError::conflict(key, format!("required for {}", cfg.mode)))
        }
    };
    match cfg.mode {
        Mode::Replay => {
            needs("scenario", cfg.scenario.is_some())?;
            if cfg.reasoner.mode == ReasonerMode::Remote {
                return Err(ConfigError::conflict(
                    "reasoner_mode",
                    "replay runs on the simulated clock and needs the scripted reasoner",
                ));
            }
        }
        Mode::Serve => match cfg.reasoner.mode {
            ReasonerMode::Scripted => needs("rules", cfg.rules.is_some())?,
            ReasonerMode::Remote => {
                needs("reasoner_url", cfg.reasoner.url.is_some())?;
                needs("reasoner_model", cfg.reasoner.model.is_some())?;
            }
        },
        Mode::Seed => needs("events", cfg.events.is_some() || cfg.kb.is_some())?,
        Mode::Report => {}
    }
    Ok(())
}
