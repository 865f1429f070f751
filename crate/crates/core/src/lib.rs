//! Agentic alert triage: alert intake, log correlation, planning with tool
//! execution, bounded self-review, and a deterministic incident replay
//! simulator for measuring triage efficiency.

pub mod action;
pub mod cli;
pub mod config;
pub mod gateway;
pub mod incident;
pub mod knowledge;
pub mod log_agent;
pub mod metrics;
pub mod orchestrator;
pub mod planner;
pub mod reasoner;
pub mod reflection;
pub mod replay;
pub mod runtime;
pub mod scenario;
pub mod summary;
pub mod telemetry;
pub mod time;
