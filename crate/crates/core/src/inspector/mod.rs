//! The flow inspection daemon: sampling schedule, the detect-alert-rule
//! pipeline over pcap files, EVE alert lines, generated IPS rules, a source
//! blacklist and the Unix-socket request server.

mod blacklist;
mod config;
mod eve;
mod pipeline;
mod rules;
mod schedule;
mod server;

pub use blacklist::{Blacklist, BlacklistEntry};
pub use config::{InspectorConfig, Mode, CONFIG_ENV};
pub use eve::{emit_eve, format_eve_time, read_eve, Alert, AlertInfo};
pub use pipeline::{inspect_pcap, Inspection, InspectionStats, InspectorState};
pub use rules::{write_rules, GeneratedRule, RuleAction, RuleBook, RULE_FILE};
pub use schedule::{schedule, Schedule, Window};
pub use server::{handle_request, spool_once, Daemon, Server};

#[derive(Debug, thiserror::Error)]
pub enum InspectError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("rules: {0}")]
    Rules(String),
    #[error(transparent)]
    Flow(#[from] crate::flowmeter::FlowError),
    #[error(transparent)]
    Model(#[from] crate::trafficmodel::TrafficError),
}

pub(crate) fn io_err(what: impl std::fmt::Display, e: std::io::Error) -> InspectError {
    InspectError::Io(format!("{what}: {e}"))
}
