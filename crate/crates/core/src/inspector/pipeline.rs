use std::collections::HashSet;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::blacklist::Blacklist;
use super::eve::Alert;
use super::rules::{GeneratedRule, RuleAction, RuleBook};
use super::{InspectError, InspectorConfig, Mode};
use crate::flowmeter::{
    assemble_flows, extract_features, model_inputs, read_pcap, ModelInputs,
    DEFAULT_ACTIVITY_TIMEOUT, DEFAULT_FLOW_TIMEOUT,
};
use crate::trafficmodel::FlowClassifier;

/// What survives between inspections: the rule book and the blacklist.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InspectorState {
    pub rules: RuleBook,
    pub blacklist: Blacklist,
}

impl InspectorState {
    pub fn new(config: &InspectorConfig) -> Self {
        InspectorState {
            rules: RuleBook::new(config.sid_start),
            blacklist: Blacklist::new(config.blacklist_ttl_secs),
        }
    }

    /// Like [`InspectorState::new`] but continues an existing rule file.
    pub fn resume(config: &InspectorConfig) -> Result<Self, InspectError> {
        Ok(InspectorState {
            rules: RuleBook::load(&config.rules_dir, config.sid_start)?,
            blacklist: Blacklist::new(config.blacklist_ttl_secs),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InspectionStats {
    pub flows: usize,
    pub webshell: usize,
    pub benign: usize,
    pub skipped_packets: usize,
    pub ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inspection {
    pub alerts: Vec<Alert>,
    /// Rules created or updated by this inspection, one per source.
    pub rules: Vec<GeneratedRule>,
    pub stats: InspectionStats,
}

/// Runs one pcap through detection.
///
/// Every flow's features are computed and the identification fields dropped
/// before classification. Each flow whose argmax class is 1 yields an alert;
/// its source gets one rule per inspection (new, or the existing rule with
/// `rev` bumped) and a blacklist hit per flow. Benign flows yield nothing.
pub fn inspect_pcap(
    pcap: &Path,
    model: &dyn FlowClassifier,
    config: &InspectorConfig,
    state: &mut InspectorState,
    now_us: i64,
) -> Result<Inspection, InspectError> {
    let started = Instant::now();
    let capture = read_pcap(pcap)?;
    let flows = assemble_flows(
        &capture.packets,
        DEFAULT_FLOW_TIMEOUT,
        DEFAULT_ACTIVITY_TIMEOUT,
    );
    let records = extract_features(&flows);
    let inputs: Vec<ModelInputs> = records.iter().map(model_inputs).collect();
    let preds = if inputs.is_empty() {
        Vec::new()
    } else {
        model.classify(&inputs)?
    };
    if preds.len() != records.len() {
        return Err(InspectError::Config(format!(
            "model returned {} verdicts for {} flows",
            preds.len(),
            records.len()
        )));
    }
    let (action, blocked) = match config.mode {
        Mode::Ips => (RuleAction::Drop, true),
        Mode::Ids => (RuleAction::Alert, false),
    };
    let mut alerts = Vec::new();
    let mut rules: Vec<GeneratedRule> = Vec::new();
    let mut ruled = HashSet::new();
    for (record, pred) in records.iter().zip(&preds) {
        if pred.class != 1 {
            continue;
        }
        if ruled.insert(record.src_ip.clone()) {
            rules.push(state.rules.upsert(&record.src_ip, action));
        }
        let sid = rules
            .iter()
            .find(|r| r.src_ip == record.src_ip)
            .map_or(0, |r| r.sid);
        alerts.push(Alert::new(record, sid, blocked, pred.p_webshell));
        state.blacklist.hit(&record.src_ip, now_us);
    }
    let stats = InspectionStats {
        flows: records.len(),
        webshell: alerts.len(),
        benign: records.len() - alerts.len(),
        skipped_packets: capture.skipped,
        ms: started.elapsed().as_millis() as u64,
    };
    Ok(Inspection {
        alerts,
        rules,
        stats,
    })
}
