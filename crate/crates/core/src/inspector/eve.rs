use std::io::{BufRead, Write};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub const CATEGORY: &str = "Webshell";
pub const SIGNATURE: &str = "Webshell Attacking";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertInfo {
    /// `blocked` in IPS mode, `allowed` in IDS mode.
    pub action: String,
    pub category: String,
    pub severity: u8,
    pub signature: String,
    pub signature_id: u64,
}

/// One EVE-style alert for a flow classified as webshell traffic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub timestamp: String,
    pub event_type: String,
    pub flow_id: String,
    pub src_ip: String,
    pub src_port: u16,
    pub dest_ip: String,
    pub dest_port: u16,
    pub proto: String,
    pub alert: AlertInfo,
    pub p_webshell: f64,
}

impl Alert {
    pub fn new(
        record: &crate::flowmeter::FeatureRecord,
        signature_id: u64,
        blocked: bool,
        p_webshell: f64,
    ) -> Self {
        let proto = match record.protocol {
            6 => "TCP".to_string(),
            17 => "UDP".to_string(),
            n => n.to_string(),
        };
        Alert {
            timestamp: format_eve_time(record.timestamp_us),
            event_type: "alert".into(),
            flow_id: record.flow_id.clone(),
            src_ip: record.src_ip.clone(),
            src_port: record.src_port,
            dest_ip: record.dst_ip.clone(),
            dest_port: record.dst_port,
            proto,
            alert: AlertInfo {
                action: if blocked { "blocked" } else { "allowed" }.into(),
                category: CATEGORY.into(),
                severity: 1,
                signature: SIGNATURE.into(),
                signature_id,
            },
            p_webshell,
        }
    }
}

/// ISO-8601 with microseconds and a numeric UTC offset, e.g.
/// `2018-03-02T08:47:38.000123+0000`.
pub fn format_eve_time(us: i64) -> String {
    let t = DateTime::<Utc>::from_timestamp_micros(us).unwrap_or_default();
    t.format("%Y-%m-%dT%H:%M:%S%.6f%z").to_string()
}

/// Appends one JSON line per alert and flushes.
pub fn emit_eve<W: Write>(alerts: &[Alert], mut sink: W) -> std::io::Result<()> {
    for a in alerts {
        let line = serde_json::to_string(a).map_err(std::io::Error::other)?;
        sink.write_all(line.as_bytes())?;
        sink.write_all(b"\n")?;
    }
    sink.flush()
}

pub fn read_eve<R: BufRead>(input: R) -> std::io::Result<Vec<Alert>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?,
        );
    }
    Ok(out)
}
