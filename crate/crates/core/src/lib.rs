//! Hybrid webshell detection toolkit.
//!
//! Two pipelines live here:
//!
//! * source scanning: a signature rule engine ([`rulelang`]) backed by an
//!   opcode-sequence CNN ([`opcode`], [`srcmodel`]);
//! * traffic inspection: bidirectional flow features from pcap captures
//!   ([`flowmeter`]) classified by a tabular DNN ([`trafficmodel`]) and turned
//!   into EVE alerts and IPS rules by the [`inspector`] daemon.
//!
//! [`tensornet`] is the small neural-network core both models share and
//! [`evalkit`] holds metrics, dataset hygiene and hyperparameter search.

pub mod cli;
pub mod evalkit;
pub mod flowmeter;
pub mod inspector;
pub mod opcode;
pub mod rulelang;
pub mod srcmodel;
pub mod tensornet;
pub mod trafficmodel;

use sha2::{Digest, Sha256};

/// Hex-encoded SHA-256 of `bytes`; used for content fingerprints throughout.
pub fn content_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
