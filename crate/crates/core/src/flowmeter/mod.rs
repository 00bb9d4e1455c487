//! Classic-pcap ingestion, bidirectional flow assembly and the
//! CICFlowMeter-compatible flow feature set.

mod features;
mod flows;
mod io;
mod pcap;

pub use features::{compute_features, extract_features, model_inputs, FeatureRecord, ModelInputs};
pub use flows::{
    assemble_flows, Direction, Flow, FlowKey, FlowPacket, DEFAULT_ACTIVITY_TIMEOUT,
    DEFAULT_FLOW_TIMEOUT,
};
pub use io::{read_csv, read_csv_from, write_csv, write_csv_to, write_jsonl, CsvRead};
pub use pcap::{parse_pcap, read_pcap, PacketMeta, PcapRead, TcpFlags};

#[derive(Debug, thiserror::Error)]
pub enum FlowError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("not a classic pcap file: {0}")]
    BadMagic(String),
    #[error("unsupported link type {0}; only Ethernet captures are read")]
    LinkType(String),
    #[error("truncated or malformed packet record at byte offset {offset}")]
    Truncated { offset: usize },
    #[error("csv: missing required column `{0}`")]
    MissingColumn(String),
    #[error("csv: unknown column `{0}`")]
    UnknownColumn(String),
    #[error("csv line {line}: column `{column}`: cannot parse {value:?}")]
    BadCell {
        line: u64,
        column: String,
        value: String,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Categorical model inputs.
pub const CATEGORICAL_FEATURES: [&str; 2] = ["Dst Port", "Protocol"];

/// Continuous model inputs in model order. `Timestamp` comes first and is
/// carried as Unix-epoch seconds.
pub const CONTINUOUS_FEATURES: [&str; 77] = [
    "Timestamp",
    "Flow Duration",
    "Tot Fwd Pkts",
    "Tot Bwd Pkts",
    "TotLen Fwd Pkts",
    "TotLen Bwd Pkts",
    "Fwd Pkt Len Max",
    "Fwd Pkt Len Min",
    "Fwd Pkt Len Mean",
    "Fwd Pkt Len Std",
    "Bwd Pkt Len Max",
    "Bwd Pkt Len Min",
    "Bwd Pkt Len Mean",
    "Bwd Pkt Len Std",
    "Flow Byts/s",
    "Flow Pkts/s",
    "Flow IAT Mean",
    "Flow IAT Std",
    "Flow IAT Max",
    "Flow IAT Min",
    "Fwd IAT Tot",
    "Fwd IAT Mean",
    "Fwd IAT Std",
    "Fwd IAT Max",
    "Fwd IAT Min",
    "Bwd IAT Tot",
    "Bwd IAT Mean",
    "Bwd IAT Std",
    "Bwd IAT Max",
    "Bwd IAT Min",
    "Fwd PSH Flags",
    "Bwd PSH Flags",
    "Fwd URG Flags",
    "Bwd URG Flags",
    "Fwd Header Len",
    "Bwd Header Len",
    "Fwd Pkts/s",
    "Bwd Pkts/s",
    "Pkt Len Min",
    "Pkt Len Max",
    "Pkt Len Mean",
    "Pkt Len Std",
    "Pkt Len Var",
    "FIN Flag Cnt",
    "SYN Flag Cnt",
    "RST Flag Cnt",
    "PSH Flag Cnt",
    "ACK Flag Cnt",
    "URG Flag Cnt",
    "CWE Flag Count",
    "ECE Flag Cnt",
    "Down/Up Ratio",
    "Pkt Size Avg",
    "Fwd Seg Size Avg",
    "Bwd Seg Size Avg",
    "Fwd Byts/b Avg",
    "Fwd Pkts/b Avg",
    "Fwd Blk Rate Avg",
    "Bwd Byts/b Avg",
    "Bwd Pkts/b Avg",
    "Bwd Blk Rate Avg",
    "Subflow Fwd Pkts",
    "Subflow Fwd Byts",
    "Subflow Bwd Pkts",
    "Subflow Bwd Byts",
    "Init Fwd Win Byts",
    "Init Bwd Win Byts",
    "Fwd Act Data Pkts",
    "Fwd Seg Size Min",
    "Active Mean",
    "Active Std",
    "Active Max",
    "Active Min",
    "Idle Mean",
    "Idle Std",
    "Idle Max",
    "Idle Min",
];

/// Position of `name` in [`CONTINUOUS_FEATURES`].
pub fn feature_index(name: &str) -> Option<usize> {
    CONTINUOUS_FEATURES.iter().position(|&n| n == name)
}
