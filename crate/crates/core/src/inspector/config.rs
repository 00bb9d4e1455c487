use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{io_err, InspectError};

/// Environment variable naming the config file when none is given.
pub const CONFIG_ENV: &str = "WS_INSPECTOR_CONFIG";

/// IPS mode emits `drop` rules; IDS (passive) mode turns them into `alert`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Ips,
    Ids,
}

/// Daemon settings. Durations are milliseconds; a zero frequency or
/// interval means "draw it uniformly from the matching min/max range".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InspectorConfig {
    pub deep_inspecting: bool,
    pub inspection_frequency: u64,
    pub frequency_min: u64,
    pub frequency_max: u64,
    pub inspection_interval: u64,
    pub interval_min: u64,
    pub interval_max: u64,
    pub rules_dir: PathBuf,
    pub socket_path: PathBuf,
    pub home_net: Vec<String>,
    pub model_path: Option<PathBuf>,
    pub sid_start: u64,
    pub mode: Mode,
    /// EVE lines are appended here when set.
    pub eve_log: Option<PathBuf>,
    pub blacklist_ttl_secs: u64,
    /// Directory polled for pcap files on each sampling window.
    pub spool_dir: Option<PathBuf>,
    pub seed: u64,
}

impl Default for InspectorConfig {
    fn default() -> Self {
        InspectorConfig {
            deep_inspecting: true,
            inspection_frequency: 120_000,
            frequency_min: 60_000,
            frequency_max: 300_000,
            inspection_interval: 20_000,
            interval_min: 10_000,
            interval_max: 30_000,
            rules_dir: PathBuf::from("/etc/NetIDPS/rules/"),
            socket_path: PathBuf::from("/run/wsguard/inspector.sock"),
            home_net: vec![
                "10.0.0.0/8".into(),
                "172.16.0.0/12".into(),
                "192.168.0.0/16".into(),
            ],
            model_path: None,
            sid_start: 9_100_001,
            mode: Mode::Ips,
            eve_log: None,
            blacklist_ttl_secs: 24 * 3600,
            spool_dir: None,
            seed: 0,
        }
    }
}

fn parse_cidr(s: &str) -> Option<(Ipv4Addr, u8)> {
    let (ip, bits) = s.split_once('/').unwrap_or((s, "32"));
    let bits: u8 = bits.parse().ok()?;
    (bits <= 32).then_some(())?;
    Some((ip.parse().ok()?, bits))
}

impl InspectorConfig {
    /// Reads `path`, else the file named by `WS_INSPECTOR_CONFIG`, else
    /// returns the defaults. Missing keys take their defaults.
    pub fn load(path: Option<&Path>) -> Result<Self, InspectError> {
        let env_path = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        let Some(p) = path.map(Path::to_path_buf).or(env_path) else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(&p).map_err(|e| io_err(p.display(), e))?;
        let cfg: InspectorConfig = serde_json::from_str(&text)
            .map_err(|e| InspectError::Config(format!("{}: {e}", p.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), InspectError> {
        let bad = |m: String| Err(InspectError::Config(m));
        if self.frequency_min == 0 || self.frequency_min > self.frequency_max {
            return bad(format!(
                "frequency range [{}, {}] is empty",
                self.frequency_min, self.frequency_max
            ));
        }
        if self.interval_min == 0 || self.interval_min > self.interval_max {
            return bad(format!(
                "interval range [{}, {}] is empty",
                self.interval_min, self.interval_max
            ));
        }
        if let Some(c) = self.home_net.iter().find(|c| parse_cidr(c).is_none()) {
            return bad(format!("home_net entry {c:?} is not an IPv4 CIDR"));
        }
        if self.sid_start == 0 {
            return bad("sid_start must be positive".into());
        }
        Ok(())
    }

    /// True when `ip` falls inside one of the `home_net` blocks.
    pub fn is_home(&self, ip: Ipv4Addr) -> bool {
        self.home_net
            .iter()
            .filter_map(|c| parse_cidr(c))
            .any(|(net, bits)| {
                let mask = if bits == 0 {
                    0
                } else {
                    u32::MAX << (32 - bits)
                };
                u32::from(ip) & mask == u32::from(net) & mask
            })
    }
}
