use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlacklistEntry {
    pub src_ip: String,
    /// Microseconds since the epoch.
    pub first_seen: i64,
    pub hit_count: u64,
    pub expiry: i64,
}

/// Sources seen attacking, each kept for `ttl_us` after its latest hit.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Blacklist {
    entries: BTreeMap<String, BlacklistEntry>,
    ttl_us: i64,
}

impl Blacklist {
    pub fn new(ttl_secs: u64) -> Self {
        Blacklist {
            entries: BTreeMap::new(),
            ttl_us: ttl_secs as i64 * 1_000_000,
        }
    }

    pub fn hit(&mut self, src_ip: &str, now_us: i64) {
        let expiry = now_us + self.ttl_us;
        let e = self
            .entries
            .entry(src_ip.to_string())
            .or_insert(BlacklistEntry {
                src_ip: src_ip.to_string(),
                first_seen: now_us,
                hit_count: 0,
                expiry,
            });
        if e.expiry <= now_us {
            e.first_seen = now_us;
            e.hit_count = 0;
        }
        e.hit_count += 1;
        e.expiry = expiry;
    }

    /// Entries still in force at `now_us`, by address.
    pub fn active(&self, now_us: i64) -> Vec<BlacklistEntry> {
        self.entries
            .values()
            .filter(|e| e.expiry > now_us)
            .cloned()
            .collect()
    }

    pub fn purge(&mut self, now_us: i64) {
        self.entries.retain(|_, e| e.expiry > now_us);
    }
}
