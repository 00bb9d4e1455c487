use std::collections::HashMap;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::pcap::{PacketMeta, TcpFlags};

/// 120 s, in microseconds.
pub const DEFAULT_FLOW_TIMEOUT: i64 = 120_000_000;
/// 5 s, in microseconds.
pub const DEFAULT_ACTIVITY_TIMEOUT: i64 = 5_000_000;

/// Direction-free 5-tuple: the lower (ip, port) endpoint comes first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlowKey {
    pub a: (Ipv4Addr, u16),
    pub b: (Ipv4Addr, u16),
    pub protocol: u8,
}

impl FlowKey {
    pub fn of(p: &PacketMeta) -> Self {
        let s = (p.src_ip, p.src_port);
        let d = (p.dst_ip, p.dst_port);
        let (a, b) = if s <= d { (s, d) } else { (d, s) };
        FlowKey {
            a,
            b,
            protocol: p.protocol,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowPacket {
    pub meta: PacketMeta,
    pub direction: Direction,
}

/// One bidirectional flow. Packets are in arrival order; the forward
/// direction is that of the first packet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flow {
    pub key: FlowKey,
    pub packets: Vec<FlowPacket>,
    /// Lengths of activity periods (µs), split where a gap exceeds the
    /// activity timeout. Zero-length periods are not recorded.
    pub active: Vec<i64>,
    /// The gaps (µs) that split activity periods.
    pub idle: Vec<i64>,
    active_start: i64,
}

impl Flow {
    fn start(p: PacketMeta) -> Self {
        Flow {
            key: FlowKey::of(&p),
            packets: vec![FlowPacket {
                meta: p,
                direction: Direction::Forward,
            }],
            active: Vec::new(),
            idle: Vec::new(),
            active_start: p.ts_us,
        }
    }

    fn push(&mut self, p: PacketMeta, activity_timeout: i64) {
        let last = self.last_ts();
        let gap = p.ts_us - last;
        if gap > activity_timeout {
            if last > self.active_start {
                self.active.push(last - self.active_start);
            }
            self.idle.push(gap);
            self.active_start = p.ts_us;
        }
        let first = &self.packets[0].meta;
        let direction = if (p.src_ip, p.src_port) == (first.src_ip, first.src_port) {
            Direction::Forward
        } else {
            Direction::Backward
        };
        self.packets.push(FlowPacket { meta: p, direction });
    }

    fn finish(&mut self) {
        let last = self.last_ts();
        if last > self.active_start {
            self.active.push(last - self.active_start);
        }
        self.active_start = last;
    }

    pub fn first_ts(&self) -> i64 {
        self.packets[0].meta.ts_us
    }

    pub fn last_ts(&self) -> i64 {
        self.packets[self.packets.len() - 1].meta.ts_us
    }

    pub fn duration(&self) -> i64 {
        self.last_ts() - self.first_ts()
    }

    /// The forward sender.
    pub fn initiator(&self) -> &PacketMeta {
        &self.packets[0].meta
    }

    pub fn fwd(&self) -> impl Iterator<Item = &PacketMeta> {
        self.packets
            .iter()
            .filter(|p| p.direction == Direction::Forward)
            .map(|p| &p.meta)
    }

    pub fn bwd(&self) -> impl Iterator<Item = &PacketMeta> {
        self.packets
            .iter()
            .filter(|p| p.direction == Direction::Backward)
            .map(|p| &p.meta)
    }
}

const SWEEP_EVERY: usize = 4096;

/// Groups packets into flows.
///
/// Packets are first stably sorted by timestamp. A packet more than
/// `flow_timeout` µs after its flow's last packet opens a new flow, and a
/// TCP packet carrying FIN or RST closes its flow after being added. Output
/// is ordered by first-packet timestamp, then key.
pub fn assemble_flows(
    packets: &[PacketMeta],
    flow_timeout: i64,
    activity_timeout: i64,
) -> Vec<Flow> {
    let mut sorted = packets.to_vec();
    sorted.sort_by_key(|p| p.ts_us);
    let mut done: Vec<Flow> = Vec::new();
    let mut live: HashMap<FlowKey, Flow> = HashMap::new();
    for (i, p) in sorted.into_iter().enumerate() {
        if i % SWEEP_EVERY == SWEEP_EVERY - 1 {
            let expired: Vec<FlowKey> = live
                .iter()
                .filter(|(_, f)| p.ts_us - f.last_ts() > flow_timeout)
                .map(|(k, _)| *k)
                .collect();
            for k in expired {
                let mut f = live.remove(&k).expect("key just listed");
                f.finish();
                done.push(f);
            }
        }
        let key = FlowKey::of(&p);
        if let Some(f) = live.get(&key) {
            if p.ts_us - f.last_ts() > flow_timeout {
                let mut f = live.remove(&key).expect("present");
                f.finish();
                done.push(f);
            }
        }
        match live.get_mut(&key) {
            Some(f) => f.push(p, activity_timeout),
            None => {
                live.insert(key, Flow::start(p));
            }
        }
        if p.is_tcp() && (p.flags.has(TcpFlags::FIN) || p.flags.has(TcpFlags::RST)) {
            let mut f = live.remove(&key).expect("present");
            f.finish();
            done.push(f);
        }
    }
    for (_, mut f) in live {
        f.finish();
        done.push(f);
    }
    done.sort_by_key(|x| (x.first_ts(), x.key));
    done
}
