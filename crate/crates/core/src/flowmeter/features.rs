use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::flows::{Direction, Flow};
use super::pcap::{PacketMeta, TcpFlags};
use super::CONTINUOUS_FEATURES;

/// One flow's identification fields and feature values.
///
/// `features` holds every continuous feature except `Timestamp`, in
/// [`CONTINUOUS_FEATURES`] order; the timestamp is kept in microseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub flow_id: String,
    pub src_ip: String,
    pub src_port: u16,
    pub dst_ip: String,
    pub dst_port: u16,
    pub protocol: u8,
    pub timestamp_us: i64,
    pub features: Vec<f64>,
    pub label: Option<String>,
}

impl FeatureRecord {
    /// Value of a continuous feature by column name.
    pub fn get(&self, name: &str) -> Option<f64> {
        match super::feature_index(name)? {
            0 => Some(self.timestamp_seconds()),
            i => self.features.get(i - 1).copied(),
        }
    }

    pub fn timestamp_seconds(&self) -> f64 {
        self.timestamp_us as f64 / 1e6
    }

    /// 0 for `Benign` (any case), 1 for any other non-empty label.
    pub fn label_value(&self) -> Option<usize> {
        let l = self.label.as_deref()?.trim();
        if l.is_empty() {
            None
        } else if l.eq_ignore_ascii_case("benign") {
            Some(0)
        } else {
            Some(1)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInputs {
    /// `[Dst Port, Protocol]`.
    pub categorical: [u32; 2],
    /// The 77 continuous features, `Timestamp` first in epoch seconds.
    pub continuous: Vec<f64>,
}

pub fn model_inputs(record: &FeatureRecord) -> ModelInputs {
    let mut continuous = Vec::with_capacity(CONTINUOUS_FEATURES.len());
    continuous.push(record.timestamp_seconds());
    continuous.extend_from_slice(&record.features);
    ModelInputs {
        categorical: [record.dst_port as u32, record.protocol as u32],
        continuous,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Stats {
    sum: f64,
    mean: f64,
    std: f64,
    var: f64,
    max: f64,
    min: f64,
}

impl Stats {
    fn of(xs: &[f64]) -> Stats {
        if xs.is_empty() {
            return Stats::default();
        }
        let n = xs.len() as f64;
        let sum: f64 = xs.iter().sum();
        let mean = sum / n;
        let var = if xs.len() < 2 {
            0.0
        } else {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        };
        let max = xs.iter().copied().fold(f64::MIN, f64::max);
        let min = xs.iter().copied().fold(f64::MAX, f64::min);
        // Guard the rounding of sum / n against the exact extremes.
        Stats {
            sum,
            mean: mean.clamp(min, max),
            std: var.sqrt(),
            var,
            max,
            min,
        }
    }
}

fn gaps(ts: &[i64]) -> Vec<f64> {
    ts.windows(2).map(|w| (w[1] - w[0]) as f64).collect()
}

const BULK_MIN_PACKETS: usize = 4;
const BULK_MAX_GAP: i64 = 1_000_000;
const SUBFLOW_GAP: i64 = 1_000_000;

#[derive(Default)]
struct Bulk {
    count: usize,
    packets: usize,
    bytes: f64,
    duration: i64,
}

impl Bulk {
    fn averages(&self) -> [f64; 3] {
        if self.count == 0 {
            return [0.0; 3];
        }
        let rate = if self.duration > 0 {
            self.bytes / (self.duration as f64 / 1e6)
        } else {
            0.0
        };
        [
            self.bytes / self.count as f64,
            self.packets as f64 / self.count as f64,
            rate,
        ]
    }
}

/// Bulks per direction: runs of at least four payload-bearing packets in
/// one direction, not interrupted by payload in the other, with gaps of at
/// most one second.
fn bulks(flow: &Flow) -> (Bulk, Bulk) {
    let mut out = (Bulk::default(), Bulk::default());
    let mut close = |dir: Direction, n: usize, bytes: f64, span: i64| {
        if n >= BULK_MIN_PACKETS {
            let b = if dir == Direction::Forward {
                &mut out.0
            } else {
                &mut out.1
            };
            b.count += 1;
            b.packets += n;
            b.bytes += bytes;
            b.duration += span;
        }
    };
    let mut run: Option<(Direction, usize, f64, i64, i64)> = None;
    for p in flow.packets.iter().filter(|p| p.meta.payload_length > 0) {
        let (ts, len) = (p.meta.ts_us, p.meta.payload_length as f64);
        run = match run {
            Some((d, n, bytes, start, last)) if d == p.direction && ts - last <= BULK_MAX_GAP => {
                Some((d, n + 1, bytes + len, start, ts))
            }
            Some((d, n, bytes, start, last)) => {
                close(d, n, bytes, last - start);
                Some((p.direction, 1, len, ts, ts))
            }
            None => Some((p.direction, 1, len, ts, ts)),
        };
    }
    if let Some((d, n, bytes, start, last)) = run {
        close(d, n, bytes, last - start);
    }
    out
}

fn count(ps: &[&PacketMeta], flag: u8) -> f64 {
    ps.iter().filter(|p| p.flags.has(flag)).count() as f64
}

/// Computes all features of `flow`; the label is left empty.
///
/// Durations and inter-arrival times are in microseconds, rates per second.
/// Standard deviations use the n − 1 denominator (0 below two samples) and
/// any rate or ratio with a zero denominator is 0.
pub fn compute_features(flow: &Flow) -> FeatureRecord {
    let all: Vec<&PacketMeta> = flow.packets.iter().map(|p| &p.meta).collect();
    let fwd: Vec<&PacketMeta> = flow.fwd().collect();
    let bwd: Vec<&PacketMeta> = flow.bwd().collect();
    let lens = |ps: &[&PacketMeta]| {
        ps.iter()
            .map(|p| p.payload_length as f64)
            .collect::<Vec<_>>()
    };
    let times = |ps: &[&PacketMeta]| ps.iter().map(|p| p.ts_us).collect::<Vec<_>>();
    let (all_len, fwd_len, bwd_len) = (
        Stats::of(&lens(&all)),
        Stats::of(&lens(&fwd)),
        Stats::of(&lens(&bwd)),
    );
    let flow_iat = Stats::of(&gaps(&times(&all)));
    let fwd_iat = Stats::of(&gaps(&times(&fwd)));
    let bwd_iat = Stats::of(&gaps(&times(&bwd)));
    let duration = flow.duration() as f64;
    let per_second = |x: f64| {
        if duration > 0.0 {
            x / (duration / 1e6)
        } else {
            0.0
        }
    };
    let (nf, nb) = (fwd.len() as f64, bwd.len() as f64);
    let header = |ps: &[&PacketMeta]| ps.iter().map(|p| p.header_length() as f64).sum::<f64>();
    let (fwd_bulk, bwd_bulk) = bulks(flow);
    let subflows = 1.0
        + gaps(&times(&all))
            .iter()
            .filter(|&&g| g > SUBFLOW_GAP as f64)
            .count() as f64;
    let init_window = |ps: &[&PacketMeta]| ps.first().and_then(|p| p.window).unwrap_or(0) as f64;
    let active = Stats::of(&flow.active.iter().map(|&x| x as f64).collect::<Vec<_>>());
    let idle = Stats::of(&flow.idle.iter().map(|&x| x as f64).collect::<Vec<_>>());

    let mut v = Vec::with_capacity(CONTINUOUS_FEATURES.len() - 1);
    v.extend([duration, nf, nb, fwd_len.sum, bwd_len.sum]);
    v.extend([fwd_len.max, fwd_len.min, fwd_len.mean, fwd_len.std]);
    v.extend([bwd_len.max, bwd_len.min, bwd_len.mean, bwd_len.std]);
    v.extend([per_second(all_len.sum), per_second(all.len() as f64)]);
    v.extend([flow_iat.mean, flow_iat.std, flow_iat.max, flow_iat.min]);
    v.extend([
        fwd_iat.sum,
        fwd_iat.mean,
        fwd_iat.std,
        fwd_iat.max,
        fwd_iat.min,
    ]);
    v.extend([
        bwd_iat.sum,
        bwd_iat.mean,
        bwd_iat.std,
        bwd_iat.max,
        bwd_iat.min,
    ]);
    v.extend([
        count(&fwd, TcpFlags::PSH),
        count(&bwd, TcpFlags::PSH),
        count(&fwd, TcpFlags::URG),
        count(&bwd, TcpFlags::URG),
    ]);
    v.extend([header(&fwd), header(&bwd), per_second(nf), per_second(nb)]);
    v.extend([
        all_len.min,
        all_len.max,
        all_len.mean,
        all_len.std,
        all_len.var,
    ]);
    for flag in [
        TcpFlags::FIN,
        TcpFlags::SYN,
        TcpFlags::RST,
        TcpFlags::PSH,
        TcpFlags::ACK,
        TcpFlags::URG,
        TcpFlags::CWE,
        TcpFlags::ECE,
    ] {
        v.push(count(&all, flag));
    }
    v.push(if nf > 0.0 { (nb / nf).floor() } else { 0.0 });
    v.extend([all_len.mean, fwd_len.mean, bwd_len.mean]);
    v.extend(fwd_bulk.averages());
    v.extend(bwd_bulk.averages());
    v.extend([
        nf / subflows,
        fwd_len.sum / subflows,
        nb / subflows,
        bwd_len.sum / subflows,
    ]);
    v.extend([init_window(&fwd), init_window(&bwd)]);
    v.push(fwd.iter().filter(|p| p.payload_length > 0).count() as f64);
    v.push(fwd.iter().map(|p| p.header_length()).min().unwrap_or(0) as f64);
    v.extend([active.mean, active.std, active.max, active.min]);
    v.extend([idle.mean, idle.std, idle.max, idle.min]);
    debug_assert_eq!(v.len(), CONTINUOUS_FEATURES.len() - 1);

    let first = flow.initiator();
    FeatureRecord {
        flow_id: format!(
            "{}-{}-{}-{}-{}",
            first.src_ip, first.dst_ip, first.src_port, first.dst_port, first.protocol
        ),
        src_ip: first.src_ip.to_string(),
        src_port: first.src_port,
        dst_ip: first.dst_ip.to_string(),
        dst_port: first.dst_port,
        protocol: first.protocol,
        timestamp_us: flow.first_ts(),
        features: v,
        label: None,
    }
}

/// [`compute_features`] over many flows in parallel, keeping input order.
pub fn extract_features(flows: &[Flow]) -> Vec<FeatureRecord> {
    flows.par_iter().map(compute_features).collect()
}
