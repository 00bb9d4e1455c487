use std::net::Ipv4Addr;
use std::path::Path;

use etherparse::{NetSlice, SlicedPacket, TransportSlice};
use pcap_file::pcap::PcapParser;
use pcap_file::{DataLink, PcapError};
use serde::{Deserialize, Serialize};

use super::FlowError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TcpFlags(pub u8);

impl TcpFlags {
    pub const FIN: u8 = 0x01;
    pub const SYN: u8 = 0x02;
    pub const RST: u8 = 0x04;
    pub const PSH: u8 = 0x08;
    pub const ACK: u8 = 0x10;
    pub const URG: u8 = 0x20;
    pub const ECE: u8 = 0x40;
    pub const CWE: u8 = 0x80;

    pub fn has(self, flag: u8) -> bool {
        self.0 & flag != 0
    }
}

/// Decoded header fields of one IPv4 TCP or UDP packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketMeta {
    /// Microseconds since the Unix epoch.
    pub ts_us: i64,
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: u8,
    pub ip_total_length: u16,
    pub ip_header_length: u16,
    pub l4_header_length: u16,
    pub payload_length: u16,
    pub flags: TcpFlags,
    /// TCP window; `None` for UDP.
    pub window: Option<u16>,
}

impl PacketMeta {
    pub fn header_length(&self) -> u64 {
        self.ip_header_length as u64 + self.l4_header_length as u64
    }

    pub fn is_tcp(&self) -> bool {
        self.protocol == 6
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PcapRead {
    pub packets: Vec<PacketMeta>,
    /// Frames that were not IPv4 TCP/UDP (ARP, IPv6, fragments, undecodable).
    pub skipped: usize,
}

pub fn read_pcap(path: &Path) -> Result<PcapRead, FlowError> {
    let data = std::fs::read(path).map_err(|e| FlowError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_pcap(&data)
}

/// Decodes an in-memory classic pcap (either byte order, µs or ns stamps).
pub fn parse_pcap(data: &[u8]) -> Result<PcapRead, FlowError> {
    let (mut rest, parser) = PcapParser::new(data).map_err(|e| match e {
        PcapError::IncompleteBuffer => {
            FlowError::BadMagic("file shorter than the global header".into())
        }
        other => FlowError::BadMagic(other.to_string()),
    })?;
    if parser.header().datalink != DataLink::ETHERNET {
        return Err(FlowError::LinkType(format!(
            "{:?}",
            parser.header().datalink
        )));
    }
    let mut out = PcapRead::default();
    while !rest.is_empty() {
        let offset = data.len() - rest.len();
        let (next, packet) = parser
            .next_packet(rest)
            .map_err(|_| FlowError::Truncated { offset })?;
        rest = next;
        let ts = packet.timestamp;
        let ts_us = ts.as_secs() as i64 * 1_000_000 + ts.subsec_micros() as i64;
        match decode(&packet.data, ts_us) {
            Some(meta) => out.packets.push(meta),
            None => out.skipped += 1,
        }
    }
    Ok(out)
}

fn decode(frame: &[u8], ts_us: i64) -> Option<PacketMeta> {
    let sliced = SlicedPacket::from_ethernet(frame).ok()?;
    let Some(NetSlice::Ipv4(ipv4)) = &sliced.net else {
        return None;
    };
    let ip = ipv4.header();
    let ip_total_length = ip.total_len();
    let ip_header_length = ip.ihl() as u16 * 4;
    let protocol = ip.protocol().0;
    let (src_port, dst_port, l4_header_length, flags, window) = match sliced.transport.as_ref()? {
        TransportSlice::Tcp(tcp) => {
            let mut f = 0u8;
            for (set, bit) in [
                (tcp.fin(), TcpFlags::FIN),
                (tcp.syn(), TcpFlags::SYN),
                (tcp.rst(), TcpFlags::RST),
                (tcp.psh(), TcpFlags::PSH),
                (tcp.ack(), TcpFlags::ACK),
                (tcp.urg(), TcpFlags::URG),
                (tcp.ece(), TcpFlags::ECE),
                (tcp.cwr(), TcpFlags::CWE),
            ] {
                if set {
                    f |= bit;
                }
            }
            let hl = tcp.data_offset() as u16 * 4;
            (
                tcp.source_port(),
                tcp.destination_port(),
                hl,
                TcpFlags(f),
                Some(tcp.window_size()),
            )
        }
        TransportSlice::Udp(udp) => (
            udp.source_port(),
            udp.destination_port(),
            8,
            TcpFlags(0),
            None,
        ),
        _ => return None,
    };
    // Taken from the IP length so Ethernet padding and snap truncation don't count.
    let payload_length = ip_total_length
        .saturating_sub(ip_header_length)
        .saturating_sub(l4_header_length);
    Some(PacketMeta {
        ts_us,
        src_ip: ip.source_addr(),
        dst_ip: ip.destination_addr(),
        src_port,
        dst_port,
        protocol,
        ip_total_length,
        ip_header_length,
        l4_header_length,
        payload_length,
        flags,
        window,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn global_header(magic: u32, linktype: u32) -> Vec<u8> {
        let mut h = Vec::new();
        h.extend(magic.to_le_bytes());
        h.extend(2u16.to_le_bytes());
        h.extend(4u16.to_le_bytes());
        h.extend([0; 8]);
        h.extend(65535u32.to_le_bytes());
        h.extend(linktype.to_le_bytes());
        h
    }

    #[test]
    fn header_only_is_empty() {
        let r = parse_pcap(&global_header(0xa1b2c3d4, 1)).unwrap();
        assert!(r.packets.is_empty());
        assert_eq!(r.skipped, 0);
    }

    #[test]
    fn bad_magic() {
        assert!(matches!(
            parse_pcap(&global_header(0x0a0d0d0a, 1)),
            Err(FlowError::BadMagic(_))
        ));
        assert!(matches!(parse_pcap(b"abc"), Err(FlowError::BadMagic(_))));
    }

    #[test]
    fn non_ethernet_rejected() {
        assert!(matches!(
            parse_pcap(&global_header(0xa1b2c3d4, 101)),
            Err(FlowError::LinkType(_))
        ));
    }

    #[test]
    fn truncated_record_reports_offset() {
        let mut d = global_header(0xa1b2c3d4, 1);
        d.extend([0u8; 10]);
        match parse_pcap(&d) {
            Err(FlowError::Truncated { offset }) => assert_eq!(offset, 24),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn flag_bits() {
        let f = TcpFlags(TcpFlags::SYN | TcpFlags::ACK);
        assert!(f.has(TcpFlags::SYN) && f.has(TcpFlags::ACK) && !f.has(TcpFlags::FIN));
    }
}
