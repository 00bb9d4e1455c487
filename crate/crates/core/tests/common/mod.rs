#![allow(dead_code)]

//! Hand-assembled capture bytes, written field by field from the pcap,
//! Ethernet, IPv4, TCP and UDP header layouts.

pub struct Packet {
    pub ts_us: u64,
    pub src: [u8; 4],
    pub dst: [u8; 4],
    pub sport: u16,
    pub dport: u16,
    /// 6 or 17
    pub proto: u8,
    pub flags: u8,
    pub window: u16,
    pub payload: usize,
}

impl Packet {
    pub fn tcp(
        ts_us: u64,
        src: [u8; 4],
        sport: u16,
        dst: [u8; 4],
        dport: u16,
        payload: usize,
        flags: u8,
    ) -> Self {
        Packet {
            ts_us,
            src,
            dst,
            sport,
            dport,
            proto: 6,
            flags,
            window: 8192,
            payload,
        }
    }
}

fn checksum(bytes: &[u8]) -> u16 {
    let mut sum = 0u32;
    for c in bytes.chunks(2) {
        sum += u32::from(c[0]) << 8 | u32::from(*c.get(1).unwrap_or(&0));
    }
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

pub fn ipv4_frame(p: &Packet) -> Vec<u8> {
    let l4_len = if p.proto == 6 { 20 } else { 8 };
    let total = 20 + l4_len + p.payload;
    let mut f = vec![0x02, 0, 0, 0, 0, 2, 0x02, 0, 0, 0, 0, 1, 0x08, 0x00];
    let mut ip = vec![0x45, 0];
    ip.extend((total as u16).to_be_bytes());
    ip.extend([0, 1, 0x40, 0, 64, p.proto, 0, 0]);
    ip.extend(p.src);
    ip.extend(p.dst);
    let c = checksum(&ip);
    ip[10..12].copy_from_slice(&c.to_be_bytes());
    f.extend(ip);
    f.extend(p.sport.to_be_bytes());
    f.extend(p.dport.to_be_bytes());
    if p.proto == 6 {
        f.extend(1u32.to_be_bytes());
        f.extend(0u32.to_be_bytes());
        f.push(5 << 4);
        f.push(p.flags);
        f.extend(p.window.to_be_bytes());
        f.extend([0, 0, 0, 0]);
    } else {
        f.extend(((8 + p.payload) as u16).to_be_bytes());
        f.extend([0, 0]);
    }
    f.extend(std::iter::repeat_n(b'x', p.payload));
    f
}

pub fn arp_frame() -> Vec<u8> {
    let mut f = vec![0xff; 6];
    f.extend([0x02, 0, 0, 0, 0, 1, 0x08, 0x06]);
    f.extend([0, 1, 0x08, 0, 6, 4, 0, 1]);
    f.extend([0x02, 0, 0, 0, 0, 1, 10, 0, 0, 1]);
    f.extend([0, 0, 0, 0, 0, 0, 10, 0, 0, 2]);
    f
}

/// Little-endian microsecond pcap unless `big`/`nanos` say otherwise.
pub fn pcap(frames: &[(u64, Vec<u8>)], big: bool, nanos: bool) -> Vec<u8> {
    let u32b = |v: u32| {
        if big {
            v.to_be_bytes()
        } else {
            v.to_le_bytes()
        }
    };
    let u16b = |v: u16| {
        if big {
            v.to_be_bytes()
        } else {
            v.to_le_bytes()
        }
    };
    let mut out = Vec::new();
    out.extend(u32b(if nanos { 0xa1b23c4d } else { 0xa1b2c3d4 }));
    out.extend(u16b(2));
    out.extend(u16b(4));
    out.extend([0; 8]);
    out.extend(u32b(65535));
    out.extend(u32b(1));
    for (ts_us, frame) in frames {
        out.extend(u32b((ts_us / 1_000_000) as u32));
        let frac = ts_us % 1_000_000;
        out.extend(u32b(if nanos { frac * 1000 } else { frac } as u32));
        out.extend(u32b(frame.len() as u32));
        out.extend(u32b(frame.len() as u32));
        out.extend(frame);
    }
    out
}

pub fn capture(packets: &[Packet]) -> Vec<u8> {
    pcap(
        &packets
            .iter()
            .map(|p| (p.ts_us, ipv4_frame(p)))
            .collect::<Vec<_>>(),
        false,
        false,
    )
}
