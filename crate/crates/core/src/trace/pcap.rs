//! Classic libpcap files, Ethernet link type, IPv4/TCP frames.

use std::collections::HashMap;
use std::net::{Ipv4Addr, SocketAddrV4};

use super::{
    is_dsack, CapturePoint, ConnectionKey, PacketRecord, SackBlock, TcpFlags, TcpOptions, TraceError, TraceFile,
};

const MAGIC_US: u32 = 0xa1b2_c3d4;
const MAGIC_NS: u32 = 0xa1b2_3c4d;
const LINKTYPE_ETHERNET: u32 = 1;
const GLOBAL_HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;

const ETHERTYPE_IPV4: u16 = 0x0800;
const ETHERTYPE_IPV6: u16 = 0x86dd;
const ETHERTYPE_VLAN: u16 = 0x8100;
const ETHERTYPE_QINQ: u16 = 0x88a8;
const IPPROTO_TCP: u8 = 6;

#[derive(Clone, Copy)]
struct Endian {
    big: bool,
    nanos: bool,
}

impl Endian {
    fn u32(&self, b: &[u8]) -> u32 {
        let a = [b[0], b[1], b[2], b[3]];
        if self.big {
            u32::from_be_bytes(a)
        } else {
            u32::from_le_bytes(a)
        }
    }
}

/// Parse a capture and keep the connection with the most packets.
pub fn parse_pcap(bytes: &[u8], capture_point: CapturePoint) -> Result<TraceFile, TraceError> {
    parse_pcap_with(bytes, capture_point, None)
}

/// Parse a capture, keeping only the connection between the two endpoints of
/// `select` when given (in either orientation).
pub fn parse_pcap_with(
    bytes: &[u8],
    capture_point: CapturePoint,
    select: Option<ConnectionKey>,
) -> Result<TraceFile, TraceError> {
    let endian = read_global_header(bytes)?;
    let mut packets = Vec::new();
    let mut offset = GLOBAL_HEADER_LEN;
    let mut record = 0usize;
    while offset < bytes.len() {
        let last_good = record.checked_sub(1);
        if bytes.len() - offset < RECORD_HEADER_LEN {
            return Err(TraceError::TruncatedRecord { last_good });
        }
        let hdr = &bytes[offset..offset + RECORD_HEADER_LEN];
        let ts_sec = endian.u32(&hdr[0..4]) as u64;
        let ts_frac = endian.u32(&hdr[4..8]) as u64;
        let incl_len = endian.u32(&hdr[8..12]) as usize;
        offset += RECORD_HEADER_LEN;
        if bytes.len() - offset < incl_len {
            return Err(TraceError::TruncatedRecord { last_good });
        }
        let frame = &bytes[offset..offset + incl_len];
        offset += incl_len;
        record += 1;

        let micros = if endian.nanos { ts_frac / 1000 } else { ts_frac };
        if let Some(p) = decode_frame(frame, ts_sec * 1_000_000 + micros)? {
            packets.push(p);
        }
    }

    let key = match select {
        Some(k) => k,
        None => busiest_connection(&packets).ok_or(TraceError::EmptyTrace)?,
    };
    let mut packets: Vec<PacketRecord> = packets.into_iter().filter(|p| key.matches(p)).collect();
    if packets.is_empty() {
        return Err(if select.is_some() {
            TraceError::ConnectionNotFound
        } else {
            TraceError::EmptyTrace
        });
    }
    apply_window_scaling(&mut packets);
    let oriented = ConnectionKey::infer(&packets).expect("nonempty");
    TraceFile::with_key(capture_point, packets, oriented)
}

fn read_global_header(bytes: &[u8]) -> Result<Endian, TraceError> {
    if bytes.len() < GLOBAL_HEADER_LEN {
        return Err(TraceError::CorruptCapture(format!(
            "global header needs {GLOBAL_HEADER_LEN} bytes, file has {}",
            bytes.len()
        )));
    }
    let le = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    let endian = match le {
        MAGIC_US => Endian {
            big: false,
            nanos: false,
        },
        MAGIC_NS => Endian {
            big: false,
            nanos: true,
        },
        m if m.swap_bytes() == MAGIC_US => Endian {
            big: true,
            nanos: false,
        },
        m if m.swap_bytes() == MAGIC_NS => Endian { big: true, nanos: true },
        m => return Err(TraceError::CorruptCapture(format!("bad magic 0x{m:08x}"))),
    };
    let linktype = endian.u32(&bytes[20..24]);
    if linktype != LINKTYPE_ETHERNET {
        return Err(TraceError::UnsupportedNetwork(format!("link type {linktype}")));
    }
    Ok(endian)
}

fn be16(b: &[u8], at: usize) -> u16 {
    u16::from_be_bytes([b[at], b[at + 1]])
}

fn be32(b: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Decode one Ethernet frame. Non-TCP and undecodable frames yield `None`.
fn decode_frame(frame: &[u8], timestamp_us: u64) -> Result<Option<PacketRecord>, TraceError> {
    if frame.len() < 14 {
        return Ok(None);
    }
    let mut at = 12;
    let mut ethertype = be16(frame, at);
    while ethertype == ETHERTYPE_VLAN || ethertype == ETHERTYPE_QINQ {
        at += 4;
        if frame.len() < at + 2 {
            return Ok(None);
        }
        ethertype = be16(frame, at);
    }
    at += 2;
    match ethertype {
        ETHERTYPE_IPV4 => {}
        ETHERTYPE_IPV6 => return Err(TraceError::UnsupportedNetwork("IPv6".into())),
        _ => return Ok(None),
    }

    let ip = &frame[at..];
    if ip.len() < 20 || ip[0] >> 4 != 4 {
        return Ok(None);
    }
    let ihl = (ip[0] & 0x0f) as usize * 4;
    let total_len = be16(ip, 2) as usize;
    let frag = be16(ip, 6) & 0x1fff;
    if ip[9] != IPPROTO_TCP || frag != 0 || ihl < 20 || ip.len() < ihl + 20 {
        return Ok(None);
    }
    let src = Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]);
    let dst = Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]);

    let tcp = &ip[ihl..];
    let doff = (tcp[12] >> 4) as usize * 4;
    if doff < 20 || tcp.len() < doff {
        return Ok(None);
    }
    let ack = be32(tcp, 8);
    let flags = TcpFlags::from_bits_truncate(tcp[13]);
    let (options, sack_blocks) = decode_options(&tcp[20..doff], ack);

    Ok(Some(PacketRecord {
        timestamp_us,
        src,
        dst,
        src_port: be16(tcp, 0),
        dst_port: be16(tcp, 2),
        seq: be32(tcp, 4),
        ack,
        flags,
        payload_len: total_len.saturating_sub(ihl + doff) as u32,
        window: be16(tcp, 14) as u32,
        sack_blocks,
        options,
    }))
}

fn decode_options(mut opts: &[u8], ack: u32) -> (TcpOptions, Vec<SackBlock>) {
    let mut o = TcpOptions::default();
    let mut blocks = Vec::new();
    while let Some(&kind) = opts.first() {
        match kind {
            0 => break,
            1 => {
                opts = &opts[1..];
                continue;
            }
            _ => {}
        }
        let Some(&len) = opts.get(1) else { break };
        let len = len as usize;
        if len < 2 || len > opts.len() {
            break;
        }
        let body = &opts[2..len];
        match (kind, body.len()) {
            (2, 2) => o.mss = Some(be16(body, 0)),
            (3, 1) => o.wscale = Some(body[0].min(14)),
            (4, 0) => o.sack_permitted = true,
            (5, n) if n % 8 == 0 => {
                for c in body.chunks_exact(8) {
                    let b = SackBlock::new(be32(c, 0), be32(c, 4));
                    if b.is_valid() {
                        blocks.push(b);
                    }
                }
            }
            _ => {}
        }
        opts = &opts[len..];
    }
    o.dsack = is_dsack(ack, &blocks);
    (o, blocks)
}

fn unordered(p: &PacketRecord) -> (SocketAddrV4, SocketAddrV4) {
    let (a, b) = (p.source(), p.destination());
    if (a.ip(), a.port()) <= (b.ip(), b.port()) {
        (a, b)
    } else {
        (b, a)
    }
}

fn busiest_connection(packets: &[PacketRecord]) -> Option<ConnectionKey> {
    let mut counts: HashMap<(SocketAddrV4, SocketAddrV4), (usize, usize)> = HashMap::new();
    for (i, p) in packets.iter().enumerate() {
        counts.entry(unordered(p)).or_insert((0, i)).0 += 1;
    }
    // Most packets wins; ties go to the connection seen first.
    counts
        .into_iter()
        .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
        .map(|((a, b), _)| ConnectionKey::new(a, b))
}

/// Scale raw 16-bit windows once both handshake segments carried a scale
/// option. SYN segments are never scaled.
fn apply_window_scaling(packets: &mut [PacketRecord]) {
    let mut shift: HashMap<SocketAddrV4, u8> = HashMap::new();
    for p in packets.iter() {
        if p.has(TcpFlags::SYN) {
            if let Some(ws) = p.options.wscale {
                shift.entry(p.source()).or_insert(ws);
            }
        }
    }
    if shift.len() < 2 {
        return;
    }
    for p in packets.iter_mut() {
        if !p.has(TcpFlags::SYN) {
            if let Some(&ws) = shift.get(&p.source()) {
                p.window <<= ws;
            }
        }
    }
}

/// Write a little-endian microsecond capture. Frames carry full headers only;
/// `orig_len` records the on-wire length including payload.
pub fn write_pcap(trace: &TraceFile) -> Vec<u8> {
    let mut out = Vec::with_capacity(GLOBAL_HEADER_LEN + trace.len() * 90);
    out.extend_from_slice(&MAGIC_US.to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&4u16.to_le_bytes());
    out.extend_from_slice(&0i32.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&65535u32.to_le_bytes());
    out.extend_from_slice(&LINKTYPE_ETHERNET.to_le_bytes());

    let mut shift: HashMap<SocketAddrV4, u8> = HashMap::new();
    for p in trace.packets() {
        if p.has(TcpFlags::SYN) {
            if let Some(ws) = p.options.wscale {
                shift.entry(p.source()).or_insert(ws);
            }
        }
    }
    let scaling = shift.len() >= 2;

    for (idx, p) in trace.packets().iter().enumerate() {
        let raw_window = match shift.get(&p.source()) {
            Some(&ws) if scaling && !p.has(TcpFlags::SYN) => p.window >> ws,
            _ => p.window,
        }
        .min(u16::MAX as u32) as u16;
        let frame = encode_frame(p, raw_window, idx as u16);
        let orig_len = frame.len() + p.payload_len as usize;
        out.extend_from_slice(&((p.timestamp_us / 1_000_000) as u32).to_le_bytes());
        out.extend_from_slice(&((p.timestamp_us % 1_000_000) as u32).to_le_bytes());
        out.extend_from_slice(&(frame.len() as u32).to_le_bytes());
        out.extend_from_slice(&(orig_len as u32).to_le_bytes());
        out.extend_from_slice(&frame);
    }
    out
}

fn mac_for(ip: Ipv4Addr) -> [u8; 6] {
    let o = ip.octets();
    [0x02, 0x00, o[0], o[1], o[2], o[3]]
}

fn encode_options(p: &PacketRecord) -> Vec<u8> {
    let mut opts = Vec::new();
    if let Some(mss) = p.options.mss {
        opts.extend_from_slice(&[2, 4]);
        opts.extend_from_slice(&mss.to_be_bytes());
    }
    if let Some(ws) = p.options.wscale {
        opts.extend_from_slice(&[1, 3, 3, ws]);
    }
    if p.options.sack_permitted {
        opts.extend_from_slice(&[1, 1, 4, 2]);
    }
    // 40 bytes of option space hold at most four blocks after the NOP pair.
    if !p.sack_blocks.is_empty() {
        let n = p.sack_blocks.len().min(4);
        opts.extend_from_slice(&[1, 1, 5, (2 + 8 * n) as u8]);
        for b in &p.sack_blocks[..n] {
            opts.extend_from_slice(&b.left.to_be_bytes());
            opts.extend_from_slice(&b.right.to_be_bytes());
        }
    }
    while opts.len() % 4 != 0 {
        opts.push(1);
    }
    opts
}

fn encode_frame(p: &PacketRecord, raw_window: u16, ip_id: u16) -> Vec<u8> {
    let opts = encode_options(p);
    let tcp_len = 20 + opts.len();
    let ip_total = 20 + tcp_len + p.payload_len as usize;

    let mut f = Vec::with_capacity(14 + 20 + tcp_len);
    f.extend_from_slice(&mac_for(p.dst));
    f.extend_from_slice(&mac_for(p.src));
    f.extend_from_slice(&ETHERTYPE_IPV4.to_be_bytes());

    let ip_start = f.len();
    f.extend_from_slice(&[0x45, 0x00]);
    f.extend_from_slice(&(ip_total.min(u16::MAX as usize) as u16).to_be_bytes());
    f.extend_from_slice(&ip_id.to_be_bytes());
    f.extend_from_slice(&[0x40, 0x00, 64, IPPROTO_TCP, 0, 0]);
    f.extend_from_slice(&p.src.octets());
    f.extend_from_slice(&p.dst.octets());
    let csum = ipv4_checksum(&f[ip_start..ip_start + 20]);
    f[ip_start + 10..ip_start + 12].copy_from_slice(&csum.to_be_bytes());

    f.extend_from_slice(&p.src_port.to_be_bytes());
    f.extend_from_slice(&p.dst_port.to_be_bytes());
    f.extend_from_slice(&p.seq.to_be_bytes());
    f.extend_from_slice(&p.ack.to_be_bytes());
    f.push(((tcp_len / 4) as u8) << 4);
    f.push(p.flags.bits());
    f.extend_from_slice(&raw_window.to_be_bytes());
    f.extend_from_slice(&[0, 0, 0, 0]);
    f.extend_from_slice(&opts);
    f
}

fn ipv4_checksum(header: &[u8]) -> u16 {
    let mut sum: u32 = header
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as u32)
        .sum();
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}
