//! Canonical representation of one TCP connection observed at one endpoint.
//!
//! A [`TraceFile`] is built either from a classic pcap capture
//! ([`parse_pcap`]) or from the line-oriented canonical text format
//! ([`parse_canonical`]). Both produce the same loss-free record list, so the
//! statistics in [`crate::signature`] never see capture-format details.

mod canonical;
mod pcap;

pub use canonical::{parse_canonical, serialize_canonical};
pub use pcap::{parse_pcap, parse_pcap_with, write_pcap};

use std::fmt;
use std::net::{Ipv4Addr, SocketAddrV4};
use std::str::FromStr;

use bitflags::bitflags;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TraceError {
    #[error("corrupt capture: {0}")]
    CorruptCapture(String),
    #[error("truncated packet record after record {last_good:?}")]
    TruncatedRecord { last_good: Option<usize> },
    #[error("unsupported network layer: {0}")]
    UnsupportedNetwork(String),
    #[error("line {line}: {message}")]
    SchemaError { line: usize, message: String },
    #[error("trace contains no packets")]
    EmptyTrace,
    #[error("timestamps decrease at packet {0}")]
    NonMonotonicTimestamps(usize),
    #[error("packet {0} does not belong to the trace connection")]
    ForeignPacket(usize),
    #[error("packet {0} carries an empty or inverted SACK block")]
    InvalidSackBlock(usize),
    #[error("no TCP connection matches the requested 4-tuple")]
    ConnectionNotFound,
}

bitflags! {
    /// TCP control bits, laid out as on the wire.
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
    pub struct TcpFlags: u8 {
        const FIN = 0x01;
        const SYN = 0x02;
        const RST = 0x04;
        const PSH = 0x08;
        const ACK = 0x10;
        const URG = 0x20;
    }
}

/// One SACK block in sequence space, `left` inclusive, `right` exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SackBlock {
    pub left: u32,
    pub right: u32,
}

impl SackBlock {
    pub fn new(left: u32, right: u32) -> Self {
        Self { left, right }
    }

    /// True when `left < right` in 32-bit sequence space.
    pub fn is_valid(&self) -> bool {
        seq_lt(self.left, self.right)
    }
}

/// Handshake options plus the D-SACK marker of the packet's SACK blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TcpOptions {
    pub mss: Option<u16>,
    pub wscale: Option<u8>,
    pub sack_permitted: bool,
    pub dsack: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketRecord {
    /// Microseconds since the capture epoch.
    pub timestamp_us: u64,
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub seq: u32,
    pub ack: u32,
    pub flags: TcpFlags,
    pub payload_len: u32,
    /// Advertised receive window in bytes, window scaling already applied.
    pub window: u32,
    pub sack_blocks: Vec<SackBlock>,
    pub options: TcpOptions,
}

impl PacketRecord {
    pub fn source(&self) -> SocketAddrV4 {
        SocketAddrV4::new(self.src, self.src_port)
    }

    pub fn destination(&self) -> SocketAddrV4 {
        SocketAddrV4::new(self.dst, self.dst_port)
    }

    pub fn has(&self, flags: TcpFlags) -> bool {
        self.flags.contains(flags)
    }

    pub fn is_data(&self) -> bool {
        self.payload_len > 0
    }

    /// Sequence space consumed by this segment (SYN and FIN count as one).
    pub fn seq_len(&self) -> u32 {
        let mut len = self.payload_len;
        if self.has(TcpFlags::SYN) {
            len += 1;
        }
        if self.has(TcpFlags::FIN) {
            len += 1;
        }
        len
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CapturePoint {
    Client,
    Server,
}

impl fmt::Display for CapturePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CapturePoint::Client => "CLIENT",
            CapturePoint::Server => "SERVER",
        })
    }
}

impl FromStr for CapturePoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "CLIENT" => Ok(CapturePoint::Client),
            "SERVER" => Ok(CapturePoint::Server),
            other => Err(format!("unknown capture point `{other}`")),
        }
    }
}

/// Connection 4-tuple oriented from the initiator (SYN sender) to the responder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConnectionKey {
    pub initiator: SocketAddrV4,
    pub responder: SocketAddrV4,
}

impl ConnectionKey {
    pub fn new(initiator: SocketAddrV4, responder: SocketAddrV4) -> Self {
        Self { initiator, responder }
    }

    /// Whether the packet travels between the two endpoints in either direction.
    pub fn matches(&self, packet: &PacketRecord) -> bool {
        let (s, d) = (packet.source(), packet.destination());
        (s == self.initiator && d == self.responder) || (s == self.responder && d == self.initiator)
    }

    pub fn is_forward(&self, packet: &PacketRecord) -> bool {
        packet.source() == self.initiator && packet.destination() == self.responder
    }

    /// Orientation-free equality.
    pub fn same_endpoints(&self, other: &ConnectionKey) -> bool {
        self == other || (self.initiator == other.responder && self.responder == other.initiator)
    }

    /// Derive the key from a packet list: the first pure SYN names the
    /// initiator, otherwise the first packet's source does.
    pub fn infer(packets: &[PacketRecord]) -> Option<Self> {
        let first = packets
            .iter()
            .find(|p| p.has(TcpFlags::SYN) && !p.has(TcpFlags::ACK))
            .or_else(|| packets.first())?;
        Some(Self::new(first.source(), first.destination()))
    }
}

impl fmt::Display for ConnectionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> {}", self.initiator, self.responder)
    }
}

/// Timestamped packets of a single TCP connection seen from one capture point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceFile {
    capture_point: CapturePoint,
    packets: Vec<PacketRecord>,
    connection_key: ConnectionKey,
}

impl TraceFile {
    /// Validate the packet list and infer its connection key.
    pub fn new(capture_point: CapturePoint, packets: Vec<PacketRecord>) -> Result<Self, TraceError> {
        let key = ConnectionKey::infer(&packets).ok_or(TraceError::EmptyTrace)?;
        Self::with_key(capture_point, packets, key)
    }

    pub fn with_key(
        capture_point: CapturePoint,
        packets: Vec<PacketRecord>,
        connection_key: ConnectionKey,
    ) -> Result<Self, TraceError> {
        if packets.is_empty() {
            return Err(TraceError::EmptyTrace);
        }
        for (i, p) in packets.iter().enumerate() {
            if i > 0 && p.timestamp_us < packets[i - 1].timestamp_us {
                return Err(TraceError::NonMonotonicTimestamps(i));
            }
            if !connection_key.matches(p) {
                return Err(TraceError::ForeignPacket(i));
            }
            if p.sack_blocks.iter().any(|b| !b.is_valid()) {
                return Err(TraceError::InvalidSackBlock(i));
            }
        }
        Ok(Self {
            capture_point,
            packets,
            connection_key,
        })
    }

    pub fn capture_point(&self) -> CapturePoint {
        self.capture_point
    }

    pub fn packets(&self) -> &[PacketRecord] {
        &self.packets
    }

    pub fn connection_key(&self) -> ConnectionKey {
        self.connection_key
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    /// Partition into initiator→responder and responder→initiator packets,
    /// preserving capture order within each side.
    pub fn split_directions(&self) -> (Vec<PacketRecord>, Vec<PacketRecord>) {
        self.packets
            .iter()
            .cloned()
            .partition(|p| self.connection_key.is_forward(p))
    }
}

/// `a < b` in modulo-2^32 sequence space.
pub fn seq_lt(a: u32, b: u32) -> bool {
    (b.wrapping_sub(a) as i32) > 0
}

pub fn seq_le(a: u32, b: u32) -> bool {
    a == b || seq_lt(a, b)
}

/// D-SACK detection: the first block lies at or below the cumulative ACK,
/// or is contained in the second block.
pub fn is_dsack(ack: u32, blocks: &[SackBlock]) -> bool {
    match blocks {
        [] => false,
        [first, rest @ ..] => {
            if seq_le(first.right, ack) {
                return true;
            }
            match rest.first() {
                Some(second) => seq_le(second.left, first.left) && seq_le(first.right, second.right),
                None => false,
            }
        }
    }
}
