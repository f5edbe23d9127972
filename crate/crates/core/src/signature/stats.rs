//! Per-direction connection statistics in the style of tcptrace's long output.

use std::collections::{BTreeMap, HashMap};

use super::catalogue::{Stat, STATS_PER_DIRECTION};
use crate::trace::{PacketRecord, TcpFlags};

/// Data gaps at least this long count as sender stalls.
const STALL_THRESHOLD_US: u64 = 200_000;

/// The 70 statistics of one direction, indexed by [`Stat`].
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionStats {
    values: [f64; STATS_PER_DIRECTION],
}

impl Default for DirectionStats {
    fn default() -> Self {
        Self {
            values: [0.0; STATS_PER_DIRECTION],
        }
    }
}

impl DirectionStats {
    pub fn get(&self, stat: Stat) -> f64 {
        self.values[stat.index()]
    }

    pub fn values(&self) -> &[f64; STATS_PER_DIRECTION] {
        &self.values
    }

    fn set(&mut self, stat: Stat, v: f64) {
        debug_assert!(v.is_finite(), "{} not finite", stat.name());
        self.values[stat.index()] = if v.is_finite() { v } else { 0.0 };
    }

    fn set_summary(&mut self, s: &Summary, min: Stat, max: Stat, mean: Stat, stddev: Option<Stat>) {
        self.set(min, s.min());
        self.set(max, s.max());
        self.set(mean, s.mean());
        if let Some(sd) = stddev {
            self.set(sd, s.stddev());
        }
    }
}

/// Streaming min/max/mean/stddev (Welford). Empty summaries report zeros.
#[derive(Debug, Clone, Default)]
struct Summary {
    n: u64,
    mean: f64,
    m2: f64,
    min: f64,
    max: f64,
}

impl Summary {
    fn push(&mut self, x: f64) {
        if self.n == 0 {
            self.min = x;
            self.max = x;
        } else {
            self.min = self.min.min(x);
            self.max = self.max.max(x);
        }
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn min(&self) -> f64 {
        self.min
    }

    fn max(&self) -> f64 {
        self.max
    }

    fn mean(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.mean.clamp(self.min, self.max)
        }
    }

    fn stddev(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / self.n as f64).max(0.0).sqrt()
        }
    }
}

/// Unwraps 32-bit sequence numbers into a monotone 64-bit space.
#[derive(Debug, Clone, Copy)]
struct Unwrapper {
    last_raw: u32,
    last_abs: i64,
}

impl Unwrapper {
    fn new(base: u32) -> Self {
        Self {
            last_raw: base,
            last_abs: 0,
        }
    }

    fn unwrap(&mut self, raw: u32) -> i64 {
        let abs = self.last_abs + raw.wrapping_sub(self.last_raw) as i32 as i64;
        self.last_raw = raw;
        self.last_abs = abs;
        abs
    }
}

/// Disjoint half-open byte ranges keyed by start.
#[derive(Debug, Default)]
struct RangeSet {
    ranges: BTreeMap<i64, i64>,
}

impl RangeSet {
    /// Bytes of `[start, end)` already present.
    fn covered(&self, start: i64, end: i64) -> i64 {
        if end <= start {
            return 0;
        }
        let mut total = 0;
        let first = self.ranges.range(..start).next_back().map(|(s, _)| *s).unwrap_or(start);
        for (&s, &e) in self.ranges.range(first..end) {
            let lo = s.max(start);
            let hi = e.min(end);
            if hi > lo {
                total += hi - lo;
            }
        }
        total
    }

    fn insert(&mut self, mut start: i64, mut end: i64) {
        if end <= start {
            return;
        }
        if let Some((&s, &e)) = self.ranges.range(..=start).next_back() {
            if e >= start {
                start = s;
                end = end.max(e);
                self.ranges.remove(&s);
            }
        }
        let absorbed: Vec<(i64, i64)> = self.ranges.range(start..=end).map(|(s, e)| (*s, *e)).collect();
        for (s, e) in absorbed {
            end = end.max(e);
            self.ranges.remove(&s);
        }
        self.ranges.insert(start, end);
    }

    fn total(&self) -> i64 {
        self.ranges.iter().map(|(s, e)| e - s).sum()
    }

    fn remove_below(&mut self, floor: i64) {
        let below: Vec<(i64, i64)> = self.ranges.range(..floor).map(|(s, e)| (*s, *e)).collect();
        for (s, e) in below {
            self.ranges.remove(&s);
            if e > floor {
                self.ranges.insert(floor, e);
            }
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Side {
    Own,
    Peer,
}

fn merge<'a>(own: &'a [PacketRecord], peer: &'a [PacketRecord]) -> Vec<(Side, &'a PacketRecord)> {
    let mut all: Vec<(Side, &PacketRecord)> = own
        .iter()
        .map(|p| (Side::Own, p))
        .chain(peer.iter().map(|p| (Side::Peer, p)))
        .collect();
    // Stable: equal timestamps keep own packets ahead of the peer's.
    all.sort_by_key(|(_, p)| p.timestamp_us);
    all
}

fn is_pure_ack(p: &PacketRecord) -> bool {
    p.payload_len == 0 && p.has(TcpFlags::ACK) && !p.flags.intersects(TcpFlags::SYN | TcpFlags::FIN | TcpFlags::RST)
}

fn ms(us: u64) -> f64 {
    us as f64 / 1_000.0
}

fn secs(us: u64) -> f64 {
    us as f64 / 1_000_000.0
}

/// Compute the statistics of `packets` (one direction of a connection),
/// using `opposite` for acknowledgment matching. Degenerate inputs yield zeros.
pub fn compute_direction_stats(packets: &[PacketRecord], opposite: &[PacketRecord]) -> DirectionStats {
    let mut st = DirectionStats::default();
    let Some(first) = packets.first() else {
        return st;
    };

    let base = packets
        .iter()
        .find(|p| p.has(TcpFlags::SYN))
        .map(|p| p.seq.wrapping_add(1))
        .unwrap_or(first.seq);
    let max_payload = packets.iter().map(|p| p.payload_len).max().unwrap_or(0);
    let data_count = packets.iter().filter(|p| p.is_data()).count();

    // Volume, flags, segment sizes, advertised window.
    let mut seg = Summary::default();
    let mut nonzero_payload = Summary::default();
    let mut win = Summary::default();
    let (mut total_bytes, mut data_bytes) = (0.0, 0.0);
    let (mut pure_acks, mut pushed, mut urgent) = (0, 0, 0);
    let (mut syn, mut fin, mut rst, mut zero_win) = (0, 0, 0, 0);
    for p in packets {
        let payload = p.payload_len as f64;
        total_bytes += payload;
        seg.push(payload);
        if p.is_data() {
            data_bytes += payload;
            nonzero_payload.push(payload);
        }
        pure_acks += is_pure_ack(p) as u32;
        pushed += p.has(TcpFlags::PSH) as u32;
        urgent += p.has(TcpFlags::URG) as u32;
        syn += p.has(TcpFlags::SYN) as u32;
        fin += p.has(TcpFlags::FIN) as u32;
        rst += p.has(TcpFlags::RST) as u32;
        win.push(p.window as f64);
        if p.window == 0 && !p.has(TcpFlags::RST) {
            zero_win += 1;
        }
    }
    let syn_pkt = packets.iter().find(|p| p.has(TcpFlags::SYN));
    st.set(Stat::TotalPackets, packets.len() as f64);
    st.set(Stat::TotalBytes, total_bytes);
    st.set(Stat::DataPackets, data_count as f64);
    st.set(Stat::DataBytes, data_bytes);
    st.set(Stat::PureAcks, pure_acks as f64);
    st.set(Stat::PushedPackets, pushed as f64);
    st.set(Stat::UrgentPackets, urgent as f64);
    st.set(Stat::SynCount, syn as f64);
    st.set(Stat::FinCount, fin as f64);
    st.set(Stat::RstCount, rst as f64);
    st.set(
        Stat::SackPermitted,
        packets.iter().any(|p| p.has(TcpFlags::SYN) && p.options.sack_permitted) as u8 as f64,
    );
    st.set(
        Stat::WindowScale,
        syn_pkt.and_then(|p| p.options.wscale).unwrap_or(0) as f64,
    );
    st.set(
        Stat::MssRequested,
        syn_pkt.and_then(|p| p.options.mss).unwrap_or(0) as f64,
    );
    st.set_summary(
        &seg,
        Stat::MinSegmentSize,
        Stat::MaxSegmentSize,
        Stat::MeanSegmentSize,
        Some(Stat::StddevSegmentSize),
    );
    st.set(Stat::MaxPayload, max_payload as f64);
    st.set(Stat::MinNonzeroPayload, nonzero_payload.min());
    st.set_summary(&win, Stat::MinWindow, Stat::MaxWindow, Stat::MeanWindow, None);
    st.set(Stat::ZeroWindowCount, zero_win as f64);

    // Inter-packet timing of this side alone.
    let mut ipg = Summary::default();
    let mut max_idle = 0u64;
    for w in packets.windows(2) {
        let gap = w[1].timestamp_us.saturating_sub(w[0].timestamp_us);
        ipg.push(ms(gap));
        max_idle = max_idle.max(gap);
    }
    let last = packets.last().expect("nonempty");
    let elapsed_us = last.timestamp_us.saturating_sub(first.timestamp_us);
    st.set(Stat::ElapsedTime, secs(elapsed_us));
    st.set(Stat::MaxIdle, secs(max_idle));
    st.set(Stat::MeanIpg, ipg.mean());
    st.set(Stat::StddevIpg, ipg.stddev());

    let data_ts: Vec<u64> = packets.iter().filter(|p| p.is_data()).map(|p| p.timestamp_us).collect();
    let origin = first
        .timestamp_us
        .min(opposite.first().map(|p| p.timestamp_us).unwrap_or(u64::MAX));
    if let (Some(&d0), Some(&d1)) = (data_ts.first(), data_ts.last()) {
        st.set(Stat::DataSpan, secs(d1 - d0));
        st.set(Stat::TimeToFirstByte, secs(d0.saturating_sub(origin)));
        st.set(Stat::TimeToLastByte, secs(d1.saturating_sub(origin)));
    }
    let stalls = data_ts.windows(2).filter(|w| w[1] - w[0] >= STALL_THRESHOLD_US).count();
    st.set(Stat::SenderStalls, stalls as f64);

    // Walk both sides in time order.
    let mut seq_unwrap = Unwrapper::new(base);
    let mut ack_unwrap = Unwrapper::new(base);
    let mut seen = RangeSet::default();
    let mut peer_sacked = RangeSet::default();
    let mut tx_count: HashMap<i64, u32> = HashMap::new();
    let mut highest_end: Option<i64> = None;
    let mut data_start: Option<i64> = None;
    let mut peer_ack: Option<i64> = None;
    let mut peer_window: Option<u32> = None;
    let mut fin_rel: Option<i64> = None;

    let (mut retrans_pkts, mut retrans_bytes, mut dup_pkts, mut ooo) = (0u32, 0.0, 0u32, 0u32);
    let mut truncated = 0u32;
    let mut outstanding = Summary::default();
    let mut max_in_flight = 0.0f64;
    let mut turnaround = Summary::default();
    let mut last_peer_ts: Option<u64> = None;
    let mut last_peer_data_ts: Option<u64> = None;
    let mut ack_latency = Summary::default();

    // RTT matching: (end, sent_ts, full_size, valid).
    let mut pending: Vec<(i64, u64, bool, bool)> = Vec::new();
    let mut rtt = Summary::default();
    let mut full_rtt = Summary::default();

    // Duplicate-ACK runs of this side and of the peer.
    let mut own_last_ack: Option<u32> = None;
    let (mut own_dup_run, mut dup_acks, mut triple_dups) = (0u32, 0u32, 0u32);
    let mut peer_last_ack: Option<u32> = None;
    let mut peer_dup_run = 0u32;
    let mut recovery_until: Option<i64> = None;
    let mut timeouts = 0u32;

    let (mut sack_blocks, mut dsack_pkts) = (0u32, 0u32);
    let (mut persist, mut keepalive) = (0u32, 0u32);
    let mut iw_done = false;
    let (mut iw_bytes, mut iw_pkts) = (0.0, 0u32);

    let mut limited_time = 0u64;
    let mut limited = false;
    let mut prev_ts: Option<u64> = None;
    let (first_data_ts, last_data_ts) = (data_ts.first().copied(), data_ts.last().copied());

    let mut zero_window_since: Option<u64> = None;
    let mut zero_window_time = 0u64;

    let tail_end: Option<i64> = {
        let mut u = Unwrapper::new(base);
        packets
            .iter()
            .filter(|p| p.is_data())
            .map(|p| u.unwrap(p.seq) + p.payload_len as i64)
            .max()
    };

    for (side, p) in merge(packets, opposite) {
        // Window-limited time accrues between events inside the data span.
        if let (Some(prev), Some(f), Some(l)) = (prev_ts, first_data_ts, last_data_ts) {
            if limited {
                let lo = prev.max(f);
                let hi = p.timestamp_us.min(l);
                if hi > lo {
                    limited_time += hi - lo;
                }
            }
        }
        prev_ts = Some(p.timestamp_us);

        match side {
            Side::Own => {
                if let Some(t) = last_peer_ts {
                    turnaround.push(ms(p.timestamp_us - t));
                }
                if peer_window == Some(0) && !p.has(TcpFlags::SYN) {
                    persist += 1;
                }
                sack_blocks += p.sack_blocks.len() as u32;
                dsack_pkts += p.options.dsack as u32;

                let rel = seq_unwrap.unwrap(p.seq);
                if p.has(TcpFlags::FIN) {
                    fin_rel.get_or_insert(rel + p.payload_len as i64);
                }
                if !p.flags.intersects(TcpFlags::SYN | TcpFlags::FIN | TcpFlags::RST)
                    && p.payload_len <= 1
                    && highest_end.is_some_and(|h| rel == h - 1)
                {
                    keepalive += 1;
                }

                if p.is_data() {
                    let (s, e) = (rel, rel + p.payload_len as i64);
                    data_start = Some(data_start.map_or(s, |d| d.min(s)));
                    let overlap = seen.covered(s, e);
                    *tx_count.entry(s).or_insert(0) += 1;
                    if overlap > 0 {
                        retrans_pkts += 1;
                        retrans_bytes += p.payload_len as f64;
                        if overlap == e - s {
                            dup_pkts += 1;
                        }
                        // Karn: ambiguous samples are discarded.
                        for entry in pending.iter_mut() {
                            if entry.0 > s && entry.0 - (e - s) < e {
                                entry.3 = false;
                            }
                        }
                        let peer_acked = peer_ack.unwrap_or(i64::MIN);
                        let in_recovery = recovery_until.is_some_and(|r| peer_acked < r);
                        if !in_recovery {
                            recovery_until = highest_end;
                            if peer_dup_run < 3 {
                                timeouts += 1;
                            }
                        }
                    } else {
                        if highest_end.is_some_and(|h| s < h) {
                            ooo += 1;
                        }
                        pending.push((e, p.timestamp_us, p.payload_len == max_payload, true));
                    }
                    if p.payload_len < max_payload && tail_end != Some(e) {
                        truncated += 1;
                    }
                    if !iw_done {
                        iw_bytes += p.payload_len as f64;
                        iw_pkts += 1;
                    }
                    seen.insert(s, e);
                    highest_end = Some(highest_end.map_or(e, |h| h.max(e)));
                }

                if is_pure_ack(p) {
                    if let Some(t) = last_peer_data_ts {
                        ack_latency.push(ms(p.timestamp_us - t));
                    }
                    if own_last_ack == Some(p.ack) {
                        dup_acks += 1;
                        own_dup_run += 1;
                        if own_dup_run == 3 {
                            triple_dups += 1;
                        }
                    } else {
                        own_dup_run = 0;
                    }
                } else if p.payload_len > 0 || p.flags.intersects(TcpFlags::SYN | TcpFlags::FIN) {
                    own_dup_run = 0;
                }
                if p.has(TcpFlags::ACK) {
                    own_last_ack = Some(p.ack);
                }
            }
            Side::Peer => {
                last_peer_ts = Some(p.timestamp_us);
                if p.is_data() {
                    last_peer_data_ts = Some(p.timestamp_us);
                }
                if p.window == 0 && !p.has(TcpFlags::RST) {
                    zero_window_since.get_or_insert(p.timestamp_us);
                } else if let Some(since) = zero_window_since.take() {
                    zero_window_time += p.timestamp_us - since;
                }
                peer_window = Some(p.window);

                if p.has(TcpFlags::ACK) {
                    let a = ack_unwrap.unwrap(p.ack);
                    if is_pure_ack(p) && peer_last_ack == Some(p.ack) {
                        peer_dup_run += 1;
                    } else if peer_last_ack != Some(p.ack) {
                        peer_dup_run = 0;
                    }
                    peer_last_ack = Some(p.ack);
                    peer_ack = Some(peer_ack.map_or(a, |x| x.max(a)));

                    if !iw_done && data_start.is_some_and(|d| a > d) {
                        iw_done = true;
                    }
                    let mut kept = Vec::with_capacity(pending.len());
                    for entry in pending.drain(..) {
                        if entry.0 <= a {
                            if entry.3 {
                                let sample = ms(p.timestamp_us.saturating_sub(entry.1));
                                rtt.push(sample);
                                if entry.2 {
                                    full_rtt.push(sample);
                                }
                            }
                        } else {
                            kept.push(entry);
                        }
                    }
                    pending = kept;
                    if recovery_until.is_some_and(|r| a >= r) {
                        recovery_until = None;
                    }

                    let mut su = ack_unwrap;
                    let skip = usize::from(p.options.dsack);
                    for b in p.sack_blocks.iter().skip(skip) {
                        let l = su.unwrap(b.left);
                        let r = su.unwrap(b.right);
                        peer_sacked.insert(l, r);
                    }
                    peer_sacked.remove_below(peer_ack.unwrap_or(i64::MIN));
                }
            }
        }

        // Sample outstanding bytes once this side has sent data.
        if let (Some(h), Some(d)) = (highest_end, data_start) {
            let acked = peer_ack.unwrap_or(d).max(d);
            let out = (h - acked).max(0) as f64;
            outstanding.push(out);
            let sacked = peer_sacked.covered(acked, h) as f64;
            max_in_flight = max_in_flight.max(out - sacked);
            limited = match peer_window {
                Some(w) => out + max_payload as f64 > w as f64,
                None => false,
            };
        }
    }

    // Bytes the peer acknowledged that never appeared here.
    let missed = match (peer_ack, data_start) {
        (Some(a), Some(d)) => {
            let fin_adj = fin_rel.is_some_and(|f| a > f) as i64;
            let limit = a - fin_adj;
            (limit - d - seen.covered(d, limit)).max(0) as f64
        }
        _ => 0.0,
    };

    st.set(Stat::UniqueBytes, seen.total() as f64);
    st.set(Stat::RetransPackets, retrans_pkts as f64);
    st.set(Stat::RetransBytes, retrans_bytes);
    st.set(Stat::MinTtlProxy, turnaround.min());
    st.set(Stat::MaxTtlProxy, turnaround.max());
    st.set_summary(
        &outstanding,
        Stat::MinOutstanding,
        Stat::MaxOutstanding,
        Stat::MeanOutstanding,
        Some(Stat::StddevOutstanding),
    );
    st.set_summary(&rtt, Stat::RttMin, Stat::RttMax, Stat::RttMean, Some(Stat::RttStddev));
    st.set(Stat::RttSamples, rtt.n as f64);
    st.set(Stat::HandshakeRtt, handshake_rtt(packets, opposite));
    st.set(Stat::FullRttMin, full_rtt.min());
    st.set(Stat::FullRttMax, full_rtt.max());
    st.set(Stat::FullRttMean, full_rtt.mean());
    st.set(Stat::FullRttSamples, full_rtt.n as f64);
    st.set(Stat::DupAcks, dup_acks as f64);
    st.set(Stat::TripleDupAcks, triple_dups as f64);
    st.set(Stat::SackBlocksSent, sack_blocks as f64);
    st.set(Stat::DsackBlocksSent, dsack_pkts as f64);
    st.set(Stat::OutOfOrder, ooo as f64);
    st.set(Stat::InferredTimeouts, timeouts as f64);
    st.set(
        Stat::MaxSegmentRetrans,
        tx_count.values().max().map_or(0, |c| c - 1) as f64,
    );
    st.set(Stat::MissedBytes, missed);
    st.set(Stat::TruncatedPackets, truncated as f64);
    st.set(Stat::DuplicatePackets, dup_pkts as f64);
    if elapsed_us > 0 {
        st.set(Stat::Throughput, data_bytes / secs(elapsed_us));
        st.set(Stat::Goodput, seen.total() as f64 / secs(elapsed_us));
    }
    st.set(Stat::InitialWindowBytes, iw_bytes);
    st.set(Stat::InitialWindowPackets, iw_pkts as f64);
    st.set(Stat::MeanAckLatency, ack_latency.mean());
    if let (Some(f), Some(l)) = (first_data_ts, last_data_ts) {
        if l > f {
            st.set(Stat::RwndLimitedFraction, limited_time as f64 / (l - f) as f64);
        }
    }
    st.set(Stat::MaxInFlight, max_in_flight.max(0.0));
    if let (Some(since), Some(end)) = (zero_window_since, opposite.last()) {
        zero_window_time += end.timestamp_us - since;
    }
    st.set(Stat::ZeroWindowStall, secs(zero_window_time));
    st.set(Stat::PersistEvents, persist as f64);
    st.set(Stat::KeepalivePackets, keepalive as f64);
    st
}

fn handshake_rtt(packets: &[PacketRecord], opposite: &[PacketRecord]) -> f64 {
    let Some(syn) = packets.iter().find(|p| p.has(TcpFlags::SYN)) else {
        return 0.0;
    };
    let reply = if syn.has(TcpFlags::ACK) {
        opposite
            .iter()
            .find(|p| p.timestamp_us >= syn.timestamp_us && p.has(TcpFlags::ACK) && !p.has(TcpFlags::SYN))
    } else {
        opposite
            .iter()
            .find(|p| p.timestamp_us >= syn.timestamp_us && p.has(TcpFlags::SYN | TcpFlags::ACK))
    };
    reply.map_or(0.0, |r| ms(r.timestamp_us - syn.timestamp_us))
}
