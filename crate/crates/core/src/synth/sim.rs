//! Event loop of one simulated connection.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::net::Ipv4Addr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ClientConfig, EventLog, LinkConfig, SimOutput, SynthError, MSS};
use crate::trace::{CapturePoint, PacketRecord, SackBlock, TcpFlags, TcpOptions, TraceFile};

const NS_PER_US: u64 = 1_000;
const NS_PER_MS: u64 = 1_000_000;
const NS_PER_S: u64 = 1_000_000_000;
const NIC_BPS: f64 = 1e9;
const HEADER_BYTES: u32 = 40;
const WSCALE: u8 = 7;
const MAX_WINDOW: u64 = 65_535 << WSCALE;
const SERVER_RCV_BUFFER: u32 = 256 * 1024;
const REQUEST_BYTES: u32 = 120;
const RTO_INITIAL: u64 = NS_PER_S;
const RTO_MIN: u64 = 200 * NS_PER_MS;
const RTO_MAX: u64 = 60 * NS_PER_S;
const STALL_NS: u64 = 200 * NS_PER_MS;
const DUP_THRESH: u32 = 3;
const MAX_SACK_BLOCKS: usize = 3;
const TIME_LIMIT_S: u64 = 3_600;

const CLIENT_IP: Ipv4Addr = Ipv4Addr::new(10, 0, 0, 2);
const SERVER_IP: Ipv4Addr = Ipv4Addr::new(10, 0, 1, 1);
const SERVER_PORT: u16 = 80;

#[derive(Debug, Clone)]
struct Seg {
    from_client: bool,
    seq: u32,
    ack: u32,
    flags: TcpFlags,
    payload: u32,
    window: u32,
    sack: Vec<SackBlock>,
    opts: TcpOptions,
    /// Index of the server data segment carried, if any.
    data: Option<usize>,
    window_update: bool,
}

impl Seg {
    fn control(from_client: bool, seq: u32, ack: u32, flags: TcpFlags, window: u32) -> Self {
        Seg {
            from_client,
            seq,
            ack,
            flags,
            payload: 0,
            window,
            sack: Vec::new(),
            opts: TcpOptions::default(),
            data: None,
            window_update: false,
        }
    }

    fn wire_bytes(&self) -> u32 {
        self.payload + HEADER_BYTES
    }
}

#[derive(Debug)]
enum Ev {
    ArriveClient(Seg),
    ArriveServer(Seg),
    ClientSend(Seg),
    ServerProcess(Seg),
    Rto(u64),
    WindowCheck,
}

struct Scheduled {
    time: u64,
    order: u64,
    ev: Ev,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.order) == (other.time, other.order)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.order).cmp(&(self.time, self.order))
    }
}

/// One direction of the bottleneck: FIFO drop-tail queue feeding a serial link.
struct Link {
    bytes_per_ns: f64,
    delay_ns: u64,
    free_at: u64,
    departures: VecDeque<u64>,
    limit: usize,
}

impl Link {
    fn new(cfg: &LinkConfig) -> Self {
        Link {
            bytes_per_ns: cfg.bandwidth_bps / 8e9,
            delay_ns: (cfg.one_way_delay_ms * NS_PER_MS as f64).round() as u64,
            free_at: 0,
            departures: VecDeque::new(),
            limit: cfg.queue_limit,
        }
    }

    fn serialization(&self, bytes: u32) -> u64 {
        (bytes as f64 / self.bytes_per_ns).ceil() as u64
    }

    /// Arrival time at the far end, or `None` on queue overflow.
    fn transmit(&mut self, t: u64, bytes: u32, droppable: bool) -> Option<u64> {
        while self.departures.front().is_some_and(|&d| d <= t) {
            self.departures.pop_front();
        }
        if droppable && self.departures.len() >= self.limit {
            return None;
        }
        let done = self.free_at.max(t) + self.serialization(bytes);
        self.free_at = done;
        self.departures.push_back(done);
        Some(done + self.delay_ns)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ClientPhase {
    SynSent,
    Established,
    FinSent,
    Closed,
}

struct Client {
    cfg: ClientConfig,
    port: u16,
    isn: u32,
    server_isn: u32,
    phase: ClientPhase,
    received: Vec<bool>,
    rcv_nxt: usize,
    recent: Vec<usize>,
    unread: f64,
    unread_at: u64,
    ooo_bytes: u64,
    right_edge: u64,
    fin_received: bool,
    last_emit: u64,
    update_pending: bool,
}

struct Server {
    isn: u32,
    client_isn: u32,
    established: bool,
    transferring: bool,
    synack_at: u64,
    sack: bool,
    snd_una: usize,
    snd_nxt: usize,
    snd_max: usize,
    cwnd: f64,
    ssthresh: f64,
    dupacks: u32,
    in_recovery: bool,
    recover: usize,
    rescue_sent: bool,
    sacked: Vec<bool>,
    lost: Vec<bool>,
    retransmitted: Vec<bool>,
    ever_retransmitted: Vec<bool>,
    sent_at: Vec<u64>,
    rwnd: u64,
    srtt: Option<f64>,
    rttvar: f64,
    rto: u64,
    rto_gen: u64,
    rto_armed: bool,
    fin_sent: bool,
    closed: bool,
    last_proc: u64,
    last_data_tx: Option<u64>,
}

struct Sim<'a> {
    link_cfg: &'a LinkConfig,
    rng: ChaCha8Rng,
    heap: BinaryHeap<Scheduled>,
    order: u64,
    now: u64,
    down: Link,
    up: Link,
    nic_free: u64,
    client_trace: Vec<(u64, u64, PacketRecord)>,
    server_trace: Vec<(u64, u64, PacketRecord)>,
    client: Client,
    server: Server,
    log: EventLog,
    size: u64,
    nsegs: usize,
}

fn seg_start(k: usize) -> u64 {
    k as u64 * MSS as u64
}

impl<'a> Sim<'a> {
    fn seg_end(&self, k: usize) -> u64 {
        (seg_start(k) + MSS as u64).min(self.size)
    }

    fn seg_len(&self, k: usize) -> u32 {
        (self.seg_end(k) - seg_start(k)) as u32
    }

    /// Byte offset of the first unreceived byte at the client.
    fn client_rcv_bytes(&self) -> u64 {
        if self.client.rcv_nxt >= self.nsegs {
            self.size
        } else {
            seg_start(self.client.rcv_nxt)
        }
    }

    fn schedule(&mut self, time: u64, ev: Ev) {
        self.order += 1;
        self.heap.push(Scheduled {
            time,
            order: self.order,
            ev,
        });
    }

    fn record(&mut self, client_side: bool, t: u64, s: &Seg) {
        let (src, dst, sp, dp) = if s.from_client {
            (CLIENT_IP, SERVER_IP, self.client.port, SERVER_PORT)
        } else {
            (SERVER_IP, CLIENT_IP, SERVER_PORT, self.client.port)
        };
        let rec = PacketRecord {
            timestamp_us: t / NS_PER_US,
            src,
            dst,
            src_port: sp,
            dst_port: dp,
            seq: s.seq,
            ack: s.ack,
            flags: s.flags,
            payload_len: s.payload,
            window: s.window,
            sack_blocks: s.sack.clone(),
            options: s.opts,
        };
        self.order += 1;
        if client_side {
            self.client_trace.push((t, self.order, rec));
        } else {
            self.server_trace.push((t, self.order, rec));
        }
    }

    fn client_jitter(&mut self) -> u64 {
        self.rng.gen_range(20 * NS_PER_US..=120 * NS_PER_US)
    }

    fn server_jitter(&mut self) -> u64 {
        self.rng.gen_range(5 * NS_PER_US..=30 * NS_PER_US)
    }

    fn client_emit(&mut self, s: Seg) {
        let t = (self.now + self.client_jitter()).max(self.client.last_emit);
        self.client.last_emit = t;
        self.schedule(t, Ev::ClientSend(s));
    }

    fn server_emit(&mut self, s: Seg) {
        let start = self.now.max(self.nic_free);
        self.nic_free = start + (s.wire_bytes() as f64 * 8e9 / NIC_BPS).ceil() as u64;
        self.record(false, start, &s);
        let is_data = s.payload > 0;
        if is_data {
            self.log.data_packets_sent += 1;
            if self.link_cfg.loss_rate > 0.0 && self.rng.gen_bool(self.link_cfg.loss_rate) {
                self.log.injected_losses += 1;
                return;
            }
        }
        let Some(mut arrive) = self.down.transmit(self.nic_free, s.wire_bytes(), is_data) else {
            self.log.queue_drops += 1;
            return;
        };
        if is_data && self.link_cfg.reorder_rate > 0.0 && self.rng.gen_bool(self.link_cfg.reorder_rate) {
            let unit = self.down.serialization(MSS + HEADER_BYTES);
            arrive += self.rng.gen_range(unit..=4 * unit);
            self.log.reordered += 1;
        }
        if is_data {
            self.log.data_packets_delivered += 1;
        }
        self.schedule(arrive, Ev::ArriveClient(s));
    }

    // ---- client -------------------------------------------------------

    fn client_window(&mut self) -> u32 {
        let c = &mut self.client;
        let drained = self.down.bytes_per_ns * (self.now - c.unread_at) as f64;
        c.unread = (c.unread - drained).max(0.0);
        c.unread_at = self.now;
        let rcv = if c.rcv_nxt >= self.nsegs {
            self.size
        } else {
            seg_start(c.rcv_nxt)
        };
        let free = (c.cfg.read_buffer as f64 - c.unread - c.ooo_bytes as f64).max(0.0) as u64;
        c.right_edge = c.right_edge.max(rcv + free);
        let win = ((c.right_edge - rcv) & !127).min(MAX_WINDOW);
        c.right_edge = rcv + win;
        win as u32
    }

    fn update_target(&self) -> u32 {
        ((2 * MSS).min(self.client.cfg.read_buffer)) & !127
    }

    fn client_ack(&mut self, sack: Vec<SackBlock>, dsack: bool, window_update: bool) -> Seg {
        let window = self.client_window();
        let ack = self
            .client
            .server_isn
            .wrapping_add(1)
            .wrapping_add(self.client_rcv_bytes() as u32)
            + self.client.fin_received as u32;
        let mut s = Seg::control(
            true,
            self.client.isn.wrapping_add(1 + REQUEST_BYTES),
            ack,
            TcpFlags::ACK,
            window,
        );
        s.sack = sack;
        s.opts.dsack = dsack;
        s.window_update = window_update;
        if window < self.update_target() && !self.client.update_pending {
            self.client.update_pending = true;
            let wait = ((self.update_target() - window) as f64 / self.down.bytes_per_ns).ceil() as u64;
            self.schedule(self.now + wait.max(NS_PER_US), Ev::WindowCheck);
        }
        s
    }

    fn block_of(&self, k: usize) -> SackBlock {
        let rc = &self.client.received;
        let mut lo = k;
        while lo > self.client.rcv_nxt && rc[lo - 1] {
            lo -= 1;
        }
        let mut hi = k + 1;
        while hi < self.nsegs && rc[hi] {
            hi += 1;
        }
        let base = self.client.server_isn.wrapping_add(1);
        SackBlock::new(
            base.wrapping_add(seg_start(lo) as u32),
            base.wrapping_add(self.seg_end(hi - 1) as u32),
        )
    }

    fn client_on_data(&mut self, k: usize) {
        let len = self.seg_len(k) as u64;
        let dup = self.client.received[k];
        if dup {
            self.log.duplicates_received += 1;
        } else {
            self.client_window();
            self.client.received[k] = true;
            if k == self.client.rcv_nxt {
                while self.client.rcv_nxt < self.nsegs && self.client.received[self.client.rcv_nxt] {
                    let j = self.client.rcv_nxt;
                    let l = self.seg_len(j) as u64;
                    if j != k {
                        self.client.ooo_bytes -= l;
                    }
                    self.client.unread += l as f64;
                    self.client.rcv_nxt += 1;
                }
            } else {
                self.client.ooo_bytes += len;
                self.client.recent.retain(|&r| r != k);
                self.client.recent.push(k);
            }
        }
        let rcv_nxt = self.client.rcv_nxt;
        self.client.recent.retain(|&r| r >= rcv_nxt);

        let mut blocks = Vec::new();
        let mut dsack = false;
        if self.client.cfg.sack_enabled {
            if dup && self.client.cfg.dsack_enabled {
                let base = self.client.server_isn.wrapping_add(1);
                blocks.push(SackBlock::new(
                    base.wrapping_add(seg_start(k) as u32),
                    base.wrapping_add(self.seg_end(k) as u32),
                ));
                if k > rcv_nxt {
                    blocks.push(self.block_of(k));
                }
                dsack = true;
                self.log.dsack_sent += 1;
            }
            for i in (0..self.client.recent.len()).rev() {
                if blocks.len() >= MAX_SACK_BLOCKS {
                    break;
                }
                let b = self.block_of(self.client.recent[i]);
                if !blocks.iter().skip(dsack as usize).any(|x| *x == b) {
                    blocks.push(b);
                }
            }
            blocks.truncate(MAX_SACK_BLOCKS);
        }
        let ack = self.client_ack(blocks, dsack, false);
        self.client_emit(ack);
    }

    fn client_on_arrival(&mut self, s: Seg) {
        self.record(true, self.now, &s);
        match self.client.phase {
            ClientPhase::SynSent if s.flags.contains(TcpFlags::SYN | TcpFlags::ACK) => {
                self.client.server_isn = s.seq;
                self.client.phase = ClientPhase::Established;
                self.client.right_edge = 0;
                let ack = self.client_ack(Vec::new(), false, false);
                let mut hs = ack.clone();
                hs.seq = self.client.isn.wrapping_add(1);
                self.client_emit(hs);
                let mut req = ack;
                req.seq = self.client.isn.wrapping_add(1);
                req.payload = REQUEST_BYTES;
                req.flags = TcpFlags::ACK | TcpFlags::PSH;
                self.client_emit(req);
            }
            ClientPhase::Established => {
                if let Some(k) = s.data {
                    self.client_on_data(k);
                } else if s.flags.contains(TcpFlags::FIN) {
                    self.client.fin_received = true;
                    let mut fin = self.client_ack(Vec::new(), false, false);
                    fin.flags |= TcpFlags::FIN;
                    self.client.phase = ClientPhase::FinSent;
                    self.client_emit(fin);
                }
            }
            ClientPhase::FinSent if s.flags.contains(TcpFlags::ACK) && s.data.is_none() => {
                self.client.phase = ClientPhase::Closed;
            }
            _ => {
                if let Some(k) = s.data {
                    if self.client.phase == ClientPhase::Established {
                        self.client_on_data(k);
                    }
                }
            }
        }
    }

    fn client_window_check(&mut self) {
        self.client.update_pending = false;
        if self.client.phase != ClientPhase::Established {
            return;
        }
        let win = self.client_window();
        if win >= self.update_target() {
            self.log.window_updates += 1;
            let ack = self.client_ack(Vec::new(), false, true);
            self.client_emit(ack);
        } else if self.client.unread > 0.0 {
            self.client.update_pending = true;
            let wait = (self.client.unread / self.down.bytes_per_ns).ceil() as u64;
            self.schedule(self.now + wait.max(NS_PER_US), Ev::WindowCheck);
        }
    }

    fn client_send(&mut self, s: Seg) {
        self.record(true, self.now, &s);
        let arrive = self.up.transmit(self.now, s.wire_bytes(), false).expect("undroppable");
        self.schedule(arrive, Ev::ArriveServer(s));
    }

    // ---- server -------------------------------------------------------

    fn server_ack_field(&self) -> u32 {
        let mut a = self.server.client_isn.wrapping_add(1 + REQUEST_BYTES);
        if self.server.closed {
            a = a.wrapping_add(1);
        }
        a
    }

    fn send_segment(&mut self, k: usize) {
        if k < self.server.snd_max {
            self.log.retransmissions += 1;
            self.server.ever_retransmitted[k] = true;
        }
        if let Some(last) = self.server.last_data_tx {
            if self.now - last >= STALL_NS {
                self.log.stalls += 1;
            }
        }
        self.server.last_data_tx = Some(self.now);
        self.server.sent_at[k] = self.now;
        self.server.snd_max = self.server.snd_max.max(k + 1);
        let mut flags = TcpFlags::ACK;
        if k + 1 == self.nsegs {
            flags |= TcpFlags::PSH;
        }
        let mut s = Seg::control(
            false,
            self.server.isn.wrapping_add(1).wrapping_add(seg_start(k) as u32),
            self.server_ack_field(),
            flags,
            SERVER_RCV_BUFFER,
        );
        s.payload = self.seg_len(k);
        s.data = Some(k);
        self.server_emit(s);
        if !self.server.rto_armed {
            self.arm_rto();
        }
    }

    fn arm_rto(&mut self) {
        self.server.rto_gen += 1;
        self.server.rto_armed = true;
        let (gen, rto) = (self.server.rto_gen, self.server.rto);
        self.schedule(self.now + rto, Ev::Rto(gen));
    }

    fn rtt_sample(&mut self, sample_ns: u64) {
        let r = sample_ns as f64;
        let sv = &mut self.server;
        match sv.srtt {
            None => {
                sv.srtt = Some(r);
                sv.rttvar = r / 2.0;
            }
            Some(srtt) => {
                sv.rttvar = 0.75 * sv.rttvar + 0.25 * (srtt - r).abs();
                sv.srtt = Some(0.875 * srtt + 0.125 * r);
            }
        }
        let rto = sv.srtt.unwrap() + (4.0 * sv.rttvar).max(NS_PER_MS as f64);
        sv.rto = (rto as u64).clamp(RTO_MIN, RTO_MAX);
    }

    /// Limit on bytes beyond `snd_una` from the peer window and the send buffer.
    fn send_limit(&self) -> u64 {
        self.server.rwnd.min(self.client.cfg.write_buffer as u64)
    }

    fn mark_lost(&mut self) {
        let sv = &mut self.server;
        let mut sacked_above = 0;
        for k in (sv.snd_una..sv.snd_max).rev() {
            if sv.sacked[k] {
                sacked_above += 1;
            } else if sacked_above >= DUP_THRESH {
                sv.lost[k] = true;
            }
        }
    }

    fn pipe(&self) -> usize {
        let sv = &self.server;
        (sv.snd_una..sv.snd_max)
            .filter(|&k| !sv.sacked[k])
            .map(|k| (!sv.lost[k]) as usize + sv.retransmitted[k] as usize)
            .sum()
    }

    fn try_send(&mut self) {
        if !self.server.transferring {
            return;
        }
        loop {
            let una_bytes = seg_start(self.server.snd_una);
            let limit = una_bytes + self.send_limit();
            let cwnd = self.server.cwnd.floor().max(1.0) as usize;
            if self.server.in_recovery && self.server.sack {
                if self.pipe() >= cwnd {
                    break;
                }
                let sv = &self.server;
                let hole = (sv.snd_una..sv.snd_max).find(|&k| sv.lost[k] && !sv.retransmitted[k] && !sv.sacked[k]);
                if let Some(k) = hole {
                    self.server.retransmitted[k] = true;
                    self.send_segment(k);
                    continue;
                }
                let k = self.server.snd_nxt;
                if k < self.nsegs && self.seg_end(k) <= limit {
                    self.server.snd_nxt += 1;
                    self.send_segment(k);
                    continue;
                }
                // No new data: retransmit outstanding unSACKed segments, then
                // one rescue retransmission of the highest one.
                let sv = &self.server;
                let next = (sv.snd_una..sv.snd_max).find(|&k| !sv.retransmitted[k] && !sv.sacked[k]);
                if let Some(k) = next {
                    self.server.retransmitted[k] = true;
                    self.send_segment(k);
                    continue;
                }
                if !sv.rescue_sent {
                    if let Some(k) = (sv.snd_una..sv.snd_max).rev().find(|&k| !sv.sacked[k]) {
                        self.server.rescue_sent = true;
                        self.send_segment(k);
                    }
                }
                break;
            }
            let k = self.server.snd_nxt;
            if k >= self.nsegs || k - self.server.snd_una >= cwnd || self.seg_end(k) > limit {
                break;
            }
            self.server.snd_nxt += 1;
            self.send_segment(k);
        }
        if self.server.snd_una >= self.nsegs && !self.server.fin_sent {
            self.server.fin_sent = true;
            let s = Seg::control(
                false,
                self.server.isn.wrapping_add(1).wrapping_add(self.size as u32),
                self.server_ack_field(),
                TcpFlags::FIN | TcpFlags::ACK,
                SERVER_RCV_BUFFER,
            );
            self.server_emit(s);
        }
    }

    fn enter_recovery(&mut self) {
        self.log.fast_retransmits += 1;
        let md = self.client.cfg.cc_profile.decrease();
        let sv = &mut self.server;
        sv.ssthresh = (sv.cwnd * md).max(2.0);
        sv.cwnd = sv.ssthresh;
        sv.recover = sv.snd_max;
        sv.in_recovery = true;
        sv.rescue_sent = false;
        if sv.sack {
            let una = sv.snd_una;
            sv.lost[una] = true;
            self.mark_lost();
            self.server.retransmitted[una] = true;
            self.send_segment(una);
        } else {
            sv.snd_nxt = sv.snd_una;
        }
    }

    fn on_timeout(&mut self) {
        self.log.timeouts += 1;
        let md = self.client.cfg.cc_profile.decrease();
        let sv = &mut self.server;
        sv.rto_armed = false;
        sv.ssthresh = (sv.cwnd * md).max(2.0);
        sv.cwnd = 1.0;
        sv.in_recovery = false;
        sv.dupacks = 0;
        // SACK information is discarded after a timeout.
        for k in sv.snd_una..sv.snd_max {
            sv.sacked[k] = false;
            sv.lost[k] = false;
            sv.retransmitted[k] = false;
        }
        sv.recover = sv.snd_max;
        sv.snd_nxt = sv.snd_una;
        sv.rto = (sv.rto * 2).min(RTO_MAX);
        self.try_send();
        if self.server.snd_una < self.server.snd_max && !self.server.rto_armed {
            self.arm_rto();
        }
    }

    fn server_on_ack(&mut self, s: &Seg) {
        let base = self.server.isn.wrapping_add(1);
        let ack_off = s.ack.wrapping_sub(base) as u64;
        if self.server.fin_sent && ack_off > self.size {
            return;
        }
        self.server.rwnd = s.window as u64;
        if self.server.sack {
            for b in s.sack.iter().skip(s.opts.dsack as usize) {
                let l = b.left.wrapping_sub(base) as u64;
                let r = b.right.wrapping_sub(base) as u64;
                let first = l.div_ceil(MSS as u64) as usize;
                for k in first..self.server.snd_max {
                    if self.seg_end(k) > r {
                        break;
                    }
                    self.server.sacked[k] = true;
                }
            }
        }
        let acked = if ack_off >= self.size {
            self.nsegs
        } else {
            (ack_off / MSS as u64) as usize
        };
        if acked > self.server.snd_una {
            let newly = acked - self.server.snd_una;
            let last = acked - 1;
            if !self.server.ever_retransmitted[last] {
                let sample = self.now - self.server.sent_at[last];
                self.rtt_sample(sample);
            }
            let sv = &mut self.server;
            sv.snd_una = acked;
            sv.snd_nxt = sv.snd_nxt.max(acked);
            sv.dupacks = 0;
            let ai = self.client.cfg.cc_profile.increase();
            if sv.in_recovery {
                if sv.snd_una >= sv.recover {
                    sv.in_recovery = false;
                    sv.cwnd = sv.ssthresh;
                }
            } else if sv.cwnd < sv.ssthresh {
                sv.cwnd = (sv.cwnd + newly as f64).min(sv.ssthresh.max(sv.cwnd));
            } else {
                sv.cwnd += ai * newly as f64 / sv.cwnd;
            }
            if sv.snd_una < sv.snd_max {
                self.arm_rto();
            } else {
                sv.rto_armed = false;
                sv.rto_gen += 1;
            }
        } else if acked == self.server.snd_una
            && self.server.snd_max > self.server.snd_una
            && s.payload == 0
            && !s.window_update
        {
            self.server.dupacks += 1;
            if !self.server.in_recovery
                && self.server.dupacks >= DUP_THRESH
                && self.server.snd_una >= self.server.recover
            {
                self.enter_recovery();
            }
        }
        if self.server.in_recovery && self.server.sack {
            self.mark_lost();
        }
        self.try_send();
    }

    fn server_process(&mut self, s: Seg) {
        if s.flags.contains(TcpFlags::SYN) {
            self.server.client_isn = s.seq;
            self.server.sack = s.opts.sack_permitted;
            self.server.synack_at = self.now;
            let mut sa = Seg::control(
                false,
                self.server.isn,
                s.seq.wrapping_add(1),
                TcpFlags::SYN | TcpFlags::ACK,
                SERVER_RCV_BUFFER.min(65_535),
            );
            sa.opts = TcpOptions {
                mss: Some(MSS as u16),
                wscale: Some(WSCALE),
                sack_permitted: s.opts.sack_permitted,
                dsack: false,
            };
            self.server_emit(sa);
            return;
        }
        if !self.server.established {
            self.server.established = true;
            let sample = self.now - self.server.synack_at;
            self.rtt_sample(sample);
            self.server.rwnd = s.window as u64;
        }
        if s.payload > 0 && !self.server.transferring {
            self.server.transferring = true;
            self.server.rwnd = s.window as u64;
            self.try_send();
            return;
        }
        if s.flags.contains(TcpFlags::FIN) {
            self.server.closed = true;
            let ack = Seg::control(
                false,
                self.server.isn.wrapping_add(2).wrapping_add(self.size as u32),
                self.server_ack_field(),
                TcpFlags::ACK,
                SERVER_RCV_BUFFER,
            );
            self.server_emit(ack);
            return;
        }
        if self.server.transferring {
            self.server_on_ack(&s);
        }
    }

    fn run(&mut self) -> Result<(), SynthError> {
        let mut syn = Seg::control(
            true,
            self.client.isn,
            0,
            TcpFlags::SYN,
            self.client.cfg.read_buffer.min(65_535),
        );
        syn.opts = TcpOptions {
            mss: Some(MSS as u16),
            wscale: Some(WSCALE),
            sack_permitted: self.client.cfg.sack_enabled,
            dsack: false,
        };
        self.schedule(0, Ev::ClientSend(syn));

        while let Some(Scheduled { time, ev, .. }) = self.heap.pop() {
            if time > TIME_LIMIT_S * NS_PER_S {
                return Err(SynthError::Stalled(TIME_LIMIT_S));
            }
            self.now = time;
            match ev {
                Ev::ClientSend(s) => self.client_send(s),
                Ev::ArriveClient(s) => self.client_on_arrival(s),
                Ev::ArriveServer(s) => {
                    self.record(false, self.now, &s);
                    let t = (self.now + self.server_jitter()).max(self.server.last_proc);
                    self.server.last_proc = t;
                    self.schedule(t, Ev::ServerProcess(s));
                }
                Ev::ServerProcess(s) => self.server_process(s),
                Ev::Rto(gen) => {
                    if gen == self.server.rto_gen && self.server.rto_armed {
                        self.on_timeout();
                    }
                }
                Ev::WindowCheck => self.client_window_check(),
            }
            if self.client.phase == ClientPhase::Closed {
                break;
            }
        }
        if self.client.phase != ClientPhase::Closed {
            return Err(SynthError::Stalled(self.now / NS_PER_S));
        }
        self.log.duration_us = self.now / NS_PER_US;
        Ok(())
    }
}

fn into_trace(cp: CapturePoint, mut recs: Vec<(u64, u64, PacketRecord)>) -> Result<TraceFile, SynthError> {
    recs.sort_by_key(|(t, o, _)| (*t, *o));
    Ok(TraceFile::new(cp, recs.into_iter().map(|(_, _, r)| r).collect())?)
}

/// Simulate one server-to-client bulk transfer and capture it at both ends.
pub fn simulate_connection(
    link: &LinkConfig,
    client: &ClientConfig,
    transfer_size: u64,
    seed: u64,
) -> Result<SimOutput, SynthError> {
    link.validate()?;
    client.validate()?;
    if transfer_size == 0 {
        return Err(SynthError::InfeasibleScenario("transfer size must be positive".into()));
    }
    if transfer_size > (u32::MAX >> 2) as u64 {
        return Err(SynthError::InfeasibleScenario(format!(
            "transfer size {transfer_size} too large"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nsegs = transfer_size.div_ceil(MSS as u64) as usize;
    let isn_room = u32::MAX - (transfer_size as u32) - (1 << 20);
    let client_isn = rng.gen_range(0..isn_room);
    let server_isn = rng.gen_range(0..isn_room);
    let port = rng.gen_range(32_768..61_000);
    let mut sim = Sim {
        link_cfg: link,
        rng,
        heap: BinaryHeap::new(),
        order: 0,
        now: 0,
        down: Link::new(link),
        up: Link::new(link),
        nic_free: 0,
        client_trace: Vec::new(),
        server_trace: Vec::new(),
        client: Client {
            cfg: *client,
            port,
            isn: client_isn,
            server_isn: 0,
            phase: ClientPhase::SynSent,
            received: vec![false; nsegs],
            rcv_nxt: 0,
            recent: Vec::new(),
            unread: 0.0,
            unread_at: 0,
            ooo_bytes: 0,
            right_edge: 0,
            fin_received: false,
            last_emit: 0,
            update_pending: false,
        },
        server: Server {
            isn: server_isn,
            client_isn: 0,
            established: false,
            transferring: false,
            synack_at: 0,
            sack: false,
            snd_una: 0,
            snd_nxt: 0,
            snd_max: 0,
            cwnd: client.cc_profile.initial_window(),
            ssthresh: f64::MAX,
            dupacks: 0,
            in_recovery: false,
            recover: 0,
            rescue_sent: false,
            sacked: vec![false; nsegs],
            lost: vec![false; nsegs],
            retransmitted: vec![false; nsegs],
            ever_retransmitted: vec![false; nsegs],
            sent_at: vec![0; nsegs],
            rwnd: 0,
            srtt: None,
            rttvar: 0.0,
            rto: RTO_INITIAL,
            rto_gen: 0,
            rto_armed: false,
            fin_sent: false,
            closed: false,
            last_proc: 0,
            last_data_tx: None,
        },
        log: EventLog::default(),
        size: transfer_size,
        nsegs,
    };
    sim.run()?;
    let Sim {
        client_trace,
        server_trace,
        log,
        ..
    } = sim;
    Ok(SimOutput {
        client: into_trace(CapturePoint::Client, client_trace)?,
        server: into_trace(CapturePoint::Server, server_trace)?,
        log,
    })
}
