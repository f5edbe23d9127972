//! Versioned catalogue of per-direction statistics.
//!
//! Index order is part of the model format: a trained bundle stores feature
//! indices, so reordering or renaming anything here requires a new
//! [`CATALOGUE_VERSION`].

pub const CATALOGUE_VERSION: &str = "tcpstat-v1";
pub const STATS_PER_DIRECTION: usize = 70;
pub const STATS_PER_TRACE: usize = 2 * STATS_PER_DIRECTION;
pub const SIGNATURE_DIM: usize = 2 * STATS_PER_TRACE;

macro_rules! catalogue {
    ($( $group:literal => [ $( $variant:ident = $name:literal : $doc:literal ),* $(,)? ] ),* $(,)?) => {
        /// One per-direction statistic. Discriminants are catalogue indices.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum Stat {
            $( $( #[doc = $doc] $variant, )* )*
        }

        impl Stat {
            pub const ALL: [Stat; STATS_PER_DIRECTION] = [ $( $( Stat::$variant, )* )* ];

            pub fn name(self) -> &'static str {
                match self { $( $( Stat::$variant => $name, )* )* }
            }

            pub fn group(self) -> &'static str {
                match self { $( $( Stat::$variant => $group, )* )* }
            }

            pub fn description(self) -> &'static str {
                match self { $( $( Stat::$variant => $doc, )* )* }
            }
        }
    };
}

catalogue! {
    "volume" => [
        TotalPackets = "total_packets": "packets sent in this direction",
        TotalBytes = "total_bytes": "payload bytes over all packets, retransmissions included",
        UniqueBytes = "unique_bytes": "distinct payload bytes covered by data segments",
        DataPackets = "data_packets": "packets carrying payload",
        DataBytes = "data_bytes": "payload bytes including retransmissions",
        RetransPackets = "retrans_packets": "data packets overlapping bytes already seen",
        RetransBytes = "retrans_bytes": "payload bytes of retransmitted packets",
        PureAcks = "pure_acks": "ACK-only packets without payload, SYN, FIN or RST",
        PushedPackets = "pushed_packets": "packets with PSH set",
        UrgentPackets = "urgent_packets": "packets with URG set",
    ],
    "handshake" => [
        SynCount = "syn_count": "packets with SYN set",
        FinCount = "fin_count": "packets with FIN set",
        RstCount = "rst_count": "packets with RST set",
        SackPermitted = "sack_permitted": "1 if a SYN from this side offered SACK",
        WindowScale = "window_scale": "window-scale shift offered in the SYN, 0 if absent",
        MssRequested = "mss_requested": "MSS option value in the SYN, 0 if absent",
        MinTtlProxy = "min_ttl_proxy_ms": "minimum turnaround from an opposite-side packet to the next packet of this side",
        MaxTtlProxy = "max_ttl_proxy_ms": "maximum turnaround from an opposite-side packet to the next packet of this side",
    ],
    "segment" => [
        MaxSegmentSize = "max_segment_size": "largest segment payload over all packets",
        MinSegmentSize = "min_segment_size": "smallest segment payload over all packets",
        MeanSegmentSize = "mean_segment_size": "mean segment payload over all packets",
        StddevSegmentSize = "stddev_segment_size": "population standard deviation of segment payload",
        MaxPayload = "max_payload": "largest payload",
        MinNonzeroPayload = "min_nonzero_payload": "smallest nonzero payload",
    ],
    "window" => [
        MaxWindow = "max_window": "largest advertised receive window",
        MinWindow = "min_window": "smallest advertised receive window",
        MeanWindow = "mean_window": "mean advertised receive window",
        ZeroWindowCount = "zero_window_count": "advertisements of a zero window",
        MaxOutstanding = "max_outstanding": "largest highest-sent minus highest-acked byte count",
        MinOutstanding = "min_outstanding": "smallest outstanding byte count",
        MeanOutstanding = "mean_outstanding": "mean outstanding bytes sampled at every packet event",
        StddevOutstanding = "stddev_outstanding": "standard deviation of outstanding bytes",
    ],
    "rtt" => [
        RttMin = "rtt_min_ms": "minimum data-to-ACK round trip",
        RttMax = "rtt_max_ms": "maximum data-to-ACK round trip",
        RttMean = "rtt_mean_ms": "mean data-to-ACK round trip",
        RttStddev = "rtt_stddev_ms": "standard deviation of round-trip samples",
        RttSamples = "rtt_samples": "round-trip samples (retransmitted segments excluded)",
        HandshakeRtt = "handshake_rtt_ms": "SYN to SYN-ACK, or SYN-ACK to ACK, as seen here",
        FullRttMin = "full_rtt_min_ms": "minimum round trip of full-sized segments",
        FullRttMax = "full_rtt_max_ms": "maximum round trip of full-sized segments",
        FullRttMean = "full_rtt_mean_ms": "mean round trip of full-sized segments",
        FullRttSamples = "full_rtt_samples": "round-trip samples of full-sized segments",
    ],
    "loss" => [
        DupAcks = "dup_acks": "pure ACKs repeating the previous acknowledgment number",
        TripleDupAcks = "triple_dup_acks": "runs of duplicate ACKs reaching three",
        SackBlocksSent = "sack_blocks_sent": "SACK blocks carried",
        DsackBlocksSent = "dsack_blocks_sent": "packets whose first SACK block reports a duplicate",
        OutOfOrder = "out_of_order_packets": "new data arriving below the highest sequence seen",
        InferredTimeouts = "inferred_timeouts": "recovery episodes not preceded by three duplicate ACKs",
        MaxSegmentRetrans = "max_segment_retransmits": "most retransmissions of one segment",
        MissedBytes = "missed_bytes": "bytes acknowledged but never seen in this trace",
        TruncatedPackets = "truncated_packets": "sub-maximal data segments other than the tail segment",
        DuplicatePackets = "duplicate_packets": "data packets wholly covered by bytes already seen",
    ],
    "timing" => [
        ElapsedTime = "elapsed_s": "first to last packet of this side",
        MaxIdle = "max_idle_s": "longest gap between consecutive packets",
        Throughput = "throughput_Bps": "payload bytes per second over the elapsed time",
        Goodput = "goodput_Bps": "unique bytes per second over the elapsed time",
        InitialWindowBytes = "initial_window_bytes": "payload sent before the first ACK of this side's data",
        InitialWindowPackets = "initial_window_packets": "data packets sent before the first ACK of this side's data",
        DataSpan = "data_span_s": "first to last data packet",
        MeanAckLatency = "mean_ack_latency_ms": "mean delay from an opposite data packet to the next pure ACK",
        MeanIpg = "mean_ipg_ms": "mean inter-packet gap",
        StddevIpg = "stddev_ipg_ms": "standard deviation of the inter-packet gap",
    ],
    "stall" => [
        RwndLimitedFraction = "rwnd_limited_fraction": "share of the data span with no room for a full segment in the peer's window",
        MaxInFlight = "max_in_flight": "outstanding bytes minus bytes selectively acknowledged, maximum",
        SenderStalls = "sender_stalls": "gaps of at least 200 ms between data packets",
        ZeroWindowStall = "zero_window_stall_s": "time the peer advertised a zero window",
        PersistEvents = "persist_events": "packets sent while the peer's window was zero",
        KeepalivePackets = "keepalive_packets": "zero- or one-byte probes one below the highest sequence",
        TimeToFirstByte = "time_to_first_byte_s": "connection start to first data packet",
        TimeToLastByte = "time_to_last_byte_s": "connection start to last data packet",
    ],
}

impl Stat {
    pub fn index(self) -> usize {
        self as usize
    }
}

/// Names of all 280 signature features, in vector order.
pub fn feature_names() -> Vec<String> {
    let mut names = Vec::with_capacity(SIGNATURE_DIM);
    for trace in ["client", "server"] {
        for dir in ["fwd", "rev"] {
            for s in Stat::ALL {
                names.push(format!("{trace}.{dir}.{}", s.name()));
            }
        }
    }
    names
}

/// Tab-separated catalogue listing, as shipped in `catalogue/tcpstat-v1.tsv`.
pub fn catalogue_tsv() -> String {
    let mut out = format!("# {CATALOGUE_VERSION}\nindex\tname\tgroup\tdescription\n");
    for s in Stat::ALL {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            s.index(),
            s.name(),
            s.group(),
            s.description()
        ));
    }
    out
}
