//! Deterministic discrete-event testbed: a server sends a bulk transfer to a
//! client across an emulated access link, and both endpoints are captured.

mod scenario;
mod sim;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use scenario::{
    generate_corpus, generate_databases, preset, preset_names, Corpus, CorpusSample, Scenario, ScenarioMatrix,
    BUFFER_LEVELS, DEFAULT_TRANSFER_SIZE, PRESET_FULL, PRESET_SMALL,
};
pub use sim::simulate_connection;

use crate::signature::SignatureError;
use crate::trace::{TraceError, TraceFile};

pub const MSS: u32 = 1460;
/// Ample socket buffer for a healthy client.
pub const AMPLE_BUFFER: u32 = 4 << 20;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("infeasible scenario: {0}")]
    InfeasibleScenario(String),
    #[error("simulation did not complete within {0} s of virtual time")]
    Stalled(u64),
    #[error("scenario matrix: {0}")]
    Matrix(String),
    #[error("no scenarios")]
    NoScenarios,
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Signature(#[from] SignatureError),
}

fn default_queue_limit() -> usize {
    200
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig {
    pub bandwidth_bps: f64,
    pub one_way_delay_ms: f64,
    /// Bernoulli drop probability per server data packet.
    pub loss_rate: f64,
    pub reorder_rate: f64,
    /// Drop-tail capacity of the bottleneck queue in packets.
    #[serde(default = "default_queue_limit")]
    pub queue_limit: usize,
}

impl LinkConfig {
    /// 80 Mb/s, 10 ms, no loss, no reordering.
    pub fn healthy() -> Self {
        Self {
            bandwidth_bps: 80e6,
            one_way_delay_ms: 10.0,
            loss_rate: 0.0,
            reorder_rate: 0.0,
            queue_limit: default_queue_limit(),
        }
    }

    pub fn with_loss(mut self, loss_rate: f64) -> Self {
        self.loss_rate = loss_rate;
        self
    }

    pub fn with_delay(mut self, ms: f64) -> Self {
        self.one_way_delay_ms = ms;
        self
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InfeasibleScenario(m));
        if !(self.bandwidth_bps > 0.0 && self.bandwidth_bps.is_finite()) {
            return bad(format!("bandwidth must be positive, got {}", self.bandwidth_bps));
        }
        if !(self.one_way_delay_ms >= 0.0 && self.one_way_delay_ms.is_finite()) {
            return bad(format!("delay must be nonnegative, got {}", self.one_way_delay_ms));
        }
        if !(0.0..1.0).contains(&self.loss_rate) {
            return bad(format!("loss rate must be in [0, 1), got {}", self.loss_rate));
        }
        if !(0.0..1.0).contains(&self.reorder_rate) {
            return bad(format!("reorder rate must be in [0, 1), got {}", self.reorder_rate));
        }
        if self.queue_limit == 0 {
            return bad("queue limit must be at least 1".into());
        }
        Ok(())
    }
}

/// Simplified AIMD congestion-control families standing in for distinct TCP variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CcProfile {
    AimdStd,
    AimdAggressive,
    AimdConservative,
}

impl CcProfile {
    pub const ALL: [CcProfile; 3] = [
        CcProfile::AimdStd,
        CcProfile::AimdAggressive,
        CcProfile::AimdConservative,
    ];

    /// Initial window in segments.
    pub fn initial_window(self) -> f64 {
        match self {
            CcProfile::AimdStd => 3.0,
            CcProfile::AimdAggressive => 4.0,
            CcProfile::AimdConservative => 2.0,
        }
    }

    /// Additive increase in segments per round trip.
    pub fn increase(self) -> f64 {
        match self {
            CcProfile::AimdStd => 1.0,
            CcProfile::AimdAggressive => 4.0,
            CcProfile::AimdConservative => 0.5,
        }
    }

    /// Multiplicative decrease factor on loss.
    pub fn decrease(self) -> f64 {
        match self {
            CcProfile::AimdStd => 0.7,
            CcProfile::AimdAggressive => 0.8,
            CcProfile::AimdConservative => 0.5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CcProfile::AimdStd => "AIMD_STD",
            CcProfile::AimdAggressive => "AIMD_AGGRESSIVE",
            CcProfile::AimdConservative => "AIMD_CONSERVATIVE",
        }
    }
}

impl std::fmt::Display for CcProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientConfig {
    pub sack_enabled: bool,
    /// Only effective together with SACK.
    pub dsack_enabled: bool,
    pub read_buffer: u32,
    pub write_buffer: u32,
    pub cc_profile: CcProfile,
}

impl ClientConfig {
    pub fn healthy(cc_profile: CcProfile) -> Self {
        Self {
            sack_enabled: true,
            dsack_enabled: true,
            read_buffer: AMPLE_BUFFER,
            write_buffer: AMPLE_BUFFER,
            cc_profile,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        for (name, v) in [("read", self.read_buffer), ("write", self.write_buffer)] {
            if v < MSS {
                return Err(SynthError::InfeasibleScenario(format!(
                    "{name} buffer of {v} bytes is smaller than one {MSS}-byte segment"
                )));
            }
        }
        Ok(())
    }
}

/// Ground-truth counters of one simulated connection.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventLog {
    /// Server data packets handed to the link, retransmissions included.
    pub data_packets_sent: u64,
    pub data_packets_delivered: u64,
    pub retransmissions: u64,
    /// Bernoulli losses on the link.
    pub injected_losses: u64,
    /// Drop-tail overflows at the bottleneck queue.
    pub queue_drops: u64,
    pub reordered: u64,
    pub fast_retransmits: u64,
    pub timeouts: u64,
    /// Data segments the client received more than once.
    pub duplicates_received: u64,
    pub dsack_sent: u64,
    pub window_updates: u64,
    /// Stretches of at least 200 ms without server data transmission.
    pub stalls: u64,
    pub duration_us: u64,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub client: TraceFile,
    pub server: TraceFile,
    pub log: EventLog,
}
