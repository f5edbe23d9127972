//! Scenario matrices, shipped presets and corpus generation.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{simulate_connection, CcProfile, ClientConfig, EventLog, LinkConfig, SynthError, MSS};
use crate::signature::{build_signature_with_id, ClassLabel, Signature, SignatureDatabase};
use crate::trace::TraceFile;

pub const DEFAULT_TRANSFER_SIZE: u64 = 1_000_000;

fn default_transfer_size() -> u64 {
    DEFAULT_TRANSFER_SIZE
}

fn default_corpus() -> String {
    "default".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub label: ClassLabel,
    /// Output database this scenario contributes to.
    #[serde(default = "default_corpus")]
    pub corpus: String,
    pub samples: usize,
    #[serde(default = "default_transfer_size")]
    pub transfer_size: u64,
    pub seed: u64,
    pub link: LinkConfig,
    pub client: ClientConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScenarioMatrix {
    #[serde(default, rename = "scenario")]
    pub scenarios: Vec<Scenario>,
}

impl ScenarioMatrix {
    pub fn from_toml(text: &str) -> Result<Self, SynthError> {
        let m: ScenarioMatrix = toml::from_str(text).map_err(|e| SynthError::Matrix(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("matrix serializes")
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.scenarios.is_empty() {
            return Err(SynthError::NoScenarios);
        }
        for s in &self.scenarios {
            if s.samples == 0 {
                return Err(SynthError::Matrix(format!("scenario {:?} has no samples", s.name)));
            }
            s.link.validate()?;
            s.client.validate()?;
        }
        Ok(())
    }

    /// Corpus names in first-appearance order.
    pub fn corpora(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for s in &self.scenarios {
            if !out.contains(&s.corpus) {
                out.push(s.corpus.clone());
            }
        }
        out
    }

    pub fn total_samples(&self) -> usize {
        self.scenarios.iter().map(|s| s.samples).sum()
    }

    pub fn only_corpus(&self, corpus: &str) -> ScenarioMatrix {
        ScenarioMatrix {
            scenarios: self.scenarios.iter().filter(|s| s.corpus == corpus).cloned().collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CorpusSample {
    pub scenario: String,
    pub corpus: String,
    pub index: usize,
    pub client: TraceFile,
    pub server: TraceFile,
    pub log: EventLog,
    pub signature: Signature,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub samples: Vec<CorpusSample>,
    pub databases: BTreeMap<String, SignatureDatabase>,
}

impl Scenario {
    pub fn sample_seed(&self, index: usize) -> u64 {
        self.seed ^ index as u64
    }

    pub fn source_id(&self, index: usize) -> String {
        format!("{}/{}#{index}", self.corpus, self.name)
    }

    pub fn simulate(&self, index: usize) -> Result<CorpusSample, SynthError> {
        let out = simulate_connection(&self.link, &self.client, self.transfer_size, self.sample_seed(index))?;
        let signature = build_signature_with_id(&out.client, &out.server, self.label, self.source_id(index))?;
        Ok(CorpusSample {
            scenario: self.name.clone(),
            corpus: self.corpus.clone(),
            index,
            client: out.client,
            server: out.server,
            log: out.log,
            signature,
        })
    }

    /// All samples of this scenario, simulated in parallel, in index order.
    pub fn simulate_all(&self) -> Result<Vec<CorpusSample>, SynthError> {
        (0..self.samples).into_par_iter().map(|i| self.simulate(i)).collect()
    }
}

fn databases(sigs: Vec<(String, Signature)>) -> Result<BTreeMap<String, SignatureDatabase>, SynthError> {
    let mut grouped: BTreeMap<String, Vec<Signature>> = BTreeMap::new();
    for (corpus, s) in sigs {
        grouped.entry(corpus).or_default().push(s);
    }
    grouped
        .into_iter()
        .map(|(k, v)| Ok((k, SignatureDatabase::new(v)?)))
        .collect()
}

fn jobs(matrix: &ScenarioMatrix) -> Vec<(usize, usize)> {
    matrix
        .scenarios
        .iter()
        .enumerate()
        .flat_map(|(si, s)| (0..s.samples).map(move |i| (si, i)))
        .collect()
}

/// Simulate every sample of the matrix and assemble one database per corpus.
pub fn generate_corpus(matrix: &ScenarioMatrix) -> Result<Corpus, SynthError> {
    matrix.validate()?;
    let samples: Vec<CorpusSample> = jobs(matrix)
        .into_par_iter()
        .map(|(si, i)| matrix.scenarios[si].simulate(i))
        .collect::<Result<_, _>>()?;
    let dbs = databases(
        samples
            .iter()
            .map(|s| (s.corpus.clone(), s.signature.clone()))
            .collect(),
    )?;
    Ok(Corpus {
        samples,
        databases: dbs,
    })
}

/// Like [`generate_corpus`] but keeps only the signatures.
pub fn generate_databases(matrix: &ScenarioMatrix) -> Result<BTreeMap<String, SignatureDatabase>, SynthError> {
    matrix.validate()?;
    let sigs: Vec<(String, Signature)> = jobs(matrix)
        .into_par_iter()
        .map(|(si, i)| {
            let s = &matrix.scenarios[si];
            s.simulate(i).map(|c| (s.corpus.clone(), c.signature))
        })
        .collect::<Result<_, _>>()?;
    databases(sigs)
}

// ---- presets ------------------------------------------------------------

pub const PRESET_FULL: &str = "paper-v-b";
pub const PRESET_SMALL: &str = "smoke";

pub fn preset_names() -> &'static [&'static str] {
    &[PRESET_FULL, PRESET_SMALL]
}

/// Buffer limitation levels in bytes.
pub const BUFFER_LEVELS: [u32; 3] = [4 * MSS, 8 * MSS, 16 * MSS];

#[derive(Debug, Clone, Copy, PartialEq)]
enum ClientKind {
    Healthy,
    SackOff,
    DsackOff,
    ReadBuf(u32),
    WriteBuf(u32),
    ReadWriteBuf(u32),
}

impl ClientKind {
    fn label(self) -> ClassLabel {
        ClassLabel::Cf(match self {
            ClientKind::Healthy => 0,
            ClientKind::SackOff => 1,
            ClientKind::DsackOff => 2,
            ClientKind::ReadBuf(_) => 3,
            ClientKind::WriteBuf(_) => 4,
            ClientKind::ReadWriteBuf(_) => 5,
        })
    }

    fn name(self) -> String {
        match self {
            ClientKind::Healthy => "healthy".into(),
            ClientKind::SackOff => "sack-off".into(),
            ClientKind::DsackOff => "dsack-off".into(),
            ClientKind::ReadBuf(b) => format!("rbuf-{}mss", b / MSS),
            ClientKind::WriteBuf(b) => format!("wbuf-{}mss", b / MSS),
            ClientKind::ReadWriteBuf(b) => format!("rwbuf-{}mss", b / MSS),
        }
    }

    fn config(self, cc: CcProfile) -> ClientConfig {
        let mut c = ClientConfig::healthy(cc);
        match self {
            ClientKind::Healthy => {}
            ClientKind::SackOff => {
                c.sack_enabled = false;
                c.dsack_enabled = false;
            }
            ClientKind::DsackOff => c.dsack_enabled = false,
            ClientKind::ReadBuf(b) => c.read_buffer = b,
            ClientKind::WriteBuf(b) => c.write_buffer = b,
            ClientKind::ReadWriteBuf(b) => {
                c.read_buffer = b;
                c.write_buffer = b;
            }
        }
        c
    }

    /// Fault kinds with buffer faults spread over the three levels.
    fn faults() -> Vec<Vec<ClientKind>> {
        vec![
            vec![ClientKind::SackOff],
            vec![ClientKind::DsackOff],
            BUFFER_LEVELS.iter().map(|&b| ClientKind::ReadBuf(b)).collect(),
            BUFFER_LEVELS.iter().map(|&b| ClientKind::WriteBuf(b)).collect(),
            BUFFER_LEVELS.iter().map(|&b| ClientKind::ReadWriteBuf(b)).collect(),
        ]
    }
}

fn split(n: usize, parts: usize) -> Vec<usize> {
    (0..parts).map(|i| n / parts + usize::from(i < n % parts)).collect()
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Builder {
    seed: u64,
    scenarios: Vec<Scenario>,
}

impl Builder {
    fn add(
        &mut self,
        corpus: &str,
        name: String,
        label: ClassLabel,
        samples: usize,
        link: LinkConfig,
        client: ClientConfig,
    ) {
        if samples == 0 {
            return;
        }
        let seed = splitmix(self.seed.wrapping_add(self.scenarios.len() as u64));
        self.scenarios.push(Scenario {
            name,
            label,
            corpus: corpus.to_string(),
            samples,
            transfer_size: DEFAULT_TRANSFER_SIZE,
            seed,
            link,
            client,
        });
    }

    /// `n` client-fault samples per class (cf_0..cf_5) on the healthy link.
    fn cfd(&mut self, corpus: &str, n: usize, cc: CcProfile) {
        let link = LinkConfig::healthy();
        self.add(
            corpus,
            format!("{}-healthy", cc),
            ClassLabel::Cf(0),
            n,
            link,
            ClientKind::Healthy.config(cc),
        );
        for kinds in ClientKind::faults() {
            for (kind, count) in kinds.iter().zip(split(n, kinds.len())) {
                self.add(
                    corpus,
                    format!("{}-{}", cc, kind.name()),
                    kind.label(),
                    count,
                    link,
                    kind.config(cc),
                );
            }
        }
    }

    /// `n` healthy-link and `n` faulty-link samples, for n divisible by 10.
    fn lpd(&mut self, corpus: &str, n: usize, cc: CcProfile) {
        let healthy = LinkConfig::healthy();
        // Healthy link: 40% healthy clients, the rest spread over client faults.
        let faults = ClientKind::faults();
        let share = split(n - 2 * n / 5, faults.len());
        self.add(
            corpus,
            format!("{cc}-link-ok-healthy"),
            ClassLabel::LinkHealthy,
            2 * n / 5,
            healthy,
            ClientKind::Healthy.config(cc),
        );
        for (kinds, m) in faults.iter().zip(&share) {
            for (kind, count) in kinds.iter().zip(split(*m, kinds.len())) {
                self.add(
                    corpus,
                    format!("{cc}-link-ok-{}", kind.name()),
                    ClassLabel::LinkHealthy,
                    count,
                    healthy,
                    kind.config(cc),
                );
            }
        }
        // Faulty link: loss 1-10% and delay 15-100 ms with healthy clients,
        // plus a share of faulty clients on faulty links.
        let losses: Vec<f64> = (1..=10).map(|p| p as f64 / 100.0).collect();
        let delays = [15.0, 25.0, 40.0, 60.0, 80.0, 100.0];
        let n_loss = 2 * n / 5;
        let n_delay = 3 * n / 10;
        for (loss, count) in losses.iter().zip(split(n_loss, losses.len())) {
            let link = healthy.with_loss(*loss);
            self.add(
                corpus,
                format!("{cc}-loss-{:.0}pct", loss * 100.0),
                ClassLabel::LinkFaulty,
                count,
                link,
                ClientKind::Healthy.config(cc),
            );
        }
        for (delay, count) in delays.iter().zip(split(n_delay, delays.len())) {
            let link = healthy.with_delay(*delay);
            self.add(
                corpus,
                format!("{cc}-delay-{delay}ms"),
                ClassLabel::LinkFaulty,
                count,
                link,
                ClientKind::Healthy.config(cc),
            );
        }
        let mixed_links = [
            healthy.with_loss(0.02),
            healthy.with_loss(0.05),
            healthy.with_loss(0.10),
            healthy.with_delay(30.0),
            healthy.with_delay(60.0),
            healthy.with_delay(100.0),
        ];
        let n_mixed = n - n_loss - n_delay;
        let mut kinds: Vec<ClientKind> = faults.iter().flatten().copied().collect();
        kinds.sort_by_key(|k| match k {
            ClientKind::SackOff => 0,
            ClientKind::DsackOff => 1,
            ClientKind::ReadBuf(_) => 2,
            ClientKind::WriteBuf(_) => 3,
            _ => 4,
        });
        for i in 0..n_mixed {
            let kind = kinds[i % kinds.len()];
            let link = mixed_links[i % mixed_links.len()];
            let tag = if link.loss_rate > 0.0 {
                format!("loss-{:.0}pct", link.loss_rate * 100.0)
            } else {
                format!("delay-{}ms", link.one_way_delay_ms)
            };
            self.add(
                corpus,
                format!("{cc}-{tag}-{}-{i}", kind.name()),
                ClassLabel::LinkFaulty,
                1,
                link,
                kind.config(cc),
            );
        }
    }
}

/// Shipped scenario matrices.
///
/// `paper-v-b`: LPD training (100 healthy-link + 100 faulty-link traces),
/// CFD training (11 per class cf_0..cf_5) on `AIMD_STD`, and held-out test
/// corpora for each congestion profile (100 + 100 LPD, 33 per CFD class).
/// `smoke`: a tiny matrix for quick checks.
pub fn preset(name: &str, seed: u64) -> Option<ScenarioMatrix> {
    let mut b = Builder {
        seed,
        scenarios: Vec::new(),
    };
    match name {
        PRESET_FULL => {
            b.lpd("train_lpd", 100, CcProfile::AimdStd);
            b.cfd("train_cfd", 11, CcProfile::AimdStd);
            for cc in CcProfile::ALL {
                let tag = cc.name().to_ascii_lowercase();
                b.lpd(&format!("test_lpd_{tag}"), 100, cc);
                b.cfd(&format!("test_cfd_{tag}"), 33, cc);
            }
        }
        PRESET_SMALL => {
            b.lpd("train_lpd", 10, CcProfile::AimdStd);
            b.cfd("train_cfd", 3, CcProfile::AimdStd);
        }
        _ => return None,
    }
    Some(ScenarioMatrix { scenarios: b.scenarios })
}
