//! Signatures: labeled 280-dimensional feature vectors built from a pair of
//! endpoint traces, and databases of them.

mod catalogue;
mod stats;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use catalogue::{
    catalogue_tsv, feature_names, Stat, CATALOGUE_VERSION, SIGNATURE_DIM, STATS_PER_DIRECTION, STATS_PER_TRACE,
};
pub use stats::{compute_direction_stats, DirectionStats};

use crate::trace::{CapturePoint, TraceFile};

const DB_FORMAT: &str = "iacd-signatures";
const DB_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum SignatureError {
    #[error("client and server traces do not describe the same connection")]
    TracePairMismatch,
    #[error("trace captured at {found}, expected {expected}")]
    WrongCapturePoint {
        expected: CapturePoint,
        found: CapturePoint,
    },
    #[error("signature database is empty")]
    EmptyDatabase,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("catalogue version mismatch: expected {expected}, found {found}")]
    CatalogueMismatch { expected: String, found: String },
    #[error("invalid class label {0:?}")]
    InvalidLabel(String),
    #[error("database line {line}: {message}")]
    Format { line: usize, message: String },
}

/// Class of a signature: link condition or client fault class `cf_j`
/// (`Cf(0)` is a healthy client).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClassLabel {
    LinkFaulty,
    LinkHealthy,
    Cf(u32),
}

impl ClassLabel {
    pub const HEALTHY_CLIENT: ClassLabel = ClassLabel::Cf(0);

    pub fn is_link(self) -> bool {
        matches!(self, ClassLabel::LinkFaulty | ClassLabel::LinkHealthy)
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassLabel::LinkFaulty => f.write_str("LINK_FAULTY"),
            ClassLabel::LinkHealthy => f.write_str("LINK_HEALTHY"),
            ClassLabel::Cf(j) => write!(f, "CF{j}"),
        }
    }
}

impl FromStr for ClassLabel {
    type Err = SignatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "LINK_FAULTY" => Ok(ClassLabel::LinkFaulty),
            "LINK_HEALTHY" => Ok(ClassLabel::LinkHealthy),
            _ => s
                .strip_prefix("CF")
                .filter(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
                .and_then(|d| d.parse().ok())
                .map(ClassLabel::Cf)
                .ok_or_else(|| SignatureError::InvalidLabel(s.to_string())),
        }
    }
}

impl Serialize for ClassLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ClassLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signature {
    pub source_id: String,
    pub label: ClassLabel,
    pub features: Vec<f64>,
}

/// Statistics of one trace: forward (initiator-sent) direction, then reverse.
pub fn trace_features(trace: &TraceFile) -> Vec<f64> {
    let (fwd, rev) = trace.split_directions();
    let mut out = Vec::with_capacity(STATS_PER_TRACE);
    out.extend_from_slice(compute_direction_stats(&fwd, &rev).values());
    out.extend_from_slice(compute_direction_stats(&rev, &fwd).values());
    out
}

/// Feature vector of a trace pair, without label.
pub fn signature_features(client: &TraceFile, server: &TraceFile) -> Result<Vec<f64>, SignatureError> {
    if client.capture_point() != CapturePoint::Client {
        return Err(SignatureError::WrongCapturePoint {
            expected: CapturePoint::Client,
            found: client.capture_point(),
        });
    }
    if server.capture_point() != CapturePoint::Server {
        return Err(SignatureError::WrongCapturePoint {
            expected: CapturePoint::Server,
            found: server.capture_point(),
        });
    }
    if client.connection_key() != server.connection_key() {
        return Err(SignatureError::TracePairMismatch);
    }
    let mut features = trace_features(client);
    features.extend(trace_features(server));
    debug_assert_eq!(features.len(), SIGNATURE_DIM);
    Ok(features)
}

pub fn build_signature(client: &TraceFile, server: &TraceFile, label: ClassLabel) -> Result<Signature, SignatureError> {
    build_signature_with_id(client, server, label, String::new())
}

pub fn build_signature_with_id(
    client: &TraceFile,
    server: &TraceFile,
    label: ClassLabel,
    source_id: impl Into<String>,
) -> Result<Signature, SignatureError> {
    Ok(Signature {
        source_id: source_id.into(),
        label,
        features: signature_features(client, server)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignatureDatabase {
    signatures: Vec<Signature>,
    class_counts: BTreeMap<ClassLabel, usize>,
    dimension: usize,
    catalogue_version: String,
}

pub fn assemble_database(signatures: Vec<Signature>) -> Result<SignatureDatabase, SignatureError> {
    SignatureDatabase::new(signatures)
}

#[derive(Serialize, Deserialize)]
struct DbHeader {
    format: String,
    version: u32,
    catalogue_version: String,
    dimension: usize,
    feature_names: Vec<String>,
}

impl SignatureDatabase {
    pub fn new(signatures: Vec<Signature>) -> Result<Self, SignatureError> {
        Self::with_catalogue(signatures, CATALOGUE_VERSION)
    }

    fn with_catalogue(signatures: Vec<Signature>, catalogue_version: &str) -> Result<Self, SignatureError> {
        let first = signatures.first().ok_or(SignatureError::EmptyDatabase)?;
        let dimension = first.features.len();
        let mut class_counts = BTreeMap::new();
        for s in &signatures {
            if s.features.len() != dimension {
                return Err(SignatureError::DimensionMismatch {
                    expected: dimension,
                    found: s.features.len(),
                });
            }
            *class_counts.entry(s.label).or_insert(0) += 1;
        }
        Ok(Self {
            signatures,
            class_counts,
            dimension,
            catalogue_version: catalogue_version.to_string(),
        })
    }

    pub fn signatures(&self) -> &[Signature] {
        &self.signatures
    }

    pub fn into_signatures(self) -> Vec<Signature> {
        self.signatures
    }

    pub fn class_counts(&self) -> &BTreeMap<ClassLabel, usize> {
        &self.class_counts
    }

    pub fn count(&self, label: ClassLabel) -> usize {
        self.class_counts.get(&label).copied().unwrap_or(0)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn catalogue_version(&self) -> &str {
        &self.catalogue_version
    }

    pub fn len(&self) -> usize {
        self.signatures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signatures.is_empty()
    }

    /// Signatures whose label satisfies `keep`; `None` if nothing remains.
    pub fn filter(&self, keep: impl Fn(ClassLabel) -> bool) -> Option<SignatureDatabase> {
        let kept: Vec<Signature> = self.signatures.iter().filter(|s| keep(s.label)).cloned().collect();
        Self::with_catalogue(kept, &self.catalogue_version).ok()
    }

    /// Concatenate databases that share dimension and catalogue version.
    pub fn merge(parts: Vec<SignatureDatabase>) -> Result<SignatureDatabase, SignatureError> {
        let version = parts
            .first()
            .map(|d| d.catalogue_version.clone())
            .ok_or(SignatureError::EmptyDatabase)?;
        let mut all = Vec::new();
        for part in parts {
            if part.catalogue_version != version {
                return Err(SignatureError::CatalogueMismatch {
                    expected: version,
                    found: part.catalogue_version,
                });
            }
            all.extend(part.signatures);
        }
        Self::with_catalogue(all, &version)
    }

    fn feature_names(&self) -> Vec<String> {
        if self.dimension == SIGNATURE_DIM {
            feature_names()
        } else {
            (0..self.dimension).map(|i| format!("f{i}")).collect()
        }
    }

    /// Line-delimited JSON: a header object, then one record per signature.
    pub fn to_jsonl(&self) -> String {
        let header = DbHeader {
            format: DB_FORMAT.to_string(),
            version: DB_VERSION,
            catalogue_version: self.catalogue_version.clone(),
            dimension: self.dimension,
            feature_names: self.feature_names(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for s in &self.signatures {
            out.push_str(&serde_json::to_string(s).expect("signature serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<SignatureDatabase, SignatureError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or(SignatureError::EmptyDatabase)?;
        let header: DbHeader = serde_json::from_str(first).map_err(|e| SignatureError::Format {
            line: 1,
            message: e.to_string(),
        })?;
        if header.format != DB_FORMAT || header.version != DB_VERSION {
            return Err(SignatureError::Format {
                line: 1,
                message: format!("unsupported format {} v{}", header.format, header.version),
            });
        }
        if header.catalogue_version != CATALOGUE_VERSION {
            return Err(SignatureError::CatalogueMismatch {
                expected: CATALOGUE_VERSION.to_string(),
                found: header.catalogue_version,
            });
        }
        let mut signatures = Vec::new();
        for (i, line) in lines {
            let s: Signature = serde_json::from_str(line).map_err(|e| SignatureError::Format {
                line: i + 1,
                message: e.to_string(),
            })?;
            if s.features.len() != header.dimension {
                return Err(SignatureError::DimensionMismatch {
                    expected: header.dimension,
                    found: s.features.len(),
                });
            }
            if let Some(bad) = s.features.iter().find(|v| !v.is_finite()) {
                return Err(SignatureError::Format {
                    line: i + 1,
                    message: format!("non-finite feature {bad}"),
                });
            }
            signatures.push(s);
        }
        Self::with_catalogue(signatures, &header.catalogue_version)
    }

    /// CSV matrix: `label` column, then one column per feature in catalogue
    /// order. `columns` restricts output to the given feature indices.
    pub fn to_csv(&self, columns: Option<&[usize]>) -> String {
        let names = self.feature_names();
        let all: Vec<usize> = (0..self.dimension).collect();
        let cols = columns.unwrap_or(&all);
        let mut out = String::from("label");
        for &c in cols {
            out.push(',');
            out.push_str(&names[c]);
        }
        out.push('\n');
        for s in &self.signatures {
            out.push_str(&s.label.to_string());
            for &c in cols {
                out.push(',');
                out.push_str(&s.features[c].to_string());
            }
            out.push('\n');
        }
        out
    }

    /// Indices of features whose range over this database is nonzero.
    pub fn non_null_columns(&self) -> Vec<usize> {
        (0..self.dimension)
            .filter(|&c| {
                let first = self.signatures[0].features[c];
                self.signatures.iter().any(|s| s.features[c] != first)
            })
            .collect()
    }
}
