//! Label encoding, null-feature removal and min-max scaling.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signature::{ClassLabel, SignatureDatabase};

/// Scaled values of unseen samples are clamped into this range.
pub const CLAMP_LOW: f64 = -0.5;
pub const CLAMP_HIGH: f64 = 1.5;

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("label {0} is neither the positive nor the negative class")]
    LabelLeak(ClassLabel),
    #[error("every feature is constant over the training data")]
    DegenerateDatabase,
    #[error("scaler needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// Per-feature ranges of the training data over the retained (non-null) features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub dimension: usize,
    pub retained_indices: Vec<usize>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

/// Feature vectors and ±1 targets: `positive` maps to +1, `negative` to −1.
pub fn encode_labels(
    db: &SignatureDatabase,
    positive: ClassLabel,
    negative: ClassLabel,
) -> Result<(Vec<Vec<f64>>, Vec<f64>), PreprocessError> {
    let mut xs = Vec::with_capacity(db.len());
    let mut ys = Vec::with_capacity(db.len());
    for s in db.signatures() {
        let y = if s.label == positive {
            1.0
        } else if s.label == negative {
            -1.0
        } else {
            return Err(PreprocessError::LabelLeak(s.label));
        };
        xs.push(s.features.clone());
        ys.push(y);
    }
    Ok((xs, ys))
}

pub fn fit_scaler(db: &SignatureDatabase) -> Result<ScalerParams, PreprocessError> {
    let rows: Vec<&[f64]> = db.signatures().iter().map(|s| s.features.as_slice()).collect();
    fit_scaler_rows(&rows)
}

pub fn fit_scaler_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<ScalerParams, PreprocessError> {
    if rows.len() < 2 {
        return Err(PreprocessError::TooFewSamples(rows.len()));
    }
    let dimension = rows[0].as_ref().len();
    let mut lo = vec![f64::INFINITY; dimension];
    let mut hi = vec![f64::NEG_INFINITY; dimension];
    for r in rows {
        let r = r.as_ref();
        if r.len() != dimension {
            return Err(PreprocessError::DimensionMismatch {
                expected: dimension,
                found: r.len(),
            });
        }
        for (j, &v) in r.iter().enumerate() {
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    let retained_indices: Vec<usize> = (0..dimension).filter(|&j| hi[j] > lo[j]).collect();
    if retained_indices.is_empty() {
        return Err(PreprocessError::DegenerateDatabase);
    }
    Ok(ScalerParams {
        dimension,
        min: retained_indices.iter().map(|&j| lo[j]).collect(),
        max: retained_indices.iter().map(|&j| hi[j]).collect(),
        retained_indices,
    })
}

impl ScalerParams {
    pub fn retained(&self) -> usize {
        self.retained_indices.len()
    }

    /// Position of an original feature index in the scaled vector.
    pub fn position(&self, feature: usize) -> Option<usize> {
        self.retained_indices.binary_search(&feature).ok()
    }
}

/// Scale a raw vector onto the retained features, clamping into [−0.5, 1.5].
pub fn apply_scaler(x: &[f64], s: &ScalerParams) -> Result<Vec<f64>, PreprocessError> {
    if x.len() != s.dimension {
        return Err(PreprocessError::DimensionMismatch {
            expected: s.dimension,
            found: x.len(),
        });
    }
    Ok(s.retained_indices
        .iter()
        .zip(s.min.iter().zip(&s.max))
        .map(|(&j, (&lo, &hi))| ((x[j] - lo) / (hi - lo)).clamp(CLAMP_LOW, CLAMP_HIGH))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signature::{assemble_database, Signature};

    fn db(rows: &[(&[f64], ClassLabel)]) -> SignatureDatabase {
        assemble_database(
            rows.iter()
                .map(|(f, l)| Signature {
                    source_id: String::new(),
                    label: *l,
                    features: f.to_vec(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn encode_sign_convention() {
        let d = db(&[(&[1.0], ClassLabel::Cf(1)), (&[2.0], ClassLabel::Cf(0))]);
        let (_, y) = encode_labels(&d, ClassLabel::Cf(1), ClassLabel::Cf(0)).unwrap();
        assert_eq!(y, vec![1.0, -1.0]);
        let d = db(&[(&[1.0], ClassLabel::Cf(0)), (&[2.0], ClassLabel::Cf(0))]);
        let (_, y) = encode_labels(&d, ClassLabel::Cf(1), ClassLabel::Cf(0)).unwrap();
        assert_eq!(y, vec![-1.0, -1.0]);
        let d = db(&[(&[1.0], ClassLabel::Cf(2)), (&[2.0], ClassLabel::Cf(0))]);
        assert_eq!(
            encode_labels(&d, ClassLabel::Cf(1), ClassLabel::Cf(0)),
            Err(PreprocessError::LabelLeak(ClassLabel::Cf(2)))
        );
    }

    #[test]
    fn fit_drops_null_columns() {
        let rows = vec![vec![0.0, 7.0], vec![5.0, 7.0], vec![10.0, 7.0]];
        let s = fit_scaler_rows(&rows).unwrap();
        assert_eq!(s.retained_indices, vec![0]);
        assert_eq!((s.min[0], s.max[0]), (0.0, 10.0));
        assert_eq!(apply_scaler(&[0.0, 7.0], &s).unwrap(), vec![0.0]);
        assert_eq!(apply_scaler(&[10.0, 7.0], &s).unwrap(), vec![1.0]);
        assert_eq!(apply_scaler(&[20.0, 7.0], &s).unwrap(), vec![1.5]);
        assert_eq!(apply_scaler(&[-50.0, 7.0], &s).unwrap(), vec![-0.5]);
        assert_eq!(s.position(0), Some(0));
        assert_eq!(s.position(1), None);
    }

    #[test]
    fn fit_errors() {
        assert_eq!(fit_scaler_rows(&[vec![1.0]]), Err(PreprocessError::TooFewSamples(1)));
        assert_eq!(
            fit_scaler_rows(&[vec![1.0, 2.0], vec![1.0, 2.0]]),
            Err(PreprocessError::DegenerateDatabase)
        );
        let s = fit_scaler_rows(&[vec![1.0, 2.0], vec![3.0, 2.0]]).unwrap();
        assert_eq!(
            apply_scaler(&[1.0], &s),
            Err(PreprocessError::DimensionMismatch { expected: 2, found: 1 })
        );
    }

    #[test]
    fn refit_on_scaled_data_is_identity() {
        let rows = vec![vec![3.0, -1.0, 2.0], vec![4.5, 9.0, 2.0], vec![10.0, 0.25, 2.0]];
        let s = fit_scaler_rows(&rows).unwrap();
        let scaled: Vec<Vec<f64>> = rows.iter().map(|r| apply_scaler(r, &s).unwrap()).collect();
        let s2 = fit_scaler_rows(&scaled).unwrap();
        for r in &scaled {
            assert_eq!(&apply_scaler(r, &s2).unwrap(), r);
        }
    }
}
