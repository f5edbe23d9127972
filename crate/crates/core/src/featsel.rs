//! Feature ranking by two-sample t-test and wrapper selection of the
//! feature count by stratified cross-validation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::svm::{self, KernelSpec, SvmConfig, SvmError};

/// A size is accepted when its CV accuracy is within this of the best.
pub const SELECTION_TOLERANCE: f64 = 0.005;
pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum FeatselError {
    #[error("class {class:+} has {found} samples, at least 2 needed")]
    InsufficientSamples { class: i8, found: usize },
    #[error("cannot build {k} stratified folds: {reason}")]
    FoldError { k: usize, reason: String },
    #[error("invalid candidate size {0}")]
    InvalidSize(usize),
    #[error(transparent)]
    Svm(#[from] SvmError),
}

/// Pooled-variance two-sample |t| per feature. Features with zero pooled
/// variance score `f64::MAX` when the class means differ and 0 otherwise.
pub fn t_scores(xs: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>, FeatselError> {
    let pos: Vec<&Vec<f64>> = xs.iter().zip(y).filter(|(_, t)| **t > 0.0).map(|(x, _)| x).collect();
    let neg: Vec<&Vec<f64>> = xs.iter().zip(y).filter(|(_, t)| **t <= 0.0).map(|(x, _)| x).collect();
    for (class, n) in [(1i8, pos.len()), (-1, neg.len())] {
        if n < 2 {
            return Err(FeatselError::InsufficientSamples { class, found: n });
        }
    }
    let dim = xs[0].len();
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    let moments = |rows: &[&Vec<f64>], j: usize| {
        let n = rows.len() as f64;
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
        let ss = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>();
        (mean, ss)
    };
    Ok((0..dim)
        .map(|j| {
            let (mp, ssp) = moments(&pos, j);
            let (mn, ssn) = moments(&neg, j);
            let pooled = (ssp + ssn) / (np + nn - 2.0);
            let diff = (mp - mn).abs();
            let se = (pooled * (1.0 / np + 1.0 / nn)).sqrt();
            if diff == 0.0 {
                0.0
            } else if se == 0.0 || !(diff / se).is_finite() {
                f64::MAX
            } else {
                diff / se
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRanking {
    /// `(feature index, score)`, descending by score.
    pub entries: Vec<(usize, f64)>,
}

impl FeatureRanking {
    pub fn indices(&self) -> Vec<usize> {
        self.entries.iter().map(|(i, _)| *i).collect()
    }

    pub fn prefix(&self, q: usize) -> Vec<usize> {
        self.entries.iter().take(q).map(|(i, _)| *i).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Sort by descending score, ties by ascending index.
pub fn rank_features(scores: &[f64]) -> FeatureRanking {
    let mut entries: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    FeatureRanking { entries }
}

/// Stratified fold assignment: each class is shuffled with `seed`, then dealt
/// round-robin, continuing the deal across classes.
pub fn stratified_folds(y: &[f64], k: usize, seed: u64) -> Result<Vec<usize>, FeatselError> {
    if k < 2 {
        return Err(FeatselError::FoldError {
            k,
            reason: "need at least 2 folds".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; y.len()];
    let mut next = 0;
    for class in [1.0, -1.0] {
        let mut members: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        if members.len() < k {
            return Err(FeatselError::FoldError {
                k,
                reason: format!("class {class:+} has only {} samples", members.len()),
            });
        }
        members.shuffle(&mut rng);
        for i in members {
            fold[i] = next % k;
            next += 1;
        }
    }
    Ok(fold)
}

/// `min(5, smallest class size)`.
pub fn default_folds(y: &[f64]) -> usize {
    let pos = y.iter().filter(|t| **t > 0.0).count();
    DEFAULT_FOLDS.min(pos).min(y.len() - pos)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WrapperConfig {
    /// Kernel family; for RBF the gamma comes from `gamma_grid`.
    pub kernel: KernelSpec,
    pub c_grid: Vec<f64>,
    pub gamma_grid: Vec<f64>,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

/// 2^-5, 2^-3, ..., 2^15.
pub fn default_c_grid() -> Vec<f64> {
    (-5..=15).step_by(2).map(|e| 2f64.powi(e)).collect()
}

/// 2^-15, 2^-13, ..., 2^3.
pub fn default_gamma_grid() -> Vec<f64> {
    (-15..=3).step_by(2).map(|e| 2f64.powi(e)).collect()
}

impl WrapperConfig {
    pub fn new(kernel: KernelSpec, seed: u64) -> Self {
        Self {
            kernel,
            c_grid: default_c_grid(),
            gamma_grid: default_gamma_grid(),
            max_iter: svm::DEFAULT_MAX_ITER,
            tol: svm::DEFAULT_TOL,
            seed,
        }
    }

    /// Candidate SVM configurations in grid order (C outer, gamma inner).
    pub fn grid(&self) -> Vec<SvmConfig> {
        let kernels: Vec<KernelSpec> = match self.kernel {
            KernelSpec::Rbf { .. } => self.gamma_grid.iter().map(|&g| KernelSpec::rbf(g)).collect(),
            k => vec![k],
        };
        self.c_grid
            .iter()
            .flat_map(|&c| {
                kernels.iter().map(move |&kernel| SvmConfig {
                    kernel,
                    c,
                    max_iter: self.max_iter,
                    tol: self.tol,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeResult {
    pub accuracy: f64,
    pub config: SvmConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub q: usize,
    pub selected_indices: Vec<usize>,
    pub k_folds: usize,
    /// Best mean CV accuracy per candidate size and the grid point reaching it.
    pub cv_by_size: BTreeMap<usize, SizeResult>,
}

impl SelectionResult {
    pub fn chosen(&self) -> &SizeResult {
        &self.cv_by_size[&self.q]
    }
}

fn project(xs: &[Vec<f64>], cols: &[usize]) -> Vec<Vec<f64>> {
    xs.iter().map(|x| cols.iter().map(|&c| x[c]).collect()).collect()
}

/// Mean fold accuracy of `cfg` on the columns `cols`. With `k == 1` the
/// model is scored on its own training data.
pub fn cv_accuracy(
    xs: &[Vec<f64>],
    y: &[f64],
    cols: &[usize],
    folds: &[usize],
    k: usize,
    cfg: &SvmConfig,
) -> Result<f64, FeatselError> {
    let data = project(xs, cols);
    if k == 1 {
        let model = svm::train(&data, y, cfg)?;
        let correct = data
            .iter()
            .zip(y)
            .filter(|(x, t)| model.predict(x).map(|p| p as f64 == **t).unwrap_or(false))
            .count();
        return Ok(correct as f64 / y.len() as f64);
    }
    let mut total = 0.0;
    for f in 0..k {
        let (mut tx, mut ty, mut vx, mut vy) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for i in 0..y.len() {
            if folds[i] == f {
                vx.push(data[i].clone());
                vy.push(y[i]);
            } else {
                tx.push(data[i].clone());
                ty.push(y[i]);
            }
        }
        let model = svm::train(&tx, &ty, cfg)?;
        let correct = vx
            .iter()
            .zip(&vy)
            .filter(|(x, t)| model.predict(x).map(|p| p as f64 == **t).unwrap_or(false))
            .count();
        total += correct as f64 / vy.len() as f64;
    }
    Ok(total / k as f64)
}

/// Cross-validate each ranking prefix size over the parameter grid and pick
/// the smallest size within [`SELECTION_TOLERANCE`] of the best accuracy.
pub fn wrapper_select(
    xs: &[Vec<f64>],
    y: &[f64],
    ranking: &FeatureRanking,
    candidate_sizes: &[usize],
    k_folds: usize,
    config: &WrapperConfig,
) -> Result<SelectionResult, FeatselError> {
    let mut sizes: Vec<usize> = candidate_sizes.to_vec();
    sizes.sort_unstable();
    sizes.dedup();
    if sizes.is_empty() {
        return Err(FeatselError::InvalidSize(0));
    }
    if let Some(&bad) = sizes.iter().find(|&&s| s == 0 || s > ranking.len()) {
        return Err(FeatselError::InvalidSize(bad));
    }
    let folds = if k_folds == 1 {
        vec![0; y.len()]
    } else {
        stratified_folds(y, k_folds, config.seed)?
    };
    let grid = config.grid();

    let jobs: Vec<(usize, usize)> = sizes
        .iter()
        .flat_map(|&s| (0..grid.len()).map(move |g| (s, g)))
        .collect();
    let scores: Vec<f64> = jobs
        .par_iter()
        .map(|&(s, g)| cv_accuracy(xs, y, &ranking.prefix(s), &folds, k_folds, &grid[g]))
        .collect::<Result<_, _>>()?;

    let mut cv_by_size = BTreeMap::new();
    for (si, &s) in sizes.iter().enumerate() {
        let row = &scores[si * grid.len()..(si + 1) * grid.len()];
        let mut best = 0;
        for (g, &acc) in row.iter().enumerate() {
            if acc > row[best] {
                best = g;
            }
        }
        cv_by_size.insert(
            s,
            SizeResult {
                accuracy: row[best],
                config: grid[best],
            },
        );
    }
    let best = cv_by_size
        .values()
        .map(|r| r.accuracy)
        .fold(f64::NEG_INFINITY, f64::max);
    let q = *cv_by_size
        .iter()
        .find(|(_, r)| r.accuracy >= best - SELECTION_TOLERANCE)
        .map(|(s, _)| s)
        .expect("best size qualifies");
    Ok(SelectionResult {
        q,
        selected_indices: ranking.prefix(q),
        k_folds,
        cv_by_size,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    #[test]
    fn t_closed_form() {
        let xs: Vec<Vec<f64>> = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0].iter().map(|v| vec![*v]).collect();
        let y = [1.0, 1.0, 1.0, -1.0, -1.0, -1.0];
        let t = t_scores(&xs, &y).unwrap();
        assert_abs_diff_eq!(t[0], 3.0 / (2.0f64 / 3.0).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(t[0], 3.674234614, epsilon = 1e-9);
    }

    #[test]
    fn t_degenerate_cases() {
        let xs = vec![
            vec![1.0, 2.0, 5.0],
            vec![3.0, 2.0, 5.0],
            vec![1.0, 2.0, 7.0],
            vec![3.0, 2.0, 7.0],
        ];
        let y = [1.0, 1.0, -1.0, -1.0];
        assert_eq!(t_scores(&xs, &y).unwrap(), vec![0.0, 0.0, f64::MAX]);
        assert_eq!(
            t_scores(&xs[..3], &y[..3]),
            Err(FeatselError::InsufficientSamples { class: -1, found: 1 })
        );
    }

    #[test]
    fn ranking_order() {
        assert_eq!(rank_features(&[0.5, 3.0, 1.0]).indices(), vec![1, 2, 0]);
        assert_eq!(rank_features(&[1.0; 4]).indices(), vec![0, 1, 2, 3]);
        let mut s = vec![2.0; 10];
        s[7] = f64::MAX;
        assert_eq!(rank_features(&s).indices()[0], 7);
    }

    #[test]
    fn folds_are_stratified() {
        let y: Vec<f64> = (0..22).map(|i| if i < 11 { 1.0 } else { -1.0 }).collect();
        let f = stratified_folds(&y, 5, 3).unwrap();
        for k in 0..5 {
            let pos = (0..22).filter(|&i| f[i] == k && y[i] > 0.0).count();
            let neg = (0..22).filter(|&i| f[i] == k && y[i] < 0.0).count();
            assert!(
                (2..=3).contains(&pos) && (2..=3).contains(&neg),
                "fold {k}: {pos}/{neg}"
            );
        }
        assert_eq!(f, stratified_folds(&y, 5, 3).unwrap());
        assert!(matches!(
            stratified_folds(&y, 12, 0),
            Err(FeatselError::FoldError { .. })
        ));
        assert!(matches!(
            stratified_folds(&y, 1, 0),
            Err(FeatselError::FoldError { .. })
        ));
        assert_eq!(default_folds(&y), 5);
        assert_eq!(default_folds(&y[8..]), 3);
    }

    fn top1_dataset(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xs = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let t = if i % 2 == 0 { 1.0 } else { -1.0 };
            let mut x: Vec<f64> = (0..20).map(|_| rng.gen::<f64>()).collect();
            x[0] = if t > 0.0 {
                rng.gen_range(0.6..1.0)
            } else {
                rng.gen_range(0.0..0.4)
            };
            xs.push(x);
            y.push(t);
        }
        (xs, y)
    }

    #[test]
    fn wrapper_picks_single_informative_feature() {
        let (xs, y) = top1_dataset(30, 11);
        let ranking = rank_features(&t_scores(&xs, &y).unwrap());
        assert_eq!(ranking.indices()[0], 0);
        let cfg = WrapperConfig::new(KernelSpec::Linear, 1);
        let r = wrapper_select(&xs, &y, &ranking, &[1, 5, 20], 5, &cfg).unwrap();
        assert_eq!(r.q, 1);
        assert_eq!(r.selected_indices, vec![0]);
        assert_eq!(r.cv_by_size[&1].accuracy, 1.0);

        // Independent recomputation of every grid point at each size.
        let folds = stratified_folds(&y, 5, 1).unwrap();
        for (&s, res) in &r.cv_by_size {
            let best = cfg
                .grid()
                .iter()
                .map(|g| cv_accuracy(&xs, &y, &ranking.prefix(s), &folds, 5, g).unwrap())
                .fold(0.0, f64::max);
            assert_eq!(res.accuracy, best);
            assert!(r.chosen().accuracy >= best - SELECTION_TOLERANCE);
        }
    }

    #[test]
    fn wrapper_single_size_and_bad_sizes() {
        let (xs, y) = top1_dataset(12, 2);
        let ranking = rank_features(&t_scores(&xs, &y).unwrap());
        let cfg = WrapperConfig::new(KernelSpec::rbf(1.0), 0);
        let r = wrapper_select(&xs, &y, &ranking, &[3], 3, &cfg).unwrap();
        assert_eq!(r.q, 3);
        assert_eq!(r.selected_indices, ranking.prefix(3));
        assert!(matches!(r.chosen().config.kernel, KernelSpec::Rbf { .. }));
        assert_eq!(
            wrapper_select(&xs, &y, &ranking, &[21], 3, &cfg),
            Err(FeatselError::InvalidSize(21))
        );
        assert!(matches!(
            wrapper_select(&xs, &y, &ranking, &[3], 7, &cfg),
            Err(FeatselError::FoldError { .. })
        ));
    }
}
