//! Binary L2 soft-margin SVM.
//!
//! The L2 dual has no upper bound on the multipliers; the slack penalty is
//! folded into the kernel diagonal as `K + I/C`. Training uses pairwise
//! coordinate ascent on the maximal KKT-violating pair.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_MAX_ITER: usize = 1000;
pub const DEFAULT_TOL: f64 = 1e-3;

#[derive(Debug, Error, PartialEq)]
pub enum SvmError {
    #[error("training data contains a single class")]
    SingleClass,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "UPPERCASE")]
pub enum KernelSpec {
    Linear,
    Poly { degree: u32, coef0: f64 },
    Rbf { gamma: f64 },
}

impl KernelSpec {
    pub fn poly(degree: u32) -> Self {
        KernelSpec::Poly { degree, coef0: 1.0 }
    }

    pub fn rbf(gamma: f64) -> Self {
        KernelSpec::Rbf { gamma }
    }

    pub fn validate(&self) -> Result<(), SvmError> {
        match *self {
            KernelSpec::Poly { degree: 0, .. } => Err(SvmError::InvalidParameter("degree must be >= 1".into())),
            KernelSpec::Rbf { gamma } if !(gamma > 0.0 && gamma.is_finite()) => Err(SvmError::InvalidParameter(
                format!("gamma must be positive, got {gamma}"),
            )),
            _ => Ok(()),
        }
    }

    fn eval_unchecked(&self, x: &[f64], z: &[f64]) -> f64 {
        match *self {
            KernelSpec::Linear => dot(x, z),
            KernelSpec::Poly { degree, coef0 } => (dot(x, z) + coef0).powi(degree as i32),
            KernelSpec::Rbf { gamma } => {
                let d2: f64 = x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
                (-gamma * d2).exp()
            }
        }
    }
}

impl std::fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KernelSpec::Linear => f.write_str("linear"),
            KernelSpec::Poly { degree, coef0 } if *coef0 == 1.0 => write!(f, "poly{degree}"),
            KernelSpec::Poly { degree, coef0 } => write!(f, "poly{degree}:{coef0}"),
            KernelSpec::Rbf { gamma } => write!(f, "rbf:{gamma}"),
        }
    }
}

impl std::str::FromStr for KernelSpec {
    type Err = SvmError;

    /// `linear`, `poly<d>`, `poly<d>:<coef0>`, `rbf`, `rbf:<gamma>`.
    /// A bare `rbf` carries gamma 1 and is meant to be tuned.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SvmError::InvalidParameter(format!("unknown kernel {s:?}"));
        let lower = s.to_ascii_lowercase();
        let spec = if lower == "linear" {
            KernelSpec::Linear
        } else if lower == "rbf" {
            KernelSpec::rbf(1.0)
        } else if let Some(g) = lower.strip_prefix("rbf:") {
            KernelSpec::rbf(g.parse().map_err(|_| bad())?)
        } else if let Some(rest) = lower.strip_prefix("poly") {
            let (d, c) = rest.split_once(':').unwrap_or((rest, "1"));
            KernelSpec::Poly {
                degree: d.parse().map_err(|_| bad())?,
                coef0: c.parse().map_err(|_| bad())?,
            }
        } else {
            return Err(bad());
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn dot(x: &[f64], z: &[f64]) -> f64 {
    x.iter().zip(z).map(|(a, b)| a * b).sum()
}

pub fn kernel_eval(spec: &KernelSpec, x: &[f64], z: &[f64]) -> Result<f64, SvmError> {
    if x.len() != z.len() {
        return Err(SvmError::DimensionMismatch {
            expected: x.len(),
            found: z.len(),
        });
    }
    spec.validate()?;
    Ok(spec.eval_unchecked(x, z))
}

/// Full kernel matrix of `xs`.
pub fn gram_matrix(spec: &KernelSpec, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = xs.len();
    let mut k = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let v = spec.eval_unchecked(&xs[i], &xs[j]);
            k[i][j] = v;
            k[j][i] = v;
        }
    }
    k
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub kernel: KernelSpec,
    pub c: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl SvmConfig {
    pub fn new(kernel: KernelSpec, c: f64) -> Self {
        Self {
            kernel,
            c,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    /// Full passes used; one pass is `n` pair updates.
    pub iterations: usize,
    pub kkt_residual: f64,
    pub converged: bool,
    pub dual_objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedSvm {
    pub kernel: KernelSpec,
    pub c: f64,
    pub bias: f64,
    pub support_vectors: Vec<Vec<f64>>,
    /// `α_i · y_i` per support vector.
    pub dual_coefs: Vec<f64>,
    pub meta: TrainingMeta,
}

/// Solution of the dual over the training set, before support-vector extraction.
#[derive(Debug, Clone)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub meta: TrainingMeta,
}

/// L2 dual objective `Σα − ½ αᵀ Q α` with `Q_ij = y_i y_j (K_ij + δ_ij / C)`.
pub fn dual_objective(gram: &[Vec<f64>], y: &[f64], alpha: &[f64], c: f64) -> f64 {
    let n = alpha.len();
    let mut quad = 0.0;
    for i in 0..n {
        if alpha[i] == 0.0 {
            continue;
        }
        let mut row = 0.0;
        for j in 0..n {
            row += alpha[j] * y[j] * gram[i][j];
        }
        quad += alpha[i] * y[i] * row + alpha[i] * alpha[i] / c;
    }
    alpha.iter().sum::<f64>() - 0.5 * quad
}

fn check_inputs(xs: &[Vec<f64>], y: &[f64], c: f64, tol: f64) -> Result<(), SvmError> {
    if xs.len() != y.len() {
        return Err(SvmError::DimensionMismatch {
            expected: xs.len(),
            found: y.len(),
        });
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(SvmError::InvalidParameter(format!("C must be positive, got {c}")));
    }
    if tol.is_nan() || tol <= 0.0 {
        return Err(SvmError::InvalidParameter(format!("tol must be positive, got {tol}")));
    }
    if let Some(bad) = y.iter().find(|v| **v != 1.0 && **v != -1.0) {
        return Err(SvmError::InvalidParameter(format!(
            "targets must be +1 or -1, got {bad}"
        )));
    }
    if !(y.contains(&1.0) && y.contains(&-1.0)) {
        return Err(SvmError::SingleClass);
    }
    if let Some(d) = xs.first().map(Vec::len) {
        if let Some(bad) = xs.iter().find(|x| x.len() != d) {
            return Err(SvmError::DimensionMismatch {
                expected: d,
                found: bad.len(),
            });
        }
    }
    Ok(())
}

/// Solve the L2 dual given a precomputed kernel matrix.
pub fn solve_dual(gram: &[Vec<f64>], y: &[f64], c: f64, max_iter: usize, tol: f64) -> DualSolution {
    let n = y.len();
    let inv_c = 1.0 / c;
    let kt = |i: usize, j: usize| gram[i][j] + if i == j { inv_c } else { 0.0 };
    let mut alpha = vec![0.0; n];
    // Gradient of ½αᵀQα − Σα.
    let mut grad = vec![-1.0; n];

    let select = |alpha: &[f64], grad: &[f64]| {
        let mut up = (f64::NEG_INFINITY, usize::MAX);
        let mut low = (f64::INFINITY, usize::MAX);
        for t in 0..n {
            let v = -y[t] * grad[t];
            if (y[t] > 0.0 || alpha[t] > 0.0) && v > up.0 {
                up = (v, t);
            }
            if (y[t] < 0.0 || alpha[t] > 0.0) && v < low.0 {
                low = (v, t);
            }
        }
        (up, low)
    };

    let mut passes = 0;
    let mut residual;
    #[cfg(debug_assertions)]
    let mut last_obj = 0.0;
    loop {
        let mut converged = false;
        for _ in 0..n.max(1) {
            let ((m, i), (mm, j)) = select(&alpha, &grad);
            residual = m - mm;
            if residual <= tol {
                converged = true;
                break;
            }
            let a = (kt(i, i) + kt(j, j) - 2.0 * kt(i, j)).max(1e-12);
            let mut t = residual / a;
            if y[i] < 0.0 {
                t = t.min(alpha[i]);
            }
            if y[j] > 0.0 {
                t = t.min(alpha[j]);
            }
            alpha[i] = (alpha[i] + y[i] * t).max(0.0);
            alpha[j] = (alpha[j] - y[j] * t).max(0.0);
            for (k, g) in grad.iter_mut().enumerate() {
                *g += y[k] * t * (kt(k, i) - kt(k, j));
            }
        }
        if converged {
            break;
        }
        passes += 1;
        #[cfg(debug_assertions)]
        {
            let obj = dual_objective(gram, y, &alpha, c);
            debug_assert!(obj >= last_obj - 1e-9 * obj.abs().max(1.0), "dual objective decreased");
            last_obj = obj;
        }
        if passes >= max_iter {
            break;
        }
    }
    let ((m, _), (mm, _)) = select(&alpha, &grad);
    residual = (m - mm).max(0.0);

    let sv: Vec<usize> = (0..n).filter(|&i| alpha[i] > 0.0).collect();
    let bias = if sv.is_empty() {
        0.0
    } else {
        sv.iter()
            .map(|&i| {
                let s: f64 = sv.iter().map(|&j| alpha[j] * y[j] * gram[j][i]).sum();
                y[i] * (1.0 - alpha[i] * inv_c) - s
            })
            .sum::<f64>()
            / sv.len() as f64
    };
    let meta = TrainingMeta {
        iterations: passes,
        kkt_residual: residual,
        converged: residual <= tol,
        dual_objective: dual_objective(gram, y, &alpha, c),
    };
    DualSolution { alpha, bias, meta }
}

pub fn train_l2svm(
    xs: &[Vec<f64>],
    y: &[f64],
    kernel: KernelSpec,
    c: f64,
    max_iter: usize,
    tol: f64,
) -> Result<TrainedSvm, SvmError> {
    check_inputs(xs, y, c, tol)?;
    kernel.validate()?;
    let gram = gram_matrix(&kernel, xs);
    let sol = solve_dual(&gram, y, c, max_iter, tol);
    let (support_vectors, dual_coefs) = sol
        .alpha
        .iter()
        .enumerate()
        .filter(|(_, a)| **a > 0.0)
        .map(|(i, a)| (xs[i].clone(), a * y[i]))
        .unzip();
    Ok(TrainedSvm {
        kernel,
        c,
        bias: sol.bias,
        support_vectors,
        dual_coefs,
        meta: sol.meta,
    })
}

pub fn train(xs: &[Vec<f64>], y: &[f64], cfg: &SvmConfig) -> Result<TrainedSvm, SvmError> {
    train_l2svm(xs, y, cfg.kernel, cfg.c, cfg.max_iter, cfg.tol)
}

impl TrainedSvm {
    pub fn dimension(&self) -> Option<usize> {
        self.support_vectors.first().map(Vec::len)
    }

    pub fn decision_value(&self, x: &[f64]) -> Result<f64, SvmError> {
        let d = self
            .dimension()
            .ok_or_else(|| SvmError::InvalidModel("no support vectors".into()))?;
        if x.len() != d {
            return Err(SvmError::DimensionMismatch {
                expected: d,
                found: x.len(),
            });
        }
        Ok(self
            .support_vectors
            .iter()
            .zip(&self.dual_coefs)
            .map(|(sv, coef)| coef * self.kernel.eval_unchecked(sv, x))
            .sum::<f64>()
            + self.bias)
    }

    /// +1 when the decision value is nonnegative, −1 otherwise.
    pub fn predict(&self, x: &[f64]) -> Result<i8, SvmError> {
        Ok(if self.decision_value(x)? >= 0.0 { 1 } else { -1 })
    }
}

pub fn decision_value(model: &TrainedSvm, x: &[f64]) -> Result<f64, SvmError> {
    model.decision_value(x)
}

pub fn predict(model: &TrainedSvm, x: &[f64]) -> Result<i8, SvmError> {
    model.predict(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn kernels() {
        let x = [0.3, -1.2, 4.0];
        assert_eq!(kernel_eval(&KernelSpec::rbf(0.7), &x, &x).unwrap(), 1.0);
        assert_eq!(
            kernel_eval(&KernelSpec::poly(2), &[1.0, 0.0], &[1.0, 0.0]).unwrap(),
            4.0
        );
        assert_eq!(kernel_eval(&KernelSpec::Linear, &[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        assert!(matches!(
            kernel_eval(&KernelSpec::Linear, &[1.0], &[1.0, 2.0]),
            Err(SvmError::DimensionMismatch { .. })
        ));
        assert!(kernel_eval(&KernelSpec::rbf(0.0), &x, &x).is_err());
        assert!(kernel_eval(&KernelSpec::poly(0), &x, &x).is_err());
    }

    #[test]
    fn kernel_strings() {
        for s in ["linear", "poly2", "poly3:0.5", "rbf:0.125"] {
            assert_eq!(s.parse::<KernelSpec>().unwrap().to_string(), s);
        }
        assert!("sigmoid".parse::<KernelSpec>().is_err());
        assert!("rbf:-1".parse::<KernelSpec>().is_err());
    }

    #[test]
    fn two_points() {
        let xs = vec![vec![0.0], vec![1.0]];
        let y = vec![-1.0, 1.0];
        let m = train_l2svm(&xs, &y, KernelSpec::Linear, 1e6, 1000, 1e-6).unwrap();
        assert!(m.meta.converged);
        assert_abs_diff_eq!(m.decision_value(&[0.5]).unwrap(), 0.0, epsilon = 1e-3);
        assert_abs_diff_eq!(m.decision_value(&[1.0]).unwrap(), 1.0, epsilon = 1e-3);
        assert_abs_diff_eq!(m.decision_value(&[0.0]).unwrap(), -1.0, epsilon = 1e-3);
        // Closed form: α = 2 / ‖x₁ − x₂‖² for hard margin.
        for c in &m.dual_coefs {
            assert_abs_diff_eq!(c.abs(), 2.0, epsilon = 1e-3);
        }
    }

    #[test]
    fn xor_with_quadratic_kernel() {
        let xs = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]];
        let y = vec![-1.0, -1.0, 1.0, 1.0];
        let m = train_l2svm(&xs, &y, KernelSpec::poly(2), 10.0, 1000, 1e-3).unwrap();
        assert!(m.meta.converged);
        for (x, t) in xs.iter().zip(&y) {
            assert_eq!(m.predict(x).unwrap() as f64, *t);
        }
    }

    #[test]
    fn kkt_at_support_vectors() {
        let xs = vec![
            vec![0.0, 0.2],
            vec![0.4, 0.1],
            vec![0.9, 1.0],
            vec![0.6, 0.8],
            vec![0.5, 0.5],
        ];
        let y = vec![-1.0, -1.0, 1.0, 1.0, -1.0];
        let c = 2.0;
        let m = train_l2svm(&xs, &y, KernelSpec::Linear, c, 1000, 1e-6).unwrap();
        let sum: f64 = m.dual_coefs.iter().sum();
        assert!(sum.abs() <= 1e-6 * m.dual_coefs.iter().map(|a| a.abs()).sum::<f64>());
        for (sv, coef) in m.support_vectors.iter().zip(&m.dual_coefs) {
            let yi = coef.signum();
            let f = m.decision_value(sv).unwrap();
            assert_abs_diff_eq!(yi * f, 1.0 - coef.abs() / c, epsilon = 1e-4);
        }
    }

    #[test]
    fn predict_tie_rule_and_invalid_model() {
        let mut m = TrainedSvm {
            kernel: KernelSpec::Linear,
            c: 1.0,
            bias: 0.0,
            support_vectors: vec![vec![1.0]],
            dual_coefs: vec![0.7],
            meta: TrainingMeta {
                iterations: 0,
                kkt_residual: 0.0,
                converged: true,
                dual_objective: 0.0,
            },
        };
        assert_eq!(m.predict(&[1.0]).unwrap(), 1);
        assert_eq!(m.predict(&[0.0]).unwrap(), 1);
        m.bias = -0.2;
        assert_eq!(m.predict(&[0.0]).unwrap(), -1);
        m.support_vectors.clear();
        m.dual_coefs.clear();
        assert!(matches!(m.decision_value(&[0.0]), Err(SvmError::InvalidModel(_))));
    }

    #[test]
    fn input_errors() {
        let xs = vec![vec![0.0], vec![1.0]];
        assert_eq!(
            train_l2svm(&xs, &[1.0, 1.0], KernelSpec::Linear, 1.0, 10, 1e-3).unwrap_err(),
            SvmError::SingleClass
        );
        assert!(train_l2svm(&xs, &[1.0, -1.0], KernelSpec::Linear, 0.0, 10, 1e-3).is_err());
    }

    #[test]
    fn model_json_round_trip() {
        let xs = vec![vec![0.1, 0.3], vec![0.7, 0.9], vec![0.2, 0.8]];
        let m = train_l2svm(&xs, &[-1.0, 1.0, 1.0], KernelSpec::rbf(0.5), 4.0, 1000, 1e-3).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        let back: TrainedSvm = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
    }
}
