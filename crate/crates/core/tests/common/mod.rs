//! Shared helpers for integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use iacd_core::svm::{gram_matrix, KernelSpec};

/// Exact Euclidean projection of `v` onto `{a >= 0, y·a = 0}`.
///
/// The constraint sum `h(λ) = Σ y_i max(0, v_i − λ y_i)` is piecewise linear
/// and nonincreasing in λ, with breakpoints at `v_i y_i`.
pub fn project(v: &[f64], y: &[f64]) -> Vec<f64> {
    let h = |lam: f64| -> f64 { v.iter().zip(y).map(|(vi, yi)| yi * (vi - lam * yi).max(0.0)).sum() };
    let mut bp: Vec<f64> = v.iter().zip(y).map(|(a, b)| a * b).collect();
    bp.sort_by(f64::total_cmp);
    bp.dedup();
    // Extend past the extreme breakpoints so a sign change is bracketed.
    let pad = bp.iter().map(|x| x.abs()).fold(1.0, f64::max);
    let mut pts = vec![bp[0] - pad];
    pts.extend_from_slice(&bp);
    pts.push(bp[bp.len() - 1] + pad);
    let mut lam = pts[0];
    for w in pts.windows(2) {
        let (h0, h1) = (h(w[0]), h(w[1]));
        if h0 >= 0.0 && h1 <= 0.0 {
            lam = if h0 == h1 {
                w[0]
            } else {
                w[0] + (w[1] - w[0]) * h0 / (h0 - h1)
            };
            break;
        }
    }
    v.iter().zip(y).map(|(vi, yi)| (vi - lam * yi).max(0.0)).collect()
}

/// Reference L2-SVM dual solver: accelerated projected gradient with
/// adaptive restart, run until the gradient-mapping norm is below `resid`.
/// Returns the optimal dual objective.
pub fn reference_dual(gram: &[Vec<f64>], y: &[f64], c: f64, resid: f64) -> f64 {
    let n = y.len();
    let q: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| y[i] * y[j] * (gram[i][j] + if i == j { 1.0 / c } else { 0.0 }))
                .collect()
        })
        .collect();
    let grad = |a: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| q[i].iter().zip(a).map(|(u, v)| u * v).sum::<f64>() - 1.0)
            .collect()
    };
    let obj = |a: &[f64]| -> f64 {
        let g = grad(a);
        // ½aᵀQa − Σa = ½ aᵀ(g + 1) − Σa
        a.iter().zip(&g).map(|(ai, gi)| 0.5 * ai * (gi + 1.0) - ai).sum()
    };
    // Lipschitz constant by power iteration with a safety margin.
    let mut v = vec![1.0; n];
    let mut lip = 1.0;
    for _ in 0..500 {
        let w: Vec<f64> = (0..n).map(|i| q[i].iter().zip(&v).map(|(a, b)| a * b).sum()).collect();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        lip = norm / v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = w.iter().map(|x| x / norm).collect();
    }
    let lip = lip * 1.01 + 1e-12;
    let step = 1.0 / lip;

    let mut x = vec![0.0; n];
    let mut z = x.clone();
    let mut t = 1.0f64;
    let mut fx = obj(&x);
    for iter in 0..2_000_000u64 {
        let gz = grad(&z);
        let xn = project(&z.iter().zip(&gz).map(|(a, g)| a - step * g).collect::<Vec<_>>(), y);
        let fxn = obj(&xn);
        let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        if fxn > fx && t > 1.0 {
            // Restart momentum.
            z = x.clone();
            t = 1.0;
            continue;
        }
        z = xn.iter().zip(&x).map(|(a, b)| a + (t - 1.0) / tn * (a - b)).collect();
        x = xn;
        fx = fxn;
        t = tn;
        if iter % 25 != 0 {
            continue;
        }
        let gx = grad(&x);
        let px = project(&x.iter().zip(&gx).map(|(a, g)| a - step * g).collect::<Vec<_>>(), y);
        let r = x.iter().zip(&px).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() * lip;
        if r <= resid {
            break;
        }
    }
    -fx
}

pub struct Dataset {
    pub xs: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub kernel: KernelSpec,
    pub c: f64,
}

/// Random small problem: n in 4..=20, d in 1..=5, kernel cycling by `case`.
pub fn random_dataset(case: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + case);
    let n = rng.gen_range(4..=20);
    let d = rng.gen_range(1..=5);
    let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen::<f64>()).collect()).collect();
    let mut y: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
    y[0] = 1.0;
    y[1] = -1.0;
    let kernel = match case % 3 {
        0 => KernelSpec::Linear,
        1 => KernelSpec::poly(rng.gen_range(2..=3)),
        _ => KernelSpec::rbf(2f64.powf(rng.gen_range(-3.0..2.0))),
    };
    let c = 2f64.powf(rng.gen_range(-3.0..7.0));
    Dataset { xs, y, kernel, c }
}

pub fn reference_objective(ds: &Dataset) -> f64 {
    reference_dual(&gram_matrix(&ds.kernel, &ds.xs), &ds.y, ds.c, 1e-10)
}
