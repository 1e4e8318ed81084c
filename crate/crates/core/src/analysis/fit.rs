//! Weighted least-squares fits of `A r^m (+ B)` to RB signals.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rb_engine::RBDataset;

/// How the constant term of the model is treated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Offset {
    None,
    Fixed(f64),
    Free,
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayFit {
    pub lambda: String,
    #[serde(rename = "A")]
    pub a: f64,
    pub r: f64,
    pub offset: f64,
    pub stderr_a: f64,
    pub stderr_r: f64,
    pub stderr_offset: Option<f64>,
    /// Parameter covariance in the order `(A, r[, B])`.
    pub covariance: Vec<Vec<f64>>,
    /// Weighted residual norm.
    pub residual_norm: f64,
    pub m_window: (usize, usize),
    pub n_points: usize,
    /// `true` when the data carried usable standard errors.
    pub weighted: bool,
    pub degenerate: bool,
    pub iterations: usize,
}

const MAX_ITER: usize = 500;
const GRID: usize = 2201;

fn model(theta: &[f64], m: f64, fixed: f64) -> f64 {
    let base = theta[0] * theta[1].powf(m);
    if theta.len() == 3 {
        base + theta[2]
    } else {
        base + fixed
    }
}

fn jacobian_row(theta: &[f64], m: f64) -> Vec<f64> {
    let (a, r) = (theta[0], theta[1]);
    let rm1 = if m == 0.0 { 0.0 } else { m * r.powf(m - 1.0) };
    let mut row = vec![r.powf(m), a * rm1];
    if theta.len() == 3 {
        row.push(1.0);
    }
    row
}

/// Linear least squares for the amplitude (and offset) at a fixed rate.
fn linear_at(r: f64, ms: &[f64], ys: &[f64], w: &[f64], free: bool) -> (Vec<f64>, f64) {
    let k = if free { 2 } else { 1 };
    let mut ata = DMatrix::<f64>::zeros(k, k);
    let mut aty = DVector::<f64>::zeros(k);
    for ((&m, &y), &wi) in ms.iter().zip(ys).zip(w) {
        let mut row = vec![r.powf(m)];
        if free {
            row.push(1.0);
        }
        for i in 0..k {
            aty[i] += wi * row[i] * y;
            for j in 0..k {
                ata[(i, j)] += wi * row[i] * row[j];
            }
        }
    }
    let sol = ata.clone().lu().solve(&aty).unwrap_or_else(|| DVector::zeros(k));
    let cost: f64 = ms
        .iter()
        .zip(ys)
        .zip(w)
        .map(|((&m, &y), &wi)| {
            let f = sol[0] * r.powf(m) + if free { sol[1] } else { 0.0 };
            wi * (y - f).powi(2)
        })
        .sum();
    (sol.as_slice().to_vec(), cost)
}

fn initial_guess(ms: &[f64], ys: &[f64], w: &[f64], free: bool) -> Vec<f64> {
    if !free {
        let pos = ys.iter().all(|&y| y > 0.0);
        let neg = ys.iter().all(|&y| y < 0.0);
        if pos || neg {
            // weighted line through log|y|; the weight of log y is (y/σ)^2
            let (mut s, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for ((&m, &y), &wi) in ms.iter().zip(ys).zip(w) {
                let lw = wi * y * y;
                let ly = y.abs().ln();
                s += lw;
                sx += lw * m;
                sy += lw * ly;
                sxx += lw * m * m;
                sxy += lw * m * ly;
            }
            let det = s * sxx - sx * sx;
            if det.abs() > 1e-300 {
                let slope = (s * sxy - sx * sy) / det;
                let icept = (sy - slope * sx) / s;
                let sign = if pos { 1.0 } else { -1.0 };
                return vec![sign * icept.exp(), slope.exp()];
            }
        }
    }
    let mut best = (f64::INFINITY, vec![0.0, 1.0]);
    for i in 0..GRID {
        let r = -1.1 + 2.2 * i as f64 / (GRID - 1) as f64;
        let (sol, cost) = linear_at(r, ms, ys, w, free);
        if cost < best.0 {
            let mut theta = vec![sol[0], r];
            if free {
                theta.push(sol[1]);
            }
            best = (cost, theta);
        }
    }
    best.1
}

/// Fits `A r^m + B` to `(m, y, stderr)` triples.
///
/// Weights are `1/stderr^2` when every standard error is positive and finite; otherwise the
/// fit is unweighted and the covariance is scaled by the residual variance.
pub fn fit_exponential(ms: &[usize], ys: &[f64], stderrs: Option<&[f64]>, offset: Offset) -> Result<DecayFit> {
    if ms.len() != ys.len() || stderrs.is_some_and(|s| s.len() != ys.len()) {
        return Err(Error::Dimension("fit inputs have different lengths".into()));
    }
    let free = offset == Offset::Free;
    let k = if free { 3 } else { 2 };
    let mut distinct = ms.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < k + 1 {
        return Err(Error::Config(format!(
            "fit needs at least {} distinct sequence lengths, got {}",
            k + 1,
            distinct.len()
        )));
    }
    if ys.iter().any(|y| !y.is_finite()) {
        return Err(Error::Numerical("non-finite data point".into()));
    }
    let weighted = stderrs.is_some_and(|s| s.iter().all(|&e| e.is_finite() && e > 0.0));
    let w: Vec<f64> = match (weighted, stderrs) {
        (true, Some(s)) => s.iter().map(|e| 1.0 / (e * e)).collect(),
        _ => vec![1.0; ys.len()],
    };
    let fixed = match offset {
        Offset::Fixed(b) => b,
        _ => 0.0,
    };
    let mf: Vec<f64> = ms.iter().map(|&m| m as f64).collect();
    let shifted: Vec<f64> = ys.iter().map(|y| y - fixed).collect();
    let mut theta = initial_guess(&mf, &shifted, &w, free);

    let cost_of = |th: &[f64]| -> f64 {
        mf.iter().zip(ys).zip(&w).map(|((&m, &y), &wi)| wi * (y - model(th, m, fixed)).powi(2)).sum()
    };
    let normal = |th: &[f64]| -> (DMatrix<f64>, DVector<f64>) {
        let mut h = DMatrix::zeros(k, k);
        let mut g = DVector::zeros(k);
        for ((&m, &y), &wi) in mf.iter().zip(ys).zip(&w) {
            let row = jacobian_row(th, m);
            let res = y - model(th, m, fixed);
            for i in 0..k {
                g[i] += wi * row[i] * res;
                for j in 0..k {
                    h[(i, j)] += wi * row[i] * row[j];
                }
            }
        }
        (h, g)
    };

    // Levenberg-Marquardt
    let mut cost = cost_of(&theta);
    let mut mu = 1e-3;
    let mut iterations = 0;
    for it in 0..MAX_ITER {
        iterations = it + 1;
        let (h, g) = normal(&theta);
        let mut damped = h.clone();
        for i in 0..k {
            damped[(i, i)] += mu * h[(i, i)].max(1e-300);
        }
        let Some(step) = damped.lu().solve(&g) else {
            mu *= 10.0;
            continue;
        };
        let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + s).collect();
        let tc = cost_of(&trial);
        if tc.is_finite() && tc <= cost {
            let rel = step.iter().zip(&theta).map(|(s, t)| (s / t.abs().max(1e-12)).abs()).fold(0.0, f64::max);
            let drop = cost - tc;
            theta = trial;
            cost = tc;
            mu = (mu / 3.0).max(1e-15);
            if rel < 1e-14 || drop <= 1e-30 + 1e-16 * cost {
                break;
            }
        } else {
            mu *= 4.0;
            if mu > 1e16 {
                break;
            }
        }
    }

    let (h, _) = normal(&theta);
    let dof = ys.len().saturating_sub(k);
    let scale = if weighted {
        1.0
    } else if dof > 0 {
        cost / dof as f64
    } else {
        f64::NAN
    };
    let svd = h.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let mut degenerate = !(smin > smax * 1e-14) || dof == 0;
    let cov = match h.try_inverse() {
        Some(inv) if !degenerate => inv * scale,
        _ => {
            degenerate = true;
            DMatrix::from_element(k, k, f64::NAN)
        }
    };
    Ok(DecayFit {
        lambda: String::new(),
        a: theta[0],
        r: theta[1],
        offset: if free { theta[2] } else { fixed },
        stderr_a: cov[(0, 0)].max(0.0).sqrt(),
        stderr_r: cov[(1, 1)].max(0.0).sqrt(),
        stderr_offset: free.then(|| cov[(2, 2)].max(0.0).sqrt()),
        covariance: (0..k).map(|i| (0..k).map(|j| cov[(i, j)]).collect()).collect(),
        residual_norm: cost.sqrt(),
        m_window: (distinct[0], *distinct.last().unwrap()),
        n_points: ys.len(),
        weighted,
        degenerate,
        iterations,
    })
}

/// Fits the estimator series of one filter, using sequence lengths `m >= m_min`.
pub fn fit_decay(ds: &RBDataset, lambda: &str, m_min: usize, offset: Offset) -> Result<DecayFit> {
    let pts: Vec<(usize, f64, f64)> = ds.series(lambda)?.into_iter().filter(|p| p.0 >= m_min).collect();
    fit_series(lambda, &pts, offset)
}

/// Fits `(m, estimate, stderr)` rows.
pub fn fit_series(lambda: &str, pts: &[(usize, f64, f64)], offset: Offset) -> Result<DecayFit> {
    let ms: Vec<usize> = pts.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let es: Vec<f64> = pts.iter().map(|p| p.2).collect();
    let mut fit = fit_exponential(&ms, &ys, Some(&es), offset)?;
    fit.lambda = lambda.to_string();
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn exact_synthetic_decay() {
        let ms: Vec<usize> = (5..=50).collect();
        let ys: Vec<f64> = ms.iter().map(|&m| 0.75 * 0.97f64.powi(m as i32)).collect();
        let fit = fit_exponential(&ms, &ys, None, Offset::None).unwrap();
        assert!((fit.a - 0.75).abs() < 1e-8 && (fit.r - 0.97).abs() < 1e-8, "{fit:?}");
        assert_eq!(fit.m_window, (5, 50));
    }

    #[test]
    fn sign_changing_data_uses_grid_start() {
        let ms: Vec<usize> = (1..=30).collect();
        let ys: Vec<f64> = ms.iter().map(|&m| 0.4 * (-0.8f64).powi(m as i32)).collect();
        let fit = fit_exponential(&ms, &ys, None, Offset::None).unwrap();
        assert!((fit.r + 0.8).abs() < 1e-8 && (fit.a - 0.4).abs() < 1e-8, "{fit:?}");
    }

    #[test]
    fn offsets() {
        let ms: Vec<usize> = (1..=40).collect();
        let ys: Vec<f64> = ms.iter().map(|&m| 1.6 * 0.7f64.powi(m as i32) + 0.875).collect();
        let fixed = fit_exponential(&ms, &ys, None, Offset::Fixed(0.875)).unwrap();
        assert!((fixed.r - 0.7).abs() < 1e-8);
        let free = fit_exponential(&ms, &ys, None, Offset::Free).unwrap();
        assert!((free.r - 0.7).abs() < 1e-7 && (free.offset - 0.875).abs() < 1e-7, "{free:?}");
    }

    #[test]
    fn noisy_constant_signal_has_unit_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let ms: Vec<usize> = (1..=20).collect();
        let ys: Vec<f64> = ms.iter().map(|_| 0.75 + noise.sample(&mut rng)).collect();
        let es = vec![0.01; ys.len()];
        let fit = fit_exponential(&ms, &ys, Some(&es), Offset::None).unwrap();
        assert!(fit.weighted);
        assert!((fit.r - 1.0).abs() < 3.0 * fit.stderr_r, "{fit:?}");
    }

    #[test]
    fn too_few_points() {
        assert!(matches!(fit_exponential(&[1, 2], &[1.0, 0.9], None, Offset::None), Err(Error::Config(_))));
    }
}
