//! Dense helpers and the iterative eigensolvers used for matrix-free operators.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// A real linear operator known only through its action.
pub trait LinearMap: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
    fn apply_transpose(&self, x: &[f64], y: &mut [f64]);
}

type ApplyFn = Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Matrix-free operator given by closures for the action and its transpose.
pub struct SparseApply {
    dim: usize,
    apply: ApplyFn,
    adjoint: ApplyFn,
}

impl SparseApply {
    pub fn new<F, G>(dim: usize, apply: F, adjoint: G) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        G: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self { dim, apply: Box::new(apply), adjoint: Box::new(adjoint) }
    }

    pub fn from_matrix(m: DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols());
        let dim = m.nrows();
        let mt = m.transpose();
        Self::new(dim, move |x, y| dense_apply(&m, x, y), move |x, y| dense_apply(&mt, x, y))
    }
}

impl LinearMap for SparseApply {
    fn dim(&self) -> usize {
        self.dim
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        (self.apply)(x, y)
    }
    fn apply_transpose(&self, x: &[f64], y: &mut [f64]) {
        (self.adjoint)(x, y)
    }
}

impl LinearMap for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        dense_apply(self, x, y)
    }
    fn apply_transpose(&self, x: &[f64], y: &mut [f64]) {
        for (j, yj) in y.iter_mut().enumerate() {
            *yj = self.column(j).iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }
}

fn dense_apply(m: &DMatrix<f64>, x: &[f64], y: &mut [f64]) {
    y.iter_mut().for_each(|v| *v = 0.0);
    for (j, &xj) in x.iter().enumerate() {
        if xj != 0.0 {
            for (yi, mij) in y.iter_mut().zip(m.column(j).iter()) {
                *yi += mij * xj;
            }
        }
    }
}

/// Materialize a linear map column by column.
pub fn to_dense(op: &dyn LinearMap) -> DMatrix<f64> {
    let n = op.dim();
    let mut m = DMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        op.apply(&e, &mut col);
        m.column_mut(j).copy_from_slice(&col);
        e[j] = 0.0;
    }
    m
}

/// Moore-Penrose pseudoinverse; singular values at or below `rel_tol * sigma_max` are dropped.
pub fn pinv(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    if m.is_empty() {
        return m.transpose();
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cut = rel_tol * smax;
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let mut out = DMatrix::zeros(m.ncols(), m.nrows());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cut && s > 0.0 {
            out += (vt.row(k).transpose() * u.column(k).transpose()) / s;
        }
    }
    out
}

pub fn spectral_norm_dense(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().iter().cloned().fold(0.0, f64::max)
}

/// Orthonormalize with two Gram-Schmidt passes, dropping vectors whose
/// remaining norm is below `tol` times their original norm.
pub fn orthonormalize(vectors: &[DVector<f64>], tol: f64) -> Vec<DVector<f64>> {
    let mut out: Vec<DVector<f64>> = Vec::new();
    for v in vectors {
        let n0 = v.norm();
        if n0 == 0.0 {
            continue;
        }
        let mut w = v.clone();
        for _ in 0..2 {
            for q in &out {
                let c = q.dot(&w);
                w.axpy(-c, q, 1.0);
            }
        }
        let nw = w.norm();
        if nw > tol * n0 {
            out.push(w / nw);
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn project_out(v: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for q in basis {
            let c = dot(q, v);
            axpy(-c, q, v);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Which {
    LargestAlgebraic,
    SmallestAlgebraic,
    LargestMagnitude,
}

#[derive(Clone, Debug)]
pub struct LanczosOptions {
    pub max_krylov: usize,
    pub max_restarts: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self { max_krylov: 80, max_restarts: 60, tol: 1e-10, seed: 0x5eed }
    }
}

#[derive(Clone, Debug)]
pub struct Eigenpair {
    pub value: f64,
    pub vector: Vec<f64>,
    pub residual: f64,
}

fn start_vector(dim: usize, seed: u64) -> Vec<f64> {
    // splitmix64 stream; deterministic and independent of any RNG crate state
    let mut s = seed;
    (0..dim)
        .map(|_| {
            s = s.wrapping_add(0x9E3779B97F4A7C15);
            let mut z = s;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
            z ^= z >> 31;
            (z >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
        .collect()
}

/// Symmetric Lanczos with full reorthogonalization and explicit restarts.
/// Works in the orthogonal complement of `deflate` (assumed orthonormal and invariant).
pub fn lanczos(
    apply: &(dyn Fn(&[f64], &mut [f64]) + Sync),
    dim: usize,
    deflate: &[Vec<f64>],
    which: Which,
    opts: &LanczosOptions,
) -> Result<Eigenpair> {
    let mut start = start_vector(dim, opts.seed);
    let mut last_res = f64::INFINITY;
    let mut w = vec![0.0; dim];
    for restart in 0..=opts.max_restarts {
        project_out(&mut start, deflate);
        let nrm = norm(&start);
        if nrm < 1e-300 {
            return Ok(Eigenpair { value: 0.0, vector: start, residual: 0.0 });
        }
        start.iter_mut().for_each(|v| *v /= nrm);
        let mut q: Vec<Vec<f64>> = vec![start.clone()];
        let mut alphas: Vec<f64> = Vec::new();
        let mut betas: Vec<f64> = Vec::new();
        let kmax = opts.max_krylov.min(dim.saturating_sub(deflate.len())).max(1);
        let mut best: Option<(f64, DVector<f64>, f64)> = None;
        for j in 0..kmax {
            apply(&q[j], &mut w);
            project_out(&mut w, deflate);
            let a = dot(&q[j], &w);
            alphas.push(a);
            axpy(-a, &q[j], &mut w);
            if j > 0 {
                let b = betas[j - 1];
                axpy(-b, &q[j - 1], &mut w);
            }
            project_out(&mut w, &q);
            let b = norm(&w);
            let m = alphas.len();
            let check = j + 1 == kmax || b < 1e-12 || (m >= 4 && m.is_multiple_of(4));
            if check {
                let mut t = DMatrix::zeros(m, m);
                for i in 0..m {
                    t[(i, i)] = alphas[i];
                    if i + 1 < m {
                        t[(i, i + 1)] = betas[i];
                        t[(i + 1, i)] = betas[i];
                    }
                }
                let eig = SymmetricEigen::new(t);
                let idx = pick(&eig.eigenvalues, which);
                let theta = eig.eigenvalues[idx];
                let s = eig.eigenvectors.column(idx).into_owned();
                let res = b * s[m - 1].abs();
                best = Some((theta, s, res));
                if res <= opts.tol * theta.abs().max(1.0) || b < 1e-12 {
                    break;
                }
            }
            if b < 1e-12 {
                break;
            }
            betas.push(b);
            w.iter_mut().for_each(|v| *v /= b);
            q.push(w.clone());
        }
        let (theta, s, _) = best.expect("at least one Ritz check");
        let mut y = vec![0.0; dim];
        for (k, qk) in q.iter().enumerate().take(s.len()) {
            axpy(s[k], qk, &mut y);
        }
        let ny = norm(&y);
        y.iter_mut().for_each(|v| *v /= ny);
        apply(&y, &mut w);
        project_out(&mut w, deflate);
        axpy(-theta, &y, &mut w);
        let res = norm(&w);
        last_res = res;
        if res <= opts.tol.sqrt().min(1e-6) * theta.abs().max(1.0) || res <= opts.tol * 10.0 {
            return Ok(Eigenpair { value: theta, vector: y, residual: res });
        }
        if restart == opts.max_restarts {
            break;
        }
        start = y;
    }
    Err(Error::NonConvergence { iterations: opts.max_restarts * opts.max_krylov, residual: last_res })
}

fn pick(vals: &DVector<f64>, which: Which) -> usize {
    let mut best = 0;
    for i in 1..vals.len() {
        let better = match which {
            Which::LargestAlgebraic => vals[i] > vals[best],
            Which::SmallestAlgebraic => vals[i] < vals[best],
            Which::LargestMagnitude => vals[i].abs() > vals[best].abs(),
        };
        if better {
            best = i;
        }
    }
    best
}

/// Dominant eigenvalues of a symmetric operator (by magnitude), or dominant
/// singular values of a general one via its Gram operator.
pub fn top_eigs(op: &dyn LinearMap, k: usize, symmetric: bool, tol: f64) -> Result<Vec<(f64, Vec<f64>)>> {
    let dim = op.dim();
    let opts = LanczosOptions { tol, ..Default::default() };
    let mut found: Vec<Vec<f64>> = Vec::new();
    let mut out = Vec::new();
    let gram = |x: &[f64], y: &mut [f64]| {
        let mut t = vec![0.0; x.len()];
        op.apply(x, &mut t);
        op.apply_transpose(&t, y);
    };
    let sym = |x: &[f64], y: &mut [f64]| op.apply(x, y);
    for i in 0..k.min(dim) {
        let o = LanczosOptions { seed: opts.seed.wrapping_add(i as u64), ..opts.clone() };
        let pair = if symmetric {
            lanczos(&sym, dim, &found, Which::LargestMagnitude, &o)?
        } else {
            let mut p = lanczos(&gram, dim, &found, Which::LargestAlgebraic, &o)?;
            p.value = p.value.max(0.0).sqrt();
            p
        };
        found.push(pair.vector.clone());
        out.push((pair.value, pair.vector));
    }
    Ok(out)
}

/// Largest singular value; dense SVD for small operators, Lanczos on the Gram operator otherwise.
pub fn spectral_norm(op: &dyn LinearMap, tol: f64) -> Result<f64> {
    if op.dim() <= 512 {
        return Ok(spectral_norm_dense(&to_dense(op)));
    }
    let v = top_eigs(op, 1, false, tol)?;
    Ok(v[0].0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, m: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn penrose_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(r, c, rank) in &[(8, 8, 8), (16, 9, 5), (64, 64, 40), (20, 30, 12)] {
            let a = random(r, rank, &mut rng) * random(rank, c, &mut rng);
            let p = pinv(&a, 1e-10);
            assert!((&a * &p * &a - &a).norm() < 1e-10 * a.norm().max(1.0));
            assert!((&p * &a * &p - &p).norm() < 1e-10 * p.norm().max(1.0));
            let ap = &a * &p;
            let pa = &p * &a;
            assert!((&ap - ap.transpose()).norm() < 1e-10);
            assert!((&pa - pa.transpose()).norm() < 1e-10);
        }
    }

    #[test]
    fn pinv_diagonal_and_projector() {
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]));
        let p = pinv(&d, 1e-10);
        let want = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0, 3.0, 3.0]));
        assert!((p - want).norm() < 1e-12);
        let proj = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0, 1.0, 0.0]));
        assert!((pinv(&proj, 1e-10) - &proj).norm() < 1e-14);
    }

    #[test]
    fn norm_matches_svd_and_is_submultiplicative() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let a = random(64, 64, &mut rng);
            let b = random(64, 64, &mut rng);
            let dense = spectral_norm_dense(&a);
            let op = SparseApply::from_matrix(a.clone());
            let v = top_eigs(&op, 1, false, 1e-12).unwrap()[0].0;
            assert!((v - dense).abs() < 1e-8 * dense);
            assert!(spectral_norm_dense(&(&a * &b)) <= dense * spectral_norm_dense(&b) + 1e-10);
        }
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.8, -0.9, 0.0]));
        assert!((spectral_norm_dense(&d) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn top_eigs_projector_and_diagonal() {
        let p = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0, 1.0, 1.0]));
        let op = SparseApply::from_matrix(p);
        let v: Vec<f64> = top_eigs(&op, 4, true, 1e-12).unwrap().iter().map(|e| e.0).collect();
        for (a, b) in v.iter().zip([1.0, 1.0, 1.0, 0.0]) {
            assert!((a - b).abs() < 1e-10, "{v:?}");
        }
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.7, 0.7, -0.2]));
        let v = top_eigs(&SparseApply::from_matrix(d), 2, true, 1e-12).unwrap();
        assert!((v[0].0 - 1.0).abs() < 1e-10 && (v[1].0 - 0.7).abs() < 1e-10);
    }

    #[test]
    fn lanczos_agrees_with_dense_eigensolve() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = random(256, 256, &mut rng);
            let s = (&a + a.transpose()) * 0.5;
            let eig = SymmetricEigen::new(s.clone());
            let mut ev: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
            ev.sort_by(|x, y| y.abs().partial_cmp(&x.abs()).unwrap());
            let got = top_eigs(&SparseApply::from_matrix(s), 2, true, 1e-12).unwrap();
            assert!((got[0].0 - ev[0]).abs() < 1e-8, "{} vs {}", got[0].0, ev[0]);
            assert!((got[1].0 - ev[1]).abs() < 1e-8, "{} vs {}", got[1].0, ev[1]);
        }
    }

    #[test]
    fn sparse_apply_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random(32, 32, &mut rng);
        let op = SparseApply::from_matrix(a);
        let x: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (mut ax, mut az, mut asum) = (vec![0.0; 32], vec![0.0; 32], vec![0.0; 32]);
        op.apply(&x, &mut ax);
        op.apply(&z, &mut az);
        let s: Vec<f64> = x.iter().zip(&z).map(|(a, b)| 2.5 * a + b).collect();
        op.apply(&s, &mut asum);
        for i in 0..32 {
            assert!((asum[i] - 2.5 * ax[i] - az[i]).abs() < 1e-12);
        }
    }
}
