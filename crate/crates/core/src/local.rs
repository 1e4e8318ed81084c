//! Kernels applying operators that act on a few sites of a site-major tensor vector.

use nalgebra::DMatrix;
use rayon::prelude::*;

/// A local operator: dense, `U W^T` in factored form, or a convex mixture of signed
/// permutations (`perm[a] = (b, s)` sends `e_a` to `s e_b`).
#[derive(Clone, Debug)]
pub enum LocalOp {
    Dense(DMatrix<f64>),
    LowRank { u: DMatrix<f64>, w: DMatrix<f64> },
    Perms(Vec<(f64, Vec<(usize, f64)>)>),
}

impl LocalOp {
    pub fn projector(v: DMatrix<f64>) -> Self {
        LocalOp::LowRank { u: v.clone(), w: v }
    }

    pub fn dim(&self) -> usize {
        match self {
            LocalOp::Dense(m) => m.nrows(),
            LocalOp::LowRank { u, .. } => u.nrows(),
            LocalOp::Perms(v) => v.first().map(|p| p.1.len()).unwrap_or(0),
        }
    }

    /// Whether the operator is known to be symmetric without a dense check.
    pub fn is_symmetric(&self) -> bool {
        match self {
            LocalOp::LowRank { u, w } => u == w,
            LocalOp::Dense(m) => (m - m.transpose()).amax() < 1e-12,
            LocalOp::Perms(_) => {
                self.dim() <= 256 && {
                    let m = self.to_dense();
                    (&m - m.transpose()).amax() < 1e-12
                }
            }
        }
    }

    pub fn transpose(&self) -> LocalOp {
        match self {
            LocalOp::Dense(m) => LocalOp::Dense(m.transpose()),
            LocalOp::LowRank { u, w } => LocalOp::LowRank { u: w.clone(), w: u.clone() },
            LocalOp::Perms(v) => LocalOp::Perms(
                v.iter()
                    .map(|(wt, perm)| {
                        let mut inv = vec![(0, 0.0); perm.len()];
                        for (a, &(b, s)) in perm.iter().enumerate() {
                            inv[b] = (a, s);
                        }
                        (*wt, inv)
                    })
                    .collect(),
            ),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            LocalOp::Dense(m) => m.clone(),
            LocalOp::LowRank { u, w } => u * w.transpose(),
            LocalOp::Perms(v) => {
                let d = self.dim();
                let mut m = DMatrix::zeros(d, d);
                for (wt, perm) in v {
                    for (a, &(b, s)) in perm.iter().enumerate() {
                        m[(b, a)] += wt * s;
                    }
                }
                m
            }
        }
    }

    fn apply_small(&self, g: &[f64], h: &mut [f64], tmp: &mut Vec<f64>) {
        match self {
            LocalOp::Dense(m) => {
                h.iter_mut().for_each(|v| *v = 0.0);
                for (j, &gj) in g.iter().enumerate() {
                    if gj != 0.0 {
                        for (hi, mij) in h.iter_mut().zip(m.column(j).iter()) {
                            *hi += mij * gj;
                        }
                    }
                }
            }
            LocalOp::LowRank { u, w } => {
                tmp.clear();
                for k in 0..w.ncols() {
                    tmp.push(w.column(k).iter().zip(g).map(|(a, b)| a * b).sum());
                }
                h.iter_mut().for_each(|v| *v = 0.0);
                for (k, &c) in tmp.iter().enumerate() {
                    if c != 0.0 {
                        for (hi, uik) in h.iter_mut().zip(u.column(k).iter()) {
                            *hi += uik * c;
                        }
                    }
                }
            }
            LocalOp::Perms(v) => {
                h.iter_mut().for_each(|x| *x = 0.0);
                for (wt, perm) in v {
                    for (&ga, &(b, s)) in g.iter().zip(perm) {
                        h[b] += wt * s * ga;
                    }
                }
            }
        }
    }
}

struct SharedOut(*mut f64);
unsafe impl Sync for SharedOut {}
unsafe impl Send for SharedOut {}

/// `y = (op on sites) ⊗ id` applied to `x`, where `x` has `n` sites of dimension `d`
/// in site-major order (site 0 most significant).
pub fn apply_local(x: &[f64], y: &mut [f64], n: usize, d: usize, sites: &[usize], op: &LocalOp) {
    let total = d.pow(n as u32);
    assert_eq!(x.len(), total);
    assert_eq!(y.len(), total);
    let k = sites.len();
    let dk = d.pow(k as u32);
    assert_eq!(op.dim(), dk, "local operator does not match site count");
    let stride = |s: usize| d.pow((n - 1 - s) as u32);
    let offsets: Vec<usize> = (0..dk)
        .map(|j| {
            let mut r = j;
            let mut off = 0;
            for i in (0..k).rev() {
                off += (r % d) * stride(sites[i]);
                r /= d;
            }
            off
        })
        .collect();
    let rest: Vec<usize> = (0..n).filter(|s| !sites.contains(s)).map(stride).collect();
    let nbase = total / dk;
    let out = SharedOut(y.as_mut_ptr());
    let chunk = (nbase / (rayon::current_num_threads() * 4)).max(64);
    (0..nbase).into_par_iter().with_min_len(chunk).for_each_init(
        || (vec![0.0; dk], vec![0.0; dk], Vec::new()),
        |(g, h, tmp), b| {
            let mut r = b;
            let mut base = 0;
            for &st in rest.iter().rev() {
                base += (r % d) * st;
                r /= d;
            }
            for (gj, &o) in g.iter_mut().zip(&offsets) {
                *gj = x[base + o];
            }
            op.apply_small(g, h, tmp);
            let p = &out;
            for (hj, &o) in h.iter().zip(&offsets) {
                // SAFETY: each output index base + o belongs to exactly one (base, j) pair,
                // so concurrent writes never alias.
                unsafe { *p.0.add(base + o) = *hj };
            }
        },
    );
}

/// Dense embedding of a local operator; for tests and small registers.
pub fn embed_dense(n: usize, d: usize, sites: &[usize], op: &LocalOp) -> DMatrix<f64> {
    let total = d.pow(n as u32);
    let mut m = DMatrix::zeros(total, total);
    let mut e = vec![0.0; total];
    let mut col = vec![0.0; total];
    for j in 0..total {
        e[j] = 1.0;
        apply_local(&e, &mut col, n, d, sites, op);
        m.column_mut(j).copy_from_slice(&col);
        e[j] = 0.0;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn kron_embed(n: usize, d: usize, site: usize, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::from_element(1, 1, 1.0);
        for s in 0..n {
            let f = if s == site { m.clone() } else { DMatrix::identity(d, d) };
            out = out.kronecker(&f);
        }
        out
    }

    #[test]
    fn single_site_matches_kron() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let m = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        for site in 0..3 {
            let got = embed_dense(3, 3, &[site], &LocalOp::Dense(m.clone()));
            assert!((got - kron_embed(3, 3, site, &m)).norm() < 1e-12);
        }
    }

    #[test]
    fn two_site_order_and_low_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let a = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
        let b = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
        let ab = a.kronecker(&b);
        // sites (2, 0): the first local factor acts on site 2
        let got = embed_dense(3, 2, &[2, 0], &LocalOp::Dense(ab));
        let want = kron_embed(3, 2, 2, &a) * kron_embed(3, 2, 0, &b);
        assert!((got - want).norm() < 1e-12);
        let u = DMatrix::from_fn(4, 2, |_, _| rng.random_range(-1.0..1.0));
        let w = DMatrix::from_fn(4, 2, |_, _| rng.random_range(-1.0..1.0));
        let lr = LocalOp::LowRank { u: u.clone(), w: w.clone() };
        let dense = LocalOp::Dense(&u * w.transpose());
        assert!((embed_dense(3, 2, &[0, 1], &lr) - embed_dense(3, 2, &[0, 1], &dense)).norm() < 1e-12);
    }
}
