//! Moment operators `M_t(nu) = E[omega(g)^{⊗t}]` and their spectral gaps.
//!
//! Operators act on `(V^{⊗t})` arranged site-major: the `t` copies of a site are adjacent
//! and site 0 is most significant. Within a site, copy 0 is most significant. This makes
//! the `t`-fold action of a gate on sites `S` a local operator on `S`.
//!
//! For `t = 2` and twirl-projector layers two exact reductions are available:
//! the Pauli-diagonal sector (`p^2` states per site) and the two-dimensional support
//! chain per site. The part of the spectrum discarded by a reduction is known in closed
//! form and folded back in by [`spectral_gap`].

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clifford::CliffordTableau;
use crate::ensembles::{generator_set, Architecture, Boundary, Ensemble, GateSet};
use crate::error::{Error, Result};
use crate::group::{GroupTag, IrrepSpec};
use crate::linalg::{lanczos, orthonormalize, LanczosOptions, LinearMap, Which};
use crate::local::{apply_local, LocalOp};
use crate::noise::{LayerChannel, NoiseModel};
use crate::weyl::operator_basis;

/// Largest realized dimension handled by the dense eigensolver.
pub const DENSE_LIMIT: usize = 4096;
/// Largest realized dimension handled by the matrix-free path.
pub const MATRIX_FREE_LIMIT: usize = 1 << 18;
/// Above this dimension `GapMethod::Auto` switches to Lanczos.
pub const AUTO_DENSE_LIMIT: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Realization {
    Full,
    PauliDiagonal,
    Support,
}

#[derive(Clone, Debug)]
pub enum Stage {
    /// `sum_k w_k L_k` with `L_k` acting on the listed sites.
    Mixture(Vec<(f64, Vec<usize>, Arc<LocalOp>)>),
    /// Product of local operators on disjoint sites.
    Parallel(Vec<(Vec<usize>, Arc<LocalOp>)>),
}

impl Stage {
    fn transpose(&self) -> Stage {
        match self {
            Stage::Mixture(v) => {
                Stage::Mixture(v.iter().map(|(w, s, op)| (*w, s.clone(), Arc::new(op.transpose()))).collect())
            }
            Stage::Parallel(v) => {
                Stage::Parallel(v.iter().map(|(s, op)| (s.clone(), Arc::new(op.transpose()))).collect())
            }
        }
    }

    fn ops(&self) -> Vec<&LocalOp> {
        match self {
            Stage::Mixture(v) => v.iter().map(|t| t.2.as_ref()).collect(),
            Stage::Parallel(v) => v.iter().map(|t| t.1.as_ref()).collect(),
        }
    }
}

/// Product of stages acting on `n` sites of dimension `site_dim`; stage 0 acts first.
#[derive(Clone, Debug)]
pub struct LayeredOp {
    pub n: usize,
    pub site_dim: usize,
    pub stages: Vec<Stage>,
}

impl LayeredOp {
    pub fn dim(&self) -> usize {
        self.site_dim.pow(self.n as u32)
    }

    pub fn transpose(&self) -> LayeredOp {
        LayeredOp {
            n: self.n,
            site_dim: self.site_dim,
            stages: self.stages.iter().rev().map(|s| s.transpose()).collect(),
        }
    }

    pub fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut tmp = vec![0.0; x.len()];
        for stage in &self.stages {
            match stage {
                Stage::Mixture(terms) => {
                    let mut acc = vec![0.0; x.len()];
                    for (w, sites, op) in terms {
                        if *w == 0.0 {
                            continue;
                        }
                        apply_local(&cur, &mut tmp, self.n, self.site_dim, sites, op);
                        acc.par_iter_mut().zip(tmp.par_iter()).for_each(|(a, b)| *a += w * b);
                    }
                    cur = acc;
                }
                Stage::Parallel(terms) => {
                    for (sites, op) in terms {
                        apply_local(&cur, &mut tmp, self.n, self.site_dim, sites, op);
                        std::mem::swap(&mut cur, &mut tmp);
                    }
                }
            }
        }
        cur
    }
}

/// The `t`-th moment operator of an ensemble in a chosen realization.
#[derive(Clone, Debug)]
pub struct MomentOperator {
    pub t: usize,
    pub n: usize,
    pub p: u32,
    pub realization: Realization,
    pub op: LayeredOp,
    transpose_op: LayeredOp,
    /// Orthonormal basis of the fixed space of the group generated by the ensemble.
    pub fixed_basis: Vec<Vec<f64>>,
    /// Largest singular value on the sectors removed by the realization.
    pub sector_bound: f64,
    pub symmetric: bool,
}

impl MomentOperator {
    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    pub fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        self.op.apply_vec(x)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        crate::linalg::to_dense(self)
    }

    /// Orthogonal projector onto the fixed space, densely.
    pub fn fixed_projector(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut p = DMatrix::zeros(d, d);
        for v in &self.fixed_basis {
            let c = DVector::from_column_slice(v);
            p += &c * c.transpose();
        }
        p
    }
}

impl LinearMap for MomentOperator {
    fn dim(&self) -> usize {
        self.op.dim()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(&self.op.apply_vec(x));
    }
    fn apply_transpose(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(&self.transpose_op.apply_vec(x));
    }
}

// ---------------------------------------------------------------------------
// per-site vectors

/// Coordinates of the permutation operators of `S_t` on one site, in `omega^{⊗t}` coordinates
/// (`p^{2t}` entries, copy 0 most significant).
pub fn site_permutation_vectors(t: usize, p: u32) -> Result<Vec<Vec<Complex64>>> {
    let basis = operator_basis(1, p);
    let dsq = basis.len();
    let perms: Vec<Vec<Vec<usize>>> = match t {
        1 => vec![vec![vec![0]]],
        2 => vec![vec![vec![0], vec![1]], vec![vec![0, 1]]],
        3 => vec![
            vec![vec![0], vec![1], vec![2]],
            vec![vec![0, 1], vec![2]],
            vec![vec![0, 2], vec![1]],
            vec![vec![1, 2], vec![0]],
            vec![vec![0, 1, 2]],
            vec![vec![0, 2, 1]],
        ],
        _ => return Err(Error::Unsupported(format!("moments of order t = {t}"))),
    };
    let total = dsq.pow(t as u32);
    Ok(perms
        .iter()
        .map(|cycles| {
            (0..total)
                .map(|idx| {
                    let codes: Vec<usize> = (0..t).map(|r| (idx / dsq.pow((t - 1 - r) as u32)) % dsq).collect();
                    cycles
                        .iter()
                        .map(|cyc| {
                            let mut m = basis[codes[cyc[0]]].clone();
                            for &r in &cyc[1..] {
                                m *= &basis[codes[r]];
                            }
                            m.trace()
                        })
                        .product::<Complex64>()
                })
                .collect()
        })
        .collect())
}

fn kron_complex(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for x in a {
        for y in b {
            out.push(x * y);
        }
    }
    out
}

fn split_orthonormalize(vs: &[Vec<Complex64>]) -> Vec<Vec<f64>> {
    let mut real = Vec::new();
    for v in vs {
        real.push(DVector::from_iterator(v.len(), v.iter().map(|c| c.re)));
        real.push(DVector::from_iterator(v.len(), v.iter().map(|c| c.im)));
    }
    let scale = real.iter().map(|v| v.norm()).fold(0.0, f64::max);
    real.retain(|v| v.norm() > 1e-10 * scale);
    orthonormalize(&real, 1e-9).into_iter().map(|v| v.as_slice().to_vec()).collect()
}

/// Per-site isometry of a realization as a `site_dim x realized_dim` matrix.
pub fn site_isometry(realization: Realization, t: usize, p: u32) -> Result<DMatrix<f64>> {
    let dsq = (p * p) as usize;
    let full = dsq.pow(t as u32);
    match realization {
        Realization::Full => Ok(DMatrix::identity(full, full)),
        Realization::PauliDiagonal | Realization::Support if t != 2 => {
            Err(Error::Unsupported(format!("{realization:?} realization requires t = 2")))
        }
        Realization::PauliDiagonal => {
            let mut j = DMatrix::zeros(full, dsq);
            for c in 0..dsq {
                j[(c * dsq + c, c)] = 1.0;
            }
            Ok(j)
        }
        Realization::Support => {
            let mut j = DMatrix::zeros(full, 2);
            j[(0, 0)] = 1.0;
            let s = 1.0 / ((dsq - 1) as f64).sqrt();
            for c in 1..dsq {
                j[(c * dsq + c, 1)] = s;
            }
            Ok(j)
        }
    }
}

fn realize_site_vectors(vs: &[Vec<Complex64>], j: &DMatrix<f64>) -> Vec<Vec<Complex64>> {
    vs.iter().map(|v| (0..j.ncols()).map(|c| j.column(c).iter().zip(v).map(|(a, b)| b * *a).sum()).collect()).collect()
}

/// Orthonormal basis of the Haar fixed space on `k` sites, realized per site through `j`.
fn haar_fixed_basis(t: usize, p: u32, k: usize, j: &DMatrix<f64>) -> Result<Vec<Vec<f64>>> {
    let site = realize_site_vectors(&site_permutation_vectors(t, p)?, j);
    let prods: Vec<Vec<Complex64>> = site
        .iter()
        .map(|v| {
            let mut acc = vec![Complex64::new(1.0, 0.0)];
            for _ in 0..k {
                acc = kron_complex(&acc, v);
            }
            acc
        })
        .collect();
    Ok(split_orthonormalize(&prods))
}

fn columns(vs: &[Vec<f64>]) -> DMatrix<f64> {
    let rows = vs.first().map(|v| v.len()).unwrap_or(0);
    DMatrix::from_fn(rows, vs.len(), |i, c| vs[c][i])
}

/// Closed-form Haar twirl of `U(p^k)` on `k` sites in the full `t`-fold space.
pub fn haar_twirl_local(t: usize, p: u32, k: usize) -> Result<LocalOp> {
    let dsq = (p * p) as usize;
    let j = DMatrix::identity(dsq.pow(t as u32), dsq.pow(t as u32));
    Ok(LocalOp::projector(columns(&haar_fixed_basis(t, p, k, &j)?)))
}

/// Site-major signed permutation of `omega(g)^{⊗t}` for a `k`-qudit signed permutation.
pub fn tensor_power_perm(perm: &[(usize, f64)], k: usize, t: usize, site_dim: usize) -> Vec<(usize, f64)> {
    let total = perm.len().pow(t as u32);
    let site_major = |codes: &[usize]| -> usize {
        let mut idx = 0;
        for s in 0..k {
            for code in codes.iter().take(t) {
                let digit = (code / site_dim.pow((k - 1 - s) as u32)) % site_dim;
                idx = idx * site_dim + digit;
            }
        }
        idx
    };
    let local = perm.len();
    let mut out = vec![(0usize, 0.0); total];
    let mut codes = vec![0usize; t];
    let mut img = vec![0usize; t];
    for cm in 0..total {
        let mut sign = 1.0;
        for r in 0..t {
            codes[r] = (cm / local.pow((t - 1 - r) as u32)) % local;
            let (b, s) = perm[codes[r]];
            img[r] = b;
            sign *= s;
        }
        out[site_major(&codes)] = (site_major(&img), sign);
    }
    out
}

fn clifford_trace_power(perm: &[(usize, f64)], t: usize) -> f64 {
    let tr: f64 = perm.iter().enumerate().filter(|(a, (b, _))| a == b).map(|(_, (_, s))| s).sum();
    tr.powi(t as i32)
}

/// Twirl over the `k`-qubit Clifford group (`k <= 2`), obtained from the exact group sum.
///
/// The group average is applied to the permutation-operator candidates and its trace
/// `E[(tr omega(g))^t]` is compared with the rank of their span; agreement certifies that
/// the Clifford twirl equals the Haar twirl.
pub fn clifford_twirl_local(t: usize, k: usize) -> Result<LocalOp> {
    static CACHE: OnceLock<std::sync::Mutex<Vec<((usize, usize), LocalOp)>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(hit) = cache.lock().unwrap().iter().find(|e| e.0 == (t, k)) {
        return Ok(hit.1.clone());
    }
    let elements = CliffordTableau::enumerate(k)?;
    let perms: Vec<Vec<(usize, f64)>> = elements.iter().map(|g| g.signed_permutation()).collect();
    let haar = haar_twirl_local(t, 2, k)?;
    let LocalOp::LowRank { u: cand, .. } = &haar else { unreachable!() };
    let dim = cand.nrows();
    let images: Vec<DMatrix<f64>> = perms
        .par_iter()
        .map(|perm| {
            let big = tensor_power_perm(perm, k, t, 4);
            let mut out = DMatrix::zeros(dim, cand.ncols());
            for c in 0..cand.ncols() {
                for (a, &(b, s)) in big.iter().enumerate() {
                    out[(b, c)] += s * cand[(a, c)];
                }
            }
            out
        })
        .collect();
    let mut avg = DMatrix::zeros(dim, cand.ncols());
    for m in &images {
        avg += m;
    }
    avg /= perms.len() as f64;
    let trace: f64 = perms.iter().map(|p| clifford_trace_power(p, t)).sum::<f64>() / perms.len() as f64;
    if (&avg - cand).amax() > 1e-10 || (trace - cand.ncols() as f64).abs() > 1e-8 {
        return Err(Error::Numerical(format!(
            "Clifford twirl of order {t} differs from the Haar twirl (trace {trace}, rank {})",
            cand.ncols()
        )));
    }
    let op = LocalOp::projector(avg);
    cache.lock().unwrap().push(((t, k), op.clone()));
    Ok(op)
}

/// `E[omega(g)^{⊗t}]` over the Clifford generator measure, as a signed-permutation mixture.
pub fn generator_local(t: usize, cx_prob: f64) -> LocalOp {
    LocalOp::Perms(
        generator_set(cx_prob)
            .into_iter()
            .map(|(w, g)| (w, tensor_power_perm(&g.signed_permutation(), 2, t, 4)))
            .collect(),
    )
}

/// Pauli twirl on one qubit: projector onto copy codes whose labels sum to zero.
fn pauli_twirl_site(t: usize) -> LocalOp {
    let total = 4usize.pow(t as u32);
    let keep: Vec<usize> =
        (0..total).filter(|&idx| (0..t).fold(0usize, |acc, r| acc ^ ((idx >> (2 * (t - 1 - r))) & 3)) == 0).collect();
    let mut v = DMatrix::zeros(total, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        v[(i, c)] = 1.0;
    }
    LocalOp::projector(v)
}

fn reduce_local(op: &LocalOp, j: &DMatrix<f64>, k: usize) -> Result<LocalOp> {
    if j.nrows() == j.ncols() {
        return Ok(op.clone());
    }
    let LocalOp::LowRank { u, w } = op else {
        return Err(Error::Unsupported("reduced realizations need twirl-projector layers".into()));
    };
    let mut jk = DMatrix::from_element(1, 1, 1.0);
    for _ in 0..k {
        jk = jk.kronecker(j);
    }
    let ru = jk.transpose() * u;
    let rw = jk.transpose() * w;
    if (&jk * &ru - u).amax() > 1e-10 || (&jk * &rw - w).amax() > 1e-10 {
        return Err(Error::Unsupported("layer does not preserve the reduced sector".into()));
    }
    Ok(LocalOp::LowRank { u: ru, w: rw })
}

// ---------------------------------------------------------------------------
// moment operators of ensembles

fn gate_op(e: &Ensemble, t: usize) -> Result<(LocalOp, bool)> {
    Ok(match e.gateset {
        GateSet::Haar => (haar_twirl_local(t, e.p, 2)?, true),
        GateSet::CliffordHaar => {
            if t == 3 {
                (clifford_twirl_local(3, 2)?, true)
            } else {
                (haar_twirl_local(t, 2, 2)?, true)
            }
        }
        GateSet::Generators => (generator_local(t, e.cx_prob), false),
    })
}

fn single_site_clifford_twirl(t: usize) -> Result<LocalOp> {
    if t == 3 {
        clifford_twirl_local(3, 1)
    } else {
        haar_twirl_local(t, 2, 1)
    }
}

/// Picks the cheapest exact realization available for the ensemble.
pub fn default_realization(e: &Ensemble, t: usize) -> Realization {
    if t == 2 && e.arch != Architecture::Exact && e.gateset != GateSet::Generators {
        Realization::Support
    } else {
        Realization::Full
    }
}

/// Builds `M_t(nu)` for `t` in `1..=3`.
pub fn moment_operator(e: &Ensemble, t: usize, realization: Realization) -> Result<MomentOperator> {
    if !(1..=3).contains(&t) {
        return Err(Error::Unsupported(format!("moments of order t = {t}")));
    }
    let p = e.p;
    let j = site_isometry(realization, t, p)?;
    let site_dim = j.ncols();
    let n = e.n;
    let dim = (site_dim as f64).powi(n as i32);
    if dim > MATRIX_FREE_LIMIT as f64 {
        return Err(Error::Capacity(format!(
            "moment operator of dimension {dim} exceeds the matrix-free limit {MATRIX_FREE_LIMIT}"
        )));
    }
    let mut stages = Vec::new();
    let mut projector_layers = true;
    if e.dressing {
        let op = Arc::new(reduce_local(&single_site_clifford_twirl(t)?, &j, 1)?);
        stages.push(Stage::Parallel((0..n).map(|s| (vec![s], op.clone())).collect()));
    }
    match e.arch {
        Architecture::Lrc => {
            let (op, proj) = gate_op(e, t)?;
            projector_layers &= proj;
            let op = Arc::new(reduce_local(&op, &j, 2)?);
            stages.push(Stage::Mixture(
                e.edges.iter().zip(&e.weights).map(|(&(a, b), &w)| (w, vec![a, b], op.clone())).collect(),
            ));
        }
        Architecture::Brickwork => {
            let (op, proj) = gate_op(e, t)?;
            projector_layers &= proj;
            let op = Arc::new(reduce_local(&op, &j, 2)?);
            let (even, odd) = e.brickwork_layers()?;
            for layer in [even, odd] {
                stages.push(Stage::Parallel(layer.into_iter().map(|(a, b)| (vec![a, b], op.clone())).collect()));
            }
        }
        Architecture::Exact => match e.group() {
            GroupTag::Unitary | GroupTag::Clifford => {
                if e.group() == GroupTag::Clifford && t == 3 && p != 2 {
                    return Err(Error::Unsupported("Clifford 3-design property needs qubits".into()));
                }
                let op = LocalOp::projector(columns(&haar_fixed_basis(t, p, n, &j)?));
                stages.push(Stage::Parallel(vec![((0..n).collect(), Arc::new(op))]));
            }
            GroupTag::LocalUnitary | GroupTag::LocalClifford => {
                let site = if e.group() == GroupTag::LocalClifford {
                    single_site_clifford_twirl(t)?
                } else {
                    haar_twirl_local(t, p, 1)?
                };
                let op = Arc::new(reduce_local(&site, &j, 1)?);
                stages.push(Stage::Parallel((0..n).map(|s| (vec![s], op.clone())).collect()));
            }
            GroupTag::HeisenbergWeyl => {
                if p != 2 {
                    return Err(Error::Unsupported("Weyl moment operators are implemented for qubits".into()));
                }
                let op = Arc::new(reduce_local(&pauli_twirl_site(t), &j, 1)?);
                stages.push(Stage::Parallel((0..n).map(|s| (vec![s], op.clone())).collect()));
            }
        },
    }
    if realization != Realization::Full && !projector_layers {
        return Err(Error::Unsupported("reduced realizations need twirl-projector layers".into()));
    }
    let mut op = LayeredOp { n, site_dim, stages };
    if e.symmetrized {
        let tr = op.transpose();
        op.stages.extend(tr.stages);
    }
    let symmetric = e.symmetrized
        || (op.stages.len() == 1
            && match &op.stages[0] {
                Stage::Mixture(_) => op.stages[0].ops().iter().all(|o| o.is_symmetric()),
                Stage::Parallel(_) => op.stages[0].ops().iter().all(|o| o.is_symmetric()),
            });
    let fixed_basis = group_fixed_basis(e.group(), t, p, n, &j)?;
    let sector_bound = if realization == Realization::Full { 0.0 } else { sector_bound(&op) };
    let transpose_op = op.transpose();
    Ok(MomentOperator { t, n, p, realization, op, transpose_op, fixed_basis, sector_bound, symmetric })
}

fn product_basis(site: &[Vec<f64>], n: usize) -> Result<Vec<Vec<f64>>> {
    let r = site.len();
    if (r as f64).powi(n as i32) > 4096.0 {
        return Err(Error::Capacity("fixed space of the local group is too large to enumerate".into()));
    }
    let mut out: Vec<Vec<f64>> = vec![vec![1.0]];
    for _ in 0..n {
        let mut next = Vec::new();
        for a in &out {
            for b in site {
                let mut v = Vec::with_capacity(a.len() * b.len());
                for x in a {
                    for y in b {
                        v.push(x * y);
                    }
                }
                next.push(v);
            }
        }
        out = next;
    }
    Ok(out)
}

/// Orthonormal basis of the vectors fixed by the `t`-fold action of a group.
pub fn group_fixed_basis(group: GroupTag, t: usize, p: u32, n: usize, j: &DMatrix<f64>) -> Result<Vec<Vec<f64>>> {
    match group {
        GroupTag::Unitary | GroupTag::Clifford => haar_fixed_basis(t, p, n, j),
        GroupTag::LocalUnitary | GroupTag::LocalClifford => {
            let site = haar_fixed_basis(t, p, 1, j)?;
            product_basis(&site, n)
        }
        GroupTag::HeisenbergWeyl => {
            let LocalOp::LowRank { u, .. } = pauli_twirl_site(t) else { unreachable!() };
            let reduced = j.transpose() * &u;
            let site: Vec<DVector<f64>> = reduced.column_iter().map(|c| c.into_owned()).collect();
            let site: Vec<Vec<f64>> = orthonormalize(&site, 1e-9).into_iter().map(|v| v.as_slice().to_vec()).collect();
            product_basis(&site, n)
        }
    }
}

/// Spectral norm of the operator on the sectors dropped by a reduced realization.
fn sector_bound(op: &LayeredOp) -> f64 {
    (0..op.n)
        .map(|v| {
            op.stages
                .iter()
                .map(|stage| match stage {
                    Stage::Mixture(terms) => terms.iter().filter(|t| !t.1.contains(&v)).map(|t| t.0).sum(),
                    Stage::Parallel(terms) => {
                        if terms.iter().any(|t| t.0.contains(&v)) {
                            0.0
                        } else {
                            1.0
                        }
                    }
                })
                .product::<f64>()
        })
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// gaps

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GapMethod {
    Auto,
    Dense,
    Lanczos,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GapResult {
    pub gap: f64,
    /// `dense` or `lanczos`.
    pub method: String,
    pub residual: f64,
    pub dim: usize,
    /// Largest singular value found in the realized space after deflation.
    pub realized_value: f64,
    pub sector_bound: f64,
}

/// `1 - ||M - M_haar||`, with `M_haar` the projector onto the fixed space.
pub fn spectral_gap(m: &MomentOperator, method: GapMethod, tol: f64) -> Result<GapResult> {
    let dim = m.dim();
    let dense = match method {
        GapMethod::Dense => {
            if dim > DENSE_LIMIT {
                return Err(Error::Capacity(format!("dense gap limited to dimension {DENSE_LIMIT}, got {dim}")));
            }
            true
        }
        GapMethod::Lanczos => false,
        GapMethod::Auto => dim <= AUTO_DENSE_LIMIT,
    };
    let (value, residual) = if dense { dense_deflated_norm(m) } else { lanczos_deflated_norm(m, tol)? };
    let top = value.max(m.sector_bound);
    Ok(GapResult {
        gap: 1.0 - top,
        method: if dense { "dense".into() } else { "lanczos".into() },
        residual,
        dim,
        realized_value: value,
        sector_bound: m.sector_bound,
    })
}

fn dense_deflated_norm(m: &MomentOperator) -> (f64, f64) {
    let dim = m.dim();
    let a = m.to_dense();
    let d = DMatrix::identity(dim, dim) - m.fixed_projector();
    let b = &d * a * &d;
    if m.symmetric {
        let sym = (&b + b.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym.clone());
        let (idx, val) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.abs().partial_cmp(&y.1.abs()).unwrap())
            .map(|(i, v)| (i, *v))
            .unwrap_or((0, 0.0));
        let v = eig.eigenvectors.column(idx);
        let res = (&sym * v - v * val).norm();
        (val.abs(), res)
    } else {
        let svd = b.clone().svd(true, true);
        let (idx, s) = svd
            .singular_values
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.partial_cmp(y.1).unwrap())
            .map(|(i, v)| (i, *v))
            .unwrap_or((0, 0.0));
        let u = svd.u.as_ref().unwrap().column(idx).into_owned();
        let vt = svd.v_t.as_ref().unwrap().row(idx).transpose();
        (s, (&b * vt - u * s).norm())
    }
}

fn lanczos_deflated_norm(m: &MomentOperator, tol: f64) -> Result<(f64, f64)> {
    let dim = m.dim();
    let opts = LanczosOptions { tol, ..Default::default() };
    if m.symmetric {
        let f = |x: &[f64], y: &mut [f64]| y.copy_from_slice(&m.op.apply_vec(x));
        let pair = lanczos(&f, dim, &m.fixed_basis, Which::LargestMagnitude, &opts)?;
        Ok((pair.value.abs(), pair.residual))
    } else {
        let f = |x: &[f64], y: &mut [f64]| {
            let t = m.op.apply_vec(x);
            y.copy_from_slice(&m.transpose_op.apply_vec(&t));
        };
        let pair = lanczos(&f, dim, &m.fixed_basis, Which::LargestAlgebraic, &opts)?;
        let s = pair.value.max(0.0).sqrt();
        Ok((s, pair.residual / (2.0 * s).max(1e-300)))
    }
}

/// Gap of the nearest-neighbour local random circuit with Haar two-qudit gates, `t = 2`.
pub fn exact_lrc_gap(n: usize, boundary: Boundary) -> f64 {
    let c = (std::f64::consts::PI / n as f64).cos();
    match boundary {
        Boundary::Obc => (1.0 - 0.8 * c) / (n as f64 - 1.0),
        Boundary::Pbc => 2.0 * (1.0 - 0.8 * c) / n as f64,
    }
}

/// Gap of a product of two independent layers, from the gaps of the factors.
pub fn local_to_global_gap(local_gap: f64, arch_gap: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&local_gap) || !(0.0..=1.0).contains(&arch_gap) {
        return Err(Error::Config("gaps must lie in [0, 1]".into()));
    }
    Ok(1.0 - (1.0 - local_gap) * (1.0 - arch_gap))
}

/// Inverse gap of the local Clifford generator measure at `cx_prob = 0.35`.
pub const GENERATOR_LOCAL_INVERSE_GAP: f64 = 10.99;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TableArch {
    NnLrc,
    NnLrcPbc,
    CompleteLrc,
    BwOdd,
    Bw,
    GeneratorLocal,
    GeneratorLrcNn,
    GeneratorLrcComplete,
    GeneratorBw,
}

impl TableArch {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "nn-lrc" | "lrc" | "nn-lrc-obc" => TableArch::NnLrc,
            "nn-lrc-pbc" | "lrc-pbc" => TableArch::NnLrcPbc,
            "complete-lrc" => TableArch::CompleteLrc,
            "bw-odd" => TableArch::BwOdd,
            "bw" | "brickwork" => TableArch::Bw,
            "generator-local" => TableArch::GeneratorLocal,
            "generator-lrc" | "generator-lrc-nn" => TableArch::GeneratorLrcNn,
            "generator-lrc-complete" => TableArch::GeneratorLrcComplete,
            "generator-bw" => TableArch::GeneratorBw,
            other => return Err(Error::Config(format!("arch: {other:?} is not tabulated"))),
        })
    }
}

/// Tabulated lower bound on the gap, with a short description of where it comes from.
pub fn tabulated_gap(arch: TableArch, n: usize, t: usize) -> Result<(f64, String)> {
    let nf = n as f64;
    let out = match (arch, t) {
        (TableArch::NnLrc, 2 | 3) => (1.0 / (5.0 * nf), "nearest-neighbour LRC: 1/(5n)".to_string()),
        (TableArch::NnLrcPbc, 2) => (
            exact_lrc_gap(n, Boundary::Pbc),
            "periodic nearest-neighbour LRC: (2/n)(1 - (4/5)cos(pi/n)), asymptotically 2/(5n)".into(),
        ),
        (TableArch::CompleteLrc, 2) => (5.0 / (6.0 * nf), "complete-graph LRC: 5/(6n) asymptotically".into()),
        (TableArch::BwOdd, 2) => (9.0 / 25.0, "brickwork, odd number of layers: 9/25".into()),
        (TableArch::Bw, 2) => (9.0 / 50.0, "brickwork: 9/50".into()),
        (TableArch::Bw, 3) => (1.0 / 42.0, "brickwork, t = 3: 1/42".into()),
        (TableArch::GeneratorLocal, 2 | 3) => {
            (1.0 / GENERATOR_LOCAL_INVERSE_GAP, "two-qubit Clifford generator measure: 1/10.99".into())
        }
        (TableArch::GeneratorLrcNn, 2 | 3) => {
            (1.0 / (55.0 * nf), "nearest-neighbour Clifford-generator LRC: 1/(55n)".into())
        }
        (TableArch::GeneratorLrcComplete, 2 | 3) => {
            (1.0 / (14.0 * nf), "complete-graph Clifford-generator LRC: 1/(14n)".into())
        }
        (TableArch::GeneratorBw, 2 | 3) => (1.0 / 134.0, "Clifford-generator brickwork: 1/134".into()),
        _ => return Err(Error::Config(format!("no tabulated gap for {arch:?} at t = {t}"))),
    };
    if n < 2 {
        return Err(Error::Config("n: tabulated gaps need n >= 2".into()));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Monte-Carlo moment operators

/// Index map from copy-major (`omega^{⊗t}` Kronecker order) to site-major coordinates.
pub fn copy_to_site_major(n: usize, t: usize, site_dim: usize) -> Vec<usize> {
    let total = site_dim.pow((n * t) as u32);
    (0..total)
        .map(|cm| {
            let mut idx = 0;
            for s in 0..n {
                for r in 0..t {
                    let digit = (cm / site_dim.pow(((t - 1 - r) * n + (n - 1 - s)) as u32)) % site_dim;
                    idx = idx * site_dim + digit;
                }
            }
            idx
        })
        .collect()
}

/// Monte-Carlo estimate of `M_t(nu)` (site-major, full realization) with its standard
/// error in Frobenius norm, from `samples` layers split across 16 seeded batches.
pub fn sampled_moment_operator(e: &Ensemble, t: usize, samples: usize, seed: u64) -> Result<(DMatrix<f64>, f64)> {
    let dsq = (e.p * e.p) as usize;
    let dim = dsq.pow((e.n * t) as u32);
    if dim > 1024 {
        return Err(Error::Capacity(format!("sampled moment operators limited to dimension 1024, got {dim}")));
    }
    if samples < 16 {
        return Err(Error::Config("samples: need at least 16".into()));
    }
    let batches = 16usize;
    let map = copy_to_site_major(e.n, t, dsq);
    let sums: Vec<Result<DMatrix<f64>>> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (b as u64).wrapping_mul(0x9E3779B97F4A7C15));
            let count = samples / batches + usize::from(b < samples % batches);
            let mut acc = DMatrix::zeros(dim, dim);
            for _ in 0..count {
                let w = e.sample_layer(&mut rng)?.to_superop().into_matrix();
                let mut k = w.clone();
                for _ in 1..t {
                    k = k.kronecker(&w);
                }
                for c in 0..dim {
                    for r in 0..dim {
                        acc[(map[r], map[c])] += k[(r, c)];
                    }
                }
            }
            Ok(acc / count as f64)
        })
        .collect();
    let means: Vec<DMatrix<f64>> = sums.into_iter().collect::<Result<_>>()?;
    let mean = means.iter().fold(DMatrix::zeros(dim, dim), |a, b| a + b) / batches as f64;
    let var: f64 = means.iter().map(|m| (m - &mean).norm_squared()).sum::<f64>() / (batches - 1) as f64;
    Ok((mean, (var / batches as f64).sqrt()))
}

// ---------------------------------------------------------------------------
// noisy second moments

/// Copy-major `(a, b)` pair index to site-major position for `t = 2`, full realization.
pub fn pair_to_site_major(n: usize, p: u32) -> Vec<usize> {
    copy_to_site_major(n, 2, (p * p) as usize)
}

/// Site-major vector to the `d^2 x d^2` matrix `X[(a, b)]`.
pub fn site_major_to_pair(v: &[f64], n: usize, p: u32) -> DMatrix<f64> {
    let map = pair_to_site_major(n, p);
    let dd = ((p * p) as usize).pow(n as u32);
    DMatrix::from_fn(dd, dd, |a, b| v[map[a * dd + b]])
}

pub fn pair_to_site_major_vec(x: &DMatrix<f64>, n: usize, p: u32) -> Vec<f64> {
    let map = pair_to_site_major(n, p);
    let dd = x.nrows();
    let mut v = vec![0.0; dd * dd];
    for a in 0..dd {
        for b in 0..dd {
            v[map[a * dd + b]] = x[(a, b)];
        }
    }
    v
}

/// `sum_k w_k (C_k on one copy) L_k`, optionally followed by a diagonal mask on the
/// other copy. `L_k` are branches of the full `t = 2` moment operator, `C_k` the error
/// channel of branch `k` (or `C_k - id` when `deviation` is set).
pub struct NoisyMoment {
    n: usize,
    p: u32,
    branches: Vec<(f64, LayeredOp, LayeredOp, LayerChannel)>,
    noisy_copy: usize,
    deviation: bool,
    mask: Option<Vec<f64>>,
    pairs: Vec<(usize, usize)>,
}

impl NoisyMoment {
    pub fn new(e: &Ensemble, noise: &NoiseModel, noisy_copy: usize) -> Result<Self> {
        if e.symmetrized {
            return Err(Error::Unsupported("noisy moments of symmetrized ensembles".into()));
        }
        if noisy_copy > 1 {
            return Err(Error::Config("noisy_copy must be 0 or 1".into()));
        }
        let dim = ((e.p * e.p) as f64).powi(2 * e.n as i32);
        if dim > MATRIX_FREE_LIMIT as f64 {
            return Err(Error::Capacity(format!("noisy moment of dimension {dim} exceeds {MATRIX_FREE_LIMIT}")));
        }
        let m = moment_operator(e, 2, Realization::Full)?;
        let (n, p) = (e.n, e.p);
        let touched_of = |sites: &[usize]| if sites.len() > 1 { sites.to_vec() } else { Vec::new() };
        let mut branches = Vec::new();
        let mixture = m.op.stages.iter().position(|s| matches!(s, Stage::Mixture(_)));
        match mixture {
            Some(k) => {
                let Stage::Mixture(terms) = &m.op.stages[k] else { unreachable!() };
                for (w, sites, op) in terms {
                    let mut stages = m.op.stages.clone();
                    stages[k] = Stage::Mixture(vec![(1.0, sites.clone(), op.clone())]);
                    let mut touched: Vec<usize> = stages
                        .iter()
                        .flat_map(|s| match s {
                            Stage::Mixture(v) => v.iter().flat_map(|t| touched_of(&t.1)).collect::<Vec<_>>(),
                            Stage::Parallel(v) => v.iter().flat_map(|t| touched_of(&t.0)).collect(),
                        })
                        .collect();
                    touched.sort_unstable();
                    touched.dedup();
                    let ch = noise.channel_for_sites(n, p, &touched)?;
                    let op = LayeredOp { n, site_dim: m.op.site_dim, stages };
                    let tr = op.transpose();
                    branches.push((*w, op, tr, ch));
                }
            }
            None => {
                let mut touched: Vec<usize> =
                    m.op.stages
                        .iter()
                        .flat_map(|s| match s {
                            Stage::Parallel(v) => v.iter().flat_map(|t| touched_of(&t.0)).collect::<Vec<_>>(),
                            Stage::Mixture(_) => Vec::new(),
                        })
                        .collect();
                touched.sort_unstable();
                touched.dedup();
                let ch = noise.channel_for_sites(n, p, &touched)?;
                let tr = m.op.transpose();
                branches.push((1.0, m.op, tr, ch));
            }
        }
        let map = pair_to_site_major(n, p);
        let dd = ((p * p) as usize).pow(n as u32);
        let mut pairs = vec![(0, 0); map.len()];
        for (cm, &sm) in map.iter().enumerate() {
            pairs[sm] = (cm / dd, cm % dd);
        }
        Ok(NoisyMoment { n, p, branches, noisy_copy, deviation: false, mask: None, pairs })
    }

    /// Replaces each channel `C` by `C - id`.
    pub fn deviation(mut self) -> Self {
        self.deviation = true;
        self
    }

    /// Multiplies the output by `diag` on the copy that carries no noise.
    pub fn with_mask(mut self, diag: Vec<f64>) -> Self {
        self.mask = Some(diag);
        self
    }

    fn apply_mask(&self, v: &mut [f64]) {
        if let Some(mask) = &self.mask {
            let clean = 1 - self.noisy_copy;
            for (x, &(a, b)) in v.iter_mut().zip(&self.pairs) {
                *x *= mask[if clean == 0 { a } else { b }];
            }
        }
    }

    fn apply_channel(&self, ch: &LayerChannel, v: &mut [f64], transpose: bool) {
        let copy = self.noisy_copy;
        let orig: Option<Vec<f64>> = self.deviation.then(|| v.to_vec());
        match ch {
            LayerChannel::Identity => {}
            LayerChannel::Diagonal(d) => {
                for (x, &(a, b)) in v.iter_mut().zip(&self.pairs) {
                    *x *= d[if copy == 0 { a } else { b }];
                }
            }
            LayerChannel::Dense(s) => {
                let x = site_major_to_pair(v, self.n, self.p);
                let m = if transpose { s.matrix().transpose() } else { s.matrix().clone() };
                let y = if copy == 0 { &m * x } else { x * m.transpose() };
                v.copy_from_slice(&pair_to_site_major_vec(&y, self.n, self.p));
            }
        }
        if let Some(o) = orig {
            v.iter_mut().zip(o).for_each(|(x, y)| *x -= y);
        }
    }
}

impl LinearMap for NoisyMoment {
    fn dim(&self) -> usize {
        self.pairs.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (w, op, _, ch) in &self.branches {
            let mut t = op.apply_vec(x);
            self.apply_channel(ch, &mut t, false);
            y.iter_mut().zip(&t).for_each(|(a, b)| *a += w * b);
        }
        self.apply_mask(y);
    }

    fn apply_transpose(&self, x: &[f64], y: &mut [f64]) {
        let mut xm = x.to_vec();
        self.apply_mask(&mut xm);
        y.iter_mut().for_each(|v| *v = 0.0);
        for (w, _, tr, ch) in &self.branches {
            let mut t = xm.clone();
            self.apply_channel(ch, &mut t, true);
            let t = tr.apply_vec(&t);
            y.iter_mut().zip(&t).for_each(|(a, b)| *a += w * b);
        }
    }
}

pub(crate) fn diagonal_of(irrep: &IrrepSpec) -> Result<Vec<f64>> {
    let pm = irrep.projector.matrix();
    let diag: Vec<f64> = pm.diagonal().iter().copied().collect();
    let off = pm.norm_squared() - diag.iter().map(|v| v * v).sum::<f64>();
    if off > 1e-20 {
        return Err(Error::Unsupported(format!("irrep {} has a non-diagonal projector", irrep.label)));
    }
    Ok(diag)
}

/// `delta_λ = ||E[omega_λ(g) ⊗ (phi(g) - omega(g))]||`.
pub fn implementation_error(e: &Ensemble, irrep: &IrrepSpec, noise: &NoiseModel) -> Result<f64> {
    if irrep.projector.n() != e.n || irrep.projector.p() != e.p {
        return Err(Error::Dimension("irrep and ensemble act on different registers".into()));
    }
    if noise.is_noiseless() {
        return Ok(0.0);
    }
    let op = NoisyMoment::new(e, noise, 1)?.deviation().with_mask(diagonal_of(irrep)?);
    let dim = op.dim();
    if dim <= AUTO_DENSE_LIMIT {
        return Ok(crate::linalg::spectral_norm_dense(&crate::linalg::to_dense(&op)));
    }
    crate::linalg::spectral_norm(&op, 1e-10)
}

/// Frame operator `S_{nu^{*m}} = E[omega(g)^T M omega(g)]` of the `m`-fold convolution,
/// for `m` in `0..=max_m`.
pub fn convolved_frames(e: &Ensemble, max_m: usize) -> Result<Vec<DMatrix<f64>>> {
    let mo = moment_operator(e, 2, Realization::Full)?;
    let (n, p) = (e.n, e.p);
    let meas = crate::states::measurement_superop(n, p).into_matrix();
    let mut v = pair_to_site_major_vec(&meas, n, p);
    let mut out = vec![meas];
    let mut y = vec![0.0; v.len()];
    for _ in 0..max_m {
        mo.apply_transpose(&v, &mut y);
        std::mem::swap(&mut v, &mut y);
        out.push(site_major_to_pair(&v, n, p));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutation_vectors_are_fixed_by_random_unitaries() {
        use crate::haar::haar_unitary;
        use crate::superop::Superop;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = haar_unitary(2, &mut rng);
        let w = Superop::from_unitary(1, 2, &u).unwrap().into_matrix();
        for t in 2..=3 {
            let mut k = w.clone();
            for _ in 1..t {
                k = k.kronecker(&w);
            }
            for v in site_permutation_vectors(t, 2).unwrap() {
                let re = DVector::from_iterator(v.len(), v.iter().map(|c| c.re));
                assert!((&k * &re - &re).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn tensor_power_perm_matches_kron() {
        let g = CliffordTableau::cx(2, 0, 1).compose(&CliffordTableau::hadamard(2, 1));
        let w = g.to_superop().into_matrix();
        let kron = w.kronecker(&w);
        let map = copy_to_site_major(2, 2, 4);
        let perm = tensor_power_perm(&g.signed_permutation(), 2, 2, 4);
        for (a, &(b, s)) in perm.iter().enumerate() {
            let ca = map.iter().position(|&x| x == a).unwrap();
            let cb = map.iter().position(|&x| x == b).unwrap();
            assert_eq!(kron[(cb, ca)], s);
        }
    }

    #[test]
    fn implementation_error_oracles() {
        use crate::group::{find_irrep, irrep_projectors, IrrepLabel};
        use crate::noise::{NoiseConfig, PauliNoise};
        let ad = |n| find_irrep(&irrep_projectors(GroupTag::Clifford, n, 2).unwrap(), &IrrepLabel::Adjoint).unwrap();
        let exact = Ensemble::exact(GroupTag::Clifford, 2, 2).unwrap();
        assert_eq!(implementation_error(&exact, &ad(2), &NoiseModel::None).unwrap(), 0.0);
        let pn = NoiseModel::Pauli(PauliNoise { rates: vec![[0.0; 3]; 2], ..Default::default() });
        assert!(implementation_error(&exact, &ad(2), &pn).unwrap() < 1e-12);
        let d = implementation_error(&exact, &ad(2), &NoiseModel::Depolarizing { f: 0.93 }).unwrap();
        assert!((d - 0.07).abs() < 1e-10, "{d}");
        for n in [2usize, 3] {
            let e = Ensemble::lrc(n, Boundary::Obc, GateSet::Haar).unwrap();
            for eps in [1e-3, 1e-2] {
                let noise = NoiseConfig::LocalDepolarizing { eps }.build(n, 2).unwrap();
                let d = implementation_error(&e, &ad(n), &noise).unwrap();
                assert!(d <= eps * n as f64 + 4.0 * eps * eps, "n={n} eps={eps} delta={d}");
                assert!(d > 0.0);
            }
        }
    }

    #[test]
    fn convolved_frame_of_design_is_static() {
        let e = Ensemble::exact(GroupTag::Clifford, 1, 2).unwrap();
        let frames = convolved_frames(&e, 2).unwrap();
        let s = crate::frame::frame_operator(GroupTag::Clifford, 1, 2).unwrap().s.into_matrix();
        assert!((&frames[1] - &s).norm() < 1e-12);
        assert!((&frames[2] - &s).norm() < 1e-12);
    }

    #[test]
    fn lrc_gap_small() {
        let e = Ensemble::lrc(3, Boundary::Obc, GateSet::Haar).unwrap();
        let m = moment_operator(&e, 2, Realization::Support).unwrap();
        let g = spectral_gap(&m, GapMethod::Dense, 1e-12).unwrap();
        assert!((g.gap - 0.3).abs() < 1e-10, "{g:?}");
    }
}
