//! Dominant and subdominant parts of the filtered RB signal of a noisy circuit ensemble.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::clifford::ptm_index;
use crate::ensembles::Ensemble;
use crate::error::{Error, Result};
use crate::frame::frame_operator;
use crate::group::{find_irrep, irrep_projectors, IrrepLabel};
use crate::linalg::{orthonormalize, spectral_norm, spectral_norm_dense, LinearMap, SparseApply};
use crate::noise::{NoiseModel, SpamModel};
use crate::spectra::{diagonal_of, moment_operator, pair_to_site_major, NoisyMoment, Realization, AUTO_DENSE_LIMIT};
use crate::states::basis_state;

use super::bounds::{c_lambda, g_factor, subdominant_bound, LemmaInputs};
use super::perturbation::{perturb_block_diagonalize, PerturbationResult};

/// Summary of a decomposition, suitable for reports.
#[derive(Clone, Debug, Serialize)]
pub struct SignalSummary {
    pub lambda: String,
    pub method: &'static str,
    pub dim: usize,
    pub gap: f64,
    pub delta: f64,
    /// Eigenvalues of `I_λ` as `(re, im)`.
    pub i_eigenvalues: Vec<(f64, f64)>,
    pub o_norm: f64,
    pub c_lambda: f64,
    pub overlap: f64,
    pub g: f64,
    pub dominant_trace: f64,
}

enum Parts {
    Dense {
        r: Box<PerturbationResult>,
        out_r1: DVector<f64>,
        l1_in: DVector<f64>,
        out_r2: DVector<f64>,
        l2_in: DVector<f64>,
    },
    /// Noiseless, evaluated by repeated application of the moment operator.
    MatrixFree { op: SparseApply, x1: Vec<DVector<f64>>, input: DVector<f64>, output: DVector<f64> },
}

pub struct SignalDecomposition {
    pub summary: SignalSummary,
    pub lemma: LemmaInputs,
    pub i_block: DMatrix<f64>,
    parts: Parts,
}

impl SignalDecomposition {
    /// `tr(A_λ I_λ^m)`.
    pub fn dominant(&self, m: usize) -> f64 {
        match &self.parts {
            Parts::Dense { r, out_r1, l1_in, .. } => {
                let mut v = l1_in.clone();
                for _ in 0..m {
                    v = &r.i_block * v;
                }
                out_r1.dot(&v)
            }
            Parts::MatrixFree { x1, input, output, .. } => x1.iter().map(|x| output.dot(x) * x.dot(input)).sum(),
        }
    }

    /// `tr(B_λ O_λ^m)`.
    pub fn subdominant(&self, m: usize) -> f64 {
        match &self.parts {
            Parts::Dense { r, out_r2, l2_in, .. } => {
                let mut v = l2_in.clone();
                for _ in 0..m {
                    v = &r.o_block * v;
                }
                out_r2.dot(&v)
            }
            Parts::MatrixFree { op, input, output, .. } => {
                let mut x = input.as_slice().to_vec();
                let mut y = vec![0.0; x.len()];
                for _ in 0..m {
                    op.apply(&x, &mut y);
                    std::mem::swap(&mut x, &mut y);
                }
                output.dot(&DVector::from_vec(x)) - self.dominant(m)
            }
        }
    }

    pub fn signal(&self, m: usize) -> f64 {
        self.dominant(m) + self.subdominant(m)
    }

    /// Certified bound on `|subdominant(m)|`.
    pub fn bound(&self, m: usize) -> f64 {
        subdominant_bound(&self.lemma, m)
    }

    pub fn perturbation(&self) -> Option<&PerturbationResult> {
        match &self.parts {
            Parts::Dense { r, .. } => Some(r),
            Parts::MatrixFree { .. } => None,
        }
    }
}

/// `x -> A x - X1 X1^T x`.
struct Deflated<'a> {
    op: &'a dyn LinearMap,
    basis: &'a [DVector<f64>],
}

impl Deflated<'_> {
    fn project_out(&self, x: &[f64], y: &mut [f64]) {
        let xv = DVector::from_column_slice(x);
        for q in self.basis {
            let c = q.dot(&xv);
            y.iter_mut().zip(q.iter()).for_each(|(yi, qi)| *yi -= c * qi);
        }
    }
}

impl LinearMap for Deflated<'_> {
    fn dim(&self) -> usize {
        self.op.dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.op.apply(x, y);
        self.project_out(x, y);
    }

    fn apply_transpose(&self, x: &[f64], y: &mut [f64]) {
        self.op.apply_transpose(x, y);
        self.project_out(x, y);
    }
}

/// Restriction of a `t = 2` moment operator to pairs whose second copy lies in the irrep.
struct Restriction {
    idx: Vec<usize>,
    full: usize,
}

impl Restriction {
    fn embed(&self, x: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; self.full];
        for (&i, &xi) in self.idx.iter().zip(x) {
            v[i] = xi;
        }
        v
    }

    fn extract(&self, v: &[f64], y: &mut [f64]) {
        for (yi, &i) in y.iter_mut().zip(&self.idx) {
            *yi = v[i];
        }
    }

    fn wrap(self, op: NoisyMoment) -> SparseApply {
        let r = std::sync::Arc::new(self);
        let op = std::sync::Arc::new(op);
        let (r2, op2) = (r.clone(), op.clone());
        SparseApply::new(
            r.idx.len(),
            move |x, y| {
                let mut t = vec![0.0; r.full];
                op.apply(&r.embed(x), &mut t);
                r.extract(&t, y);
            },
            move |x, y| {
                let mut t = vec![0.0; r2.full];
                op2.apply_transpose(&r2.embed(x), &mut t);
                r2.extract(&t, y);
            },
        )
    }
}

/// Decomposes `F_λ(m)` into the dominant decay `tr(A I^m)` and the subdominant remainder.
///
/// Small registers are handled densely through [`perturb_block_diagonalize`]; larger
/// noiseless ones fall back to a matrix-free evaluation.
pub fn signal_decomposition(
    e: &Ensemble,
    noise: &NoiseModel,
    spam: &SpamModel,
    label: &IrrepLabel,
) -> Result<SignalDecomposition> {
    if e.p != 2 {
        return Err(Error::Unsupported("signal decomposition is implemented for qubits".into()));
    }
    let (n, p) = (e.n, e.p);
    let group = e.group();
    let irrep = find_irrep(&irrep_projectors(group, n, p)?, label)?;
    irrep.require_real()?;
    if irrep.is_trivial() {
        return Err(Error::Config("signal decomposition needs a non-trivial irrep".into()));
    }
    let frame = frame_operator(group, n, p)?;
    let lam = diagonal_of(&irrep)?;
    let dd = 1usize << (2 * n);
    let map = pair_to_site_major(n, p);
    let mut idx = Vec::new();
    let mut pos = vec![usize::MAX; dd * dd];
    for a in 0..dd {
        for b in (0..dd).filter(|&b| lam[b] != 0.0) {
            pos[map[a * dd + b]] = idx.len();
            idx.push(map[a * dd + b]);
        }
    }
    let dim = idx.len();
    let compress = |full: &[f64]| DVector::from_iterator(dim, idx.iter().map(|&i| full[i]));

    let rho = basis_state(n, 0);
    let v = frame.filtered_state(&irrep, &rho);
    let mut rho_t = rho.as_slice().to_vec();
    spam.prep_channel(n, p)?.apply(&mut rho_t);
    let meas = spam.meas_channel(n, p)?.to_superop(n, p).into_matrix();
    let mut input = DVector::zeros(dim);
    let mut output = DVector::zeros(dim);
    for a in 0..dd {
        for b in 0..dd {
            let k = pos[map[a * dd + b]];
            if k != usize::MAX {
                input[k] = rho_t[a] * v[b];
            }
        }
    }
    for z in 0..(1u64 << n) {
        let zi = ptm_index(n, z, 0);
        for a in 0..dd {
            let k = pos[map[a * dd + zi]];
            if k != usize::MAX {
                output[k] += meas[(zi, a)];
            }
        }
    }

    let fixed = moment_operator(e, 2, Realization::Full)?.fixed_basis;
    let masked: Vec<DVector<f64>> = fixed.iter().map(|f| compress(f)).filter(|v| v.norm() > 1e-9).collect();
    let x1 = orthonormalize(&masked, 1e-9);
    let (c, _) = c_lambda(&frame, &irrep)?;
    let overlap = rho.dot(&(irrep.projector.matrix() * &rho));
    let ideal_op = || -> Result<SparseApply> {
        Ok(Restriction { idx: idx.clone(), full: dd * dd }
            .wrap(NoisyMoment::new(e, &NoiseModel::None, 0)?.with_mask(lam.clone())))
    };

    if dim > AUTO_DENSE_LIMIT {
        if !noise.is_noiseless() {
            return Err(Error::Capacity(format!(
                "noisy signal decomposition needs the restricted dimension {dim} <= {AUTO_DENSE_LIMIT}"
            )));
        }
        let op = ideal_op()?;
        let deflated = Deflated { op: &op, basis: &x1 };
        let o_norm = spectral_norm(&deflated, 1e-10)?;
        let gap = 1.0 - o_norm;
        let lemma = LemmaInputs { c_lambda: c, overlap, delta: 0.0, gap };
        let k1 = x1.len();
        let summary = SignalSummary {
            lambda: label.to_string(),
            method: "matrix-free",
            dim,
            gap,
            delta: 0.0,
            i_eigenvalues: vec![(1.0, 0.0); k1],
            o_norm,
            c_lambda: c,
            overlap,
            g: 1.0,
            dominant_trace: x1.iter().map(|x| output.dot(x) * x.dot(&input)).sum(),
        };
        return Ok(SignalDecomposition {
            summary,
            lemma,
            i_block: DMatrix::identity(k1, k1),
            parts: Parts::MatrixFree { op, x1, input, output },
        });
    }

    let a = crate::linalg::to_dense(&ideal_op()?);
    let t = crate::linalg::to_dense(
        &Restriction { idx: idx.clone(), full: dd * dd }.wrap(NoisyMoment::new(e, noise, 0)?.with_mask(lam.clone())),
    );
    let k1 = x1.len();
    let x1m = DMatrix::from_fn(dim, k1, |i, j| x1[j][i]);
    let lambda_norm = spectral_norm_dense(&(&a - &x1m * x1m.transpose()));
    let gap = (1.0 - lambda_norm).min(1.0);
    let e_mat = &t - &a;
    let delta = spectral_norm_dense(&e_mat);
    if gap <= 0.0 || delta >= gap / 4.0 {
        return Err(Error::Assumption(format!(
            "implementation error is outside the perturbative regime: δ/Δ = {:.4} (δ = {delta:.3e}, Δ = {gap:.4})",
            delta / gap
        )));
    }
    let r = perturb_block_diagonalize(&a, &x1m, &e_mat, gap)?;
    let out_r1 = r.r1.transpose() * &output;
    let l1_in = r.l1.transpose() * &input;
    let out_r2 = r.r2.transpose() * &output;
    let l2_in = r.l2.transpose() * &input;
    let i_eigenvalues = r.i_block.complex_eigenvalues().iter().map(|z| (z.re, z.im)).collect();
    let lemma = LemmaInputs { c_lambda: c, overlap, delta, gap };
    let dominant_trace = out_r1.dot(&l1_in);
    let summary = SignalSummary {
        lambda: label.to_string(),
        method: "dense",
        dim,
        gap,
        delta,
        i_eigenvalues,
        o_norm: spectral_norm_dense(&r.o_block),
        c_lambda: c,
        overlap,
        g: g_factor(delta / gap),
        dominant_trace,
    };
    Ok(SignalDecomposition {
        summary,
        lemma,
        i_block: r.i_block.clone(),
        parts: Parts::Dense { r: Box::new(r), out_r1, l1_in, out_r2, l2_in },
    })
}
