//! Second moments of filter functions: closed forms, bounds, and the dense
//! decomposition into contributions `tr C_σ` of the irreps `σ ⊂ τ_λ^{⊗2}`.

use std::collections::VecDeque;

use nalgebra::DVector;
use serde::Serialize;

use crate::clifford::CliffordTableau;
use crate::error::{Error, Result};
use crate::frame::frame_operator;
use crate::group::{find_irrep, irrep_projectors, GroupTag, IrrepLabel, IrrepSpec};
use crate::linalg::orthonormalize;
use crate::noise::SpamModel;
use crate::states::basis_state;

/// Largest register handled by [`second_moment_blocks`].
pub const BLOCKS_MAX_QUBITS: usize = 2;

/// `E[f_λ²]` for the noiseless Haar-random implementation, measured in the computational
/// basis with `ρ = |0><0|`.
pub fn ideal_second_moment(group: GroupTag, n: usize, p: u32, label: &IrrepLabel) -> Result<f64> {
    let q = p as f64;
    let d = q.powi(n as i32);
    let mismatch = || Error::Config(format!("irrep {label} does not belong to {group:?}"));
    match (group, label) {
        (GroupTag::Clifford | GroupTag::LocalClifford, _) if p != 2 => {
            Err(Error::Unsupported(format!("{group:?} is implemented for qubits only")))
        }
        (_, IrrepLabel::Trivial) => Ok(1.0 / (d * d)),
        (GroupTag::Unitary | GroupTag::Clifford, IrrepLabel::Adjoint) => {
            Ok(1.0 - 1.0 / (d * d) + 2.0 * (d + 1.0) * (d - 1.0) * (d - 2.0) / (d * d * (d + 2.0)))
        }
        (GroupTag::LocalClifford | GroupTag::LocalUnitary, IrrepLabel::Local(b)) => {
            if b.len() != n {
                return Err(mismatch());
            }
            let zeros = b.iter().filter(|&&v| v == 0).count() as i32;
            Ok((q * q - 1.0).powi(zeros) / q.powi(2 * n as i32) * ((3.0 * q - 2.0) / (q + 2.0)).powi(zeros))
        }
        (GroupTag::HeisenbergWeyl, IrrepLabel::Weyl(a)) => {
            if a.n() != n || a.p() != p {
                return Err(mismatch());
            }
            Ok(if a.x().iter().all(|&v| v == 0) { 1.0 / (d * d) } else { 0.0 })
        }
        _ => Err(mismatch()),
    }
}

/// Second moment under depolarizing state preparation and measurement with parameter `q`:
/// `q² E_ideal + (1 - q²) k_λ d_λ / d²`.
pub fn spam_second_moment(ideal: f64, q: f64, k_lambda: usize, d_lambda: usize, d: f64) -> f64 {
    q * q * ideal + (1.0 - q * q) * (k_lambda * d_lambda) as f64 / (d * d)
}

/// `(k_λ d_λ / d², (k_λ d_λ)² / d²)`.
pub fn second_moment_bounds(irrep: &IrrepSpec, d: f64, k_lambda: usize) -> Result<(f64, f64)> {
    if irrep.is_trivial() {
        return Err(Error::Config("second-moment bounds exclude the trivial irrep".into()));
    }
    let kd = (k_lambda * irrep.dim) as f64;
    Ok((kd / (d * d), kd * kd / (d * d)))
}

#[derive(Clone, Debug, Serialize)]
pub struct SecondMomentBlocks {
    pub lambda: String,
    /// `(σ, tr C_σ)` for every irrep of the conjugation representation.
    pub blocks: Vec<(String, f64)>,
    /// `Σ_σ tr C_σ`.
    pub total: f64,
    /// Second moment from the invariant projector without splitting into blocks.
    pub direct: f64,
    /// Number of invariant vectors of the third tensor power.
    pub invariants: usize,
}

fn generators(group: GroupTag, n: usize) -> Result<Vec<Vec<(usize, f64)>>> {
    let mut gens = Vec::new();
    match group {
        GroupTag::Clifford | GroupTag::Unitary | GroupTag::LocalClifford | GroupTag::LocalUnitary => {
            for q in 0..n {
                gens.push(CliffordTableau::hadamard(n, q));
                gens.push(CliffordTableau::phase(n, q));
            }
            if !group.is_local() {
                for c in 0..n {
                    for t in 0..n {
                        if c != t {
                            gens.push(CliffordTableau::cx(n, c, t));
                        }
                    }
                }
            }
        }
        GroupTag::HeisenbergWeyl => {
            for q in 0..n {
                let bit = 1u64 << (n - 1 - q);
                gens.push(CliffordTableau::pauli(n, 0, bit));
                gens.push(CliffordTableau::pauli(n, bit, 0));
            }
        }
    }
    Ok(gens.iter().map(|g| g.signed_permutation()).collect())
}

/// Orthonormal basis of the vectors fixed by `ω^{⊗3}`, as sparse `(index, coefficient)` lists.
/// Continuous groups are replaced by their finite 3-design subgroups on qubits.
fn third_moment_invariants(group: GroupTag, n: usize) -> Result<Vec<Vec<(usize, f64)>>> {
    let gens = generators(group, n)?;
    let dd = 1usize << (2 * n);
    let total = dd * dd * dd;
    let split = |i: usize| (i / (dd * dd), (i / dd) % dd, i % dd);
    let join = |a: usize, b: usize, c: usize| (a * dd + b) * dd + c;
    let mut sign = vec![0.0f64; total];
    let mut out = Vec::new();
    for start in 0..total {
        if sign[start] != 0.0 {
            continue;
        }
        sign[start] = 1.0;
        let mut orbit = vec![start];
        let mut queue = VecDeque::from([start]);
        let mut consistent = true;
        while let Some(x) = queue.pop_front() {
            let (a, b, c) = split(x);
            for g in &gens {
                let (ga, sa) = g[a];
                let (gb, sb) = g[b];
                let (gc, sc) = g[c];
                let y = join(ga, gb, gc);
                let s = sign[x] * sa * sb * sc;
                if sign[y] == 0.0 {
                    sign[y] = s;
                    orbit.push(y);
                    queue.push_back(y);
                } else if sign[y] != s {
                    consistent = false;
                }
            }
        }
        if consistent {
            let norm = (orbit.len() as f64).sqrt();
            out.push(orbit.into_iter().map(|y| (y, sign[y] / norm)).collect());
        }
    }
    Ok(out)
}

/// Splits `E[f_λ²]` into `tr C_σ` by building the projector onto invariants of `ω^{⊗3}` and
/// the isotypic projectors of `ω^{⊗2}` restricted to the `λ ⊗ λ` block.
pub fn second_moment_blocks(
    group: GroupTag,
    n: usize,
    label: &IrrepLabel,
    spam: &SpamModel,
) -> Result<SecondMomentBlocks> {
    if n == 0 || n > BLOCKS_MAX_QUBITS {
        return Err(Error::Capacity(format!("dense second-moment blocks need 1 <= n <= {BLOCKS_MAX_QUBITS}")));
    }
    let p = 2;
    let irreps = irrep_projectors(group, n, p)?;
    let irrep = find_irrep(&irreps, label)?;
    let frame = frame_operator(group, n, p)?;
    let dd = 1usize << (2 * n);
    let rho = basis_state(n, 0);
    let u: DVector<f64> = frame.filtered_state(&irrep, &rho);
    let mut rho_t = rho.as_slice().to_vec();
    spam.prep_channel(n, p)?.apply(&mut rho_t);
    let meas_t = spam.meas_channel(n, p)?.to_superop(n, p).into_matrix().transpose();
    let effects: Vec<(DVector<f64>, DVector<f64>)> = (0..(1u64 << n))
        .map(|i| {
            let e = basis_state(n, i);
            let et = &meas_t * &e;
            (e, et)
        })
        .collect();

    let inv = third_moment_invariants(group, n)?;
    let split = |i: usize| (i / (dd * dd), (i / dd) % dd, i % dd);
    // <<v_k | E_i ⊗ E_i ⊗ E~_i>> summed against the ket side
    let effect_side: Vec<f64> = inv
        .iter()
        .map(|v| {
            effects
                .iter()
                .map(|(e, et)| {
                    v.iter()
                        .map(|&(j, c)| {
                            let (a, b, cc) = split(j);
                            c * e[a] * e[b] * et[cc]
                        })
                        .sum::<f64>()
                })
                .sum()
        })
        .collect();
    let pair_value = |w: &dyn Fn(usize, usize) -> f64| -> f64 {
        inv.iter()
            .zip(&effect_side)
            .map(|(v, es)| {
                let left: f64 = v
                    .iter()
                    .map(|&(j, c)| {
                        let (a, b, cc) = split(j);
                        c * w(a, b) * rho_t[cc]
                    })
                    .sum();
                left * es
            })
            .sum()
    };
    let direct = pair_value(&|a, b| u[a] * u[b]);

    let lam = irrep.projector.matrix().diagonal();
    let uu = DVector::from_fn(dd * dd, |ab, _| u[ab / dd] * u[ab % dd]);
    let mut blocks = Vec::new();
    for sigma in &irreps {
        let sdiag = sigma.projector.matrix().diagonal();
        let mut cols = Vec::new();
        for v in &inv {
            for c in (0..dd).filter(|&c| sdiag[c] != 0.0) {
                let mut col = DVector::zeros(dd * dd);
                let mut any = false;
                for &(j, coef) in v {
                    let (a, b, cc) = split(j);
                    if cc == c && lam[a] != 0.0 && lam[b] != 0.0 {
                        col[a * dd + b] += coef;
                        any = true;
                    }
                }
                if any {
                    cols.push(col);
                }
            }
        }
        let q = orthonormalize(&cols, 1e-10);
        let mut w = DVector::zeros(dd * dd);
        for qv in &q {
            w.axpy(qv.dot(&uu), qv, 1.0);
        }
        let val = pair_value(&|a, b| w[a * dd + b]);
        blocks.push((sigma.label.to_string(), val));
    }
    let total = blocks.iter().map(|b| b.1).sum();
    Ok(SecondMomentBlocks { lambda: label.to_string(), blocks, total, direct, invariants: inv.len() })
}
