//! Frame operators of the computational-basis measurement and SPAM visibilities.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::group::{enumerate_signed_permutations, weyl_superop, GroupTag, IrrepLabel, IrrepSpec};
use crate::states::measurement_superop;
use crate::superop::{operator_space_dim, Superop};
use crate::weyl::WeylLabel;

#[derive(Clone, Debug)]
pub struct FrameOperator {
    pub group: GroupTag,
    pub n: usize,
    pub p: u32,
    pub s: Superop,
}

fn closed_form_entry(group: GroupTag, n: usize, p: u32, a: &WeylLabel) -> f64 {
    let d = (p as f64).powi(n as i32);
    match group {
        GroupTag::Unitary | GroupTag::Clifford => {
            if a.is_zero() {
                1.0
            } else {
                1.0 / (d + 1.0)
            }
        }
        GroupTag::LocalClifford | GroupTag::LocalUnitary => (p as f64 + 1.0).powi(-(a.weight() as i32)),
        GroupTag::HeisenbergWeyl => {
            if a.x().iter().all(|&v| v == 0) {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Closed-form frame operator; all supported groups give a diagonal `S`.
pub fn frame_operator(group: GroupTag, n: usize, p: u32) -> Result<FrameOperator> {
    if matches!(group, GroupTag::Clifford | GroupTag::LocalClifford) && p != 2 {
        return Err(Error::Unsupported(format!("{group:?} frame for p = {p}")));
    }
    if n > 12 {
        return Err(Error::Capacity("dense frame operators limited to n <= 12".into()));
    }
    let diag: Vec<f64> = WeylLabel::all(n, p).map(|a| closed_form_entry(group, n, p, &a)).collect();
    Ok(FrameOperator { group, n, p, s: Superop::from_diagonal(n, p, &diag)? })
}

/// Frame operator by explicit averaging `|G|^-1 sum_g ω(g)^T M ω(g)` over a finite group.
/// Unitary 2-groups are averaged over the Clifford group, local unitary ones over local Cliffords.
pub fn averaged_frame_operator(group: GroupTag, n: usize, p: u32) -> Result<Superop> {
    let m = measurement_superop(n, p);
    if p != 2 {
        if group != GroupTag::HeisenbergWeyl {
            return Err(Error::Unsupported("explicit averaging for odd p covers the Heisenberg-Weyl group".into()));
        }
        let dim = operator_space_dim(n, p);
        let mut acc = DMatrix::zeros(dim, dim);
        let labels: Vec<WeylLabel> = WeylLabel::all(n, p).collect();
        for a in &labels {
            let w = weyl_superop(a).into_matrix();
            acc += w.transpose() * m.matrix() * &w;
        }
        acc /= labels.len() as f64;
        return Superop::new(n, p, acc);
    }
    let tag = match group {
        GroupTag::Unitary => GroupTag::Clifford,
        GroupTag::LocalUnitary => GroupTag::LocalClifford,
        g => g,
    };
    let perms = enumerate_signed_permutations(tag, n)?;
    let dim = operator_space_dim(n, 2);
    let mdiag = m.matrix().diagonal();
    let mut diag = vec![0.0; dim];
    for perm in &perms {
        for (a, &(b, _)) in perm.iter().enumerate() {
            diag[a] += mdiag[b];
        }
    }
    let cnt = perms.len() as f64;
    diag.iter_mut().for_each(|v| *v /= cnt);
    Superop::from_diagonal(n, 2, &diag)
}

/// Scalar block `s_λ` from the closed forms, without building any projector.
pub fn closed_form_block(group: GroupTag, n: usize, p: u32, label: &IrrepLabel) -> Result<f64> {
    let d = (p as f64).powi(n as i32);
    let mismatch = || Error::Config(format!("irrep {label} does not belong to {group:?}"));
    Ok(match (group, label) {
        (GroupTag::Unitary | GroupTag::Clifford, IrrepLabel::Trivial) => 1.0,
        (GroupTag::Unitary | GroupTag::Clifford, IrrepLabel::Adjoint) => 1.0 / (d + 1.0),
        (GroupTag::LocalClifford | GroupTag::LocalUnitary, IrrepLabel::Local(b)) => {
            if b.len() != n {
                return Err(mismatch());
            }
            (p as f64 + 1.0).powi(-(b.iter().filter(|&&v| v == 0).count() as i32))
        }
        (GroupTag::HeisenbergWeyl, IrrepLabel::Weyl(a)) => {
            if a.n() != n || a.p() != p {
                return Err(mismatch());
            }
            if a.x().iter().all(|&v| v == 0) {
                1.0
            } else {
                0.0
            }
        }
        _ => return Err(mismatch()),
    })
}

impl FrameOperator {
    /// Scalar block `s_λ`; every supported irrep has a scalar frame block.
    pub fn block(&self, irrep: &IrrepSpec) -> f64 {
        let pm = irrep.projector.matrix();
        let num: f64 = (0..pm.nrows()).map(|i| pm[(i, i)] * self.s.matrix()[(i, i)]).sum();
        num / pm.trace()
    }

    /// `S^+` restricted to the isotype of `irrep`.
    pub fn pinv_block(&self, irrep: &IrrepSpec) -> Superop {
        let s = self.block(irrep);
        if s.abs() <= crate::superop::PINV_TOL {
            Superop::zeros(self.n, self.p)
        } else {
            irrep.projector.scale(1.0 / s)
        }
    }

    /// `‖S_λ^+‖`.
    pub fn pinv_norm(&self, irrep: &IrrepSpec) -> Result<f64> {
        let s = self.block(irrep);
        if s.abs() <= crate::superop::PINV_TOL {
            return Err(Error::Assumption(format!("irrep {} is invisible to the measurement", irrep.label)));
        }
        Ok(1.0 / s)
    }

    /// Coordinates of `S^+ P_λ ρ`.
    pub fn filtered_state(&self, irrep: &IrrepSpec, rho: &DVector<f64>) -> DVector<f64> {
        self.pinv_block(irrep).matrix() * rho
    }

    pub fn is_aligned(&self, irrep: &IrrepSpec) -> bool {
        let m = measurement_superop(self.n, self.p);
        let pm = irrep.projector.matrix();
        (pm * m.matrix() - m.matrix() * pm).norm() < 1e-12
    }
}

/// Bounds `(max{1, d_λ/(d-1)}, d_λ or +inf)` on `‖S_λ^+‖`.
pub fn frame_eig_bounds(frame: &FrameOperator, irrep: &IrrepSpec, aligned: bool) -> Result<(f64, f64)> {
    frame.pinv_norm(irrep)?;
    let d = (frame.p as f64).powi(frame.n as i32);
    let lower = if irrep.is_trivial() { 1.0 } else { (irrep.dim as f64 / (d - 1.0)).max(1.0) };
    let upper = if aligned { irrep.dim as f64 } else { f64::INFINITY };
    Ok((lower, upper))
}

#[derive(Clone, Debug)]
pub struct Visibilities {
    pub v_sp: f64,
    pub v_m: f64,
    /// `<<ρ|P_λ|ρ~>> / <<ρ|P_λ|ρ>>` before taking the modulus.
    pub signed_sp: f64,
}

pub fn spam_visibilities(
    rho: &DVector<f64>,
    rho_noisy: &DVector<f64>,
    m: &Superop,
    m_noisy: &Superop,
    irrep: &IrrepSpec,
) -> Result<Visibilities> {
    if irrep.is_trivial() {
        return Err(Error::Config("visibilities are defined for non-trivial irreps".into()));
    }
    let p = irrep.projector.matrix();
    let ideal = rho.dot(&(p * rho));
    let tm = (p * m.matrix()).trace();
    if ideal.abs() < 1e-14 || tm.abs() < 1e-14 {
        return Err(Error::Numerical("zero ideal overlap in visibility denominator".into()));
    }
    let signed = rho.dot(&(p * rho_noisy)) / ideal;
    Ok(Visibilities { v_sp: signed.abs(), v_m: (p * m_noisy.matrix()).trace().abs() / tm, signed_sp: signed })
}

/// Label-indexed frame blocks, useful for reporting.
pub fn frame_blocks(frame: &FrameOperator, irreps: &[IrrepSpec]) -> Vec<(IrrepLabel, f64)> {
    irreps.iter().map(|s| (s.label.clone(), frame.block(s))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::{find_irrep, irrep_projectors};
    use crate::states::{basis_state, depolarizing, pure_state_coords};
    use nalgebra::DVector;
    use num_complex::Complex64;

    #[test]
    fn closed_forms_match_averaging() {
        for (g, n, p) in [
            (GroupTag::Clifford, 1, 2),
            (GroupTag::Clifford, 2, 2),
            (GroupTag::Unitary, 2, 2),
            (GroupTag::HeisenbergWeyl, 1, 2),
            (GroupTag::HeisenbergWeyl, 2, 2),
            (GroupTag::HeisenbergWeyl, 2, 3),
            (GroupTag::LocalClifford, 1, 2),
            (GroupTag::LocalClifford, 2, 2),
            (GroupTag::LocalClifford, 3, 2),
        ] {
            let f = frame_operator(g, n, p).unwrap();
            let avg = averaged_frame_operator(g, n, p).unwrap();
            assert!((f.s.matrix() - avg.matrix()).norm() < 1e-10, "{g:?} n={n}");
        }
    }

    #[test]
    fn block_examples() {
        let c1 = irrep_projectors(GroupTag::Clifford, 1, 2).unwrap();
        let f = frame_operator(GroupTag::Clifford, 1, 2).unwrap();
        assert!((f.block(&c1[1]) - 1.0 / 3.0).abs() < 1e-14);
        let pinv = f.pinv_block(&c1[1]);
        assert_eq!(pinv.matrix().diagonal().as_slice(), &[0.0, 3.0, 3.0, 3.0]);
        assert!((f.pinv_block(&c1[0]).matrix() - c1[0].projector.matrix()).norm() < 1e-14);

        let l = irrep_projectors(GroupTag::LocalClifford, 2, 2).unwrap();
        let fl = frame_operator(GroupTag::LocalClifford, 2, 2).unwrap();
        let b00 = find_irrep(&l, &IrrepLabel::Local(vec![0, 0])).unwrap();
        assert!((fl.block(&b00) - 1.0 / 9.0).abs() < 1e-14);

        let hw = irrep_projectors(GroupTag::HeisenbergWeyl, 2, 2).unwrap();
        let fh = frame_operator(GroupTag::HeisenbergWeyl, 2, 2).unwrap();
        for s in &hw {
            if let IrrepLabel::Weyl(a) = &s.label {
                let want = if a.x().iter().all(|&v| v == 0) { 1.0 } else { 0.0 };
                assert_eq!(fh.block(s), want);
                if want == 0.0 {
                    assert!(fh.pinv_block(s).matrix().norm() == 0.0);
                    assert!(frame_eig_bounds(&fh, s, true).is_err());
                } else {
                    assert_eq!(frame_eig_bounds(&fh, s, true).unwrap(), (1.0, 1.0));
                    assert!((fh.pinv_norm(s).unwrap() - 1.0).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn trace_relation_and_alignment() {
        for (g, n) in [(GroupTag::Clifford, 2), (GroupTag::LocalClifford, 3), (GroupTag::HeisenbergWeyl, 2)] {
            let f = frame_operator(g, n, 2).unwrap();
            let m = measurement_superop(n, 2);
            for s in irrep_projectors(g, n, 2).unwrap() {
                let lhs = f.block(&s) * s.multiplicity as f64;
                let rhs = (s.projector.matrix() * m.matrix()).trace() / s.dim as f64;
                assert!((lhs - rhs).abs() < 1e-12);
                assert!(f.is_aligned(&s));
            }
        }
    }

    #[test]
    fn clifford_bounds_are_tight() {
        let c2 = irrep_projectors(GroupTag::Clifford, 2, 2).unwrap();
        let f = frame_operator(GroupTag::Clifford, 2, 2).unwrap();
        let (lo, hi) = frame_eig_bounds(&f, &c2[1], true).unwrap();
        assert_eq!(lo, 5.0);
        assert_eq!(hi, 15.0);
        assert!((f.pinv_norm(&c2[1]).unwrap() - 5.0).abs() < 1e-12);
        assert!((f.pinv_norm(&c2[0]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn visibilities() {
        let c2 = irrep_projectors(GroupTag::Clifford, 2, 2).unwrap();
        let rho = basis_state(2, 0);
        let m = measurement_superop(2, 2);
        let q = 0.9;
        let dep = depolarizing(2, 2, q);
        let v = spam_visibilities(&rho, &(dep.matrix() * &rho), &m, &m.compose(&dep).unwrap(), &c2[1]).unwrap();
        assert!((v.v_sp - q).abs() < 1e-12 && (v.v_m - q).abs() < 1e-12);
        let v = spam_visibilities(&rho, &rho, &m, &m, &c2[1]).unwrap();
        assert!((v.v_sp - 1.0).abs() < 1e-12 && (v.v_m - 1.0).abs() < 1e-12);

        let l = irrep_projectors(GroupTag::LocalClifford, 2, 2).unwrap();
        let b00 = find_irrep(&l, &IrrepLabel::Local(vec![0, 0])).unwrap();
        let s = 1.0 / 2f64.sqrt();
        let psi = DVector::from_vec(vec![0.0, s, s, 0.0]).map(|v| Complex64::new(v, 0.0));
        let bell = pure_state_coords(2, 2, &psi);
        let v = spam_visibilities(&rho, &bell, &m, &m, &b00).unwrap();
        assert!((v.v_sp - 1.0).abs() < 1e-12);
        assert!((v.signed_sp + 1.0).abs() < 1e-12);
    }
}
