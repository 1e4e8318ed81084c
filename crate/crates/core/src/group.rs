//! Benchmarked groups, their elements as superoperators, and isotypic projectors.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clifford::{ptm_label, CliffordTableau};
use crate::error::{Error, Result};
use crate::haar::haar_unitary;
use crate::superop::{operator_space_dim, Superop};
use crate::weyl::{is_prime, WeylLabel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupTag {
    /// Any unitary 2-group; its reference realization is the full unitary group.
    Unitary,
    Clifford,
    LocalClifford,
    LocalUnitary,
    HeisenbergWeyl,
}

impl GroupTag {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "unitary" | "unitary-2-group" | "haar" => GroupTag::Unitary,
            "clifford" => GroupTag::Clifford,
            "local-clifford" => GroupTag::LocalClifford,
            "local-unitary" => GroupTag::LocalUnitary,
            "heisenberg-weyl" | "hw" => GroupTag::HeisenbergWeyl,
            other => return Err(Error::Unsupported(format!("group tag {other:?}"))),
        })
    }

    pub fn is_local(&self) -> bool {
        matches!(self, GroupTag::LocalClifford | GroupTag::LocalUnitary)
    }

    /// Groups that are unitary 3-designs (globally or site-wise) for qubits.
    pub fn is_three_design(&self, p: u32) -> bool {
        match self {
            GroupTag::Unitary | GroupTag::LocalUnitary => true,
            GroupTag::Clifford | GroupTag::LocalClifford => p == 2,
            GroupTag::HeisenbergWeyl => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GroupElement {
    Weyl(WeylLabel),
    Clifford(CliffordTableau),
    Unitary { n: usize, p: u32, u: DMatrix<Complex64> },
    LocalProduct(Vec<GroupElement>),
}

impl GroupElement {
    pub fn n(&self) -> usize {
        match self {
            GroupElement::Weyl(a) => a.n(),
            GroupElement::Clifford(t) => t.n(),
            GroupElement::Unitary { n, .. } => *n,
            GroupElement::LocalProduct(v) => v.iter().map(|g| g.n()).sum(),
        }
    }

    pub fn p(&self) -> u32 {
        match self {
            GroupElement::Weyl(a) => a.p(),
            GroupElement::Clifford(_) => 2,
            GroupElement::Unitary { p, .. } => *p,
            GroupElement::LocalProduct(v) => v.first().map(|g| g.p()).unwrap_or(2),
        }
    }

    pub fn to_superop(&self) -> Superop {
        match self {
            GroupElement::Weyl(a) => weyl_superop(a),
            GroupElement::Clifford(t) => t.to_superop(),
            GroupElement::Unitary { n, p, u } => Superop::from_unitary(*n, *p, u).expect("valid unitary element"),
            GroupElement::LocalProduct(v) => {
                let mut it = v.iter();
                let first = it.next().expect("non-empty product").to_superop();
                it.fold(first, |acc, g| acc.kron(&g.to_superop()).expect("same local dimension"))
            }
        }
    }

    /// Dense unitary (up to phase); only for small registers.
    pub fn unitary(&self) -> DMatrix<Complex64> {
        match self {
            GroupElement::Weyl(a) => a.matrix(),
            GroupElement::Clifford(t) => clifford_unitary(t),
            GroupElement::Unitary { u, .. } => u.clone(),
            GroupElement::LocalProduct(v) => {
                let mut it = v.iter();
                let first = it.next().expect("non-empty product").unitary();
                it.fold(first, |acc, g| acc.kronecker(&g.unitary()))
            }
        }
    }

    pub fn inverse(&self) -> GroupElement {
        match self {
            GroupElement::Weyl(a) => GroupElement::Weyl(a.neg()),
            GroupElement::Clifford(t) => GroupElement::Clifford(t.inverse()),
            GroupElement::Unitary { n, p, u } => GroupElement::Unitary { n: *n, p: *p, u: u.adjoint() },
            GroupElement::LocalProduct(v) => GroupElement::LocalProduct(v.iter().map(|g| g.inverse()).collect()),
        }
    }
}

/// Superoperator of conjugation by `w(a)`.
pub fn weyl_superop(a: &WeylLabel) -> Superop {
    let n = a.n();
    let p = a.p();
    if p == 2 {
        let diag: Vec<f64> = (0..operator_space_dim(n, 2))
            .map(|i| {
                let b = WeylLabel::from_index(i, n, 2);
                if a.symplectic(&b) == 0 {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect();
        return Superop::from_diagonal(n, 2, &diag).expect("dimension is consistent");
    }
    Superop::from_unitary(n, p, &a.matrix()).expect("Weyl operators are unitary")
}

/// Dense unitary of a Clifford tableau, reconstructed from its stabilizer images.
/// The result agrees with the tableau up to a global phase; intended for n <= 6.
pub fn clifford_unitary(t: &CliffordTableau) -> DMatrix<Complex64> {
    let n = t.n();
    let d = 1usize << n;
    // U|0> is the joint +1 eigenvector of the images of Z_j
    let mut proj = DMatrix::<Complex64>::identity(d, d);
    for j in 0..n {
        let s = t.images()[n + j].matrix(n);
        proj = &proj * (DMatrix::identity(d, d) + s) * Complex64::new(0.5, 0.0);
    }
    let col0 =
        (0..d).map(|k| proj.column(k).into_owned()).max_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap()).unwrap();
    let psi0 = &col0 / Complex64::new(col0.norm(), 0.0);
    let mut u = DMatrix::zeros(d, d);
    for y in 0..d {
        // U|y> = U X(y) |0> = (U X(y) U^†) U|0>
        let mut v = psi0.clone();
        for j in 0..n {
            if (y >> (n - 1 - j)) & 1 == 1 {
                v = t.images()[j].matrix(n) * v;
            }
        }
        u.set_column(y, &v);
    }
    u
}

/// Uniform sample from the group.
pub fn sample_element<R: Rng + ?Sized>(tag: GroupTag, n: usize, p: u32, rng: &mut R) -> Result<GroupElement> {
    Ok(match tag {
        GroupTag::Clifford => {
            require_qubits(tag, p)?;
            GroupElement::Clifford(CliffordTableau::random(n, rng))
        }
        GroupTag::LocalClifford => {
            require_qubits(tag, p)?;
            GroupElement::LocalProduct(
                (0..n).map(|_| GroupElement::Clifford(CliffordTableau::random(1, rng))).collect(),
            )
        }
        GroupTag::Unitary => {
            let d = (p as usize).pow(n as u32);
            if d > 32 {
                return Err(Error::Capacity(format!("dense unitaries limited to dimension 32, got {d}")));
            }
            GroupElement::Unitary { n, p, u: haar_unitary(d, rng) }
        }
        GroupTag::LocalUnitary => GroupElement::LocalProduct(
            (0..n).map(|_| GroupElement::Unitary { n: 1, p, u: haar_unitary(p as usize, rng) }).collect(),
        ),
        GroupTag::HeisenbergWeyl => {
            let z = (0..n).map(|_| rng.random_range(0..p)).collect();
            let x = (0..n).map(|_| rng.random_range(0..p)).collect();
            GroupElement::Weyl(WeylLabel::new(p, z, x)?)
        }
    })
}

fn require_qubits(tag: GroupTag, p: u32) -> Result<()> {
    if p != 2 {
        return Err(Error::Unsupported(format!("{tag:?} elements are only implemented for qubits")));
    }
    Ok(())
}

/// Every element of a small finite group as a signed permutation of the basis.
pub fn enumerate_signed_permutations(tag: GroupTag, n: usize) -> Result<Vec<Vec<(usize, f64)>>> {
    match tag {
        GroupTag::Clifford => Ok(CliffordTableau::enumerate(n)?.iter().map(|t| t.signed_permutation()).collect()),
        GroupTag::LocalClifford => {
            if n > 3 {
                return Err(Error::Capacity("local Clifford enumeration limited to n <= 3".into()));
            }
            let c1 = CliffordTableau::enumerate(1)?;
            let mut out = Vec::new();
            let total = 24usize.pow(n as u32);
            for k in 0..total {
                let mut r = k;
                let mut t: Option<CliffordTableau> = None;
                for _ in 0..n {
                    let f = &c1[r % 24];
                    r /= 24;
                    t = Some(match t {
                        None => f.clone(),
                        Some(acc) => acc.tensor(f),
                    });
                }
                out.push(t.unwrap().signed_permutation());
            }
            Ok(out)
        }
        GroupTag::HeisenbergWeyl => {
            let dim = operator_space_dim(n, 2);
            Ok((0..dim)
                .map(|ai| {
                    let (az, ax) = ptm_label(n, ai);
                    (0..dim)
                        .map(|bi| {
                            let (bz, bx) = ptm_label(n, bi);
                            let s = crate::clifford::symplectic(az, ax, bz, bx);
                            (bi, if s == 0 { 1.0 } else { -1.0 })
                        })
                        .collect()
                })
                .collect())
        }
        other => Err(Error::Unsupported(format!("{other:?} is not a finite group"))),
    }
}

pub fn signed_permutation_matrix(perm: &[(usize, f64)]) -> DMatrix<f64> {
    let dim = perm.len();
    let mut m = DMatrix::zeros(dim, dim);
    for (a, &(b, s)) in perm.iter().enumerate() {
        m[(b, a)] = s;
    }
    m
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IrrepLabel {
    Trivial,
    Adjoint,
    /// Bit `b_j = 1` marks a trivial factor on site `j`, `0` an adjoint factor.
    Local(Vec<u8>),
    Weyl(WeylLabel),
}

impl std::fmt::Display for IrrepLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            IrrepLabel::Trivial => write!(f, "trivial"),
            IrrepLabel::Adjoint => write!(f, "ad"),
            IrrepLabel::Local(b) => {
                write!(f, "b=")?;
                b.iter().try_for_each(|v| write!(f, "{v}"))
            }
            IrrepLabel::Weyl(a) => {
                write!(f, "z=")?;
                a.z().iter().try_for_each(|v| write!(f, "{v}"))?;
                write!(f, ",x=")?;
                a.x().iter().try_for_each(|v| write!(f, "{v}"))
            }
        }
    }
}

impl Serialize for WeylLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("WeylLabel", 3)?;
        st.serialize_field("p", &self.p())?;
        st.serialize_field("z", self.z())?;
        st.serialize_field("x", self.x())?;
        st.end()
    }
}

impl<'de> Deserialize<'de> for WeylLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            p: u32,
            z: Vec<u32>,
            x: Vec<u32>,
        }
        let r = Raw::deserialize(d)?;
        WeylLabel::new(r.p, r.z, r.x).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum IrrepKind {
    Real,
    /// Real block carrying a pair of complex-conjugate irreps.
    Complex,
}

#[derive(Clone, Debug)]
pub struct IrrepSpec {
    pub group: GroupTag,
    pub label: IrrepLabel,
    pub projector: Superop,
    pub dim: usize,
    pub multiplicity: usize,
    pub kind: IrrepKind,
}

impl IrrepSpec {
    pub fn is_trivial(&self) -> bool {
        match &self.label {
            IrrepLabel::Trivial => true,
            IrrepLabel::Local(b) => b.iter().all(|&v| v == 1),
            IrrepLabel::Weyl(a) => a.is_zero(),
            IrrepLabel::Adjoint => false,
        }
    }

    pub fn require_real(&self) -> Result<()> {
        if self.kind != IrrepKind::Real {
            return Err(Error::Unsupported(format!("irrep {} is not of real type", self.label)));
        }
        Ok(())
    }
}

fn diag_projector(n: usize, p: u32, keep: impl Fn(&WeylLabel) -> bool) -> Superop {
    let diag: Vec<f64> = WeylLabel::all(n, p).map(|a| if keep(&a) { 1.0 } else { 0.0 }).collect();
    Superop::from_diagonal(n, p, &diag).expect("dimension is consistent")
}

/// Complete list of isotypic projectors of the conjugation representation.
pub fn irrep_projectors(group: GroupTag, n: usize, p: u32) -> Result<Vec<IrrepSpec>> {
    if !is_prime(p) {
        return Err(Error::Config(format!("local dimension {p} is not prime")));
    }
    if n == 0 {
        return Err(Error::Config("need at least one qudit".into()));
    }
    let d = (p as usize).pow(n as u32);
    let mut out = Vec::new();
    match group {
        GroupTag::Unitary | GroupTag::Clifford => {
            if group == GroupTag::Clifford && p != 2 {
                return Err(Error::Unsupported("Clifford groups are implemented for qubits only".into()));
            }
            out.push(IrrepSpec {
                group,
                label: IrrepLabel::Trivial,
                projector: diag_projector(n, p, |a| a.is_zero()),
                dim: 1,
                multiplicity: 1,
                kind: IrrepKind::Real,
            });
            out.push(IrrepSpec {
                group,
                label: IrrepLabel::Adjoint,
                projector: diag_projector(n, p, |a| !a.is_zero()),
                dim: d * d - 1,
                multiplicity: 1,
                kind: IrrepKind::Real,
            });
        }
        GroupTag::LocalClifford | GroupTag::LocalUnitary => {
            if group == GroupTag::LocalClifford && p != 2 {
                return Err(Error::Unsupported("local Clifford groups are implemented for qubits only".into()));
            }
            if n > 16 {
                return Err(Error::Capacity("local irreps enumerated up to n = 16".into()));
            }
            for bits in 0u32..(1 << n) {
                let b: Vec<u8> = (0..n).map(|j| ((bits >> (n - 1 - j)) & 1) as u8).collect();
                let zeros = b.iter().filter(|&&v| v == 0).count();
                let bb = b.clone();
                out.push(IrrepSpec {
                    group,
                    label: IrrepLabel::Local(b),
                    projector: diag_projector(n, p, move |a| {
                        (0..n).all(|j| (a.z()[j] == 0 && a.x()[j] == 0) == (bb[j] == 1))
                    }),
                    dim: ((p * p - 1) as usize).pow(zeros as u32),
                    multiplicity: 1,
                    kind: IrrepKind::Real,
                });
            }
        }
        GroupTag::HeisenbergWeyl => {
            for a in WeylLabel::all(n, p) {
                let na = a.neg();
                if p != 2 && na.index() < a.index() {
                    continue;
                }
                let real = p == 2 || a.is_zero();
                let (ai, ni) = (a.index(), na.index());
                out.push(IrrepSpec {
                    group,
                    label: IrrepLabel::Weyl(a.clone()),
                    projector: diag_projector(n, p, move |b| b.index() == ai || b.index() == ni),
                    dim: if real { 1 } else { 2 },
                    multiplicity: 1,
                    kind: if real { IrrepKind::Real } else { IrrepKind::Complex },
                });
            }
        }
    }
    Ok(out)
}

pub fn find_irrep(irreps: &[IrrepSpec], label: &IrrepLabel) -> Result<IrrepSpec> {
    irreps.iter().find(|s| &s.label == label).cloned().ok_or_else(|| Error::Config(format!("irrep {label} not found")))
}

/// `P = dim/|G| sum_g chi(g) rep(g)` for real characters.
pub fn character_projector(elements: &[(f64, DMatrix<f64>)], dim: usize) -> Result<DMatrix<f64>> {
    let first = elements.first().ok_or_else(|| Error::Config("empty group".into()))?;
    let mut p = DMatrix::zeros(first.1.nrows(), first.1.ncols());
    for (chi, rep) in elements {
        p += rep * *chi;
    }
    p *= dim as f64 / elements.len() as f64;
    if (&p * &p - &p).norm() > 1e-8 * p.norm().max(1.0) {
        return Err(Error::Numerical("character sum is not idempotent; wrong character table".into()));
    }
    Ok(p)
}

/// Fixed-point projector of the conjugation representation (trivial character).
pub fn trivial_projector(elements: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let pairs: Vec<(f64, DMatrix<f64>)> = elements.iter().map(|m| (1.0, m.clone())).collect();
    character_projector(&pairs, 1)
}

/// Identity operator as a coordinate vector.
pub fn identity_vector(n: usize, p: u32) -> DVector<f64> {
    let mut v = DVector::zeros(operator_space_dim(n, p));
    v[0] = ((p as usize).pow(n as u32) as f64).sqrt();
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn weyl_superop_examples() {
        let x = WeylLabel::new(2, vec![0], vec![1]).unwrap();
        let s = weyl_superop(&x);
        // basis order is (I, X, Z, Y); on (I, X, Y, Z) this is (1, 1, -1, -1)
        assert_eq!(s.matrix().diagonal().as_slice(), &[1.0, 1.0, -1.0, -1.0]);
        let dense = Superop::from_unitary(1, 2, &x.matrix()).unwrap();
        assert!((dense.matrix() - s.matrix()).norm() < 1e-12);
        assert!((weyl_superop(&WeylLabel::zero(2, 3)).matrix() - Superop::identity(2, 3).matrix()).norm() < 1e-12);
        for p in [3u32, 5] {
            let a = WeylLabel::new(p, vec![1], vec![2]).unwrap();
            let w = weyl_superop(&a);
            let mut acc = Superop::identity(1, p);
            for _ in 0..p {
                acc = acc.compose(&w).unwrap();
            }
            assert!((acc.matrix() - Superop::identity(1, p).matrix()).norm() < 1e-10);
            // rotation blocks on conjugate pairs: the matrix is orthogonal and block diagonal
            let m = w.matrix();
            assert!((m * m.transpose() - DMatrix::identity(m.nrows(), m.nrows())).norm() < 1e-10);
        }
    }

    #[test]
    fn projectors_are_complete_and_commute() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for (tag, n, p) in [
            (GroupTag::Clifford, 1, 2),
            (GroupTag::Clifford, 2, 2),
            (GroupTag::LocalClifford, 2, 2),
            (GroupTag::HeisenbergWeyl, 2, 2),
            (GroupTag::HeisenbergWeyl, 1, 3),
            (GroupTag::LocalUnitary, 2, 3),
            (GroupTag::Unitary, 1, 3),
        ] {
            let irreps = irrep_projectors(tag, n, p).unwrap();
            let dim = operator_space_dim(n, p);
            let mut sum = DMatrix::zeros(dim, dim);
            for s in &irreps {
                let m = s.projector.matrix();
                assert!((m * m - m).norm() < 1e-12);
                assert!((m - m.transpose()).norm() < 1e-12);
                assert!((m.trace() - (s.dim * s.multiplicity) as f64).abs() < 1e-12);
                if !s.is_trivial() {
                    assert!((m * identity_vector(n, p)).norm() < 1e-12);
                }
                sum += m;
            }
            assert!((sum - DMatrix::identity(dim, dim)).norm() < 1e-12);
            for _ in 0..100 {
                let g = sample_element(tag, n, p, &mut rng).unwrap().to_superop();
                for s in &irreps {
                    let m = s.projector.matrix();
                    assert!((m * g.matrix() - g.matrix() * m).norm() < 1e-10, "{tag:?} {}", s.label);
                }
            }
        }
    }

    #[test]
    fn clifford_adjoint_via_characters() {
        let elems: Vec<(f64, DMatrix<f64>)> = CliffordTableau::enumerate(1)
            .unwrap()
            .iter()
            .map(|t| {
                let m = t.to_superop().into_matrix();
                (m.trace() - 1.0, m)
            })
            .collect();
        let p = character_projector(&elems, 3).unwrap();
        let want = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0, 1.0, 1.0]));
        assert!((p - want).norm() < 1e-10);
        let triv = trivial_projector(&elems.iter().map(|e| e.1.clone()).collect::<Vec<_>>()).unwrap();
        let irreps = irrep_projectors(GroupTag::Clifford, 1, 2).unwrap();
        assert!((triv - irreps[0].projector.matrix()).norm() < 1e-10);
    }

    #[test]
    fn heisenberg_weyl_characters() {
        let perms = enumerate_signed_permutations(GroupTag::HeisenbergWeyl, 1).unwrap();
        let z = WeylLabel::new(2, vec![1], vec![0]).unwrap();
        let elems: Vec<(f64, DMatrix<f64>)> = perms
            .iter()
            .enumerate()
            .map(|(ai, perm)| {
                let a = WeylLabel::from_index(ai, 1, 2);
                let chi = if a.symplectic(&z) == 0 { 1.0 } else { -1.0 };
                (chi, signed_permutation_matrix(perm))
            })
            .collect();
        let p = character_projector(&elems, 1).unwrap();
        let irreps = irrep_projectors(GroupTag::HeisenbergWeyl, 1, 2).unwrap();
        assert_eq!(irreps.len(), 4);
        let want = find_irrep(&irreps, &IrrepLabel::Weyl(z)).unwrap();
        assert!((p - want.projector.matrix()).norm() < 1e-12);
        assert_eq!(want.projector.matrix()[(2, 2)], 1.0);
        let total: f64 = irreps.iter().map(|s| s.projector.matrix().trace()).sum();
        assert_eq!(total, 4.0);
    }

    #[test]
    fn small_examples() {
        let c = irrep_projectors(GroupTag::Clifford, 1, 2).unwrap();
        assert_eq!(c[1].dim, 3);
        assert_eq!(c[1].projector.matrix().diagonal().as_slice(), &[0.0, 1.0, 1.0, 1.0]);
        let l = irrep_projectors(GroupTag::LocalClifford, 2, 2).unwrap();
        let b11 = find_irrep(&l, &IrrepLabel::Local(vec![1, 1])).unwrap();
        assert_eq!(b11.dim, 1);
        let p1 = &c[0].projector;
        assert!((b11.projector.matrix() - p1.kron(p1).unwrap().matrix()).norm() < 1e-14);
    }

    #[test]
    fn clifford_unitary_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for n in 1..=3 {
            for _ in 0..20 {
                let t = CliffordTableau::random(n, &mut rng);
                let u = clifford_unitary(&t);
                let d = 1 << n;
                assert!((&u * u.adjoint() - DMatrix::<Complex64>::identity(d, d)).norm() < 1e-10);
                let s = Superop::from_unitary(n, 2, &u).unwrap();
                assert!((s.matrix() - t.to_superop().matrix()).norm() < 1e-10);
            }
        }
    }
}
