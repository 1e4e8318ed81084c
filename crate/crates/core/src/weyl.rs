//! Weyl (generalized Pauli) operators, their labels, and the real Hermitian
//! operator basis in which every superoperator of this crate is written.
//!
//! Basis convention: the label `a = (a_z, a_x)` of an `n`-qudit Weyl operator
//! has per-site code `c_j = a_z[j] * p + a_x[j]`; the basis index is
//! `sum_j c_j * p^(2 (n-1-j))`, so site 0 is the most significant digit. For
//! qubits this gives the single-site order (I, X, Z, Y) and Kronecker products
//! of per-site matrices respect the tensor structure.
//!
//! Basis elements are normalized in Hilbert-Schmidt norm. For `p = 2` they are
//! the Pauli strings divided by `sqrt(d)`. For odd `p` the conjugate pair
//! `w(a), w(-a)` is replaced by its Hermitian real and imaginary combinations,
//! the cosine part stored at the smaller of the two indices.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub fn is_prime(p: u32) -> bool {
    p >= 2 && (2..).take_while(|k| k * k <= p).all(|k| !p.is_multiple_of(k))
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WeylLabel {
    p: u32,
    z: Vec<u32>,
    x: Vec<u32>,
}

impl WeylLabel {
    pub fn new(p: u32, z: Vec<u32>, x: Vec<u32>) -> Result<Self> {
        if !is_prime(p) {
            return Err(Error::Config(format!("local dimension {p} is not prime")));
        }
        if z.len() != x.len() {
            return Err(Error::Dimension(format!("z has {} entries, x has {}", z.len(), x.len())));
        }
        let z = z.into_iter().map(|v| v % p).collect();
        let x = x.into_iter().map(|v| v % p).collect();
        Ok(Self { p, z, x })
    }

    pub fn zero(n: usize, p: u32) -> Self {
        Self { p, z: vec![0; n], x: vec![0; n] }
    }

    /// Qubit label from bit masks; bit `n-1-j` of each mask belongs to qubit `j`.
    pub fn from_masks(n: usize, z: u64, x: u64) -> Self {
        let bit = |m: u64, j: usize| ((m >> (n - 1 - j)) & 1) as u32;
        Self { p: 2, z: (0..n).map(|j| bit(z, j)).collect(), x: (0..n).map(|j| bit(x, j)).collect() }
    }

    pub fn masks(&self) -> (u64, u64) {
        let n = self.n();
        let mut zm = 0u64;
        let mut xm = 0u64;
        for j in 0..n {
            zm |= ((self.z[j] & 1) as u64) << (n - 1 - j);
            xm |= ((self.x[j] & 1) as u64) << (n - 1 - j);
        }
        (zm, xm)
    }

    pub fn n(&self) -> usize {
        self.z.len()
    }
    pub fn p(&self) -> u32 {
        self.p
    }
    pub fn z(&self) -> &[u32] {
        &self.z
    }
    pub fn x(&self) -> &[u32] {
        &self.x
    }

    pub fn is_zero(&self) -> bool {
        self.z.iter().chain(&self.x).all(|&v| v == 0)
    }

    /// Number of sites with a non-identity factor.
    pub fn weight(&self) -> usize {
        (0..self.n()).filter(|&j| self.z[j] != 0 || self.x[j] != 0).count()
    }

    /// `[a, b] = a_z . b_x - a_x . b_z (mod p)`.
    pub fn symplectic(&self, other: &WeylLabel) -> u32 {
        let p = self.p as u64;
        let mut s: u64 = 0;
        for j in 0..self.n() {
            s += self.z[j] as u64 * other.x[j] as u64;
            s += (p - self.x[j] as u64) % p * other.z[j] as u64;
        }
        (s % p) as u32
    }

    pub fn add(&self, other: &WeylLabel) -> WeylLabel {
        let p = self.p;
        WeylLabel {
            p,
            z: self.z.iter().zip(&other.z).map(|(a, b)| (a + b) % p).collect(),
            x: self.x.iter().zip(&other.x).map(|(a, b)| (a + b) % p).collect(),
        }
    }

    pub fn neg(&self) -> WeylLabel {
        let p = self.p;
        WeylLabel {
            p,
            z: self.z.iter().map(|a| (p - a) % p).collect(),
            x: self.x.iter().map(|a| (p - a) % p).collect(),
        }
    }

    pub fn index(&self) -> usize {
        let p = self.p as usize;
        self.z.iter().zip(&self.x).fold(0, |acc, (&z, &x)| acc * p * p + z as usize * p + x as usize)
    }

    pub fn from_index(idx: usize, n: usize, p: u32) -> Self {
        let pp = p as usize;
        let mut z = vec![0; n];
        let mut x = vec![0; n];
        let mut r = idx;
        for j in (0..n).rev() {
            let c = r % (pp * pp);
            r /= pp * pp;
            z[j] = (c / pp) as u32;
            x[j] = (c % pp) as u32;
        }
        Self { p, z, x }
    }

    pub fn all(n: usize, p: u32) -> impl Iterator<Item = WeylLabel> {
        let total = (p as usize).pow(2 * n as u32);
        (0..total).map(move |i| WeylLabel::from_index(i, n, p))
    }

    /// The dense `w(a) = tau^(-a_z . a_x) Z(a_z) X(a_x)` with `tau = (-1)^p e^(i pi/p)`.
    pub fn matrix(&self) -> DMatrix<Complex64> {
        let p = self.p as usize;
        let n = self.n();
        let d = p.pow(n as u32);
        let xi = |k: i64| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / p as f64);
        let sign = if p.is_multiple_of(2) { 1.0 } else { -1.0 };
        let tau = Complex64::from_polar(1.0, std::f64::consts::PI / p as f64) * sign;
        let zx: i64 = self.z.iter().zip(&self.x).map(|(&a, &b)| a as i64 * b as i64).sum();
        let order = if p == 2 { 4 } else { p as i64 };
        let pref = tau.powi(((order - zx.rem_euclid(order)) % order) as i32);
        let digits = |mut v: usize| {
            let mut out = vec![0usize; n];
            for j in (0..n).rev() {
                out[j] = v % p;
                v /= p;
            }
            out
        };
        let undigits = |v: &[usize]| v.iter().fold(0, |a, &b| a * p + b);
        let mut m = DMatrix::zeros(d, d);
        for y in 0..d {
            let yd = digits(y);
            let t: Vec<usize> = (0..n).map(|j| (yd[j] + self.x[j] as usize) % p).collect();
            let phase: i64 = (0..n).map(|j| self.z[j] as i64 * t[j] as i64).sum();
            m[(undigits(&t), y)] = pref * xi(phase);
        }
        m
    }
}

/// Dense Hermitian orthonormal operator basis matching the index convention above.
pub fn operator_basis(n: usize, p: u32) -> Vec<DMatrix<Complex64>> {
    let total = (p as usize).pow(2 * n as u32);
    let d = (p as usize).pow(n as u32) as f64;
    let mut out = Vec::with_capacity(total);
    for idx in 0..total {
        let a = WeylLabel::from_index(idx, n, p);
        if p == 2 {
            out.push(a.matrix() / Complex64::new(d.sqrt(), 0.0));
            continue;
        }
        if a.is_zero() {
            out.push(a.matrix() / Complex64::new(d.sqrt(), 0.0));
            continue;
        }
        let na = a.neg();
        let s = (2.0 * d).sqrt();
        if idx < na.index() {
            let w = a.matrix();
            out.push((&w + w.adjoint()) / Complex64::new(s, 0.0));
        } else {
            let w = na.matrix();
            out.push((&w - w.adjoint()) * Complex64::new(0.0, 1.0 / s));
        }
    }
    out
}

/// Real coordinates of a Hermitian operator in the basis of `operator_basis`.
pub fn to_coords(op: &DMatrix<Complex64>, basis: &[DMatrix<Complex64>]) -> Vec<f64> {
    basis.iter().map(|b| (b.adjoint() * op).trace().re).collect()
}

pub fn from_coords(v: &[f64], basis: &[DMatrix<Complex64>]) -> DMatrix<Complex64> {
    let d = basis[0].nrows();
    let mut m = DMatrix::zeros(d, d);
    for (c, b) in v.iter().zip(basis) {
        m += b * Complex64::new(*c, 0.0);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qubit_labels_are_paulis() {
        let y = WeylLabel::new(2, vec![1], vec![1]).unwrap();
        let m = y.matrix();
        assert!((m[(0, 1)] - Complex64::new(0.0, -1.0)).norm() < 1e-14);
        assert!((m[(1, 0)] - Complex64::new(0.0, 1.0)).norm() < 1e-14);
        assert_eq!(WeylLabel::new(2, vec![0], vec![1]).unwrap().index(), 1);
        assert_eq!(WeylLabel::new(2, vec![1], vec![0]).unwrap().index(), 2);
        assert_eq!(y.index(), 3);
    }

    #[test]
    fn commutation_relation_and_order() {
        for p in [2u32, 3, 5] {
            let n = if p == 5 { 1 } else { 2 };
            let xi = |k: u32| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / p as f64);
            let labels: Vec<_> = WeylLabel::all(n, p).collect();
            for a in labels.iter().step_by(3) {
                let wa = a.matrix();
                let mut pw = DMatrix::identity(wa.nrows(), wa.nrows());
                for _ in 0..p {
                    pw = &pw * &wa;
                }
                assert!((pw - DMatrix::identity(wa.nrows(), wa.nrows())).norm() < 1e-10);
                for b in labels.iter().step_by(5) {
                    let wb = b.matrix();
                    let lhs = &wa * &wb;
                    let rhs = &wb * &wa * xi(a.symplectic(b));
                    assert!((lhs - rhs).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn basis_is_orthonormal_and_hermitian() {
        for (n, p) in [(1usize, 2u32), (2, 2), (1, 3), (2, 3)] {
            let b = operator_basis(n, p);
            for (i, bi) in b.iter().enumerate() {
                assert!((bi - bi.adjoint()).norm() < 1e-12);
                for (j, bj) in b.iter().enumerate() {
                    let ip = (bi.adjoint() * bj).trace();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((ip - Complex64::new(want, 0.0)).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn index_roundtrip() {
        for p in [2u32, 3] {
            for a in WeylLabel::all(2, p) {
                assert_eq!(WeylLabel::from_index(a.index(), 2, p), a);
            }
        }
        let a = WeylLabel::from_masks(3, 0b101, 0b011);
        assert_eq!(a.masks(), (0b101, 0b011));
        assert_eq!(a.z(), &[1, 0, 1]);
    }
}
