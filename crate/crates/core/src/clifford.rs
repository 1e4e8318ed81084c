//! Qubit Pauli strings with phases and Clifford tableaux.
//!
//! Bit `n-1-j` of the `z`/`x` masks belongs to qubit `j`, matching the
//! computational-basis index where qubit 0 is the most significant bit.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::superop::Superop;
use crate::weyl::WeylLabel;

/// `i^phase Z(z) X(x)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Pauli {
    pub z: u64,
    pub x: u64,
    pub phase: u8,
}

impl Pauli {
    pub const IDENTITY: Pauli = Pauli { z: 0, x: 0, phase: 0 };

    /// Hermitian Pauli string `w(z, x)` with sign `(-1)^minus`.
    pub fn hermitian(z: u64, x: u64, minus: bool) -> Pauli {
        let y = (z & x).count_ones() as u8;
        Pauli { z, x, phase: ((4 - y % 4) % 4 + if minus { 2 } else { 0 }) % 4 }
    }

    pub fn mul(&self, other: &Pauli) -> Pauli {
        let flip = ((self.x & other.z).count_ones() % 2) as u8;
        Pauli { z: self.z ^ other.z, x: self.x ^ other.x, phase: (self.phase + other.phase + 2 * flip) % 4 }
    }

    /// Sign `s` with `self = s * w(z, x)`, or `None` if the coefficient is imaginary.
    pub fn hermitian_sign(&self) -> Option<f64> {
        let k = (self.phase as u32 + (self.z & self.x).count_ones()) % 4;
        match k {
            0 => Some(1.0),
            2 => Some(-1.0),
            _ => None,
        }
    }

    pub fn commutes(&self, other: &Pauli) -> bool {
        symplectic(self.z, self.x, other.z, other.x) == 0
    }

    /// Basis index of the underlying label.
    pub fn index(&self, n: usize) -> usize {
        ptm_index(n, self.z, self.x)
    }

    pub fn matrix(&self, n: usize) -> DMatrix<Complex64> {
        let d = 1usize << n;
        let ph =
            [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0), Complex64::new(-1.0, 0.0), Complex64::new(0.0, -1.0)]
                [self.phase as usize];
        let mut m = DMatrix::zeros(d, d);
        for y in 0..d as u64 {
            let t = y ^ self.x;
            let s = if (self.z & t).count_ones() % 2 == 1 { -1.0 } else { 1.0 };
            m[(t as usize, y as usize)] = ph * s;
        }
        m
    }
}

pub fn symplectic(z1: u64, x1: u64, z2: u64, x2: u64) -> u32 {
    ((z1 & x2).count_ones() + (x1 & z2).count_ones()) % 2
}

/// Basis index of the qubit label with masks `(z, x)`.
pub fn ptm_index(n: usize, z: u64, x: u64) -> usize {
    let mut idx = 0usize;
    for b in 0..n {
        let c = 2 * ((z >> b) & 1) + ((x >> b) & 1);
        idx |= (c as usize) << (2 * b);
    }
    idx
}

/// Inverse of [`ptm_index`].
pub fn ptm_label(n: usize, idx: usize) -> (u64, u64) {
    let mut z = 0u64;
    let mut x = 0u64;
    for b in 0..n {
        let c = (idx >> (2 * b)) & 3;
        z |= ((c >> 1) as u64) << b;
        x |= ((c & 1) as u64) << b;
    }
    (z, x)
}

fn bit(n: usize, q: usize) -> u64 {
    1u64 << (n - 1 - q)
}

/// Clifford unitary up to global phase, stored by the images of the generators:
/// `images[j] = C X_j C^†`, `images[n + j] = C Z_j C^†`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CliffordTableau {
    n: usize,
    images: Vec<Pauli>,
}

impl CliffordTableau {
    pub fn identity(n: usize) -> Self {
        let mut images = Vec::with_capacity(2 * n);
        for j in 0..n {
            images.push(Pauli::hermitian(0, bit(n, j), false));
        }
        for j in 0..n {
            images.push(Pauli::hermitian(bit(n, j), 0, false));
        }
        Self { n, images }
    }

    pub fn from_images(n: usize, images: Vec<Pauli>) -> Result<Self> {
        let t = Self { n, images };
        t.validate()?;
        Ok(t)
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn images(&self) -> &[Pauli] {
        &self.images
    }

    /// Checks the symplectic condition and hermiticity of the images.
    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        if self.images.len() != 2 * n || n == 0 || n > 63 {
            return Err(Error::Dimension("tableau must hold 2n images, 1 <= n <= 63".into()));
        }
        for im in &self.images {
            if im.hermitian_sign().is_none() {
                return Err(Error::Numerical("non-Hermitian generator image".into()));
            }
        }
        for i in 0..2 * n {
            for j in 0..2 * n {
                let a = &self.images[i];
                let b = &self.images[j];
                let want = if (i + n == j) || (j + n == i) { 1 } else { 0 };
                if symplectic(a.z, a.x, b.z, b.x) != want {
                    return Err(Error::Numerical("tableau violates the symplectic condition".into()));
                }
            }
        }
        Ok(())
    }

    /// `C P C^†` for `P = i^k Z(z) X(x)`.
    pub fn conjugate(&self, p: &Pauli) -> Pauli {
        let n = self.n;
        let mut out = Pauli { z: 0, x: 0, phase: p.phase };
        for j in 0..n {
            if p.z & bit(n, j) != 0 {
                out = out.mul(&self.images[n + j]);
            }
        }
        for j in 0..n {
            if p.x & bit(n, j) != 0 {
                out = out.mul(&self.images[j]);
            }
        }
        out
    }

    /// `self · other` (apply `other` first).
    pub fn compose(&self, other: &CliffordTableau) -> CliffordTableau {
        assert_eq!(self.n, other.n);
        CliffordTableau { n: self.n, images: other.images.iter().map(|p| self.conjugate(p)).collect() }
    }

    pub fn inverse(&self) -> CliffordTableau {
        let n = self.n;
        // columns of the symplectic matrix, as 2n-bit vectors (z in high half)
        let m = 2 * n;
        let vec_of = |p: &Pauli| ((p.z as u128) << n) | p.x as u128;
        let cols: Vec<u128> = self.images.iter().map(vec_of).collect();
        // solve for preimages of the unit vectors by Gaussian elimination on [A | I]
        let mut rows: Vec<(u128, u128)> = (0..m)
            .map(|r| {
                let mut a = 0u128;
                for (c, col) in cols.iter().enumerate() {
                    if (col >> r) & 1 == 1 {
                        a |= 1 << c;
                    }
                }
                (a, 1u128 << r)
            })
            .collect();
        for c in 0..m {
            let piv = (c..m).find(|&r| (rows[r].0 >> c) & 1 == 1).expect("symplectic matrix is invertible");
            rows.swap(c, piv);
            for r in 0..m {
                if r != c && (rows[r].0 >> c) & 1 == 1 {
                    rows[r].0 ^= rows[c].0;
                    rows[r].1 ^= rows[c].1;
                }
            }
        }
        // rows[c].1 now is row c of A^{-1}; preimage of unit vector e_r is column r of A^{-1}
        let ainv_col = |r: usize| -> u128 {
            let mut v = 0u128;
            for (c, row) in rows.iter().enumerate().take(m) {
                if (row.1 >> r) & 1 == 1 {
                    v |= 1 << c;
                }
            }
            v
        };
        // coefficient vector over generators -> Pauli product of standard generators
        let from_coeffs = |v: u128| -> (u64, u64) {
            let mut z = 0u64;
            let mut x = 0u64;
            for j in 0..n {
                if (v >> j) & 1 == 1 {
                    x |= bit(n, j);
                }
                if (v >> (n + j)) & 1 == 1 {
                    z |= bit(n, j);
                }
            }
            (z, x)
        };
        let targets: Vec<Pauli> = self.identity_images();
        let mut images = Vec::with_capacity(m);
        for t in &targets {
            let tv = vec_of(t);
            let mut coeffs = 0u128;
            for r in 0..m {
                if (tv >> r) & 1 == 1 {
                    coeffs ^= ainv_col(r);
                }
            }
            let (z, x) = from_coeffs(coeffs);
            let mut q = Pauli::hermitian(z, x, false);
            let back = self.conjugate(&q);
            if back.hermitian_sign() == Some(-1.0) {
                q = Pauli::hermitian(z, x, true);
            }
            images.push(q);
        }
        CliffordTableau { n, images }
    }

    fn identity_images(&self) -> Vec<Pauli> {
        CliffordTableau::identity(self.n).images
    }

    pub fn is_identity(&self) -> bool {
        self.images == self.identity_images()
    }

    /// Signed permutation `w(a) -> s_a w(b_a)` as `(index of b_a, s_a)` per basis index.
    pub fn signed_permutation(&self) -> Vec<(usize, f64)> {
        let n = self.n;
        (0..1usize << (2 * n))
            .map(|idx| {
                let (z, x) = ptm_label(n, idx);
                let img = self.conjugate(&Pauli::hermitian(z, x, false));
                (img.index(n), img.hermitian_sign().expect("Clifford images are Hermitian"))
            })
            .collect()
    }

    pub fn to_superop(&self) -> Superop {
        let dim = 1usize << (2 * self.n);
        let mut m = DMatrix::zeros(dim, dim);
        for (a, (b, s)) in self.signed_permutation().into_iter().enumerate() {
            m[(b, a)] = s;
        }
        Superop::new(self.n, 2, m).expect("dimension is consistent")
    }

    /// Conjugation action on a label, ignoring the sign.
    pub fn act_on_label(&self, a: &WeylLabel) -> (WeylLabel, f64) {
        let (z, x) = a.masks();
        let img = self.conjugate(&Pauli::hermitian(z, x, false));
        (WeylLabel::from_masks(self.n, img.z, img.x), img.hermitian_sign().unwrap())
    }

    // elementary gates -----------------------------------------------------

    fn with_images(n: usize, f: impl Fn(usize, bool) -> Pauli) -> Self {
        let mut images = Vec::with_capacity(2 * n);
        for j in 0..n {
            images.push(f(j, false));
        }
        for j in 0..n {
            images.push(f(j, true));
        }
        Self { n, images }
    }

    pub fn hadamard(n: usize, q: usize) -> Self {
        Self::with_images(n, |j, is_z| {
            let b = bit(n, j);
            match (j == q, is_z) {
                (true, false) => Pauli::hermitian(b, 0, false),
                (true, true) => Pauli::hermitian(0, b, false),
                (false, false) => Pauli::hermitian(0, b, false),
                (false, true) => Pauli::hermitian(b, 0, false),
            }
        })
    }

    /// Phase gate `diag(1, i)`: X -> Y, Z -> Z.
    pub fn phase(n: usize, q: usize) -> Self {
        Self::with_images(n, |j, is_z| {
            let b = bit(n, j);
            match (j == q, is_z) {
                (true, false) => Pauli::hermitian(b, b, false),
                (_, true) => Pauli::hermitian(b, 0, false),
                (false, false) => Pauli::hermitian(0, b, false),
            }
        })
    }

    pub fn cx(n: usize, control: usize, target: usize) -> Self {
        let (bc, bt) = (bit(n, control), bit(n, target));
        Self::with_images(n, |j, is_z| {
            let b = bit(n, j);
            match (is_z, j) {
                (false, j) if j == control => Pauli::hermitian(0, bc | bt, false),
                (true, j) if j == target => Pauli::hermitian(bc | bt, 0, false),
                (false, _) => Pauli::hermitian(0, b, false),
                (true, _) => Pauli::hermitian(b, 0, false),
            }
        })
    }

    /// Conjugation by the Pauli `w(z, x)`: flips the signs of anticommuting generators.
    pub fn pauli(n: usize, z: u64, x: u64) -> Self {
        Self::with_images(n, |j, is_z| {
            let b = bit(n, j);
            let (gz, gx) = if is_z { (b, 0) } else { (0, b) };
            Pauli::hermitian(gz, gx, symplectic(gz, gx, z, x) == 1)
        })
    }

    /// Embed a tableau on `k` qubits into `n` qubits acting on `sites`.
    pub fn embed(&self, n: usize, sites: &[usize]) -> Result<Self> {
        let k = self.n;
        if sites.len() != k || sites.iter().any(|&s| s >= n) {
            return Err(Error::Dimension("embedding sites do not match tableau size".into()));
        }
        let spread = |m: u64| -> u64 {
            let mut out = 0u64;
            for (i, &s) in sites.iter().enumerate() {
                if (m >> (k - 1 - i)) & 1 == 1 {
                    out |= bit(n, s);
                }
            }
            out
        };
        let mut t = CliffordTableau::identity(n);
        for (i, &s) in sites.iter().enumerate() {
            let ix = self.images[i];
            let iz = self.images[k + i];
            t.images[s] = Pauli { z: spread(ix.z), x: spread(ix.x), phase: ix.phase };
            t.images[n + s] = Pauli { z: spread(iz.z), x: spread(iz.x), phase: iz.phase };
        }
        Ok(t)
    }

    /// Tensor product with `self` on the leading qubits.
    pub fn tensor(&self, other: &CliffordTableau) -> CliffordTableau {
        let n = self.n + other.n;
        let a: Vec<usize> = (0..self.n).collect();
        let b: Vec<usize> = (self.n..n).collect();
        self.embed(n, &a).unwrap().compose(&other.embed(n, &b).unwrap())
    }

    /// Uniformly random element of the Clifford group modulo phases.
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut basis: Vec<(u64, u64)> = (0..n).flat_map(|j| [(bit(n, j), 0u64), (0u64, bit(n, j))]).collect();
        let mut xs = Vec::with_capacity(n);
        let mut zs = Vec::with_capacity(n);
        for _ in 0..n {
            let comb = |coeffs: u128, basis: &[(u64, u64)]| {
                basis.iter().enumerate().fold((0u64, 0u64), |acc, (i, v)| {
                    if (coeffs >> i) & 1 == 1 {
                        (acc.0 ^ v.0, acc.1 ^ v.1)
                    } else {
                        acc
                    }
                })
            };
            let len = basis.len();
            let mask: u128 = if len == 128 { u128::MAX } else { (1u128 << len) - 1 };
            let v = loop {
                let c: u128 = rng.random::<u128>() & mask;
                if c != 0 {
                    break comb(c, &basis);
                }
            };
            let w = loop {
                let c: u128 = rng.random::<u128>() & mask;
                let w = comb(c, &basis);
                if symplectic(v.0, v.1, w.0, w.1) == 1 {
                    break w;
                }
            };
            xs.push(v);
            zs.push(w);
            let projected: Vec<(u64, u64)> = basis
                .iter()
                .map(|&b| {
                    let mut o = b;
                    if symplectic(b.0, b.1, w.0, w.1) == 1 {
                        o = (o.0 ^ v.0, o.1 ^ v.1);
                    }
                    if symplectic(b.0, b.1, v.0, v.1) == 1 {
                        o = (o.0 ^ w.0, o.1 ^ w.1);
                    }
                    o
                })
                .collect();
            basis = gf2_basis(&projected);
        }
        let mut images = Vec::with_capacity(2 * n);
        for v in &xs {
            images.push(Pauli::hermitian(v.0, v.1, rng.random::<bool>()));
        }
        for w in &zs {
            images.push(Pauli::hermitian(w.0, w.1, rng.random::<bool>()));
        }
        CliffordTableau { n, images }
    }

    /// All elements of the Clifford group modulo phases (24 for one qubit, 11520 for two).
    pub fn enumerate(n: usize) -> Result<Vec<CliffordTableau>> {
        if n > 2 {
            return Err(Error::Capacity(format!("enumerating Cl({n}) is not supported")));
        }
        let mut sympl: Vec<Vec<(u64, u64)>> = Vec::new();
        let start: Vec<(u64, u64)> = (0..n).flat_map(|j| [(bit(n, j), 0u64), (0u64, bit(n, j))]).collect();
        enumerate_symplectic(n, start, Vec::new(), &mut sympl);
        let mut out = Vec::with_capacity(sympl.len() << (2 * n));
        for cols in &sympl {
            for signs in 0u32..(1 << (2 * n)) {
                let images = (0..2 * n)
                    .map(|i| {
                        let (z, x) = cols[i];
                        Pauli::hermitian(z, x, (signs >> i) & 1 == 1)
                    })
                    .collect();
                out.push(CliffordTableau { n, images });
            }
        }
        Ok(out)
    }
}

fn gf2_basis(vs: &[(u64, u64)]) -> Vec<(u64, u64)> {
    let mut rows: Vec<u128> = Vec::new();
    for &(z, x) in vs {
        let mut v = ((z as u128) << 64) | x as u128;
        for &r in &rows {
            let lead = 127 - r.leading_zeros();
            if (v >> lead) & 1 == 1 {
                v ^= r;
            }
        }
        if v != 0 {
            // keep rows reduced so the leading-bit elimination above stays valid
            let lead = 127 - v.leading_zeros();
            for r in rows.iter_mut() {
                if (*r >> lead) & 1 == 1 {
                    *r ^= v;
                }
            }
            rows.push(v);
        }
    }
    rows.into_iter().map(|v| ((v >> 64) as u64, v as u64)).collect()
}

/// Images ordered (X_0, Z_0, X_1, Z_1, ...) during recursion; reordered to (X..., Z...) at the end.
fn enumerate_symplectic(n: usize, basis: Vec<(u64, u64)>, chosen: Vec<(u64, u64)>, out: &mut Vec<Vec<(u64, u64)>>) {
    if basis.is_empty() {
        let mut cols = vec![(0, 0); 2 * n];
        for j in 0..n {
            cols[j] = chosen[2 * j];
            cols[n + j] = chosen[2 * j + 1];
        }
        out.push(cols);
        return;
    }
    let len = basis.len();
    let comb =
        |c: u32| {
            basis.iter().enumerate().fold((0u64, 0u64), |acc, (i, v)| {
                if (c >> i) & 1 == 1 {
                    (acc.0 ^ v.0, acc.1 ^ v.1)
                } else {
                    acc
                }
            })
        };
    for cv in 1u32..(1 << len) {
        let v = comb(cv);
        for cw in 1u32..(1 << len) {
            let w = comb(cw);
            if symplectic(v.0, v.1, w.0, w.1) != 1 {
                continue;
            }
            let projected: Vec<(u64, u64)> = basis
                .iter()
                .map(|&b| {
                    let mut o = b;
                    if symplectic(b.0, b.1, w.0, w.1) == 1 {
                        o = (o.0 ^ v.0, o.1 ^ v.1);
                    }
                    if symplectic(b.0, b.1, v.0, v.1) == 1 {
                        o = (o.0 ^ w.0, o.1 ^ w.1);
                    }
                    o
                })
                .collect();
            let mut ch = chosen.clone();
            ch.push(v);
            ch.push(w);
            enumerate_symplectic(n, gf2_basis(&projected), ch, out);
        }
    }
}

/// Dense matrices of the elementary gates, for cross-checks.
pub mod dense {
    use super::*;

    pub fn embed(n: usize, sites: &[usize], u: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let d = 1usize << n;
        let k = sites.len();
        let mut out = DMatrix::zeros(d, d);
        for col in 0..d {
            let sub_in: usize = sites.iter().fold(0, |a, &s| (a << 1) | ((col >> (n - 1 - s)) & 1));
            for sub_out in 0..(1usize << k) {
                let amp = u[(sub_out, sub_in)];
                if amp == Complex64::new(0.0, 0.0) {
                    continue;
                }
                let mut row = col;
                for (i, &s) in sites.iter().enumerate() {
                    let b = (sub_out >> (k - 1 - i)) & 1;
                    row = (row & !(1 << (n - 1 - s))) | (b << (n - 1 - s));
                }
                out[(row, col)] += amp;
            }
        }
        out
    }

    pub fn h() -> DMatrix<Complex64> {
        let s = 1.0 / 2f64.sqrt();
        DMatrix::from_row_slice(2, 2, &[s, s, s, -s]).map(|v| Complex64::new(v, 0.0))
    }
    pub fn s() -> DMatrix<Complex64> {
        DMatrix::from_row_slice(
            2,
            2,
            &[Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(0.0, 1.0)],
        )
    }
    pub fn cx() -> DMatrix<Complex64> {
        let mut m = DMatrix::zeros(4, 4);
        for (r, c) in [(0, 0), (1, 1), (3, 2), (2, 3)] {
            m[(r, c)] = Complex64::new(1.0, 0.0);
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    fn random_circuit(n: usize, len: usize, rng: &mut ChaCha8Rng) -> (CliffordTableau, DMatrix<Complex64>) {
        let mut t = CliffordTableau::identity(n);
        let mut u = DMatrix::identity(1 << n, 1 << n);
        for _ in 0..len {
            let q = rng.random_range(0..n);
            let (gt, gu) = match rng.random_range(0..3) {
                0 => (CliffordTableau::hadamard(n, q), dense::embed(n, &[q], &dense::h())),
                1 => (CliffordTableau::phase(n, q), dense::embed(n, &[q], &dense::s())),
                _ if n > 1 => {
                    let mut r = rng.random_range(0..n);
                    while r == q {
                        r = rng.random_range(0..n);
                    }
                    (CliffordTableau::cx(n, q, r), dense::embed(n, &[q, r], &dense::cx()))
                }
                _ => (CliffordTableau::hadamard(n, q), dense::embed(n, &[q], &dense::h())),
            };
            t = gt.compose(&t);
            u = gu * u;
        }
        (t, u)
    }

    #[test]
    fn tableau_matches_dense_conjugation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 1..=3 {
            for _ in 0..200 / 3 + 1 {
                let (t1, u1) = random_circuit(n, 12, &mut rng);
                let (t2, u2) = random_circuit(n, 12, &mut rng);
                let t = t1.compose(&t2);
                let u = &u1 * &u2;
                let s_dense = Superop::from_unitary(n, 2, &u).unwrap();
                assert!((t.to_superop().matrix() - s_dense.matrix()).norm() < 1e-10);
                t.validate().unwrap();
            }
        }
    }

    #[test]
    fn composition_is_associative_and_inverse_works() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for n in 1..=4 {
            for _ in 0..30 {
                let a = CliffordTableau::random(n, &mut rng);
                let b = CliffordTableau::random(n, &mut rng);
                let c = CliffordTableau::random(n, &mut rng);
                assert_eq!(a.compose(&b).compose(&c), a.compose(&b.compose(&c)));
                assert!(a.compose(&a.inverse()).is_identity());
                assert!(a.inverse().compose(&a).is_identity());
                a.validate().unwrap();
            }
        }
    }

    #[test]
    fn enumeration_sizes() {
        let c1 = CliffordTableau::enumerate(1).unwrap();
        assert_eq!(c1.len(), 24);
        let c2 = CliffordTableau::enumerate(2).unwrap();
        assert_eq!(c2.len(), 11520);
        let distinct: std::collections::HashSet<_> = c2.iter().collect();
        assert_eq!(distinct.len(), 11520);
        for t in c2.iter().step_by(97) {
            t.validate().unwrap();
        }
    }

    #[test]
    fn single_qubit_sampling_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let all = CliffordTableau::enumerate(1).unwrap();
        let mut counts: HashMap<CliffordTableau, usize> = all.iter().map(|t| (t.clone(), 0)).collect();
        let draws = 24000;
        for _ in 0..draws {
            *counts.get_mut(&CliffordTableau::random(1, &mut rng)).expect("sample is a Clifford") += 1;
        }
        let expect = draws as f64 / 24.0;
        let sigma = (expect * (1.0 - 1.0 / 24.0)).sqrt();
        let chi2: f64 = counts.values().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
        for &c in counts.values() {
            assert!((c as f64 - expect).abs() < 4.0 * sigma, "count {c}");
        }
        // 23 degrees of freedom; 99.9% quantile is about 49.7
        assert!(chi2 < 49.7, "chi2 {chi2}");
    }

    #[test]
    fn pauli_gate_signs() {
        let x = CliffordTableau::pauli(1, 0, 1);
        let diag: Vec<f64> = x.signed_permutation().iter().map(|e| e.1).collect();
        assert_eq!(diag, vec![1.0, 1.0, -1.0, -1.0]);
    }

    #[test]
    fn embed_and_tensor_agree_with_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a = CliffordTableau::random(1, &mut rng);
        let b = CliffordTableau::random(2, &mut rng);
        let t = a.tensor(&b);
        let sa = a.to_superop();
        let sb = b.to_superop();
        assert!((t.to_superop().matrix() - sa.kron(&sb).unwrap().matrix()).norm() < 1e-12);
        let e = b.embed(3, &[2, 0]).unwrap();
        e.validate().unwrap();
    }
}
