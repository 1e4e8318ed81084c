//! Hermiticity-preserving superoperators in the real Weyl operator basis
//! (Pauli transfer matrix form).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg;
use crate::weyl::{is_prime, operator_basis};

/// Default relative rank cutoff for pseudoinverses.
pub const PINV_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct Superop {
    n: usize,
    p: u32,
    mat: DMatrix<f64>,
}

pub fn operator_space_dim(n: usize, p: u32) -> usize {
    (p as usize).pow(2 * n as u32)
}

impl Superop {
    pub fn new(n: usize, p: u32, mat: DMatrix<f64>) -> Result<Self> {
        if !is_prime(p) {
            return Err(Error::Config(format!("local dimension {p} is not prime")));
        }
        let dim = operator_space_dim(n, p);
        if mat.nrows() != dim || mat.ncols() != dim {
            return Err(Error::Dimension(format!(
                "expected {dim}x{dim} for n={n}, p={p}, got {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        Ok(Self { n, p, mat })
    }

    pub fn identity(n: usize, p: u32) -> Self {
        let dim = operator_space_dim(n, p);
        Self { n, p, mat: DMatrix::identity(dim, dim) }
    }

    pub fn zeros(n: usize, p: u32) -> Self {
        let dim = operator_space_dim(n, p);
        Self { n, p, mat: DMatrix::zeros(dim, dim) }
    }

    pub fn from_diagonal(n: usize, p: u32, diag: &[f64]) -> Result<Self> {
        Self::new(n, p, DMatrix::from_diagonal(&DVector::from_row_slice(diag)))
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn p(&self) -> u32 {
        self.p
    }
    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }
    /// Hilbert-space dimension `p^n`.
    pub fn hilbert_dim(&self) -> usize {
        (self.p as usize).pow(self.n as u32)
    }
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }
    pub fn into_matrix(self) -> DMatrix<f64> {
        self.mat
    }

    fn check_same(&self, other: &Superop) -> Result<()> {
        if self.n != other.n || self.p != other.p {
            return Err(Error::Dimension(format!(
                "superoperators on (n={}, p={}) and (n={}, p={})",
                self.n, self.p, other.n, other.p
            )));
        }
        Ok(())
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Superop) -> Result<Superop> {
        self.check_same(other)?;
        Ok(Superop { n: self.n, p: self.p, mat: &self.mat * &other.mat })
    }

    pub fn add(&self, other: &Superop) -> Result<Superop> {
        self.check_same(other)?;
        Ok(Superop { n: self.n, p: self.p, mat: &self.mat + &other.mat })
    }

    pub fn scale(&self, s: f64) -> Superop {
        Superop { n: self.n, p: self.p, mat: &self.mat * s }
    }

    pub fn transpose(&self) -> Superop {
        Superop { n: self.n, p: self.p, mat: self.mat.transpose() }
    }

    /// Tensor product; `self` acts on the leading sites.
    pub fn kron(&self, other: &Superop) -> Result<Superop> {
        if self.p != other.p {
            return Err(Error::Dimension("tensor product of different local dimensions".into()));
        }
        Ok(Superop { n: self.n + other.n, p: self.p, mat: self.mat.kronecker(&other.mat) })
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.mat * v
    }

    /// Superoperator of the unitary channel `X -> U X U^†`.
    pub fn from_unitary(n: usize, p: u32, u: &DMatrix<Complex64>) -> Result<Superop> {
        Self::from_kraus(n, p, std::slice::from_ref(u))
    }

    /// Superoperator of `X -> sum_k K_k X K_k^†`.
    pub fn from_kraus(n: usize, p: u32, kraus: &[DMatrix<Complex64>]) -> Result<Superop> {
        let d = (p as usize).pow(n as u32);
        if kraus.iter().any(|k| k.nrows() != d || k.ncols() != d) {
            return Err(Error::Dimension(format!("Kraus operators must be {d}x{d}")));
        }
        let basis = operator_basis(n, p);
        let dim = basis.len();
        let images: Vec<DMatrix<Complex64>> =
            basis.iter().map(|b| kraus.iter().fold(DMatrix::zeros(d, d), |acc, k| acc + k * b * k.adjoint())).collect();
        let mut mat = DMatrix::zeros(dim, dim);
        for (i, bi) in basis.iter().enumerate() {
            let bia = bi.adjoint();
            for (j, img) in images.iter().enumerate() {
                mat[(i, j)] = (&bia * img).trace().re;
            }
        }
        Superop::new(n, p, mat)
    }

    /// Natural (matrix-unit) representation acting on row-major `vec(X)`.
    pub fn to_natural(&self) -> DMatrix<Complex64> {
        let basis = operator_basis(self.n, self.p);
        let vecs: Vec<DVector<Complex64>> = basis.iter().map(row_major_vec).collect();
        let d2 = vecs[0].len();
        let mut out = DMatrix::zeros(d2, d2);
        for (i, vi) in vecs.iter().enumerate() {
            for (j, vj) in vecs.iter().enumerate() {
                let r = self.mat[(i, j)];
                if r != 0.0 {
                    out += vi * vj.adjoint() * Complex64::new(r, 0.0);
                }
            }
        }
        out
    }

    pub fn from_natural(n: usize, p: u32, nat: &DMatrix<Complex64>) -> Result<Superop> {
        let basis = operator_basis(n, p);
        let vecs: Vec<DVector<Complex64>> = basis.iter().map(row_major_vec).collect();
        if nat.nrows() != vecs[0].len() {
            return Err(Error::Dimension("natural representation has wrong size".into()));
        }
        let dim = basis.len();
        let mut mat = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            let row = vecs[i].adjoint() * nat;
            for j in 0..dim {
                mat[(i, j)] = (&row * &vecs[j])[(0, 0)].re;
            }
        }
        Superop::new(n, p, mat)
    }

    /// Choi matrix `sum_ij |i><j| ⊗ Φ(|i><j|)`, used for complete-positivity checks.
    pub fn choi(&self) -> DMatrix<Complex64> {
        let d = self.hilbert_dim();
        let nat = self.to_natural();
        let mut c = DMatrix::zeros(d * d, d * d);
        for i in 0..d {
            for j in 0..d {
                // Φ(|i><j|) = reshape(nat * e_{i*d+j})
                let col = nat.column(i * d + j);
                for a in 0..d {
                    for b in 0..d {
                        c[(i * d + a, j * d + b)] = col[a * d + b];
                    }
                }
            }
        }
        c
    }

    pub fn min_choi_eigenvalue(&self) -> f64 {
        let c = self.choi();
        c.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

fn row_major_vec(m: &DMatrix<Complex64>) -> DVector<Complex64> {
    let d = m.nrows();
    DVector::from_fn(d * d, |k, _| m[(k / d, k % d)])
}

/// `tr(a^T b)`.
pub fn hs_inner(a: &Superop, b: &Superop) -> Result<f64> {
    a.check_same(b)?;
    Ok(a.mat.iter().zip(b.mat.iter()).map(|(x, y)| x * y).sum())
}

pub fn pseudoinverse(a: &Superop, tol: f64) -> Superop {
    Superop { n: a.n, p: a.p, mat: linalg::pinv(&a.mat, tol) }
}

pub fn spectral_norm(a: &Superop) -> f64 {
    linalg::spectral_norm_dense(&a.mat)
}
