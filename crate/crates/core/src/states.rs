//! Coordinate vectors of states and measurement effects in the Weyl basis.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::superop::{operator_space_dim, Superop};
use crate::weyl::{operator_basis, to_coords, WeylLabel};

/// `|x><x|` for a qubit computational basis state (bit `n-1-j` is qubit `j`).
pub fn basis_state(n: usize, x: u64) -> DVector<f64> {
    let dim = operator_space_dim(n, 2);
    let scale = 1.0 / ((1u64 << n) as f64).sqrt();
    let mut v = DVector::zeros(dim);
    for z in 0..(1u64 << n) {
        let s = if (z & x).count_ones() % 2 == 1 { -scale } else { scale };
        v[crate::clifford::ptm_index(n, z, 0)] = s;
    }
    v
}

/// Coordinates of a Hermitian matrix.
pub fn density_coords(n: usize, p: u32, rho: &DMatrix<Complex64>) -> DVector<f64> {
    DVector::from_vec(to_coords(rho, &operator_basis(n, p)))
}

pub fn pure_state_coords(n: usize, p: u32, psi: &DVector<Complex64>) -> DVector<f64> {
    density_coords(n, p, &(psi * psi.adjoint()))
}

/// Computational-basis measurement channel `sum_i |E_i>><<E_i|`: the projector onto Z-type labels.
pub fn measurement_superop(n: usize, p: u32) -> Superop {
    let diag: Vec<f64> = WeylLabel::all(n, p).map(|a| if a.x().iter().all(|&v| v == 0) { 1.0 } else { 0.0 }).collect();
    Superop::from_diagonal(n, p, &diag).expect("dimension is consistent")
}

/// Global depolarizing channel `X -> f X + (1-f) tr(X) 1/d`.
pub fn depolarizing(n: usize, p: u32, f: f64) -> Superop {
    let dim = operator_space_dim(n, p);
    let diag: Vec<f64> = (0..dim).map(|i| if i == 0 { 1.0 } else { f }).collect();
    Superop::from_diagonal(n, p, &diag).expect("dimension is consistent")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_states_match_dense() {
        for x in 0..4u64 {
            let mut psi = DVector::zeros(4);
            psi[x as usize] = Complex64::new(1.0, 0.0);
            let dense = pure_state_coords(2, 2, &psi);
            assert!((dense - basis_state(2, x)).norm() < 1e-12);
        }
        let m = measurement_superop(1, 2);
        assert_eq!(m.matrix().diagonal().as_slice(), &[1.0, 0.0, 1.0, 0.0]);
    }
}
