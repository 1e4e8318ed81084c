//! Stabilizer states of qubit Clifford circuits and their computational-basis statistics.

use rand::Rng;

use crate::clifford::{CliffordTableau, Pauli};

/// Outcomes `offset ^ span(basis)`, each with probability `2^{-dim}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AffineSpace {
    pub offset: u64,
    pub basis: Vec<u64>,
}

impl AffineSpace {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn contains(&self, x: u64) -> bool {
        let mut r = x ^ self.offset;
        for &b in &self.basis {
            let top = 63 - b.leading_zeros();
            if (r >> top) & 1 == 1 {
                r ^= b;
            }
        }
        r == 0
    }

    pub fn probability(&self, x: u64) -> f64 {
        if self.contains(x) {
            0.5f64.powi(self.dim() as i32)
        } else {
            0.0
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        self.basis.iter().fold(self.offset, |acc, &b| if rng.random::<bool>() { acc ^ b } else { acc })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StabilizerState {
    n: usize,
    gens: Vec<Pauli>,
}

impl StabilizerState {
    /// `|0...0>`.
    pub fn zero(n: usize) -> Self {
        StabilizerState { n, gens: (0..n).map(|j| Pauli::hermitian(1u64 << (n - 1 - j), 0, false)).collect() }
    }

    /// `C|0...0>`.
    pub fn from_clifford(c: &CliffordTableau) -> Self {
        let n = c.n();
        StabilizerState { n, gens: c.images()[n..].to_vec() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn generators(&self) -> &[Pauli] {
        &self.gens
    }

    pub fn apply_clifford(&mut self, c: &CliffordTableau) {
        for g in &mut self.gens {
            *g = c.conjugate(g);
        }
    }

    /// Applies the Pauli `Z(z) X(x)` (up to phase).
    pub fn apply_pauli(&mut self, z: u64, x: u64) {
        let p = Pauli { z, x, phase: 0 };
        for g in &mut self.gens {
            if !g.commutes(&p) {
                g.phase = (g.phase + 2) % 4;
            }
        }
    }

    /// Support of the computational-basis distribution.
    pub fn outcome_space(&self) -> AffineSpace {
        let n = self.n;
        let mut gens = self.gens.clone();
        let mut row = 0;
        for j in 0..n {
            let bit = 1u64 << (n - 1 - j);
            let Some(piv) = (row..n).find(|&r| gens[r].x & bit != 0) else { continue };
            gens.swap(row, piv);
            let pivot = gens[row];
            for (r, g) in gens.iter_mut().enumerate() {
                if r != row && g.x & bit != 0 {
                    *g = g.mul(&pivot);
                }
            }
            row += 1;
        }
        // remaining generators are +-Z(z): constraint z.x = [sign = -1]
        let mut cons: Vec<(u64, u8)> = gens[row..]
            .iter()
            .map(|g| {
                let s = g.hermitian_sign().expect("stabilizers are Hermitian");
                (g.z, u8::from(s < 0.0))
            })
            .collect();
        let mut pivots = Vec::new();
        let mut r = 0;
        for b in (0..n).rev() {
            let bit = 1u64 << b;
            let Some(piv) = (r..cons.len()).find(|&k| cons[k].0 & bit != 0) else { continue };
            cons.swap(r, piv);
            let pv = cons[r];
            for (k, c) in cons.iter_mut().enumerate() {
                if k != r && c.0 & bit != 0 {
                    c.0 ^= pv.0;
                    c.1 ^= pv.1;
                }
            }
            pivots.push(bit);
            r += 1;
        }
        let mut offset = 0u64;
        for (k, &pbit) in pivots.iter().enumerate() {
            if cons[k].1 == 1 {
                offset |= pbit;
            }
        }
        let pivot_mask: u64 = pivots.iter().fold(0, |a, b| a | b);
        let mut basis = Vec::new();
        for b in (0..n).rev() {
            let free = 1u64 << b;
            if pivot_mask & free != 0 {
                continue;
            }
            let mut v = free;
            for (k, &pbit) in pivots.iter().enumerate() {
                if cons[k].0 & free != 0 {
                    v |= pbit;
                }
            }
            basis.push(v);
        }
        // reduce the basis to echelon form so that `contains` can use leading bits
        let mut ech: Vec<u64> = Vec::new();
        for mut v in basis {
            for &e in &ech {
                if (v >> (63 - e.leading_zeros())) & 1 == 1 {
                    v ^= e;
                }
            }
            if v != 0 {
                for e in ech.iter_mut() {
                    if (*e >> (63 - v.leading_zeros())) & 1 == 1 {
                        *e ^= v;
                    }
                }
                ech.push(v);
            }
        }
        AffineSpace { offset, basis: ech }
    }

    pub fn probability(&self, x: u64) -> f64 {
        self.outcome_space().probability(x)
    }
}
