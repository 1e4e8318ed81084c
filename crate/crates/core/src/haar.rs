//! Haar-random unitaries via QR of complex Ginibre matrices.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn haar_unitary<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<Complex64> {
    let g = DMatrix::from_fn(d, d, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re, im)
    });
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        let rjj = r[(j, j)];
        let ph = if rjj.norm() > 0.0 { rjj / rjj.norm() } else { Complex64::new(1.0, 0.0) };
        for i in 0..d {
            q[(i, j)] *= ph;
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unitary_and_first_moment_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut mean = DMatrix::<Complex64>::zeros(4, 4);
        let n = 4000;
        for _ in 0..n {
            let u = haar_unitary(4, &mut rng);
            assert!((&u * u.adjoint() - DMatrix::identity(4, 4)).norm() < 1e-12);
            mean += u;
        }
        mean /= Complex64::new(n as f64, 0.0);
        // entries have variance 1/d, so the mean has std 1/sqrt(d n)
        assert!(mean.iter().all(|z| z.norm() < 5.0 / (4.0 * n as f64).sqrt()));
    }
}
