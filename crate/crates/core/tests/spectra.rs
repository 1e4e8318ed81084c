use frb_core::ensembles::{Boundary, Ensemble, GateSet};
use frb_core::spectra::{exact_lrc_gap, moment_operator, spectral_gap, GapMethod, Realization};

fn lrc(n: usize) -> Ensemble {
    Ensemble::lrc(n, Boundary::Obc, GateSet::Haar).unwrap()
}

fn gap(e: &Ensemble, t: usize, r: Realization, method: GapMethod) -> f64 {
    let m = moment_operator(e, t, r).unwrap();
    spectral_gap(&m, method, 1e-12).unwrap().gap
}

#[test]
fn support_chain_gaps_match_closed_form() {
    for n in 3..=6 {
        let g = gap(&lrc(n), 2, Realization::Support, GapMethod::Dense);
        assert!((g - exact_lrc_gap(n, Boundary::Obc)).abs() < 1e-6, "n={n}: {g}");
    }
}

#[test]
fn pauli_diagonal_sector_gaps_match_closed_form() {
    for n in [3, 4, 7, 8] {
        let m = moment_operator(&lrc(n), 2, Realization::PauliDiagonal).unwrap();
        let g = spectral_gap(&m, GapMethod::Lanczos, 1e-10).unwrap().gap;
        assert!((g - exact_lrc_gap(n, Boundary::Obc)).abs() < 1e-4, "n={n}: {g}");
    }
}

#[test]
fn second_and_third_moments_share_the_gap() {
    for n in [2, 3] {
        let g2 = gap(&lrc(n), 2, Realization::Full, GapMethod::Auto);
        let g3 = gap(&lrc(n), 3, Realization::Full, GapMethod::Auto);
        assert!((g2 - g3).abs() < 1e-6, "n={n}: {g2} vs {g3}");
    }
}

#[test]
fn clifford_generator_inverse_gap() {
    let e = Ensemble::lrc(2, Boundary::Obc, GateSet::Generators).unwrap();
    let g = gap(&e, 2, Realization::Full, GapMethod::Dense);
    assert!((1.0 / g - 10.99).abs() < 0.02, "{}", 1.0 / g);
}

#[test]
fn symmetrized_brickwork_squares_the_layer_value() {
    let e = Ensemble::brickwork(3, Boundary::Obc, GateSet::Haar).unwrap();
    let g1 = gap(&e, 2, Realization::Support, GapMethod::Dense);
    let g2 = gap(&e.symmetrize(), 2, Realization::Support, GapMethod::Dense);
    assert!(((1.0 - g1).powi(2) - (1.0 - g2)).abs() < 1e-10, "{g1} {g2}");
}
