//! One PASS/FAIL line per acceptance criterion. Tolerances are fixed here.

use std::io::Write;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use frb_core::analysis::{
    fit_decay, fit_exponential, ideal_second_moment, perturb_block_diagonalize, second_moment_blocks, table_one, Offset,
};
use frb_core::ensembles::{Boundary, Ensemble, GateSet};
use frb_core::frame::averaged_frame_operator;
use frb_core::group::{irrep_projectors, GroupTag, IrrepLabel};
use frb_core::linalg::spectral_norm_dense;
use frb_core::noise::{NoiseModel, SpamModel};
use frb_core::rb_engine::{expected_signal, run_protocol, FilterSpec, ProtocolConfig, RBDataset, Shots};
use frb_core::spectra::{exact_lrc_gap, moment_operator, spectral_gap, GapMethod, Realization};
use frb_core::weyl::WeylLabel;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn timed(t0: Instant, limit: Duration, ok: bool, detail: String) -> Outcome {
    let el = t0.elapsed();
    check(ok && el < limit, format!("{detail}; {el:.2?} (limit {limit:?})"))
}

fn ad() -> FilterSpec {
    FilterSpec::Irrep(IrrepLabel::Adjoint)
}

fn simulate(
    e: &Ensemble,
    noise: &NoiseModel,
    filters: &[FilterSpec],
    ms: Vec<usize>,
    shots: Shots,
    seed: u64,
) -> Result<RBDataset, String> {
    run_protocol(e, noise, &SpamModel::ideal(), filters, &ProtocolConfig::new(ms, shots, seed)).map_err(e2s)
}

fn lrc(n: usize) -> Result<Ensemble, String> {
    Ensemble::lrc(n, Boundary::Obc, GateSet::Haar).map_err(e2s)
}

fn c1_frame_constants() -> Outcome {
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    for n in 1..=2 {
        let d = (1u32 << n) as f64;
        let s = averaged_frame_operator(GroupTag::Clifford, n, 2).map_err(e2s)?;
        let m = s.matrix();
        let want = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| match (i, j) {
            (0, 0) => 1.0,
            _ if i == j => 1.0 / (d + 1.0),
            _ => 0.0,
        });
        worst = worst.max((m - want).amax());
    }
    timed(
        t0,
        Duration::from_secs(10),
        worst < 1e-10,
        format!("max |S - diag(1, 1/(d+1), ...)| = {worst:.2e} at n = 1, 2"),
    )
}

fn c2_lrc_gaps() -> Outcome {
    let t0 = Instant::now();
    let mut lines = Vec::new();
    let mut ok = true;
    for n in 3..=6 {
        let m = moment_operator(&lrc(n)?, 2, Realization::Support).map_err(e2s)?;
        let g = spectral_gap(&m, GapMethod::Dense, 1e-12).map_err(e2s)?.gap;
        let err = (g - exact_lrc_gap(n, Boundary::Obc)).abs();
        ok &= err < 1e-6;
        lines.push(format!("n={n} err {err:.1e}"));
    }
    for n in [7, 8] {
        let m = moment_operator(&lrc(n)?, 2, Realization::PauliDiagonal).map_err(e2s)?;
        let g = spectral_gap(&m, GapMethod::Lanczos, 1e-10).map_err(e2s)?.gap;
        let err = (g - exact_lrc_gap(n, Boundary::Obc)).abs();
        ok &= err < 1e-4;
        lines.push(format!("n={n} err {err:.1e}"));
    }
    for n in [2, 3] {
        let g2 = spectral_gap(&moment_operator(&lrc(n)?, 2, Realization::Full).map_err(e2s)?, GapMethod::Auto, 1e-12)
            .map_err(e2s)?
            .gap;
        let g3 = spectral_gap(&moment_operator(&lrc(n)?, 3, Realization::Full).map_err(e2s)?, GapMethod::Auto, 1e-12)
            .map_err(e2s)?
            .gap;
        ok &= (g2 - g3).abs() < 1e-6;
        lines.push(format!("n={n} |Δ2-Δ3| {:.1e}", (g2 - g3).abs()));
    }
    timed(t0, Duration::from_secs(600), ok, lines.join(", "))
}

fn c3_generator_gap() -> Outcome {
    let t0 = Instant::now();
    let e = Ensemble::lrc(2, Boundary::Obc, GateSet::Generators).map_err(e2s)?.with_cx_prob(0.35).map_err(e2s)?;
    let m = moment_operator(&e, 2, Realization::Full).map_err(e2s)?;
    let inv = 1.0 / spectral_gap(&m, GapMethod::Dense, 1e-12).map_err(e2s)?.gap;
    timed(t0, Duration::from_secs(300), (inv - 10.99).abs() <= 0.02, format!("inverse gap {inv:.4}"))
}

fn c4_noiseless_signal() -> Outcome {
    let ms = vec![1, 2, 5, 10, 20];
    let e = Ensemble::exact(GroupTag::Clifford, 2, 2).map_err(e2s)?;
    let ds = simulate(&e, &NoiseModel::None, &[ad()], ms, Shots::Single(100_000), 41)?;
    let mut worst = 0.0f64;
    for (m, y, se) in ds.series("ad").map_err(e2s)? {
        let z = (y - 0.75).abs() / se;
        worst = worst.max(z);
        if z > 3.0 {
            return Err(format!("design plateau at m={m}: {y:.5} ± {se:.5}"));
        }
    }
    let ds = simulate(&lrc(3)?, &NoiseModel::None, &[ad()], vec![1], Shots::Single(100_000), 43)?;
    let (_, y, se) = ds.series("ad").map_err(e2s)?[0];
    let z1 = (y - 2.475).abs() / se;
    if z1 > 3.0 {
        return Err(format!("LRC F(1) = {y:.4} ± {se:.4}"));
    }
    let window: Vec<usize> = (15..=40).collect();
    let exact = expected_signal(&lrc(3)?, &NoiseModel::None, &SpamModel::ideal(), &ad(), 0, &window).map_err(e2s)?;
    let fit = fit_exponential(&window, &exact, None, Offset::Fixed(0.875)).map_err(e2s)?;
    let gap = exact_lrc_gap(3, Boundary::Obc);
    let rel = (fit.r - (1.0 - gap)).abs() / (1.0 - gap);
    check(
        rel < 0.02,
        format!(
            "design max |z| {worst:.2}; LRC F(1) {y:.4} ± {se:.4}; subdominant rate {:.4} vs {:.4} ({:.2}%) over m 15..40",
            fit.r,
            1.0 - gap,
            100.0 * rel
        ),
    )
}

fn c5_decay_parameter() -> Outcome {
    let t0 = Instant::now();
    let f = 0.98;
    let e = Ensemble::exact(GroupTag::Clifford, 2, 2).map_err(e2s)?;
    let ds = simulate(&e, &NoiseModel::Depolarizing { f }, &[ad()], (2..=20).collect(), Shots::Single(10_000), 51)?;
    let fit = fit_decay(&ds, "ad", 2, Offset::None).map_err(e2s)?;
    timed(t0, Duration::from_secs(120), (fit.r - f).abs() <= 0.003, format!("r = {:.5} ± {:.5}", fit.r, fit.stderr_r))
}

fn c6_variances() -> Outcome {
    let t0 = Instant::now();
    let mut parts = Vec::new();
    for n in [1, 2] {
        let d = (1u32 << n) as f64;
        let e = Ensemble::exact(GroupTag::Clifford, n, 2).map_err(e2s)?;
        let ds = simulate(&e, &NoiseModel::None, &[ad()], vec![1], Shots::Single(1_000_000), 60 + n as u64)?;
        let v = ds.multishot_variance("ad", 1).map_err(e2s)?;
        let want = 2.0 * (d - 1.0) / (d + 2.0);
        if (v.total - want).abs() > 3.0 * v.total_err {
            return Err(format!("d={d}: Var = {:.4} ± {:.4}, want {want}", v.total, v.total_err));
        }
        parts.push(format!("d={d} Var {:.4} ± {:.4}", v.total, v.total_err));
    }
    let e = Ensemble::exact(GroupTag::Unitary, 1, 2).map_err(e2s)?;
    let ds =
        simulate(&e, &NoiseModel::None, &[ad()], vec![1], Shots::Multi { circuits: 100_000, per_circuit: 10 }, 67)?;
    let v = ds.multishot_variance("ad", 1).map_err(e2s)?;
    let (w, we) = (v.within.ok_or("no within term")?, v.within_err.ok_or("no within error")?);
    let (b, be) = (v.between.ok_or("no between term")?, v.between_err.ok_or("no between error")?);
    let ok = (w - 0.3).abs() <= 3.0 * we && (b - 0.2).abs() <= 3.0 * be;
    timed(
        t0,
        Duration::from_secs(300),
        ok,
        format!("{}; Haar U(2) within {w:.4} ± {we:.4}, between {b:.4} ± {be:.4}", parts.join("; ")),
    )
}

fn c7_second_moments() -> Outcome {
    let mut worst = 0.0f64;
    let mut min_block = f64::INFINITY;
    let mut count = 0;
    for group in [GroupTag::Clifford, GroupTag::LocalClifford, GroupTag::HeisenbergWeyl] {
        for n in [1, 2] {
            for irrep in irrep_projectors(group, n, 2).map_err(e2s)? {
                if irrep.is_trivial() {
                    continue;
                }
                let ideal = ideal_second_moment(group, n, 2, &irrep.label).map_err(e2s)?;
                let b = second_moment_blocks(group, n, &irrep.label, &SpamModel::ideal()).map_err(e2s)?;
                worst = worst.max((b.total - ideal).abs());
                min_block = b.blocks.iter().map(|x| x.1).fold(min_block, f64::min);
                count += 1;
            }
        }
    }
    let mut hw_exact = true;
    for n in [1, 2] {
        let d = (1u32 << n) as f64;
        for z in 1..(1u64 << n) {
            let zs: Vec<u32> = (0..n).map(|j| ((z >> (n - 1 - j)) & 1) as u32).collect();
            let label = IrrepLabel::Weyl(WeylLabel::new(2, zs, vec![0; n]).map_err(e2s)?);
            hw_exact &= ideal_second_moment(GroupTag::HeisenbergWeyl, n, 2, &label).map_err(e2s)? == 1.0 / (d * d);
        }
    }
    check(
        worst < 1e-8 && min_block >= -1e-10 && hw_exact,
        format!("{count} irreps, max |Σ tr C_σ - closed form| {worst:.1e}, min tr C_σ {min_block:.2e}, HW = 1/d² exact: {hw_exact}"),
    )
}

fn random_orthogonal(dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| rng.random::<f64>() - 0.5);
    g.qr().q()
}

fn c8_perturbation() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(80);
    let (mut worst_rec, mut worst_bio) = (0.0f64, 0.0f64);
    for i in 0..500 {
        let dim = rng.random_range(3..=16);
        let k1 = rng.random_range(1..=3.min(dim - 1));
        let k2 = dim - k1;
        let v = random_orthogonal(dim, &mut rng);
        let mut lam = DMatrix::from_fn(k2, k2, |_, _| rng.random::<f64>() - 0.5);
        let target = 0.6 * rng.random::<f64>();
        lam *= target / spectral_norm_dense(&lam).max(1e-300);
        let gap = 1.0 - spectral_norm_dense(&lam);
        let x1 = v.columns(0, k1).into_owned();
        let x2 = v.columns(k1, k2).into_owned();
        let a = &x1 * x1.transpose() + &x2 * &lam * x2.transpose();
        let mut e = DMatrix::from_fn(dim, dim, |_, _| rng.random::<f64>() - 0.5);
        e *= rng.random_range(0.01..0.99) * gap / 4.0 / spectral_norm_dense(&e);
        let r = perturb_block_diagonalize(&a, &x1, &e, gap).map_err(|err| format!("instance {i}: {err}"))?;
        if !r.all_hold() {
            return Err(format!("instance {i}: {:?}", r.checks.iter().filter(|c| !c.holds).collect::<Vec<_>>()));
        }
        worst_rec = worst_rec.max(r.reconstruction_residual);
        worst_bio = worst_bio.max(r.biorthogonality_residual);
    }
    timed(
        t0,
        Duration::from_secs(60),
        worst_rec < 1e-10,
        format!("500 instances, all bounds hold; max reconstruction residual {worst_rec:.1e}, biorthogonality {worst_bio:.1e}"),
    )
}

fn c9_table() -> Outcome {
    let rows = table_one().map_err(e2s)?;
    let mut parts = Vec::new();
    let mut ok = true;
    for r in &rows {
        parts.push(format!(
            "{} {:.3} vs {}{}",
            r.label,
            r.computed,
            r.tabulated,
            if r.reproduced { "" } else { " [flagged]" }
        ));
        if r.tabulated == 49.5 {
            ok &= !r.reproduced && r.note.is_some();
        } else {
            ok &= r.reproduced && (r.computed - r.tabulated).abs() <= 0.01 * r.tabulated;
        }
    }
    ok &= rows.len() == 6;
    check(ok, parts.join("; "))
}

fn c10_trace_filter() -> Outcome {
    let e = Ensemble::exact(GroupTag::Clifford, 2, 2).map_err(e2s)?;
    if !e.is_right_local_clifford_invariant() {
        return Err("ensemble is not right local-Clifford invariant".into());
    }
    let ds = simulate(&e, &NoiseModel::None, &[FilterSpec::Trace], vec![1], Shots::Single(100_000), 101)?;
    let (_, y, se) = ds.series("trace").map_err(e2s)?[0];
    if (y - 0.75).abs() > 3.0 * se {
        return Err(format!("noiseless trace mean at m=1: {y:.4} ± {se:.4}"));
    }
    let f = 0.98;
    let ms: Vec<usize> = (1..=40).step_by(3).collect();
    let ds =
        simulate(&e, &NoiseModel::Depolarizing { f }, &[FilterSpec::Trace], ms.clone(), Shots::Single(20_000), 103)?;
    let fit = fit_decay(&ds, "trace", 1, Offset::Fixed(-3.0 / 16.0)).map_err(e2s)?;
    check(
        (fit.r - f).abs() <= 0.005,
        format!("noiseless m=1 mean {y:.4} ± {se:.4}; depolarized rate {:.4} ± {:.4}", fit.r, fit.stderr_r),
    )
}

fn c11_declared_scope(substitutes_pass: bool) -> Outcome {
    let refused = matches!(moment_operator(&lrc(4)?, 3, Realization::Full), Err(frb_core::Error::Capacity(_)));
    check(
        substitutes_pass && refused,
        format!(
            "not reproduced: gap figure up to n=10 and t=3 gaps for n>=4 (t=3 at n=4 refused with a capacity error: {refused}); substitutes 2-3 pass: {substitutes_pass}"
        ),
    )
}

#[test]
fn acceptance() {
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "frame constants", c1_frame_constants()),
        (2, "exact LRC gaps", c2_lrc_gaps()),
        (3, "Clifford generator gap", c3_generator_gap()),
        (4, "noiseless signal", c4_noiseless_signal()),
        (5, "decay parameter", c5_decay_parameter()),
        (6, "variance oracles", c6_variances()),
        (7, "second-moment oracles", c7_second_moments()),
        (8, "perturbation suite", c8_perturbation()),
        (9, "sequence-length table", c9_table()),
        (10, "trace filter", c10_trace_filter()),
    ];
    let subs = results[1].2.is_ok() && results[2].2.is_ok();
    results.push((11, "declared scope", c11_declared_scope(subs)));
    let mut failed = Vec::new();
    // Written to the raw handle so the report survives libtest's output capture.
    let mut out = std::io::stdout().lock();
    for (k, name, r) in &results {
        let line = match r {
            Ok(d) => format!("PASS {k:>2} {name}: {d}"),
            Err(d) => {
                failed.push(*k);
                format!("FAIL {k:>2} {name}: {d}")
            }
        };
        writeln!(out, "{line}").unwrap();
    }
    drop(out);
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
