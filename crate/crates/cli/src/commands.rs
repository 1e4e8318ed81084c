//! `gap`, `fit`, `bounds`, `moments` and `perturb-check`.

use std::path::PathBuf;

use clap::Args;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use frb_core::analysis::{
    c_lambda, design_relative_sequence_length, design_sequence_length, fit_series, g_factor, ideal_second_moment,
    perturb_block_diagonalize, sampling_bound_additive, second_moment_blocks, second_moment_bounds,
    sequence_length_bound, sequence_length_exact, sequence_length_linearized, signal_decomposition, spam_second_moment,
    table_one, BoundCheck, LemmaInputs, Offset, SecondMomentBlocks, SequenceLengthBound, SequenceMode, SignalSummary,
    TableRow,
};
use frb_core::ensembles::{Architecture, Ensemble, EnsembleConfig, GateSet};
use frb_core::frame::frame_operator;
use frb_core::group::{find_irrep, irrep_projectors, GroupTag, IrrepLabel, IrrepSpec};
use frb_core::linalg::spectral_norm_dense;
use frb_core::noise::SpamModel;
use frb_core::rb_engine::FilterSpec;
use frb_core::spectra::{
    default_realization, exact_lrc_gap, moment_operator, spectral_gap, tabulated_gap, GapMethod, GapResult,
    Realization, TableArch,
};
use frb_core::states::basis_state;

use crate::config;
use crate::output::{bytes_hash, config_hash, emit, input, json_bytes, read_file, CliError, CliResult, Meta};
use crate::simulate::seed_from_env;

/// Parses a kebab-case enum through its serde representation.
fn parse_enum<T: DeserializeOwned>(flag: &str, s: &str) -> CliResult<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| input(format!("--{flag}: unknown value {s:?}")))
}

fn parse_irrep(s: &str, n: usize) -> CliResult<IrrepLabel> {
    match FilterSpec::parse(s, n)? {
        FilterSpec::Irrep(l) => Ok(l),
        FilterSpec::Trivial => Ok(IrrepLabel::Trivial),
        _ => Err(input(format!("--irrep: {s:?} is not an irrep label"))),
    }
}

fn lookup_irrep(group: GroupTag, n: usize, p: u32, label: &IrrepLabel) -> CliResult<IrrepSpec> {
    Ok(find_irrep(&irrep_projectors(group, n, p)?, label)?)
}

// ---------------------------------------------------------------------------
// gap

#[derive(Args, Debug, Serialize)]
pub struct GapArgs {
    /// Architecture: lrc, nn-lrc, complete-lrc, bw, generator-lrc, generator-bw, exact;
    /// with --table, a tabulated family such as nn-lrc, bw, bw-odd, generator-local.
    #[arg(long)]
    pub arch: String,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub t: usize,
    #[arg(long, default_value = "obc")]
    pub bc: String,
    #[arg(long)]
    pub gateset: Option<String>,
    #[arg(long)]
    pub cx_prob: Option<f64>,
    /// Group sampled by the exact architecture.
    #[arg(long)]
    pub group: Option<String>,
    /// Report the tabulated analytic gap instead of computing one.
    #[arg(long)]
    pub table: bool,
    /// Allow Lanczos on realizations above the dense limit.
    #[arg(long)]
    pub matrix_free: bool,
    /// auto, full, support or pauli-diagonal.
    #[arg(long, default_value = "auto")]
    pub realization: String,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct TableGap {
    arch: String,
    n: usize,
    t: usize,
    gap: f64,
    inverse_gap: f64,
    source: String,
}

#[derive(Serialize)]
struct ComputedGap {
    arch: String,
    n: usize,
    t: usize,
    realization: Realization,
    #[serde(flatten)]
    result: GapResult,
    inverse_gap: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    closed_form: Option<f64>,
}

fn gap_ensemble(a: &GapArgs) -> CliResult<Ensemble> {
    let (arch, graph) = match a.arch.as_str() {
        "nn-lrc" => ("lrc", None),
        "complete-lrc" => ("lrc", Some("complete".to_string())),
        other => (other, None),
    };
    let cfg = EnsembleConfig {
        arch: arch.into(),
        n: a.n,
        p: 2,
        bc: Some(parse_enum("bc", &a.bc)?),
        graph,
        edges: None,
        weights: None,
        gateset: a.gateset.as_deref().map(|g| parse_enum("gateset", g)).transpose()?,
        cx_prob: a.cx_prob,
        group: a.group.as_deref().map(GroupTag::parse).transpose()?,
        local_clifford_dressing: false,
        symmetrized: false,
    };
    Ok(Ensemble::from_config(&cfg)?)
}

pub fn gap(a: &GapArgs) -> CliResult<()> {
    let meta = Meta::new(config_hash(a));
    let bytes = if a.table {
        let (g, source) = tabulated_gap(TableArch::parse(&a.arch)?, a.n, a.t)?;
        json_bytes(meta, TableGap { arch: a.arch.clone(), n: a.n, t: a.t, gap: g, inverse_gap: 1.0 / g, source })?
    } else {
        let e = gap_ensemble(a)?;
        let realization = match a.realization.as_str() {
            "auto" => default_realization(&e, a.t),
            r => parse_enum("realization", r)?,
        };
        let m = moment_operator(&e, a.t, realization)?;
        let method = if a.matrix_free { GapMethod::Lanczos } else { GapMethod::Dense };
        let result = spectral_gap(&m, method, a.tol)?;
        let plain_chain = e.arch == Architecture::Lrc
            && e.gateset == GateSet::Haar
            && a.arch != "complete-lrc"
            && a.t == 2
            && e.n >= 3;
        let closed_form = plain_chain.then(|| exact_lrc_gap(e.n, e.boundary));
        let inverse_gap = 1.0 / result.gap;
        json_bytes(
            meta,
            ComputedGap { arch: a.arch.clone(), n: a.n, t: a.t, realization, result, inverse_gap, closed_form },
        )?
    };
    emit(a.out.as_deref(), &bytes)
}

// ---------------------------------------------------------------------------
// fit

#[derive(Args, Debug, Serialize)]
pub struct FitArgs {
    /// Estimates CSV as written by `simulate`.
    #[arg(long)]
    #[serde(skip)]
    pub csv: PathBuf,
    /// Filter to fit; defaults to the only one present, else `ad`.
    #[arg(long)]
    pub lambda: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub m_min: usize,
    /// none, free, or a fixed numeric offset.
    #[arg(long, default_value = "none")]
    pub offset: String,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Deserialize)]
struct Row {
    lambda: String,
    m: usize,
    #[allow(dead_code)]
    n_shots: usize,
    estimate: f64,
    stderr: f64,
}

fn parse_offset(s: &str) -> CliResult<Offset> {
    Ok(match s {
        "none" => Offset::None,
        "free" => Offset::Free,
        v => Offset::Fixed(v.parse().map_err(|_| input(format!("--offset: {v:?} is not none, free or a number")))?),
    })
}

pub fn fit(a: &FitArgs) -> CliResult<()> {
    let bytes = read_file(&a.csv)?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(bytes.as_slice());
    let rows: Vec<Row> =
        rdr.deserialize().collect::<Result<_, _>>().map_err(|e| input(format!("{}: {e}", a.csv.display())))?;
    let mut labels: Vec<&str> = rows.iter().map(|r| r.lambda.as_str()).collect();
    labels.sort_unstable();
    labels.dedup();
    let lambda = match (&a.lambda, labels.as_slice()) {
        (Some(l), _) => l.clone(),
        (None, [only]) => only.to_string(),
        (None, _) => "ad".into(),
    };
    let pts: Vec<(usize, f64, f64)> =
        rows.iter().filter(|r| r.lambda == lambda && r.m >= a.m_min).map(|r| (r.m, r.estimate, r.stderr)).collect();
    if pts.is_empty() {
        return Err(input(format!("{}: no rows for lambda {lambda:?} with m >= {}", a.csv.display(), a.m_min)));
    }
    let fit = fit_series(&lambda, &pts, parse_offset(&a.offset)?)?;
    let hash = config_hash(&(a, bytes_hash(&bytes)));
    emit(a.out.as_deref(), &json_bytes(Meta::new(hash), fit)?)
}

// ---------------------------------------------------------------------------
// bounds

#[derive(Args, Debug, Serialize)]
pub struct BoundsArgs {
    /// Spectral gap; alternatively --arch selects a tabulated gap.
    #[arg(long)]
    pub gap: Option<f64>,
    /// Tabulated family (nn-lrc, bw, bw-odd, complete-lrc, generator-*).
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 2)]
    pub t: usize,
    /// design, design-relative, additive, relative or lemma.
    #[arg(long, default_value = "design")]
    pub form: String,
    /// Additive precision; the design form without it keeps the leading term only.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub d_lambda: Option<f64>,
    #[arg(long)]
    pub overlap: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub v_sp: Option<f64>,
    #[arg(long)]
    pub v_m: Option<f64>,
    /// Lemma form: group whose frame defines the filter.
    #[arg(long, default_value = "clifford")]
    pub group: String,
    #[arg(long, default_value = "ad")]
    pub irrep: String,
    /// Lemma form: implementation error δ.
    #[arg(long, default_value_t = 0.0)]
    pub implementation_error: f64,
    /// Sampling bound: E[f²] including SPAM.
    #[arg(long)]
    pub second_moment: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    /// Failure probability of the sampling bound.
    #[arg(long, default_value_t = 0.05)]
    pub failure_prob: f64,
    /// Print the sequence-length table instead.
    #[arg(long)]
    pub table: bool,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct DesignBound {
    value: f64,
    m: u64,
    alpha_free: bool,
}

#[derive(Serialize)]
struct LemmaBound {
    #[serde(flatten)]
    inputs: LemmaInputs,
    aligned: bool,
    g: f64,
    alpha: f64,
    exact: f64,
    linearized: f64,
    m: u64,
}

#[derive(Serialize)]
struct SamplingReport {
    second_moment: f64,
    alpha: f64,
    eps: f64,
    failure_prob: f64,
    n: u64,
}

#[derive(Serialize, Default)]
struct BoundsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gap_source: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    form: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    design: Option<DesignBound>,
    #[serde(skip_serializing_if = "Option::is_none")]
    simplified: Option<SequenceLengthBound>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lemma: Option<LemmaBound>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sampling: Option<SamplingReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    table: Option<Vec<TableRow>>,
}

fn need<T: Copy>(v: Option<T>, flag: &str) -> CliResult<T> {
    v.ok_or_else(|| input(format!("--{flag} is required here")))
}

fn ceil_m(x: f64) -> u64 {
    x.ceil().max(1.0) as u64
}

pub fn bounds(a: &BoundsArgs) -> CliResult<()> {
    let meta = Meta::new(config_hash(a));
    let mut rep = BoundsReport::default();
    if a.table {
        rep.table = Some(table_one()?);
        return emit(a.out.as_deref(), &json_bytes(meta, rep)?);
    }
    let (gap, source) = match (a.gap, &a.arch) {
        (Some(g), _) => (g, "given".to_string()),
        (None, Some(arch)) => tabulated_gap(TableArch::parse(arch)?, need(a.n, "n")?, a.t)?,
        (None, None) => return Err(input("--gap or --arch is required")),
    };
    rep.gap = Some(gap);
    rep.gap_source = Some(source);
    rep.form = Some(a.form.clone());
    match a.form.as_str() {
        "design" => {
            let value = design_sequence_length(gap, need(a.n, "n")?, a.alpha)?;
            rep.design = Some(DesignBound { value, m: ceil_m(value), alpha_free: a.alpha.is_none() });
        }
        "design-relative" => {
            let vis = need(a.v_sp, "v-sp")? * need(a.v_m, "v-m")?;
            let value = design_relative_sequence_length(gap, need(a.n, "n")?, vis, need(a.gamma, "gamma")?)?;
            rep.design = Some(DesignBound { value, m: ceil_m(value), alpha_free: false });
        }
        "additive" => {
            let mode = SequenceMode::Additive { alpha: need(a.alpha, "alpha")? };
            rep.simplified =
                Some(sequence_length_bound(gap, need(a.d_lambda, "d-lambda")?, need(a.overlap, "overlap")?, mode)?);
        }
        "relative" => {
            let mode = SequenceMode::Relative {
                gamma: need(a.gamma, "gamma")?,
                v_sp: need(a.v_sp, "v-sp")?,
                v_m: need(a.v_m, "v-m")?,
            };
            rep.simplified =
                Some(sequence_length_bound(gap, need(a.d_lambda, "d-lambda")?, need(a.overlap, "overlap")?, mode)?);
        }
        "lemma" => {
            let n = need(a.n, "n")?;
            let group = GroupTag::parse(&a.group)?;
            let irrep = lookup_irrep(group, n, 2, &parse_irrep(&a.irrep, n)?)?;
            let frame = frame_operator(group, n, 2)?;
            let (c, aligned) = c_lambda(&frame, &irrep)?;
            let rho = basis_state(n, 0);
            let overlap = rho.dot(&(irrep.projector.matrix() * &rho));
            let inputs = LemmaInputs { c_lambda: c, overlap, delta: a.implementation_error, gap };
            let alpha = need(a.alpha, "alpha")?;
            let exact = sequence_length_exact(&inputs, alpha)?;
            let linearized = sequence_length_linearized(&inputs, alpha)?;
            rep.lemma = Some(LemmaBound {
                inputs,
                aligned,
                g: g_factor(a.implementation_error / gap),
                alpha,
                exact,
                linearized,
                m: exact.ceil() as u64,
            });
        }
        other => return Err(input(format!("--form: unknown form {other:?}"))),
    }
    if let Some(sm) = a.second_moment {
        let eps = need(a.eps, "eps")?;
        let alpha = need(a.alpha, "alpha")?;
        let n = sampling_bound_additive(sm, alpha, eps, a.failure_prob)?;
        rep.sampling = Some(SamplingReport { second_moment: sm, alpha, eps, failure_prob: a.failure_prob, n });
    }
    emit(a.out.as_deref(), &json_bytes(meta, rep)?)
}

// ---------------------------------------------------------------------------
// moments

#[derive(Args, Debug, Serialize)]
pub struct MomentsArgs {
    #[arg(long)]
    pub group: String,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value = "ad")]
    pub irrep: String,
    /// Depolarizing SPAM parameter applied to state preparation and measurement.
    #[arg(long)]
    pub spam_q: Option<f64>,
    /// Include the dense decomposition into σ-blocks (small registers only).
    #[arg(long)]
    pub blocks: bool,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct MomentsReport {
    group: GroupTag,
    n: usize,
    irrep: String,
    d_lambda: usize,
    multiplicity: usize,
    ideal: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    bounds: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    spam_q: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    with_spam: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    blocks: Option<SecondMomentBlocks>,
}

pub fn moments(a: &MomentsArgs) -> CliResult<()> {
    let group = GroupTag::parse(&a.group)?;
    let label = parse_irrep(&a.irrep, a.n)?;
    let irrep = lookup_irrep(group, a.n, 2, &label)?;
    let d = (a.n as f64).exp2();
    let ideal = ideal_second_moment(group, a.n, 2, &label)?;
    let bounds = (!irrep.is_trivial()).then(|| second_moment_bounds(&irrep, d, irrep.multiplicity)).transpose()?;
    let with_spam = a.spam_q.map(|q| spam_second_moment(ideal, q, irrep.multiplicity, irrep.dim, d));
    let blocks = if a.blocks {
        let spam = a.spam_q.map(SpamModel::depolarizing).unwrap_or_default();
        Some(second_moment_blocks(group, a.n, &label, &spam)?)
    } else {
        None
    };
    let rep = MomentsReport {
        group,
        n: a.n,
        irrep: label.to_string(),
        d_lambda: irrep.dim,
        multiplicity: irrep.multiplicity,
        ideal,
        bounds,
        spam_q: a.spam_q,
        with_spam,
        blocks,
    };
    emit(a.out.as_deref(), &json_bytes(Meta::new(config_hash(a)), rep)?)
}

// ---------------------------------------------------------------------------
// perturb-check

#[derive(Args, Debug, Serialize)]
pub struct PerturbArgs {
    /// Decompose the signals of this experiment instead of random instances.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    pub instances: usize,
    #[arg(long, default_value_t = 16)]
    pub max_dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct RandomReport {
    instances: usize,
    seed: u64,
    all_hold: bool,
    max_reconstruction_residual: f64,
    max_biorthogonality_residual: f64,
    max_iterations: usize,
    failures: Vec<(usize, Vec<BoundCheck>)>,
}

#[derive(Serialize)]
struct SignalReport {
    #[serde(flatten)]
    summary: SignalSummary,
    checks: Vec<BoundCheck>,
    all_hold: bool,
}

fn random_instances(a: &PerturbArgs, seed: u64) -> CliResult<RandomReport> {
    if a.max_dim < 3 {
        return Err(input("--max-dim must be at least 3"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = RandomReport {
        instances: a.instances,
        seed,
        all_hold: true,
        max_reconstruction_residual: 0.0,
        max_biorthogonality_residual: 0.0,
        max_iterations: 0,
        failures: Vec::new(),
    };
    for i in 0..a.instances {
        let dim = rng.random_range(3..=a.max_dim);
        let k1 = rng.random_range(1..=3.min(dim - 1));
        let k2 = dim - k1;
        let v = DMatrix::from_fn(dim, dim, |_, _| rng.random::<f64>() - 0.5).qr().q();
        let mut lam = DMatrix::from_fn(k2, k2, |_, _| rng.random::<f64>() - 0.5);
        lam *= 0.6 * rng.random::<f64>() / spectral_norm_dense(&lam).max(1e-300);
        let gap = 1.0 - spectral_norm_dense(&lam);
        let x1 = v.columns(0, k1).into_owned();
        let x2 = v.columns(k1, k2).into_owned();
        let a_mat = &x1 * x1.transpose() + &x2 * &lam * x2.transpose();
        let mut e = DMatrix::from_fn(dim, dim, |_, _| rng.random::<f64>() - 0.5);
        e *= rng.random_range(0.01..0.99) * gap / 4.0 / spectral_norm_dense(&e);
        let r = perturb_block_diagonalize(&a_mat, &x1, &e, gap)?;
        rep.max_reconstruction_residual = rep.max_reconstruction_residual.max(r.reconstruction_residual);
        rep.max_biorthogonality_residual = rep.max_biorthogonality_residual.max(r.biorthogonality_residual);
        rep.max_iterations = rep.max_iterations.max(r.iterations);
        if !r.all_hold() || r.reconstruction_residual >= 1e-10 {
            rep.all_hold = false;
            rep.failures.push((i, r.checks.clone()));
        }
    }
    Ok(rep)
}

pub fn perturb_check(a: &PerturbArgs) -> CliResult<()> {
    let (bytes, ok) = match &a.config {
        None => {
            let seed = seed_from_env()?.unwrap_or(a.seed);
            let rep = random_instances(a, seed)?;
            let ok = rep.all_hold;
            (json_bytes(Meta::new(config_hash(&(a, seed))), rep)?, ok)
        }
        Some(path) => {
            let exp = config::load(path)?.build()?;
            let mut out = Vec::new();
            for f in &exp.filters {
                let FilterSpec::Irrep(label) = f else {
                    return Err(input(format!("perturb-check: filter {} is not an irrep", f.label())));
                };
                let s = signal_decomposition(&exp.ensemble, &exp.noise, &exp.spam, label)?;
                let checks = s.perturbation().map(|r| r.checks.clone()).unwrap_or_default();
                let all_hold = checks.iter().all(|c| c.holds);
                out.push(SignalReport { summary: s.summary.clone(), checks, all_hold });
            }
            let ok = out.iter().all(|r| r.all_hold);
            #[derive(Serialize)]
            struct Signals {
                signals: Vec<SignalReport>,
            }
            (json_bytes(Meta::new(exp.hash), Signals { signals: out })?, ok)
        }
    };
    emit(a.out.as_deref(), &bytes)?;
    if ok {
        Ok(())
    } else {
        Err(CliError::Core(frb_core::Error::Numerical("some certified bounds do not hold".into())))
    }
}
