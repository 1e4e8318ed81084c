//! Filtered randomized benchmarking: data acquisition, filter functions and estimators.
//!
//! The engine is qubit-only. States are `|x0><x0|` and the measurement is in the
//! computational basis. Filter values are computed from the ideal circuit by pulling the
//! observed effect `E_i` back through the sampled layers (dense backend) or from the
//! stabilizer tableau of the ideal circuit (stabilizer backend).

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clifford::{ptm_index, CliffordTableau, Pauli};
use crate::ensembles::{Architecture, Ensemble, GateSet, LayerSample};
use crate::error::{Error, Result};
use crate::frame::closed_form_block;
use crate::group::{GroupTag, IrrepLabel};
use crate::linalg::LinearMap;
use crate::noise::{pauli_trajectory, LayerChannel, NoiseModel, SpamModel};
use crate::spectra::{convolved_frames, pair_to_site_major, site_major_to_pair, NoisyMoment};
use crate::stabilizer::StabilizerState;
use crate::states::basis_state;
use crate::superop::PINV_TOL;
use crate::weyl::WeylLabel;

/// Largest register simulated with dense transfer-matrix vectors.
pub const DENSE_MAX_QUBITS: usize = 5;
/// Largest register for filters that enumerate every Z-type label.
pub const ENUMERATION_MAX_QUBITS: usize = 12;
/// Frames of convolved ensembles above this condition number are rejected.
pub const FRAME_CONDITION_LIMIT: f64 = 1e8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    #[default]
    Auto,
    Dense,
    Stabilizer,
}

/// Which post-processing function to evaluate on every shot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FilterSpec {
    /// Standard filter `<<ρ|P_λ S^+ ω(g)^T|E_i>>`.
    Irrep(IrrepLabel),
    /// Constant `1/d` on every detected shot.
    Trivial,
    /// `<<E_i|ω(g) S^{-1}|ξ>> - tr ξ` with the unitary 2-group frame.
    Trace,
    /// Standard filter with the frame of the `m`-fold convolved ensemble.
    ExactFrame(IrrepLabel),
}

impl FilterSpec {
    /// Parses `ad`, `trivial`, `trace`, `b=0110`, `z=01,x=00` and `exact:<label>`.
    pub fn parse(s: &str, n: usize) -> Result<Self> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("exact:") {
            return match Self::parse(rest, n)? {
                FilterSpec::Irrep(l) => Ok(FilterSpec::ExactFrame(l)),
                _ => Err(Error::Config(format!("filters: {s:?} needs an irrep label"))),
            };
        }
        let bits = |t: &str| -> Result<Vec<u8>> {
            let v: Vec<u8> = t
                .chars()
                .map(|c| match c {
                    '0' => Ok(0),
                    '1' => Ok(1),
                    _ => Err(Error::Config(format!("filters: bad bit {c:?} in {s:?}"))),
                })
                .collect::<Result<_>>()?;
            if v.len() != n {
                return Err(Error::Config(format!("filters: {s:?} needs {n} bits")));
            }
            Ok(v)
        };
        Ok(match s {
            "ad" | "adjoint" => FilterSpec::Irrep(IrrepLabel::Adjoint),
            "trivial" => FilterSpec::Trivial,
            "trace" => FilterSpec::Trace,
            _ if s.starts_with("b=") => FilterSpec::Irrep(IrrepLabel::Local(bits(&s[2..])?)),
            _ if s.starts_with("z=") => {
                let (z, x) = s[2..]
                    .split_once(",x=")
                    .ok_or_else(|| Error::Config(format!("filters: expected z=..,x=.. in {s:?}")))?;
                let z = bits(z)?.into_iter().map(u32::from).collect();
                let x = bits(x)?.into_iter().map(u32::from).collect();
                FilterSpec::Irrep(IrrepLabel::Weyl(WeylLabel::new(2, z, x)?))
            }
            _ => return Err(Error::Config(format!("filters: unknown filter {s:?}"))),
        })
    }

    pub fn label(&self) -> String {
        match self {
            FilterSpec::Irrep(l) => l.to_string(),
            FilterSpec::Trivial => "trivial".into(),
            FilterSpec::Trace => "trace".into(),
            FilterSpec::ExactFrame(l) => format!("exact:{l}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shots {
    /// One outcome per sampled circuit.
    Single(usize),
    /// `circuits` sampled circuits with `per_circuit` outcomes each.
    Multi { circuits: usize, per_circuit: usize },
}

impl Shots {
    pub fn circuits(&self) -> usize {
        match self {
            Shots::Single(n) => *n,
            Shots::Multi { circuits, .. } => *circuits,
        }
    }

    pub fn per_circuit(&self) -> usize {
        match self {
            Shots::Single(_) => 1,
            Shots::Multi { per_circuit, .. } => *per_circuit,
        }
    }

    pub fn total(&self) -> usize {
        self.circuits() * self.per_circuit()
    }
}

#[derive(Clone, Debug)]
pub struct ProtocolConfig {
    pub ms: Vec<usize>,
    pub shots: Shots,
    pub backend: Backend,
    pub seed: u64,
    /// Prepared basis state `x0` (bit `n-1-j` is qubit `j`).
    pub initial: u64,
    /// Group whose frame defines the filters; defaults to the ensemble's group.
    pub group: Option<GroupTag>,
    pub keep_records: bool,
}

impl ProtocolConfig {
    pub fn new(ms: Vec<usize>, shots: Shots, seed: u64) -> Self {
        ProtocolConfig { ms, shots, backend: Backend::Auto, seed, initial: 0, group: None, keep_records: false }
    }
}

fn hex_outcome<S: serde::Serializer>(o: &Option<u64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match o {
        Some(x) => s.serialize_str(&format!("{x:x}")),
        None => s.serialize_none(),
    }
}

/// One measured run of the protocol.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ShotRecord {
    pub m: usize,
    pub circuit: usize,
    /// Seed of the circuit's random stream.
    pub seed: u64,
    /// Observed bitstring; `None` when the run produced no detection.
    #[serde(serialize_with = "hex_outcome")]
    pub outcome: Option<u64>,
    pub values: Vec<f64>,
}

/// All filter values at one sequence length, `values[filter][shot]` in circuit-major order.
#[derive(Clone, Debug)]
pub struct SeriesPoint {
    pub m: usize,
    pub values: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub lambda: String,
    pub m: usize,
    pub n_shots: usize,
    pub estimate: f64,
    pub stderr: f64,
}

/// Law-of-total-variance split of the filter values at one sequence length.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VarianceDecomposition {
    /// `E_g Var[f | g]`; `None` with one outcome per circuit.
    pub within: Option<f64>,
    pub within_err: Option<f64>,
    /// `Var_g E[f | g]`; `None` with one outcome per circuit.
    pub between: Option<f64>,
    pub between_err: Option<f64>,
    pub total: f64,
    pub total_err: f64,
}

#[derive(Clone, Debug)]
pub struct RBDataset {
    pub labels: Vec<String>,
    pub n: usize,
    pub shots: Shots,
    pub backend: Backend,
    pub points: Vec<SeriesPoint>,
    pub records: Vec<ShotRecord>,
    pub config_hash: Option<String>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_var(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return f64::NAN;
    }
    let mu = mean(v);
    v.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (v.len() - 1) as f64
}

fn batch_error(values: &[f64]) -> f64 {
    (sample_var(values) / values.len() as f64).sqrt()
}

impl RBDataset {
    pub fn dimension(&self) -> f64 {
        (1u64 << self.n) as f64
    }

    fn filter_index(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::Config(format!("filter {label:?} not in dataset")))
    }

    /// Mean filter value per `(λ, m)`, with the standard error over circuits.
    pub fn estimates(&self) -> Vec<Estimate> {
        let k = self.shots.per_circuit();
        let mut out = Vec::new();
        for (fi, label) in self.labels.iter().enumerate() {
            for pt in &self.points {
                let v = &pt.values[fi];
                let circuit_means: Vec<f64> = v.chunks(k).map(mean).collect();
                out.push(Estimate {
                    lambda: label.clone(),
                    m: pt.m,
                    n_shots: v.len(),
                    estimate: mean(v),
                    stderr: batch_error(&circuit_means),
                });
            }
        }
        out
    }

    /// `(m, estimate, stderr)` for one filter.
    pub fn series(&self, label: &str) -> Result<Vec<(usize, f64, f64)>> {
        self.filter_index(label)?;
        Ok(self.estimates().into_iter().filter(|e| e.lambda == label).map(|e| (e.m, e.estimate, e.stderr)).collect())
    }

    /// Linear cross-entropy estimator `d/(d+1) F_ad(m)`.
    pub fn xeb_estimator(&self) -> Result<Vec<(usize, f64, f64)>> {
        let d = self.dimension();
        let s = d / (d + 1.0);
        Ok(self.series("ad")?.into_iter().map(|(m, e, err)| (m, s * e, s * err)).collect())
    }

    /// Within- and between-circuit variance of one filter at sequence length `m`.
    pub fn multishot_variance(&self, label: &str, m: usize) -> Result<VarianceDecomposition> {
        let fi = self.filter_index(label)?;
        let pt = self
            .points
            .iter()
            .find(|p| p.m == m)
            .ok_or_else(|| Error::Config(format!("sequence length {m} not in dataset")))?;
        let v = &pt.values[fi];
        let k = self.shots.per_circuit();
        let nc = self.shots.circuits();
        let split = |vals: &[f64]| -> (f64, Option<f64>, Option<f64>) {
            let total = sample_var(vals);
            if k < 2 {
                return (total, None, None);
            }
            let within = mean(&vals.chunks(k).map(sample_var).collect::<Vec<_>>());
            let means: Vec<f64> = vals.chunks(k).map(mean).collect();
            (total, Some(within), Some(sample_var(&means) - within / k as f64))
        };
        let (total, within, between) = split(v);
        let batches = 16usize.min(nc / 2);
        let (mut te, mut we, mut be) = (f64::NAN, None, None);
        if batches >= 2 {
            let per = nc / batches;
            let parts: Vec<_> = (0..batches).map(|b| split(&v[b * per * k..(b + 1) * per * k])).collect();
            let col = |f: &dyn Fn(&(f64, Option<f64>, Option<f64>)) -> Option<f64>| -> Option<f64> {
                let xs: Option<Vec<f64>> = parts.iter().map(f).collect();
                xs.map(|x| batch_error(&x))
            };
            te = col(&|p| Some(p.0)).unwrap_or(f64::NAN);
            we = col(&|p| p.1);
            be = col(&|p| p.2);
        }
        Ok(VarianceDecomposition { within, within_err: we, between, between_err: be, total, total_err: te })
    }
}

// ---------------------------------------------------------------------------
// filter preparation

#[derive(Clone, Debug)]
enum Prepared {
    Trivial,
    /// `f(i) = <<E_i|ω(g)|v>> - offset` with `v` given by Z-type coordinates.
    Terms {
        terms: Vec<(u64, f64)>,
        offset: f64,
    },
    /// Adjoint of a unitary 2-group: `f(i) = (p_ideal(i) - 1/d) / s_ad`.
    Adjoint {
        inv_s: f64,
    },
    /// Dense vector per sequence length.
    Frame(HashMap<usize, DVector<f64>>),
}

fn popcount_parity(x: u64) -> f64 {
    if x.count_ones() % 2 == 1 {
        -1.0
    } else {
        1.0
    }
}

/// Z-type coordinates of `P_λ |x0><x0|`, each scaled by `1/s_λ` when `frame` is set.
fn irrep_terms(group: GroupTag, n: usize, label: &IrrepLabel, x0: u64, frame: bool) -> Result<Vec<(u64, f64)>> {
    let s = closed_form_block(group, n, 2, label)?;
    if s.abs() <= PINV_TOL {
        return Ok(Vec::new());
    }
    let scale = if frame { 1.0 / s } else { 1.0 };
    let amp = |z: u64| scale * popcount_parity(z & x0) / ((1u64 << n) as f64).sqrt();
    let mask_of = |b: &[u8], bit: u8| (0..n).filter(|&j| b[j] == bit).fold(0u64, |m, j| m | (1u64 << (n - 1 - j)));
    Ok(match label {
        IrrepLabel::Trivial => vec![(0, amp(0))],
        IrrepLabel::Adjoint => {
            if n > ENUMERATION_MAX_QUBITS {
                return Err(Error::Capacity(format!("adjoint terms enumerated up to n = {ENUMERATION_MAX_QUBITS}")));
            }
            (1..(1u64 << n)).map(|z| (z, amp(z))).collect()
        }
        IrrepLabel::Local(b) => {
            let z = mask_of(b, 0);
            vec![(z, amp(z))]
        }
        IrrepLabel::Weyl(a) => {
            let (z, _) = a.masks();
            vec![(z, amp(z))]
        }
    })
}

fn trace_terms(n: usize) -> Result<Vec<(u64, f64)>> {
    if n > ENUMERATION_MAX_QUBITS {
        return Err(Error::Capacity(format!("trace filter enumerated up to n = {ENUMERATION_MAX_QUBITS}")));
    }
    let d = (1u64 << n) as f64;
    Ok((0..(1u64 << n))
        .map(|z| {
            let inv_s = if z == 0 { 1.0 } else { d + 1.0 };
            (z, inv_s * 3f64.powi(z.count_ones() as i32) * d.sqrt() / (d * d))
        })
        .collect())
}

fn terms_to_dense(n: usize, terms: &[(u64, f64)]) -> DVector<f64> {
    let mut v = DVector::zeros(1usize << (2 * n));
    for &(z, c) in terms {
        v[ptm_index(n, z, 0)] += c;
    }
    v
}

fn ensemble_is_clifford(e: &Ensemble) -> bool {
    match e.arch {
        Architecture::Exact => {
            matches!(e.group(), GroupTag::Clifford | GroupTag::LocalClifford | GroupTag::HeisenbergWeyl)
        }
        _ => e.gateset != GateSet::Haar,
    }
}

fn unravelable(m: &NoiseModel) -> bool {
    match m {
        NoiseModel::None | NoiseModel::Pauli(_) => true,
        NoiseModel::Depolarizing { f } => (0.0..=1.0).contains(f),
        _ => false,
    }
}

struct Context<'a> {
    e: &'a Ensemble,
    noise: &'a NoiseModel,
    spam: &'a SpamModel,
    n: usize,
    d: f64,
    x0: u64,
    filters: Vec<Prepared>,
    trace_preserving: bool,
    rho_noisy: DVector<f64>,
    meas: LayerChannel,
}

fn validate_common(e: &Ensemble, noise: &NoiseModel, spam: &SpamModel, cfg: &ProtocolConfig) -> Result<()> {
    e.validate()?;
    if e.p != 2 {
        return Err(Error::Unsupported("the protocol engine is implemented for qubits".into()));
    }
    if cfg.shots.total() == 0 {
        return Err(Error::Config("shots: need at least one shot".into()));
    }
    if cfg.ms.is_empty() {
        return Err(Error::Config("ms: need at least one sequence length".into()));
    }
    if e.n < 64 && cfg.initial >> e.n != 0 {
        return Err(Error::Config("initial: bitstring longer than the register".into()));
    }
    noise.validate(e.n, e.p)?;
    spam.validate(e.n, e.p)
}

fn choose_backend(
    e: &Ensemble,
    noise: &NoiseModel,
    spam: &SpamModel,
    filters: &[FilterSpec],
    b: Backend,
) -> Result<Backend> {
    let stab_ok = ensemble_is_clifford(e)
        && unravelable(noise)
        && unravelable(&spam.prep)
        && unravelable(&spam.meas)
        && !filters.iter().any(|f| matches!(f, FilterSpec::ExactFrame(_)));
    let dense_ok = e.n <= DENSE_MAX_QUBITS;
    match b {
        Backend::Dense if !dense_ok => {
            Err(Error::Capacity(format!("dense backend limited to {DENSE_MAX_QUBITS} qubits, got {}", e.n)))
        }
        Backend::Stabilizer if !stab_ok => Err(Error::Unsupported(
            "stabilizer backend needs Clifford layers, Pauli noise and no exact-frame filter".into(),
        )),
        Backend::Auto if stab_ok => Ok(Backend::Stabilizer),
        Backend::Auto if dense_ok => Ok(Backend::Dense),
        Backend::Auto => {
            Err(Error::Capacity(format!("no backend for {} qubits with non-Clifford layers or non-Pauli noise", e.n)))
        }
        other => Ok(other),
    }
}

fn prepare_filters(
    e: &Ensemble,
    group: GroupTag,
    filters: &[FilterSpec],
    cfg: &ProtocolConfig,
    backend: Backend,
) -> Result<Vec<Prepared>> {
    let n = e.n;
    let d = (1u64 << n.min(63)) as f64;
    let max_m = cfg.ms.iter().copied().max().unwrap_or(0);
    let mut frames: Option<Vec<DMatrix<f64>>> = None;
    filters
        .iter()
        .map(|f| {
            Ok(match f {
                FilterSpec::Trivial => Prepared::Trivial,
                FilterSpec::Trace => {
                    if !e.is_right_local_clifford_invariant() {
                        return Err(Error::Assumption(
                            "trace filter needs a measure invariant under right multiplication by local Cliffords"
                                .into(),
                        ));
                    }
                    if cfg.initial != 0 {
                        return Err(Error::Config("initial: trace filter is defined for |0...0>".into()));
                    }
                    Prepared::Terms { terms: trace_terms(n)?, offset: 1.0 / d }
                }
                FilterSpec::Irrep(IrrepLabel::Adjoint)
                    if backend == Backend::Stabilizer && matches!(group, GroupTag::Unitary | GroupTag::Clifford) =>
                {
                    Prepared::Adjoint { inv_s: 1.0 / closed_form_block(group, n, 2, &IrrepLabel::Adjoint)? }
                }
                FilterSpec::Irrep(l) => {
                    Prepared::Terms { terms: irrep_terms(group, n, l, cfg.initial, true)?, offset: 0.0 }
                }
                FilterSpec::ExactFrame(l) => {
                    if frames.is_none() {
                        frames = Some(convolved_frames(e, max_m)?);
                    }
                    let fr = frames.as_ref().expect("just built");
                    let base = terms_to_dense(n, &irrep_terms(group, n, l, cfg.initial, false)?);
                    let mut per_m = HashMap::new();
                    for &m in &cfg.ms {
                        per_m.insert(m, frame_pinv(&fr[m])? * &base);
                    }
                    Prepared::Frame(per_m)
                }
            })
        })
        .collect()
}

/// Pseudoinverse of a frame operator with a condition-number guard.
fn frame_pinv(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (s + s.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let smax = eig.eigenvalues.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let cut = PINV_TOL * smax;
    let kept: Vec<f64> = eig.eigenvalues.iter().map(|v| v.abs()).filter(|&v| v > cut).collect();
    let smin = kept.iter().copied().fold(f64::INFINITY, f64::min);
    if smax / smin > FRAME_CONDITION_LIMIT {
        return Err(Error::Numerical(format!("convolved frame is ill-conditioned (condition {:.3e})", smax / smin)));
    }
    let mut out = DMatrix::zeros(s.nrows(), s.ncols());
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam.abs() > cut {
            let c = eig.eigenvectors.column(k);
            out += (c * c.transpose()) / lam;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// per-circuit simulation

struct ShotResult {
    outcome: Option<u64>,
    values: Vec<f64>,
}

/// Derives a circuit seed from the master seed and the `(m index, circuit)` pair.
pub fn circuit_seed(master: u64, m_index: usize, circuit: usize) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    splitmix(splitmix(master ^ splitmix(m_index as u64)) ^ circuit as u64)
}

/// Computational-basis probabilities `<<E_i|r>>` of a transfer-matrix vector.
pub fn outcome_probabilities(n: usize, r: &[f64]) -> Vec<f64> {
    let dim = 1u64 << n;
    let norm = 1.0 / (dim as f64).sqrt();
    let zs: Vec<f64> = (0..dim).map(|z| r[ptm_index(n, z, 0)]).collect();
    (0..dim)
        .map(|i| norm * zs.iter().enumerate().map(|(z, v)| popcount_parity(z as u64 & i) * v).sum::<f64>())
        .collect()
}

fn sample_outcome<R: Rng + ?Sized>(probs: &[f64], normalize: bool, rng: &mut R) -> Option<u64> {
    let total: f64 = probs.iter().map(|p| p.max(0.0)).sum();
    let mut u: f64 = rng.random();
    if normalize {
        u *= total;
    }
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p.max(0.0);
        if u < acc {
            return Some(i as u64);
        }
    }
    if normalize {
        probs.iter().rposition(|&p| p > 0.0).map(|i| i as u64)
    } else {
        None
    }
}

impl Context<'_> {
    fn sample_layers<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<Vec<LayerSample>> {
        (0..m).map(|_| self.e.sample_layer(rng)).collect()
    }

    fn values_from_effect(&self, b: &DVector<f64>, m: usize) -> Vec<f64> {
        let n = self.n;
        self.filters
            .iter()
            .map(|f| match f {
                Prepared::Trivial => 1.0 / self.d,
                Prepared::Terms { terms, offset } => {
                    terms.iter().map(|&(z, c)| c * b[ptm_index(n, z, 0)]).sum::<f64>() - offset
                }
                Prepared::Adjoint { .. } => unreachable!("adjoint shortcut is stabilizer-only"),
                Prepared::Frame(per_m) => b.dot(&per_m[&m]),
            })
            .collect()
    }

    fn dense_circuit(&self, m: usize, per_circuit: usize, rng: &mut ChaCha8Rng) -> Result<Vec<ShotResult>> {
        let layers = self.sample_layers(m, rng)?;
        let mut r = self.rho_noisy.as_slice().to_vec();
        for l in &layers {
            r = l.apply_superop(&r);
            self.noise.channel_for(l)?.apply(&mut r);
        }
        self.meas.apply(&mut r);
        let probs = outcome_probabilities(self.n, &r);
        let mut cache: HashMap<u64, Vec<f64>> = HashMap::new();
        let mut out = Vec::with_capacity(per_circuit);
        for _ in 0..per_circuit {
            let outcome = sample_outcome(&probs, self.trace_preserving, rng);
            let values = match outcome {
                None => vec![0.0; self.filters.len()],
                Some(i) => cache
                    .entry(i)
                    .or_insert_with(|| {
                        let mut b = basis_state(self.n, i).as_slice().to_vec();
                        for l in layers.iter().rev() {
                            b = l.apply_superop_transpose(&b);
                        }
                        self.values_from_effect(&DVector::from_vec(b), m)
                    })
                    .clone(),
            };
            out.push(ShotResult { outcome, values });
        }
        Ok(out)
    }

    fn insert(
        &self,
        st: &mut StabilizerState,
        model: &NoiseModel,
        layer: &LayerSample,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        for w in pauli_trajectory(model, layer, rng)? {
            let (z, x) = w.masks();
            st.apply_pauli(z, x);
        }
        Ok(())
    }

    fn stabilizer_circuit(&self, m: usize, per_circuit: usize, rng: &mut ChaCha8Rng) -> Result<Vec<ShotResult>> {
        let n = self.n;
        let layers = self.sample_layers(m, rng)?;
        let tabs: Vec<CliffordTableau> = layers
            .iter()
            .map(|l| {
                l.clifford().ok_or_else(|| Error::Unsupported("non-Clifford layer on the stabilizer backend".into()))
            })
            .collect::<Result<_>>()?;
        let ideal_c = tabs.iter().fold(CliffordTableau::identity(n), |acc, t| t.compose(&acc));
        let mut ideal = StabilizerState::zero(n);
        ideal.apply_pauli(0, self.x0);
        ideal.apply_clifford(&ideal_c);
        let ideal_space = ideal.outcome_space();
        let conj: Vec<Option<Vec<(u64, f64)>>> = self
            .filters
            .iter()
            .map(|f| match f {
                Prepared::Terms { terms, .. } => Some(
                    terms
                        .iter()
                        .filter_map(|&(z, c)| {
                            let img = ideal_c.conjugate(&Pauli { z, x: 0, phase: 0 });
                            (img.x == 0).then(|| (img.z, c * img.hermitian_sign().expect("Hermitian image")))
                        })
                        .collect(),
                ),
                _ => None,
            })
            .collect();
        let noiseless = self.noise.is_noiseless() && self.spam.prep.is_noiseless() && self.spam.meas.is_noiseless();
        let idle = LayerSample::identity(n, 2);
        let inv_sqrt_d = 1.0 / self.d.sqrt();
        let mut out = Vec::with_capacity(per_circuit);
        for _ in 0..per_circuit {
            let outcome = if noiseless {
                ideal_space.sample(rng)
            } else {
                let mut st = StabilizerState::zero(n);
                st.apply_pauli(0, self.x0);
                self.insert(&mut st, &self.spam.prep, &idle, rng)?;
                for (l, t) in layers.iter().zip(&tabs) {
                    st.apply_clifford(t);
                    self.insert(&mut st, self.noise, l, rng)?;
                }
                self.insert(&mut st, &self.spam.meas, &idle, rng)?;
                st.outcome_space().sample(rng)
            };
            let values = self
                .filters
                .iter()
                .zip(&conj)
                .map(|(f, cj)| match f {
                    Prepared::Trivial => 1.0 / self.d,
                    Prepared::Adjoint { inv_s } => inv_s * (ideal_space.probability(outcome) - 1.0 / self.d),
                    Prepared::Terms { offset, .. } => {
                        let cj = cj.as_ref().expect("conjugated terms");
                        inv_sqrt_d * cj.iter().map(|&(z, c)| c * popcount_parity(z & outcome)).sum::<f64>() - offset
                    }
                    Prepared::Frame(_) => unreachable!("exact-frame filters run on the dense backend"),
                })
                .collect();
            out.push(ShotResult { outcome: Some(outcome), values });
        }
        Ok(out)
    }
}

/// Runs the filtered RB protocol and collects per-shot filter values.
pub fn run_protocol(
    e: &Ensemble,
    noise: &NoiseModel,
    spam: &SpamModel,
    filters: &[FilterSpec],
    cfg: &ProtocolConfig,
) -> Result<RBDataset> {
    validate_common(e, noise, spam, cfg)?;
    if filters.is_empty() {
        return Err(Error::Config("filters: need at least one filter".into()));
    }
    let backend = choose_backend(e, noise, spam, filters, cfg.backend)?;
    let n = e.n;
    let group = cfg.group.unwrap_or_else(|| e.group());
    let prepared = prepare_filters(e, group, filters, cfg, backend)?;
    let (rho_noisy, meas) = if backend == Backend::Dense {
        let mut r = basis_state(n, cfg.initial).as_slice().to_vec();
        spam.prep_channel(n, 2)?.apply(&mut r);
        (DVector::from_vec(r), spam.meas_channel(n, 2)?)
    } else {
        (DVector::zeros(0), LayerChannel::Identity)
    };
    let ctx = Context {
        e,
        noise,
        spam,
        n,
        d: (n as f64).exp2(),
        x0: cfg.initial,
        filters: prepared,
        trace_preserving: noise.is_trace_preserving()
            && spam.prep.is_trace_preserving()
            && spam.meas.is_trace_preserving(),
        rho_noisy,
        meas,
    };
    let nc = cfg.shots.circuits();
    let k = cfg.shots.per_circuit();
    let mut points = Vec::with_capacity(cfg.ms.len());
    let mut records = Vec::new();
    for (mi, &m) in cfg.ms.iter().enumerate() {
        let results: Vec<Vec<ShotResult>> = (0..nc)
            .into_par_iter()
            .map(|c| {
                let seed = circuit_seed(cfg.seed, mi, c);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                match backend {
                    Backend::Stabilizer => ctx.stabilizer_circuit(m, k, &mut rng),
                    _ => ctx.dense_circuit(m, k, &mut rng),
                }
            })
            .collect::<Result<_>>()?;
        let mut values = vec![Vec::with_capacity(nc * k); filters.len()];
        for (c, shots) in results.into_iter().enumerate() {
            for s in shots {
                for (fi, v) in s.values.iter().enumerate() {
                    values[fi].push(*v);
                }
                if cfg.keep_records {
                    records.push(ShotRecord {
                        m,
                        circuit: c,
                        seed: circuit_seed(cfg.seed, mi, c),
                        outcome: s.outcome,
                        values: s.values,
                    });
                }
            }
        }
        points.push(SeriesPoint { m, values });
    }
    Ok(RBDataset {
        labels: filters.iter().map(|f| f.label()).collect(),
        n,
        shots: cfg.shots,
        backend,
        points,
        records,
        config_hash: None,
    })
}

// ---------------------------------------------------------------------------
// exact expectations

/// Exact `E[F_λ(m)]` from the second moment operator of the noisy ensemble.
///
/// Supports noise that is fixed per layer branch (everything except gate-dependent
/// dense maps) on registers up to the matrix-free limit of `t = 2` moments.
pub fn expected_signal(
    e: &Ensemble,
    noise: &NoiseModel,
    spam: &SpamModel,
    filter: &FilterSpec,
    initial: u64,
    ms: &[usize],
) -> Result<Vec<f64>> {
    if e.p != 2 {
        return Err(Error::Unsupported("the protocol engine is implemented for qubits".into()));
    }
    let n = e.n;
    let d = (n as f64).exp2();
    let group = e.group();
    let cfg = ProtocolConfig { initial, ..ProtocolConfig::new(ms.to_vec(), Shots::Single(1), 0) };
    let prepared = prepare_filters(e, group, std::slice::from_ref(filter), &cfg, Backend::Dense)?.remove(0);
    let op = NoisyMoment::new(e, noise, 0)?;
    let mut rho = basis_state(n, initial).as_slice().to_vec();
    spam.prep_channel(n, 2)?.apply(&mut rho);
    let meas = spam.meas_channel(n, 2)?;
    let dd = 1usize << (2 * n);
    let z_idx: Vec<usize> = (0..(1u64 << n)).map(|z| ptm_index(n, z, 0)).collect();
    let map = pair_to_site_major(n, 2);
    let vec_for = |v: &DVector<f64>| -> Vec<f64> {
        let mut x = vec![0.0; dd * dd];
        for (a, ra) in rho.iter().enumerate() {
            if *ra != 0.0 {
                for (b, vb) in v.iter().enumerate() {
                    x[map[a * dd + b]] = ra * vb;
                }
            }
        }
        x
    };
    let readout = |x: &[f64]| -> f64 {
        let mut pm = site_major_to_pair(x, n, 2);
        for mut col in pm.column_iter_mut() {
            let mut c: Vec<f64> = col.iter().copied().collect();
            meas.apply(&mut c);
            col.copy_from_slice(&c);
        }
        z_idx.iter().map(|&z| pm[(z, z)]).sum()
    };
    let trivial_vec = {
        let mut v = DVector::zeros(dd);
        v[0] = 1.0 / d.sqrt();
        v
    };
    let run = |v: &DVector<f64>, want: &[usize]| -> Vec<(usize, f64)> {
        let mut x = vec_for(v);
        let mut y = vec![0.0; x.len()];
        let mut out = Vec::new();
        for m in 0..=want.iter().copied().max().unwrap_or(0) {
            if want.contains(&m) {
                out.push((m, readout(&x)));
            }
            op.apply(&x, &mut y);
            std::mem::swap(&mut x, &mut y);
        }
        out
    };
    let lookup = |table: &[(usize, f64)], m: usize| table.iter().find(|t| t.0 == m).map(|t| t.1).unwrap_or(f64::NAN);
    Ok(match prepared {
        Prepared::Trivial => {
            let t = run(&trivial_vec, ms);
            ms.iter().map(|&m| lookup(&t, m)).collect()
        }
        Prepared::Terms { terms, offset } => {
            let t = run(&terms_to_dense(n, &terms), ms);
            let triv = if offset != 0.0 { run(&trivial_vec, ms) } else { Vec::new() };
            ms.iter()
                .map(|&m| {
                    let base = lookup(&t, m);
                    if offset != 0.0 {
                        base - offset * d * lookup(&triv, m)
                    } else {
                        base
                    }
                })
                .collect()
        }
        Prepared::Frame(per_m) => ms.iter().map(|&m| lookup(&run(&per_m[&m], &[m]), m)).collect(),
        Prepared::Adjoint { .. } => unreachable!("dense preparation never uses the shortcut"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::Boundary;

    fn ad() -> FilterSpec {
        FilterSpec::Irrep(IrrepLabel::Adjoint)
    }

    #[test]
    fn parse_labels() {
        assert_eq!(FilterSpec::parse("exact:ad", 2).unwrap(), FilterSpec::ExactFrame(IrrepLabel::Adjoint));
        assert_eq!(FilterSpec::parse("b=01", 2).unwrap(), FilterSpec::Irrep(IrrepLabel::Local(vec![0, 1])));
        assert_eq!(FilterSpec::parse("z=01,x=00", 2).unwrap().label(), "z=01,x=00");
        assert!(FilterSpec::parse("b=011", 2).is_err());
    }

    #[test]
    fn backends_agree_on_noiseless_clifford_circuits() {
        for n in 2..=3 {
            let e = Ensemble::lrc(n, Boundary::Obc, GateSet::CliffordHaar).unwrap();
            let mut cfg = ProtocolConfig::new(vec![1, 3], Shots::Single(200), 5);
            cfg.keep_records = true;
            cfg.initial = 1;
            let lf = vec![ad(), FilterSpec::Trivial];
            cfg.backend = Backend::Dense;
            let a = run_protocol(&e, &NoiseModel::None, &SpamModel::ideal(), &lf, &cfg).unwrap();
            cfg.backend = Backend::Stabilizer;
            let b = run_protocol(&e, &NoiseModel::None, &SpamModel::ideal(), &lf, &cfg).unwrap();
            // outcomes are drawn differently, so compare filter values at equal outcomes
            let mut seen = 0;
            for (ra, rb) in a.records.iter().zip(&b.records) {
                if ra.outcome == rb.outcome {
                    seen += 1;
                    for (x, y) in ra.values.iter().zip(&rb.values) {
                        assert!((x - y).abs() < 1e-12, "{x} vs {y}");
                    }
                }
            }
            assert!(seen > 50);
        }
    }

    #[test]
    fn local_filters_agree_between_backends() {
        let mut e = Ensemble::exact(GroupTag::LocalClifford, 2, 2).unwrap();
        e.dressing = false;
        let filters: Vec<FilterSpec> =
            ["b=00", "b=01", "b=10", "b=11"].iter().map(|s| FilterSpec::parse(s, 2).unwrap()).collect();
        let mut cfg = ProtocolConfig::new(vec![2], Shots::Single(300), 9);
        cfg.keep_records = true;
        cfg.backend = Backend::Dense;
        let a = run_protocol(&e, &NoiseModel::None, &SpamModel::ideal(), &filters, &cfg).unwrap();
        cfg.backend = Backend::Stabilizer;
        let b = run_protocol(&e, &NoiseModel::None, &SpamModel::ideal(), &filters, &cfg).unwrap();
        let mut seen = 0;
        for (ra, rb) in a.records.iter().zip(&b.records) {
            if ra.outcome == rb.outcome {
                seen += 1;
                for (x, y) in ra.values.iter().zip(&rb.values) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
        assert!(seen > 50);
    }

    #[test]
    fn identity_circuit_filter_value() {
        let e = Ensemble::exact(GroupTag::Clifford, 1, 2).unwrap();
        let mut cfg = ProtocolConfig::new(vec![0], Shots::Single(4), 1);
        cfg.keep_records = true;
        let ds = run_protocol(&e, &NoiseModel::None, &SpamModel::ideal(), &[ad()], &cfg).unwrap();
        for r in &ds.records {
            assert_eq!(r.outcome, Some(0));
            assert!((r.values[0] - 1.5).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_gives_scaled_trivial_signal() {
        let e = Ensemble::exact(GroupTag::Unitary, 1, 2).unwrap();
        let noise = NoiseModel::Loss { survival: 0.9 };
        let v = expected_signal(&e, &noise, &SpamModel::ideal(), &FilterSpec::Trivial, 0, &[0, 1, 3]).unwrap();
        for (x, m) in v.iter().zip([0, 1, 3]) {
            assert!((x - 0.9f64.powi(m) / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn expected_signal_lrc_first_layer() {
        let e = Ensemble::lrc(3, Boundary::Obc, GateSet::Haar).unwrap();
        let v = expected_signal(&e, &NoiseModel::None, &SpamModel::ideal(), &ad(), 0, &[1, 200]).unwrap();
        assert!((v[0] - 2.475).abs() < 1e-10, "{v:?}");
        assert!((v[1] - 0.875).abs() < 1e-10, "{v:?}");
    }

    #[test]
    fn seeds_are_distinct() {
        let a = circuit_seed(1, 0, 0);
        assert_ne!(a, circuit_seed(1, 0, 1));
        assert_ne!(a, circuit_seed(1, 1, 0));
        assert_ne!(a, circuit_seed(2, 0, 0));
    }
}
