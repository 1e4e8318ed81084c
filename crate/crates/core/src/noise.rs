//! Implementation maps `phi(g) = N(g) omega(g)` and SPAM channels.
//!
//! Noise acts after every layer drawn from the ensemble. Pauli and depolarizing models
//! have both a transfer-matrix form and a stochastic unravelling used by the stabilizer
//! backend.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clifford::symplectic;
use crate::ensembles::LayerSample;
use crate::error::{Error, Result};
use crate::superop::{operator_space_dim, Superop};
use crate::weyl::{from_coords, operator_basis, WeylLabel};

/// Joint Pauli error distribution on a few qubits; `probs` is indexed by the local
/// transfer-matrix label (site-major codes `I, X, Z, Y`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PauliTable {
    pub sites: Vec<usize>,
    pub probs: Vec<f64>,
}

/// Independent single-qubit Pauli errors plus optional correlated tables.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PauliNoise {
    /// `[p_X, p_Y, p_Z]` for qubits not touched by a gate in the layer.
    pub rates: Vec<[f64; 3]>,
    /// Rates for qubits touched by a gate; defaults to `rates`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate_rates: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub correlated: Vec<PauliTable>,
}

type GateMap = Arc<dyn Fn(&LayerSample) -> Superop + Send + Sync>;

#[derive(Clone, Default)]
pub enum NoiseModel {
    #[default]
    None,
    /// Global depolarizing `X -> f X + (1 - f) tr(X) 1/d` after every layer.
    Depolarizing {
        f: f64,
    },
    /// `X -> s X`: uniform loss of the surviving population.
    Loss {
        survival: f64,
    },
    Pauli(PauliNoise),
    GateIndependent(Superop),
    /// Arbitrary channel chosen from the sampled layer.
    GateDependent(GateMap),
}

impl fmt::Debug for NoiseModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseModel::None => write!(f, "None"),
            NoiseModel::Depolarizing { f: x } => write!(f, "Depolarizing {{ f: {x} }}"),
            NoiseModel::Loss { survival } => write!(f, "Loss {{ survival: {survival} }}"),
            NoiseModel::Pauli(p) => write!(f, "Pauli({p:?})"),
            NoiseModel::GateIndependent(s) => write!(f, "GateIndependent({}x{})", s.dim(), s.dim()),
            NoiseModel::GateDependent(_) => write!(f, "GateDependent(..)"),
        }
    }
}

/// JSON form of a noise model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
#[derive(Default)]
pub enum NoiseConfig {
    #[default]
    None,
    Depolarizing {
        f: f64,
    },
    /// Single-qubit depolarizing `X -> (1 - eps) X + eps tr(X) 1/2` on every qubit.
    LocalDepolarizing {
        eps: f64,
    },
    LocalPauli {
        rates: Vec<[f64; 3]>,
        #[serde(default)]
        gate_rates: Option<Vec<[f64; 3]>>,
        #[serde(default)]
        correlated: Vec<PauliTable>,
    },
    Loss {
        survival: f64,
    },
}

impl NoiseConfig {
    pub fn build(&self, n: usize, p: u32) -> Result<NoiseModel> {
        let model = match self {
            NoiseConfig::None => NoiseModel::None,
            NoiseConfig::Depolarizing { f } => NoiseModel::Depolarizing { f: *f },
            NoiseConfig::LocalDepolarizing { eps } => NoiseModel::Pauli(PauliNoise {
                rates: vec![[eps / 4.0; 3]; n],
                gate_rates: None,
                correlated: Vec::new(),
            }),
            NoiseConfig::LocalPauli { rates, gate_rates, correlated } => NoiseModel::Pauli(PauliNoise {
                rates: rates.clone(),
                gate_rates: gate_rates.clone(),
                correlated: correlated.clone(),
            }),
            NoiseConfig::Loss { survival } => NoiseModel::Loss { survival: *survival },
        };
        model.validate(n, p)?;
        Ok(model)
    }
}

/// The error channel attached to one layer.
#[derive(Clone, Debug)]
pub enum LayerChannel {
    Identity,
    /// Diagonal transfer matrix.
    Diagonal(Vec<f64>),
    Dense(Superop),
}

impl LayerChannel {
    pub fn apply(&self, v: &mut [f64]) {
        match self {
            LayerChannel::Identity => {}
            LayerChannel::Diagonal(d) => v.iter_mut().zip(d).for_each(|(x, s)| *x *= s),
            LayerChannel::Dense(s) => {
                let out = s.matrix() * DVector::from_column_slice(v);
                v.copy_from_slice(out.as_slice());
            }
        }
    }

    pub fn to_superop(&self, n: usize, p: u32) -> Superop {
        match self {
            LayerChannel::Identity => Superop::identity(n, p),
            LayerChannel::Diagonal(d) => Superop::from_diagonal(n, p, d).expect("dimension is consistent"),
            LayerChannel::Dense(s) => s.clone(),
        }
    }
}

fn site_eigenvalue(rates: &[f64; 3], code: usize) -> f64 {
    // codes: 0 = I, 1 = X, 2 = Z, 3 = Y; rates are [X, Y, Z]
    let px = rates[0];
    let py = rates[1];
    let pz = rates[2];
    match code {
        0 => 1.0,
        1 => 1.0 - 2.0 * (py + pz),
        2 => 1.0 - 2.0 * (px + py),
        _ => 1.0 - 2.0 * (px + pz),
    }
}

fn code_masks(code: usize) -> (u64, u64) {
    ((code >> 1) as u64 & 1, code as u64 & 1)
}

impl PauliNoise {
    fn rates_for(&self, site: usize, touched: bool) -> [f64; 3] {
        match (&self.gate_rates, touched) {
            (Some(g), true) => g[site],
            _ => self.rates[site],
        }
    }

    /// Diagonal of the transfer matrix, given the qubits touched by gates.
    pub fn diagonal(&self, n: usize, touched: &[usize]) -> Vec<f64> {
        let dim = operator_space_dim(n, 2);
        let site_rates: Vec<[f64; 3]> = (0..n).map(|s| self.rates_for(s, touched.contains(&s))).collect();
        (0..dim)
            .map(|idx| {
                let mut v = 1.0;
                for (s, r) in site_rates.iter().enumerate() {
                    let code = (idx >> (2 * (n - 1 - s))) & 3;
                    v *= site_eigenvalue(r, code);
                }
                for t in &self.correlated {
                    let k = t.sites.len();
                    let (mut bz, mut bx) = (0u64, 0u64);
                    for (i, &s) in t.sites.iter().enumerate() {
                        let (z, x) = code_masks((idx >> (2 * (n - 1 - s))) & 3);
                        bz |= z << (k - 1 - i);
                        bx |= x << (k - 1 - i);
                    }
                    let mut e = 0.0;
                    for (q, &pq) in t.probs.iter().enumerate() {
                        let (mut qz, mut qx) = (0u64, 0u64);
                        for i in 0..k {
                            let (z, x) = code_masks((q >> (2 * (k - 1 - i))) & 3);
                            qz |= z << (k - 1 - i);
                            qx |= x << (k - 1 - i);
                        }
                        e += if symplectic(qz, qx, bz, bx) == 0 { pq } else { -pq };
                    }
                    v *= e;
                }
                v
            })
            .collect()
    }

    fn validate(&self, n: usize) -> Result<()> {
        let check = |name: &str, r: &[[f64; 3]]| -> Result<()> {
            if r.len() != n {
                return Err(Error::Config(format!("{name}: expected {n} entries, got {}", r.len())));
            }
            for (i, x) in r.iter().enumerate() {
                if x.iter().any(|&v| !(v >= 0.0)) || x.iter().sum::<f64>() > 1.0 + 1e-12 {
                    return Err(Error::Config(format!("{name}[{i}]: rates must be non-negative with sum <= 1")));
                }
            }
            Ok(())
        };
        check("rates", &self.rates)?;
        if let Some(g) = &self.gate_rates {
            check("gate_rates", g)?;
        }
        for (i, t) in self.correlated.iter().enumerate() {
            let k = t.sites.len();
            if k == 0 || t.sites.iter().any(|&s| s >= n) || t.probs.len() != 1 << (2 * k) {
                return Err(Error::Config(format!("correlated[{i}]: needs valid sites and 4^k probabilities")));
            }
            if t.probs.iter().any(|&v| !(v >= 0.0)) || (t.probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("correlated[{i}]: probabilities must form a distribution")));
            }
        }
        Ok(())
    }

    /// Sampled errors as `n`-qubit `(z, x)` masks; identity draws are omitted.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, touched: &[usize], rng: &mut R) -> Vec<(u64, u64)> {
        let mut out = Vec::new();
        for s in 0..n {
            let r = self.rates_for(s, touched.contains(&s));
            let u: f64 = rng.random();
            let bit = 1u64 << (n - 1 - s);
            let e = if u < r[0] {
                (0, bit)
            } else if u < r[0] + r[1] {
                (bit, bit)
            } else if u < r[0] + r[1] + r[2] {
                (bit, 0)
            } else {
                continue;
            };
            out.push(e);
        }
        for t in &self.correlated {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = t.probs.len() - 1;
            for (q, &pq) in t.probs.iter().enumerate() {
                acc += pq;
                if u < acc {
                    pick = q;
                    break;
                }
            }
            if pick == 0 {
                continue;
            }
            let k = t.sites.len();
            let (mut z, mut x) = (0u64, 0u64);
            for (i, &s) in t.sites.iter().enumerate() {
                let (cz, cx) = code_masks((pick >> (2 * (k - 1 - i))) & 3);
                z |= cz << (n - 1 - s);
                x |= cx << (n - 1 - s);
            }
            out.push((z, x));
        }
        out
    }
}

/// Operator `E^dagger(1)` whose eigenvalues must not exceed one for a trace non-increasing map.
fn dual_of_identity(s: &Superop) -> DMatrix<num_complex::Complex64> {
    let d = s.hilbert_dim() as f64;
    let mut e0 = DVector::zeros(s.dim());
    e0[0] = d.sqrt();
    let coords = s.matrix().transpose() * e0;
    from_coords(coords.as_slice(), &operator_basis(s.n(), s.p()))
}

/// Complete positivity and trace non-increase, to the given tolerance.
pub fn check_channel(s: &Superop, tol: f64) -> Result<()> {
    let min = s.min_choi_eigenvalue();
    if min < -tol {
        return Err(Error::Config(format!("channel is not completely positive (Choi eigenvalue {min:.3e})")));
    }
    let dual = dual_of_identity(s);
    let herm = (&dual + dual.adjoint()) * num_complex::Complex64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(herm);
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max > 1.0 + tol {
        return Err(Error::Config(format!("channel increases trace (largest eigenvalue of E^dagger(1) is {max})")));
    }
    Ok(())
}

impl NoiseModel {
    pub fn validate(&self, n: usize, p: u32) -> Result<()> {
        let d2 = (p as f64).powi(2 * n as i32);
        match self {
            NoiseModel::None => Ok(()),
            NoiseModel::Depolarizing { f } => {
                if *f > 1.0 || *f < -1.0 / (d2 - 1.0) {
                    return Err(Error::Config(format!("f: {f} is outside the completely positive range")));
                }
                Ok(())
            }
            NoiseModel::Loss { survival } => {
                if !(0.0..=1.0).contains(survival) {
                    return Err(Error::Config(format!("survival: {survival} outside [0, 1]")));
                }
                Ok(())
            }
            NoiseModel::Pauli(pn) => {
                if p != 2 {
                    return Err(Error::Config("Pauli noise is defined for qubits".into()));
                }
                pn.validate(n)
            }
            NoiseModel::GateIndependent(s) => {
                if s.n() != n || s.p() != p {
                    return Err(Error::Dimension("noise channel does not match the register".into()));
                }
                check_channel(s, 1e-10)
            }
            NoiseModel::GateDependent(_) => Ok(()),
        }
    }

    pub fn is_noiseless(&self) -> bool {
        match self {
            NoiseModel::None => true,
            NoiseModel::Depolarizing { f } => *f == 1.0,
            NoiseModel::Loss { survival } => *survival == 1.0,
            NoiseModel::Pauli(pn) => {
                pn.rates.iter().chain(pn.gate_rates.iter().flatten()).all(|r| r.iter().all(|&v| v == 0.0))
                    && pn.correlated.iter().all(|t| t.probs[0] == 1.0)
            }
            _ => false,
        }
    }

    /// Whether the stabilizer backend can unravel the model into Pauli insertions.
    pub fn is_pauli(&self) -> bool {
        match self {
            NoiseModel::None | NoiseModel::Pauli(_) => true,
            NoiseModel::Depolarizing { f } => (0.0..=1.0).contains(f),
            _ => false,
        }
    }

    pub fn is_trace_preserving(&self) -> bool {
        match self {
            NoiseModel::Loss { survival } => *survival == 1.0,
            NoiseModel::GateIndependent(s) => {
                let row = s.matrix().row(0);
                (row[0] - 1.0).abs() < 1e-10 && row.iter().skip(1).all(|v| v.abs() < 1e-10)
            }
            NoiseModel::GateDependent(_) => false,
            _ => true,
        }
    }

    /// Error channel for a layer whose gates touch `touched`; not available for
    /// gate-dependent dense models.
    pub fn channel_for_sites(&self, n: usize, p: u32, touched: &[usize]) -> Result<LayerChannel> {
        let dim = operator_space_dim(n, p);
        Ok(match self {
            NoiseModel::None => LayerChannel::Identity,
            NoiseModel::Depolarizing { f } => {
                LayerChannel::Diagonal((0..dim).map(|i| if i == 0 { 1.0 } else { *f }).collect())
            }
            NoiseModel::Loss { survival } => LayerChannel::Diagonal(vec![*survival; dim]),
            NoiseModel::Pauli(pn) => LayerChannel::Diagonal(pn.diagonal(n, touched)),
            NoiseModel::GateIndependent(s) => LayerChannel::Dense(s.clone()),
            NoiseModel::GateDependent(_) => {
                return Err(Error::Unsupported("gate-dependent channel needs the sampled layer".into()))
            }
        })
    }

    pub fn channel_for(&self, layer: &LayerSample) -> Result<LayerChannel> {
        if let NoiseModel::GateDependent(f) = self {
            let s = f(layer);
            check_channel(&s, 1e-10)?;
            return Ok(LayerChannel::Dense(s));
        }
        self.channel_for_sites(layer.n, layer.p, &touched_sites(layer))
    }
}

pub fn touched_sites(layer: &LayerSample) -> Vec<usize> {
    let mut t: Vec<usize> = layer.gates.iter().filter(|g| g.sites.len() > 1).flat_map(|g| g.sites.clone()).collect();
    t.sort_unstable();
    t.dedup();
    t
}

/// `phi(g) = N(g) omega(g)` for one layer.
pub fn apply_noise(model: &NoiseModel, layer: &LayerSample) -> Result<Superop> {
    let w = layer.to_superop();
    let ch = model.channel_for(layer)?.to_superop(layer.n, layer.p);
    ch.compose(&w)
}

/// Pauli insertions after one layer whose average reproduces the model's channel.
pub fn pauli_trajectory<R: Rng + ?Sized>(
    model: &NoiseModel,
    layer: &LayerSample,
    rng: &mut R,
) -> Result<Vec<WeylLabel>> {
    let n = layer.n;
    let masks = match model {
        NoiseModel::None => Vec::new(),
        NoiseModel::Pauli(pn) => pn.sample(n, &touched_sites(layer), rng),
        NoiseModel::Depolarizing { f } if (0.0..=1.0).contains(f) => {
            if rng.random::<f64>() < 1.0 - f {
                let full = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
                let z = rng.random::<u64>() & full;
                let x = rng.random::<u64>() & full;
                if z | x != 0 {
                    vec![(z, x)]
                } else {
                    Vec::new()
                }
            } else {
                Vec::new()
            }
        }
        other => return Err(Error::Unsupported(format!("{other:?} has no Pauli unravelling"))),
    };
    Ok(masks.into_iter().map(|(z, x)| WeylLabel::from_masks(n, z, x)).collect())
}

/// State-preparation and measurement channels.
#[derive(Clone, Debug, Default)]
pub struct SpamModel {
    pub prep: NoiseModel,
    pub meas: NoiseModel,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpamConfig {
    #[serde(default)]
    pub prep: NoiseConfig,
    #[serde(default)]
    pub meas: NoiseConfig,
}

impl SpamConfig {
    pub fn build(&self, n: usize, p: u32) -> Result<SpamModel> {
        let s = SpamModel { prep: self.prep.build(n, p)?, meas: self.meas.build(n, p)? };
        Ok(s)
    }
}

impl SpamModel {
    pub fn ideal() -> Self {
        SpamModel::default()
    }

    /// Global depolarizing with parameter `q` on both sides.
    pub fn depolarizing(q: f64) -> Self {
        SpamModel { prep: NoiseModel::Depolarizing { f: q }, meas: NoiseModel::Depolarizing { f: q } }
    }

    pub fn validate(&self, n: usize, p: u32) -> Result<()> {
        for (name, m) in [("prep", &self.prep), ("meas", &self.meas)] {
            if matches!(m, NoiseModel::GateDependent(_)) {
                return Err(Error::Config(format!("{name}: SPAM channels cannot depend on gates")));
            }
            m.validate(n, p)?;
        }
        if let NoiseModel::GateIndependent(s) = &self.meas {
            check_channel(&s.transpose(), 1e-10)
                .map_err(|e| Error::Config(format!("meas: adjoint is not a valid channel ({e})")))?;
        }
        Ok(())
    }

    pub fn prep_channel(&self, n: usize, p: u32) -> Result<LayerChannel> {
        self.prep.channel_for_sites(n, p, &[])
    }

    pub fn meas_channel(&self, n: usize, p: u32) -> Result<LayerChannel> {
        self.meas.channel_for_sites(n, p, &[])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clifford::{dense, CliffordTableau};
    use crate::ensembles::Gate;
    use crate::group::GroupElement;
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cx_layer() -> LayerSample {
        LayerSample {
            n: 2,
            p: 2,
            gates: vec![Gate { sites: vec![0, 1], element: GroupElement::Clifford(CliffordTableau::cx(2, 0, 1)) }],
        }
    }

    #[test]
    fn x_flip_after_cx_matches_kraus() {
        let q = 0.13;
        let model = NoiseModel::Pauli(PauliNoise { rates: vec![[q, 0.0, 0.0], [0.0; 3]], ..Default::default() });
        let got = apply_noise(&model, &cx_layer()).unwrap();
        let x1 = dense::embed(
            2,
            &[0],
            &DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]).map(|v| Complex64::new(v, 0.0)),
        );
        let id = DMatrix::<Complex64>::identity(4, 4);
        let u = dense::cx();
        let kraus = vec![&id * &u * Complex64::new((1.0 - q).sqrt(), 0.0), &x1 * &u * Complex64::new(q.sqrt(), 0.0)];
        let want = Superop::from_kraus(2, 2, &kraus).unwrap();
        assert!((got.matrix() - want.matrix()).norm() < 1e-12);
    }

    #[test]
    fn depolarizing_is_diagonal_composition() {
        let got = apply_noise(&NoiseModel::Depolarizing { f: 0.9 }, &cx_layer()).unwrap();
        let want = crate::states::depolarizing(2, 2, 0.9).compose(&cx_layer().to_superop()).unwrap();
        assert!((got.matrix() - want.matrix()).norm() < 1e-12);
    }

    #[test]
    fn channel_checks_reject_non_cp_maps() {
        let bad = Superop::from_diagonal(1, 2, &[1.0, -1.0, -1.0, -1.0]).unwrap();
        assert!(check_channel(&bad, 1e-10).is_err());
        let gain = Superop::from_diagonal(1, 2, &[1.2, 0.0, 0.0, 0.0]).unwrap();
        assert!(check_channel(&gain, 1e-10).is_err());
        assert!(check_channel(&crate::states::depolarizing(1, 2, 0.5), 1e-10).is_ok());
    }

    #[test]
    fn zero_rates_never_insert() {
        let model = NoiseModel::Pauli(PauliNoise { rates: vec![[0.0; 3]; 2], ..Default::default() });
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            assert!(pauli_trajectory(&model, &cx_layer(), &mut rng).unwrap().is_empty());
        }
    }
}
