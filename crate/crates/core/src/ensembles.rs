//! Layer ensembles: local random circuits, brickwork circuits, Clifford-generator circuits
//! and exact group layers.
//!
//! A [`LayerSample`] lists gates in the order they act. For brickwork the even sublayer
//! (0-indexed edges `(1,2), (3,4), ...`) acts before the odd one (`(0,1), (2,3), ...`).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clifford::CliffordTableau;
use crate::error::{Error, Result};
use crate::group::{sample_element, GroupElement, GroupTag};
use crate::haar::haar_unitary;
use crate::local::{apply_local, LocalOp};
use crate::superop::{operator_space_dim, Superop};
use crate::weyl::is_prime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    /// One gate per layer on a random edge.
    Lrc,
    /// Even then odd parallel sublayers on a chain.
    Brickwork,
    /// A uniformly random element of a whole-register group.
    Exact,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    Obc,
    Pbc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateSet {
    /// Haar-random two-qudit unitaries.
    Haar,
    /// Uniform two-qubit Cliffords.
    CliffordHaar,
    /// The Clifford generator set: CX or a tensor product of `{I, S, H}`, then a random Pauli.
    Generators,
}

/// JSON form of an ensemble.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub arch: String,
    pub n: usize,
    #[serde(default = "default_p")]
    pub p: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bc: Option<Boundary>,
    /// `"chain"` (default) or `"complete"`; ignored when `edges` is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gateset: Option<GateSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cx_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<GroupTag>,
    /// Precede every layer by a random single-qubit Clifford on each site.
    #[serde(default)]
    pub local_clifford_dressing: bool,
    #[serde(default)]
    pub symmetrized: bool,
}

fn default_p() -> u32 {
    2
}

pub const DEFAULT_CX_PROB: f64 = 0.35;

#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    pub arch: Architecture,
    pub n: usize,
    pub p: u32,
    pub boundary: Boundary,
    pub edges: Vec<(usize, usize)>,
    pub weights: Vec<f64>,
    pub gateset: GateSet,
    pub cx_prob: f64,
    /// Sampled group for [`Architecture::Exact`].
    pub group: Option<GroupTag>,
    pub dressing: bool,
    pub symmetrized: bool,
}

pub fn chain_edges(n: usize, boundary: Boundary) -> Vec<(usize, usize)> {
    let mut e: Vec<(usize, usize)> = (0..n.saturating_sub(1)).map(|i| (i, i + 1)).collect();
    if boundary == Boundary::Pbc && n > 2 {
        e.push((n - 1, 0));
    }
    e
}

pub fn complete_edges(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

impl Ensemble {
    pub fn lrc(n: usize, boundary: Boundary, gateset: GateSet) -> Result<Self> {
        Self::local_architecture(Architecture::Lrc, n, boundary, gateset)
    }

    pub fn brickwork(n: usize, boundary: Boundary, gateset: GateSet) -> Result<Self> {
        Self::local_architecture(Architecture::Brickwork, n, boundary, gateset)
    }

    fn local_architecture(arch: Architecture, n: usize, boundary: Boundary, gateset: GateSet) -> Result<Self> {
        let edges = chain_edges(n, boundary);
        let m = edges.len();
        let e = Ensemble {
            arch,
            n,
            p: 2,
            boundary,
            edges,
            weights: vec![1.0 / m.max(1) as f64; m],
            gateset,
            cx_prob: DEFAULT_CX_PROB,
            group: None,
            dressing: false,
            symmetrized: false,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn exact(group: GroupTag, n: usize, p: u32) -> Result<Self> {
        let e = Ensemble {
            arch: Architecture::Exact,
            n,
            p,
            boundary: Boundary::Obc,
            edges: Vec::new(),
            weights: Vec::new(),
            gateset: GateSet::Haar,
            cx_prob: DEFAULT_CX_PROB,
            group: Some(group),
            dressing: false,
            symmetrized: false,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn with_local_dimension(mut self, p: u32) -> Result<Self> {
        self.p = p;
        self.validate()?;
        Ok(self)
    }

    /// Replaces the edge set; weights become uniform.
    pub fn with_edges(mut self, edges: Vec<(usize, usize)>) -> Result<Self> {
        self.weights = vec![1.0 / edges.len().max(1) as f64; edges.len()];
        self.edges = edges;
        self.validate()?;
        Ok(self)
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        self.weights = weights;
        self.validate()?;
        Ok(self)
    }

    pub fn with_cx_prob(mut self, q: f64) -> Result<Self> {
        self.cx_prob = q;
        self.validate()?;
        Ok(self)
    }

    pub fn with_dressing(mut self) -> Result<Self> {
        self.dressing = true;
        self.validate()?;
        Ok(self)
    }

    /// The measure of `h^{-1} g` with `g, h` drawn independently.
    pub fn symmetrize(&self) -> Ensemble {
        let mut e = self.clone();
        e.symmetrized = true;
        e
    }

    pub fn from_config(c: &EnsembleConfig) -> Result<Self> {
        let (arch, implied_gates) = match c.arch.as_str() {
            "lrc" => (Architecture::Lrc, None),
            "bw" | "brickwork" => (Architecture::Brickwork, None),
            "generator-lrc" => (Architecture::Lrc, Some(GateSet::Generators)),
            "generator-bw" => (Architecture::Brickwork, Some(GateSet::Generators)),
            "exact" | "exact-haar-group" => (Architecture::Exact, None),
            other => return Err(Error::Config(format!("arch: unknown architecture {other:?}"))),
        };
        let mut e = if arch == Architecture::Exact {
            let g = c.group.unwrap_or(GroupTag::Clifford);
            let mut e = Ensemble::exact(g, c.n, c.p)?;
            e.dressing = c.local_clifford_dressing;
            e
        } else {
            let gateset = match (implied_gates, c.gateset) {
                (Some(a), Some(b)) if a != b => {
                    return Err(Error::Config(format!("gateset: {b:?} conflicts with arch {:?}", c.arch)))
                }
                (Some(a), _) => a,
                (None, Some(b)) => b,
                (None, None) => GateSet::Haar,
            };
            let bc = c.bc.unwrap_or(Boundary::Obc);
            let edges = match (&c.edges, c.graph.as_deref()) {
                (Some(list), _) => list.iter().map(|e| (e[0], e[1])).collect(),
                (None, None | Some("chain")) => chain_edges(c.n, bc),
                (None, Some("complete")) => complete_edges(c.n),
                (None, Some(other)) => return Err(Error::Config(format!("graph: unknown graph {other:?}"))),
            };
            let m = edges.len();

            Ensemble {
                arch,
                n: c.n,
                p: c.p,
                boundary: bc,
                edges,
                weights: c.weights.clone().unwrap_or_else(|| vec![1.0 / m.max(1) as f64; m]),
                gateset,
                cx_prob: c.cx_prob.unwrap_or(DEFAULT_CX_PROB),
                group: None,
                dressing: c.local_clifford_dressing,
                symmetrized: false,
            }
        };
        e.symmetrized = c.symmetrized;
        e.validate()?;
        Ok(e)
    }

    pub fn to_config(&self) -> EnsembleConfig {
        let arch = match (self.arch, self.gateset) {
            (Architecture::Exact, _) => "exact",
            (Architecture::Lrc, GateSet::Generators) => "generator-lrc",
            (Architecture::Brickwork, GateSet::Generators) => "generator-bw",
            (Architecture::Lrc, _) => "lrc",
            (Architecture::Brickwork, _) => "bw",
        };
        let exact = self.arch == Architecture::Exact;
        EnsembleConfig {
            arch: arch.into(),
            n: self.n,
            p: self.p,
            bc: (!exact).then_some(self.boundary),
            graph: None,
            edges: (!exact).then(|| self.edges.iter().map(|&(a, b)| [a, b]).collect()),
            weights: (!exact).then(|| self.weights.clone()),
            gateset: (!exact).then_some(self.gateset),
            cx_prob: (self.gateset == GateSet::Generators && !exact).then_some(self.cx_prob),
            group: self.group,
            local_clifford_dressing: self.dressing,
            symmetrized: self.symmetrized,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !is_prime(self.p) {
            return Err(Error::Config(format!("p: {} is not prime", self.p)));
        }
        if self.n == 0 {
            return Err(Error::Config("n: need at least one qudit".into()));
        }
        if self.dressing && self.p != 2 {
            return Err(Error::Config("local_clifford_dressing: qubits only".into()));
        }
        match self.arch {
            Architecture::Exact => {
                let g = self.group.ok_or_else(|| Error::Config("group: required for exact ensembles".into()))?;
                if matches!(g, GroupTag::Clifford | GroupTag::LocalClifford) && self.p != 2 {
                    return Err(Error::Config("group: Clifford groups are implemented for qubits only".into()));
                }
            }
            Architecture::Lrc | Architecture::Brickwork => {
                if self.n < 2 {
                    return Err(Error::Config("n: local circuits need at least two sites".into()));
                }
                if self.edges.is_empty() {
                    return Err(Error::Config("edges: empty edge set".into()));
                }
                for &(a, b) in &self.edges {
                    if a >= self.n || b >= self.n || a == b {
                        return Err(Error::Config(format!("edges: invalid edge ({a}, {b})")));
                    }
                }
                if self.weights.len() != self.edges.len() {
                    return Err(Error::Config("weights: one weight per edge required".into()));
                }
                if self.weights.iter().any(|&w| !(w >= 0.0)) || (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err(Error::Config("weights: must be non-negative and sum to 1".into()));
                }
                if self.gateset != GateSet::Haar && self.p != 2 {
                    return Err(Error::Config("gateset: Clifford gates are implemented for qubits only".into()));
                }
                if !(0.0..=1.0).contains(&self.cx_prob) {
                    return Err(Error::Config(format!("cx_prob: {} outside [0, 1]", self.cx_prob)));
                }
                if self.arch == Architecture::Brickwork {
                    self.brickwork_layers()?;
                }
            }
        }
        Ok(())
    }

    /// The group generated by the ensemble's support.
    pub fn group(&self) -> GroupTag {
        match self.arch {
            Architecture::Exact => self.group.expect("validated"),
            _ => match self.gateset {
                GateSet::Haar => GroupTag::Unitary,
                _ => GroupTag::Clifford,
            },
        }
    }

    /// Whether `g -> g h` leaves the measure invariant for every local Clifford `h`.
    pub fn is_right_local_clifford_invariant(&self) -> bool {
        if self.symmetrized {
            return false;
        }
        self.dressing || (self.arch == Architecture::Exact && self.group != Some(GroupTag::HeisenbergWeyl))
    }

    /// `(even, odd)` sublayers of a brickwork ensemble.
    pub fn brickwork_layers(&self) -> Result<(Vec<(usize, usize)>, Vec<(usize, usize)>)> {
        let expected = chain_edges(self.n, self.boundary);
        if self.edges != expected {
            return Err(Error::Config("edges: brickwork requires a chain".into()));
        }
        if self.boundary == Boundary::Pbc && self.n % 2 == 1 {
            return Err(Error::Config("bc: periodic brickwork needs an even number of sites".into()));
        }
        let even = self.edges.iter().copied().filter(|e| e.0 % 2 == 1).collect();
        let odd = self.edges.iter().copied().filter(|e| e.0 % 2 == 0).collect();
        Ok((even, odd))
    }

    pub fn sample_layer<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<LayerSample> {
        let g = self.sample_raw(rng)?;
        if !self.symmetrized {
            return Ok(g);
        }
        let h = self.sample_raw(rng)?;
        Ok(g.then(&h.inverse()))
    }

    fn sample_raw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<LayerSample> {
        let mut gates = Vec::new();
        if self.dressing {
            for j in 0..self.n {
                gates.push(Gate { sites: vec![j], element: GroupElement::Clifford(CliffordTableau::random(1, rng)) });
            }
        }
        match self.arch {
            Architecture::Exact => {
                let g = sample_element(self.group(), self.n, self.p, rng)?;
                gates.push(Gate { sites: (0..self.n).collect(), element: g });
            }
            Architecture::Lrc => {
                let k = pick(&self.weights, rng);
                let (a, b) = self.edges[k];
                gates.push(Gate { sites: vec![a, b], element: self.sample_gate(rng) });
            }
            Architecture::Brickwork => {
                let (even, odd) = self.brickwork_layers()?;
                for (a, b) in even.into_iter().chain(odd) {
                    gates.push(Gate { sites: vec![a, b], element: self.sample_gate(rng) });
                }
            }
        }
        Ok(LayerSample { n: self.n, p: self.p, gates })
    }

    fn sample_gate<R: Rng + ?Sized>(&self, rng: &mut R) -> GroupElement {
        match self.gateset {
            GateSet::Haar => {
                let d = (self.p * self.p) as usize;
                GroupElement::Unitary { n: 2, p: self.p, u: haar_unitary(d, rng) }
            }
            GateSet::CliffordHaar => GroupElement::Clifford(CliffordTableau::random(2, rng)),
            GateSet::Generators => GroupElement::Clifford(sample_generator(self.cx_prob, rng)),
        }
    }
}

fn pick<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

fn single_qubit_generators() -> [CliffordTableau; 3] {
    [CliffordTableau::identity(1), CliffordTableau::phase(1, 0), CliffordTableau::hadamard(1, 0)]
}

/// The Clifford generator measure as `(probability, element)` pairs (160 entries).
pub fn generator_set(cx_prob: f64) -> Vec<(f64, CliffordTableau)> {
    let singles = single_qubit_generators();
    let mut base = vec![(cx_prob, CliffordTableau::cx(2, 0, 1))];
    for a in &singles {
        for b in &singles {
            base.push(((1.0 - cx_prob) / 9.0, a.tensor(b)));
        }
    }
    let mut out = Vec::with_capacity(160);
    for (w, u) in &base {
        for pz in 0..4u64 {
            for px in 0..4u64 {
                out.push((w / 16.0, CliffordTableau::pauli(2, pz, px).compose(u)));
            }
        }
    }
    out
}

pub fn sample_generator<R: Rng + ?Sized>(cx_prob: f64, rng: &mut R) -> CliffordTableau {
    let u = if rng.random::<f64>() < cx_prob {
        CliffordTableau::cx(2, 0, 1)
    } else {
        let singles = single_qubit_generators();
        let a = &singles[rng.random_range(0..3)];
        let b = &singles[rng.random_range(0..3)];
        a.tensor(b)
    };
    CliffordTableau::pauli(2, rng.random_range(0..4), rng.random_range(0..4)).compose(&u)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gate {
    pub sites: Vec<usize>,
    pub element: GroupElement,
}

impl Gate {
    pub fn inverse(&self) -> Gate {
        Gate { sites: self.sites.clone(), element: self.element.inverse() }
    }

    pub fn local_superop(&self) -> Superop {
        self.element.to_superop()
    }
}

/// One draw from an ensemble; gates act in list order.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSample {
    pub n: usize,
    pub p: u32,
    pub gates: Vec<Gate>,
}

impl LayerSample {
    pub fn identity(n: usize, p: u32) -> Self {
        LayerSample { n, p, gates: Vec::new() }
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &LayerSample) -> LayerSample {
        let mut gates = self.gates.clone();
        gates.extend(next.gates.iter().cloned());
        LayerSample { n: self.n, p: self.p, gates }
    }

    pub fn inverse(&self) -> LayerSample {
        LayerSample { n: self.n, p: self.p, gates: self.gates.iter().rev().map(|g| g.inverse()).collect() }
    }

    pub fn is_clifford(&self) -> bool {
        self.gates.iter().all(|g| element_is_clifford(&g.element))
    }

    /// Whole-register tableau, when every gate is Clifford or Pauli.
    pub fn clifford(&self) -> Option<CliffordTableau> {
        let mut acc = CliffordTableau::identity(self.n);
        for g in &self.gates {
            let t = element_tableau(&g.element)?.embed(self.n, &g.sites).ok()?;
            acc = t.compose(&acc);
        }
        Some(acc)
    }

    /// Applies the layer's superoperator to a coordinate vector.
    pub fn apply_superop(&self, v: &[f64]) -> Vec<f64> {
        let d = (self.p * self.p) as usize;
        let mut cur = v.to_vec();
        let mut next = vec![0.0; v.len()];
        for g in &self.gates {
            let op = LocalOp::Dense(g.local_superop().into_matrix());
            apply_local(&cur, &mut next, self.n, d, &g.sites, &op);
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Applies the transpose (equivalently the inverse) of the layer's superoperator.
    pub fn apply_superop_transpose(&self, v: &[f64]) -> Vec<f64> {
        self.inverse().apply_superop(v)
    }

    pub fn to_superop(&self) -> Superop {
        let dim = operator_space_dim(self.n, self.p);
        let mut m = nalgebra::DMatrix::zeros(dim, dim);
        let mut e = vec![0.0; dim];
        for j in 0..dim {
            e[j] = 1.0;
            let col = self.apply_superop(&e);
            m.column_mut(j).copy_from_slice(&col);
            e[j] = 0.0;
        }
        Superop::new(self.n, self.p, m).expect("dimension is consistent")
    }
}

fn element_is_clifford(g: &GroupElement) -> bool {
    match g {
        GroupElement::Clifford(_) => true,
        GroupElement::Weyl(a) => a.p() == 2,
        GroupElement::Unitary { .. } => false,
        GroupElement::LocalProduct(v) => v.iter().all(element_is_clifford),
    }
}

fn element_tableau(g: &GroupElement) -> Option<CliffordTableau> {
    match g {
        GroupElement::Clifford(t) => Some(t.clone()),
        GroupElement::Weyl(a) if a.p() == 2 => {
            let (z, x) = a.masks();
            Some(CliffordTableau::pauli(a.n(), z, x))
        }
        GroupElement::LocalProduct(v) => {
            let mut it = v.iter();
            let first = element_tableau(it.next()?)?;
            it.try_fold(first, |acc, g| Some(acc.tensor(&element_tableau(g)?)))
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn brickwork_sublayer_order() {
        let e = Ensemble::brickwork(4, Boundary::Obc, GateSet::Haar).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let s = e.sample_layer(&mut rng).unwrap();
            let sites: Vec<Vec<usize>> = s.gates.iter().map(|g| g.sites.clone()).collect();
            assert_eq!(sites, vec![vec![1, 2], vec![0, 1], vec![2, 3]]);
        }
    }

    #[test]
    fn generator_set_is_a_probability_measure() {
        let g = generator_set(0.35);
        assert_eq!(g.len(), 160);
        assert!((g.iter().map(|x| x.0).sum::<f64>() - 1.0).abs() < 1e-12);
        for (_, t) in &g {
            t.validate().unwrap();
        }
    }

    #[test]
    fn layer_superop_matches_product_of_gates() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let e = Ensemble::brickwork(3, Boundary::Obc, GateSet::CliffordHaar).unwrap();
        let s = e.sample_layer(&mut rng).unwrap();
        let dense = s.to_superop();
        let via_tableau = s.clifford().unwrap().to_superop();
        assert!((dense.matrix() - via_tableau.matrix()).norm() < 1e-10);
        let inv = s.inverse().to_superop();
        let id = dense.compose(&inv).unwrap();
        assert!((id.matrix() - Superop::identity(3, 2).matrix()).norm() < 1e-10);
    }

    #[test]
    fn config_roundtrip() {
        let json = r#"{"arch":"generator-lrc","n":4,"bc":"pbc","cx_prob":0.3}"#;
        let c: EnsembleConfig = serde_json::from_str(json).unwrap();
        let e = Ensemble::from_config(&c).unwrap();
        assert_eq!(e.edges.len(), 4);
        assert_eq!(e.gateset, GateSet::Generators);
        let back = Ensemble::from_config(&e.to_config()).unwrap();
        assert_eq!(back, e);
        let bad: EnsembleConfig = serde_json::from_str(r#"{"arch":"bw","n":3,"bc":"pbc"}"#).unwrap();
        assert!(Ensemble::from_config(&bad).is_err());
    }
}
