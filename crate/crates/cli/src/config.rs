//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use frb_core::ensembles::{Ensemble, EnsembleConfig};
use frb_core::noise::{NoiseConfig, NoiseModel, SpamConfig, SpamModel};
use frb_core::rb_engine::{Backend, FilterSpec, ProtocolConfig, Shots};
use frb_core::GroupTag;

use crate::output::{config_hash, input, read_file, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ShotsConfig {
    Single(usize),
    Multi { circuits: usize, per_circuit: usize },
}

impl ShotsConfig {
    pub fn to_shots(self) -> Shots {
        match self {
            ShotsConfig::Single(n) => Shots::Single(n),
            ShotsConfig::Multi { circuits, per_circuit } => Shots::Multi { circuits, per_circuit },
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub csv: Option<PathBuf>,
    #[serde(default)]
    pub jsonl: Option<PathBuf>,
}

fn default_filters() -> Vec<String> {
    vec!["ad".into()]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub spam: SpamConfig,
    /// Group whose frame defines the filters; defaults to the ensemble's group.
    #[serde(default)]
    pub group: Option<GroupTag>,
    #[serde(default = "default_filters")]
    pub filters: Vec<String>,
    pub ms: Vec<usize>,
    /// Sequence length 0 is only accepted when set.
    #[serde(default)]
    pub include_m0: bool,
    pub shots: ShotsConfig,
    #[serde(default)]
    pub backend: Backend,
    #[serde(default)]
    pub seed: u64,
    /// Prepared basis state as an integer bitmask.
    #[serde(default)]
    pub initial: u64,
    /// Not part of the hash.
    #[serde(default, skip_serializing)]
    pub output: OutputConfig,
}

/// Everything needed to run one experiment.
pub struct Experiment {
    pub ensemble: Ensemble,
    pub noise: NoiseModel,
    pub spam: SpamModel,
    pub filters: Vec<FilterSpec>,
    pub protocol: ProtocolConfig,
    pub hash: String,
}

pub fn parse_config(text: &[u8], origin: &Path) -> CliResult<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_slice(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        input(format!("{}: {path}: {}", origin.display(), e.into_inner()))
    })
}

pub fn load(path: &Path) -> CliResult<ExperimentConfig> {
    parse_config(&read_file(path)?, path)
}

impl ExperimentConfig {
    pub fn validate(&self) -> CliResult<()> {
        if self.ms.is_empty() {
            return Err(input("ms: need at least one sequence length"));
        }
        if !self.include_m0 && self.ms.contains(&0) {
            return Err(input("ms: sequence length 0 requires include_m0"));
        }
        let ok = match self.shots {
            ShotsConfig::Single(n) => n > 0,
            ShotsConfig::Multi { circuits, per_circuit } => circuits > 0 && per_circuit > 0,
        };
        if !ok {
            return Err(input("shots: must be positive"));
        }
        if self.filters.is_empty() {
            return Err(input("filters: need at least one filter"));
        }
        Ok(())
    }

    pub fn build(self) -> CliResult<Experiment> {
        self.validate()?;
        let ensemble = Ensemble::from_config(&self.ensemble)?;
        let (n, p) = (ensemble.n, ensemble.p);
        let noise = self.noise.build(n, p)?;
        let spam = self.spam.build(n, p)?;
        let filters = self.filters.iter().map(|f| FilterSpec::parse(f, n)).collect::<frb_core::Result<Vec<_>>>()?;
        let mut protocol = ProtocolConfig::new(self.ms.clone(), self.shots.to_shots(), self.seed);
        protocol.backend = self.backend;
        protocol.initial = self.initial;
        protocol.group = self.group;
        let hash = config_hash(&self);
        Ok(Experiment { ensemble, noise, spam, filters, protocol, hash })
    }
}
