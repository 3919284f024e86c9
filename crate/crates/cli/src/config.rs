//! TOML configuration schema. Every table rejects unknown keys.

use monosem::experiments::{ConsistencyConfig, Fig4Config, Fig7cConfig, FewShotConfig, MonoLoraExperimentConfig, SaeExperimentConfig};
use monosem::sweep::{GridSpec, ProbeCellConfig};
use monosem::{FeatureKind, TrainConfig, ToyVariant};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub global: GlobalConfig,
    pub theory: TheoryConfig,
    pub mc: McSection,
    pub toy_train: ToyTrainConfig,
    pub probe: ProbeSection,
    pub sae: SaeExperimentConfig,
    pub ncl: ConsistencyConfig,
    pub fewshot: FewShotConfig,
    pub fig4: Fig4Config,
    pub fig7c: Fig7cConfig,
    pub monolora: MonoLoraExperimentConfig,
    pub sweep: GridSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GlobalConfig {
    /// Replaces the seed list of whichever section runs.
    pub seeds: Option<Vec<u64>>,
    pub parallelism: usize,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        Self {
            seeds: None,
            parallelism: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheoryConfig {
    pub sparsity: Vec<f64>,
    pub eta: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Also report the label and Gaussian crossing levels per sparsity.
    pub crossings: bool,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            sparsity: vec![0.2],
            eta: vec![0.0],
            lambda: vec![0.0],
            crossings: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSection {
    pub sparsity: Vec<f64>,
    pub eta: Vec<f64>,
    pub lambda: Vec<f64>,
    pub num_samples: usize,
    pub seeds: Vec<u64>,
    pub crossings: bool,
    pub crossing_samples: usize,
    /// Grid spacing of the crossing scans.
    pub crossing_step: f64,
}

impl Default for McSection {
    fn default() -> Self {
        Self {
            sparsity: vec![0.2],
            eta: vec![0.0],
            lambda: vec![0.0],
            num_samples: 10_000_000,
            seeds: vec![0],
            crossings: false,
            crossing_samples: 1_000_000,
            crossing_step: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyTrainConfig {
    pub n: usize,
    pub m: usize,
    pub sparsity: f64,
    pub num_samples: usize,
    pub variant: ToyVariant,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        Self {
            n: 40,
            m: 20,
            sparsity: 0.2,
            num_samples: 2048,
            variant: ToyVariant::Linear,
            train: TrainConfig::default(),
            seeds: vec![0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSection {
    pub features: Vec<FeatureKind>,
    pub sparsity: Vec<f64>,
    pub eta: Vec<f64>,
    pub lambda: Vec<f64>,
    pub fraction: Vec<f64>,
    pub seeds: Vec<u64>,
    pub cell: ProbeCellConfig,
}

impl Default for ProbeSection {
    fn default() -> Self {
        Self {
            features: FeatureKind::ALL.to_vec(),
            sparsity: vec![0.2],
            eta: vec![0.0, 0.9],
            lambda: vec![0.0, 0.6],
            fraction: vec![1.0],
            seeds: vec![0, 1, 2],
            cell: ProbeCellConfig::default(),
        }
    }
}

/// Parse a config file; any unknown key is an error.
pub fn parse(text: &str) -> Result<FileConfig, String> {
    toml::from_str(text).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let text = toml::to_string(&FileConfig::default()).unwrap();
        assert_eq!(parse(&text).unwrap(), FileConfig::default());
    }

    #[test]
    fn unknown_keys_rejected_at_every_level() {
        assert!(parse("bogus = 1").is_err());
        assert!(parse("[theory]\nsparsty = [0.2]").is_err());
        assert!(parse("[fig4.probe.train]\nlr = 0.1").is_err());
        assert!(parse("[theory]\nsparsity = [0.1, 0.3]").is_ok());
    }
}
