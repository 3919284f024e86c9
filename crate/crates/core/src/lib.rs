//! Numerical laboratory comparing monosemantic and polysemantic features
//! under label and input noise.

pub mod error;
pub mod experiments;
pub mod mc_oracle;
pub mod metrics;
pub mod moments;
pub mod monolora;
pub mod ncl;
pub mod nn;
pub mod optim;
pub mod probe;
pub mod rng;
pub mod sae;
pub mod separability;
pub mod svg;
pub mod sweep;
pub mod synthdata;
pub mod table;
pub mod tensor_io;
pub mod toymodel;

pub use error::{Error, Result};
pub use mc_oracle::{McConfig, McEstimate};
pub use metrics::{ActivationRule, ConsistencyReport};
pub use moments::{FeatureKind, Moments};
pub use monolora::{AdapterPair, AdapterVariant, MonoOrder};
pub use ncl::{AugmentSpec, NclConfig};
pub use nn::Mlp;
pub use optim::{Optimizer, OptimizerKind, TrainConfig};
pub use probe::{ProbeConfig, ProbeLoss, ProbeModel};
pub use sae::{SaeConfig, SaeParams};
pub use separability::{Noise, NoiseAxis, SeparabilityReport};
pub use sweep::{GridSpec, SweepTask};
pub use synthdata::{DataSpec, Dataset, NoiseKind, NoiseSpec, ZeroRowPolicy};
pub use table::Table;
pub use toymodel::{FeatureConstruction, ToyModel, ToyVariant};
