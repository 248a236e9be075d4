//! Per-subcommand configuration. Each subcommand reads one TOML table with
//! the fields below; omitted fields take the defaults shown by
//! `Default`, and unknown keys are rejected.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::experiments::{DatasetSpec, PatternFamily, TrainConfig};
use crate::metrics::SamplerKind;
use crate::network::{DownsampleKind, NetworkSpec};
use crate::polyphase::{Norm, SelectionCriterion};
use crate::tensor::Precision;

fn toy() -> NetworkSpec {
    NetworkSpec::toy_resnet(DownsampleKind::Aps)
}

fn dataset(family: PatternFamily) -> DatasetSpec {
    DatasetSpec::new(family, 4, 50, 32, 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InvarianceConfig {
    /// Downsample kinds to compare; each replaces every downsample of `network`.
    pub kinds: Vec<DownsampleKind>,
    pub images: usize,
    pub trials: usize,
    pub sampler: SamplerKind,
    pub network: NetworkSpec,
    pub dataset: DatasetSpec,
    /// Parameter directory written by `train`; replaces the random init.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
}

impl Default for InvarianceConfig {
    fn default() -> Self {
        Self {
            kinds: vec![DownsampleKind::Baseline, DownsampleKind::Aps],
            images: 200,
            trials: 5,
            sampler: SamplerKind::CircularUniform { max_shift: 16 },
            network: toy(),
            dataset: dataset(PatternFamily::Checkerboard),
            weights: None,
        }
    }
}

/// Band limit applied before the power-sum checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleBand {
    /// Half-band ideal low-pass for every degree.
    Half,
    /// `|w| < pi / m` for degree `m`.
    PerDegree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub sizes: Vec<usize>,
    pub signals: usize,
    pub degrees: Vec<u32>,
    pub polynomials: usize,
    pub band: OracleBand,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            sizes: vec![16, 32, 64, 128],
            signals: 100,
            degrees: vec![2, 3, 4],
            polynomials: 3,
            band: OracleBand::PerDegree,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCmdConfig {
    pub network: NetworkSpec,
    pub dataset: DatasetSpec,
    pub train: TrainConfig,
}

impl Default for TrainCmdConfig {
    fn default() -> Self {
        Self { network: toy(), dataset: dataset(PatternFamily::Shapes), train: TrainConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityConfig {
    pub kinds: Vec<DownsampleKind>,
    pub taps: Vec<String>,
    /// Input shift `(dy, dx)`.
    pub shift: (isize, isize),
    /// Index of the dataset image used as input.
    pub image: usize,
    pub network: NetworkSpec,
    pub dataset: DatasetSpec,
    /// Parameter directory written by `train`; replaces the random init.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        let mut network = toy();
        network.precision = Precision::F64;
        Self {
            kinds: vec![DownsampleKind::Aps, DownsampleKind::Lpf { j: 5 }],
            taps: vec!["block0".into(), "block1".into(), "block2".into()],
            shift: (1, 1),
            image: 0,
            network,
            dataset: dataset(PatternFamily::Shapes),
            weights: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OodConfig {
    pub kinds: Vec<DownsampleKind>,
    pub images: usize,
    pub trials: usize,
    pub patches: Vec<usize>,
    pub vertical_flip: bool,
    pub sampler: SamplerKind,
    pub network: NetworkSpec,
    pub dataset: DatasetSpec,
    /// Parameter directory written by `train`; replaces the random init.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
}

impl Default for OodConfig {
    fn default() -> Self {
        Self {
            kinds: vec![DownsampleKind::Baseline, DownsampleKind::Aps],
            images: 100,
            trials: 2,
            patches: (2..=8).collect(),
            vertical_flip: true,
            sampler: SamplerKind::CircularUniform { max_shift: 16 },
            network: toy(),
            dataset: dataset(PatternFamily::Shapes),
            weights: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriteriaConfig {
    pub criteria: Vec<SelectionCriterion>,
    pub images: usize,
    pub trials: usize,
    pub sampler: SamplerKind,
    pub network: NetworkSpec,
    pub dataset: DatasetSpec,
    /// Parameter directory written by `train`; replaces the random init.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
}

impl Default for CriteriaConfig {
    fn default() -> Self {
        Self {
            criteria: vec![
                SelectionCriterion::argmax(Norm::L1),
                SelectionCriterion::argmax(Norm::L2),
                SelectionCriterion::argmax(Norm::Linf),
                SelectionCriterion::argmin(Norm::L1),
                SelectionCriterion::argmin(Norm::L2),
            ],
            images: 100,
            trials: 2,
            sampler: SamplerKind::CircularUniform { max_shift: 16 },
            network: toy(),
            dataset: dataset(PatternFamily::Shapes),
            weights: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OddsizeConfig {
    pub kinds: Vec<DownsampleKind>,
    pub size: usize,
    pub images: usize,
    pub trials: usize,
    pub sampler: SamplerKind,
    pub network: NetworkSpec,
    pub dataset: DatasetSpec,
    /// Parameter directory written by `train`; replaces the random init.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
}

impl Default for OddsizeConfig {
    fn default() -> Self {
        Self {
            kinds: vec![DownsampleKind::Baseline, DownsampleKind::Aps],
            size: 31,
            images: 100,
            trials: 5,
            sampler: SamplerKind::CircularUniform { max_shift: 15 },
            network: toy(),
            dataset: dataset(PatternFamily::Shapes),
            weights: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Reference net (`a`) and the net being compared (`b`).
    pub kinds: (DownsampleKind, DownsampleKind),
    pub size: usize,
    pub batch: usize,
    pub reps: usize,
    pub max_ratio: f64,
    pub network: NetworkSpec,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            kinds: (DownsampleKind::Baseline, DownsampleKind::Aps),
            size: 64,
            batch: 1,
            reps: 50,
            max_ratio: 3.0,
            network: toy(),
        }
    }
}
