//! Declarative network description, (de)serialized as TOML.
//!
//! ```toml
//! precision = "f32"
//! pad = "circular"
//! seed = 0
//!
//! [input]
//! channels = 1
//! height = 32
//! width = 32
//!
//! [[layers]]
//! type = "conv"
//! out_channels = 8
//!
//! [[layers]]
//! type = "residual"
//! post = { kind = "relu" }
//! main = [
//!     { type = "conv", out_channels = 16 },
//!     { type = "activation", function = { kind = "relu" } },
//!     { type = "downsample", kind = "aps", stride = 2 },
//!     { type = "conv", out_channels = 16 },
//! ]
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polyphase::SelectionCriterion;
use crate::tensor::{Activation, PadMode, Precision};

/// How a `Downsample` layer samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DownsampleKind {
    /// Keep the `(0, 0)` grid.
    Baseline,
    /// Binomial `j x j` blur, then the `(0, 0)` grid.
    Lpf { j: usize },
    Aps,
    /// Binomial blur, then APS.
    ApsLpf { j: usize },
}

impl DownsampleKind {
    pub fn blur(self) -> Option<usize> {
        match self {
            DownsampleKind::Lpf { j } | DownsampleKind::ApsLpf { j } => Some(j),
            _ => None,
        }
    }

    pub fn is_adaptive(self) -> bool {
        matches!(self, DownsampleKind::Aps | DownsampleKind::ApsLpf { .. })
    }
}

impl fmt::Display for DownsampleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DownsampleKind::Baseline => f.write_str("baseline"),
            DownsampleKind::Lpf { j } => write!(f, "lpf-{j}"),
            DownsampleKind::Aps => f.write_str("aps"),
            DownsampleKind::ApsLpf { j } => write!(f, "aps-lpf-{j}"),
        }
    }
}

impl FromStr for DownsampleKind {
    type Err = Error;

    /// `baseline`, `lpf-J`, `aps` or `aps-lpf-J`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unknown downsample kind `{s}`"));
        let size = |j: &str| j.parse::<usize>().map_err(|_| bad());
        match s {
            "baseline" => Ok(DownsampleKind::Baseline),
            "aps" => Ok(DownsampleKind::Aps),
            _ => {
                if let Some(j) = s.strip_prefix("aps-lpf-") {
                    Ok(DownsampleKind::ApsLpf { j: size(j)? })
                } else if let Some(j) = s.strip_prefix("lpf-") {
                    Ok(DownsampleKind::Lpf { j: size(j)? })
                } else {
                    Err(bad())
                }
            }
        }
    }
}

impl Serialize for DownsampleKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DownsampleKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn default_kernel() -> usize {
    3
}

fn default_stride() -> usize {
    2
}

/// One entry of a layer list. Convolutions are always stride 1; every
/// change of resolution is an explicit `Downsample`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        #[serde(default = "default_kernel")]
        kernel: usize,
    },
    Activation {
        function: Activation,
    },
    MaxPoolDense {
        k: usize,
    },
    Downsample {
        kind: DownsampleKind,
        #[serde(default = "default_stride")]
        stride: usize,
        #[serde(default)]
        criterion: SelectionCriterion,
    },
    /// `post(main(x) + shortcut(x))`. The shortcut samples with the same
    /// index the main branch's downsample chose, and gets a 1x1 projection
    /// when the channel count changes.
    Residual {
        main: Vec<LayerSpec>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        post: Option<Activation>,
    },
    GlobalAvgPool,
    FullyConnected {
        classes: usize,
    },
}

impl LayerSpec {
    pub fn conv(out_channels: usize, kernel: usize) -> Self {
        LayerSpec::Conv { out_channels, kernel }
    }

    pub fn relu() -> Self {
        LayerSpec::Activation { function: Activation::Relu }
    }

    pub fn downsample(kind: DownsampleKind, stride: usize) -> Self {
        LayerSpec::Downsample { kind, stride, criterion: SelectionCriterion::default() }
    }

    pub fn residual(main: Vec<LayerSpec>, post: Option<Activation>) -> Self {
        LayerSpec::Residual { main, post }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub input: InputShape,
    #[serde(default = "default_precision")]
    pub precision: Precision,
    #[serde(default)]
    pub pad: PadMode,
    #[serde(default)]
    pub seed: u64,
    pub layers: Vec<LayerSpec>,
}

fn default_precision() -> Precision {
    Precision::F32
}

impl NetworkSpec {
    /// Three residual stages over a stride-1 stem, 32x32 grey input, 4
    /// classes. The second and third stages halve the resolution.
    pub fn toy_resnet(kind: DownsampleKind) -> Self {
        Self::toy_resnet_sized(kind, [8, 16, 32], 32, 4)
    }

    pub fn toy_resnet_sized(kind: DownsampleKind, channels: [usize; 3], size: usize, classes: usize) -> Self {
        let relu = LayerSpec::relu;
        let stage = |c: usize, down: bool| {
            let mut main = vec![LayerSpec::conv(c, 3), relu()];
            if down {
                main.push(LayerSpec::downsample(kind, 2));
            }
            main.push(LayerSpec::conv(c, 3));
            LayerSpec::residual(main, Some(Activation::Relu))
        };
        NetworkSpec {
            input: InputShape { channels: 1, height: size, width: size },
            precision: Precision::F32,
            pad: PadMode::Circular,
            seed: 0,
            layers: vec![
                LayerSpec::conv(channels[0], 3),
                relu(),
                stage(channels[0], false),
                stage(channels[1], true),
                stage(channels[2], true),
                LayerSpec::GlobalAvgPool,
                LayerSpec::FullyConnected { classes },
            ],
        }
    }

    /// Same layers with every downsample switched to `kind`.
    pub fn with_downsample(&self, kind: DownsampleKind) -> Self {
        fn swap(layers: &[LayerSpec], kind: DownsampleKind) -> Vec<LayerSpec> {
            layers
                .iter()
                .map(|l| match l {
                    LayerSpec::Downsample { stride, criterion, .. } => {
                        LayerSpec::Downsample { kind, stride: *stride, criterion: *criterion }
                    }
                    LayerSpec::Residual { main, post } => LayerSpec::Residual { main: swap(main, kind), post: post.clone() },
                    other => other.clone(),
                })
                .collect()
        }
        NetworkSpec { layers: swap(&self.layers, kind), ..self.clone() }
    }

    /// Same layers with every downsample using criterion `c`.
    pub fn with_criterion(&self, c: SelectionCriterion) -> Self {
        fn swap(layers: &[LayerSpec], c: SelectionCriterion) -> Vec<LayerSpec> {
            layers
                .iter()
                .map(|l| match l {
                    LayerSpec::Downsample { kind, stride, .. } => {
                        LayerSpec::Downsample { kind: *kind, stride: *stride, criterion: c }
                    }
                    LayerSpec::Residual { main, post } => LayerSpec::Residual { main: swap(main, c), post: post.clone() },
                    other => other.clone(),
                })
                .collect()
        }
        NetworkSpec { layers: swap(&self.layers, c), ..self.clone() }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}
