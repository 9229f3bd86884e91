//! The three stage networks: layer graphs, forward/backward passes and weights.
//!
//! Parameters are named `<stage>.<layer>.<weight|bias|slopes>`, e.g.
//! `pnet.conv1.weight`, `rnet.prelu4.slopes`, `onet.landmark.bias`.

mod forward;
mod weights;

pub use forward::{backward, forward, forward_train, StageOutput, TrainForward};
pub use weights::{init_weights, load_weights, save_weights, zero_weights, WeightError, WeightStore};

use std::fmt;

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    PNet,
    RNet,
    ONet,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::PNet, Stage::RNet, Stage::ONet];

    pub fn prefix(self) -> &'static str {
        match self {
            Stage::PNet => "pnet",
            Stage::RNet => "rnet",
            Stage::ONet => "onet",
        }
    }

    /// Square input extent the stage is trained on.
    pub fn input_size(self) -> usize {
        match self {
            Stage::PNet => 12,
            Stage::RNet => 24,
            Stage::ONet => 48,
        }
    }

    pub fn spec(self) -> NetworkSpec {
        match self {
            Stage::PNet => build_pnet(),
            Stage::RNet => build_rnet(),
            Stage::ONet => build_onet(),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.prefix())
    }
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pnet" => Ok(Stage::PNet),
            "rnet" => Ok(Stage::RNet),
            "onet" => Ok(Stage::ONet),
            other => Err(format!("unknown stage {other:?} (expected pnet, rnet or onet)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSpec {
    Conv {
        name: String,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Prelu {
        name: String,
        channels: usize,
    },
    /// Always ceil-mode.
    MaxPool { kernel: usize, stride: usize },
    FullyConnected {
        name: String,
        inputs: usize,
        outputs: usize,
    },
}

impl LayerSpec {
    fn conv(name: &str, in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        LayerSpec::Conv {
            name: name.to_string(),
            in_channels,
            out_channels,
            kernel,
            stride: 1,
        }
    }

    fn prelu(name: &str, channels: usize) -> Self {
        LayerSpec::Prelu {
            name: name.to_string(),
            channels,
        }
    }

    fn pool(kernel: usize, stride: usize) -> Self {
        LayerSpec::MaxPool { kernel, stride }
    }

    fn fc(name: &str, inputs: usize, outputs: usize) -> Self {
        LayerSpec::FullyConnected {
            name: name.to_string(),
            inputs,
            outputs,
        }
    }

    /// Parameter suffixes and shapes, in a fixed order.
    pub fn parameters(&self) -> Vec<(String, Vec<usize>)> {
        match self {
            LayerSpec::Conv {
                name,
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![
                (format!("{name}.weight"), vec![*out_channels, *in_channels, *kernel, *kernel]),
                (format!("{name}.bias"), vec![*out_channels]),
            ],
            LayerSpec::Prelu { name, channels } => vec![(format!("{name}.slopes"), vec![*channels])],
            LayerSpec::MaxPool { .. } => Vec::new(),
            LayerSpec::FullyConnected { name, inputs, outputs } => vec![
                (format!("{name}.weight"), vec![*outputs, *inputs]),
                (format!("{name}.bias"), vec![*outputs]),
            ],
        }
    }
}

/// Which output branch a head feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    FaceClass,
    BoxRegression,
    Landmarks,
}

impl HeadKind {
    pub fn channels(self) -> usize {
        match self {
            HeadKind::FaceClass => 2,
            HeadKind::BoxRegression => 4,
            HeadKind::Landmarks => 10,
        }
    }

    pub fn layer_name(self) -> &'static str {
        match self {
            HeadKind::FaceClass => "cls",
            HeadKind::BoxRegression => "box",
            HeadKind::Landmarks => "landmark",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub stage: Stage,
    /// Shared trunk.
    pub layers: Vec<LayerSpec>,
    /// Output branches in order face_cls, box_reg, landmarks; each is a single
    /// 1×1 convolution (P-Net) or fully-connected layer (R-Net, O-Net).
    pub heads: Vec<(HeadKind, LayerSpec)>,
}

impl NetworkSpec {
    pub fn is_fully_convolutional(&self) -> bool {
        self.layers
            .iter()
            .chain(self.heads.iter().map(|(_, l)| l))
            .all(|l| !matches!(l, LayerSpec::FullyConnected { .. }))
    }

    /// Every parameter the network needs: full name and shape, trunk first.
    pub fn parameters(&self) -> Vec<(String, Vec<usize>)> {
        let prefix = self.stage.prefix();
        self.layers
            .iter()
            .chain(self.heads.iter().map(|(_, l)| l))
            .flat_map(|l| l.parameters())
            .map(|(suffix, shape)| (format!("{prefix}.{suffix}"), shape))
            .collect()
    }

    pub fn head_channels(&self) -> Vec<usize> {
        self.heads.iter().map(|(k, _)| k.channels()).collect()
    }

    /// Output map extent of a fully convolutional stage on an input extent.
    /// `None` when the input is too small for the receptive field.
    pub fn output_extent(&self, input: usize) -> Option<usize> {
        let mut e = input;
        for layer in &self.layers {
            match layer {
                LayerSpec::Conv { kernel, stride, .. } => {
                    e = e.checked_sub(*kernel)? / stride + 1;
                }
                LayerSpec::MaxPool { kernel, stride } => {
                    if e < *kernel {
                        return None;
                    }
                    e = crate::tensor::pool_extent(e, *kernel, *stride, true);
                }
                LayerSpec::Prelu { .. } | LayerSpec::FullyConnected { .. } => {}
            }
        }
        Some(e)
    }
}

fn heads(conv: bool, inputs: usize) -> Vec<(HeadKind, LayerSpec)> {
    [HeadKind::FaceClass, HeadKind::BoxRegression, HeadKind::Landmarks]
        .into_iter()
        .map(|k| {
            let layer = if conv {
                LayerSpec::conv(k.layer_name(), inputs, k.channels(), 1)
            } else {
                LayerSpec::fc(k.layer_name(), inputs, k.channels())
            };
            (k, layer)
        })
        .collect()
}

/// Proposal network: fully convolutional, 12×12 receptive field, stride 2.
pub fn build_pnet() -> NetworkSpec {
    NetworkSpec {
        stage: Stage::PNet,
        layers: vec![
            LayerSpec::conv("conv1", 3, 10, 3),
            LayerSpec::prelu("prelu1", 10),
            LayerSpec::pool(2, 2),
            LayerSpec::conv("conv2", 10, 16, 3),
            LayerSpec::prelu("prelu2", 16),
            LayerSpec::conv("conv3", 16, 32, 3),
            LayerSpec::prelu("prelu3", 32),
        ],
        heads: heads(true, 32),
    }
}

/// Refinement network on 24×24 crops.
pub fn build_rnet() -> NetworkSpec {
    NetworkSpec {
        stage: Stage::RNet,
        layers: vec![
            LayerSpec::conv("conv1", 3, 28, 3),
            LayerSpec::prelu("prelu1", 28),
            LayerSpec::pool(3, 2),
            LayerSpec::conv("conv2", 28, 48, 3),
            LayerSpec::prelu("prelu2", 48),
            LayerSpec::pool(3, 2),
            LayerSpec::conv("conv3", 48, 64, 2),
            LayerSpec::prelu("prelu3", 64),
            LayerSpec::fc("fc1", 64 * 3 * 3, 128),
            LayerSpec::prelu("prelu4", 128),
        ],
        heads: heads(false, 128),
    }
}

/// Output network on 48×48 crops.
pub fn build_onet() -> NetworkSpec {
    NetworkSpec {
        stage: Stage::ONet,
        layers: vec![
            LayerSpec::conv("conv1", 3, 32, 3),
            LayerSpec::prelu("prelu1", 32),
            LayerSpec::pool(3, 2),
            LayerSpec::conv("conv2", 32, 64, 3),
            LayerSpec::prelu("prelu2", 64),
            LayerSpec::pool(3, 2),
            LayerSpec::conv("conv3", 64, 64, 3),
            LayerSpec::prelu("prelu3", 64),
            LayerSpec::pool(2, 2),
            LayerSpec::conv("conv4", 64, 128, 2),
            LayerSpec::prelu("prelu4", 128),
            LayerSpec::fc("fc1", 128 * 3 * 3, 256),
            LayerSpec::prelu("prelu5", 256),
        ],
        heads: heads(false, 256),
    }
}

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Weights(#[from] WeightError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{stage} expects input {expected}, got shape {actual:?}")]
    InputShape {
        stage: Stage,
        expected: String,
        actual: Vec<usize>,
    },
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pnet_shape_chain() {
        let p = build_pnet();
        assert!(p.is_fully_convolutional());
        assert_eq!(p.output_extent(12), Some(1));
        assert_eq!(p.output_extent(24), Some(7));
        assert_eq!(p.output_extent(9), None);
        for h in 12..=64usize {
            let expect = (h - 4).div_ceil(2) - 3;
            assert_eq!(p.output_extent(h), Some(expect), "H={h}");
        }
    }

    #[test]
    fn heads_are_2_4_10() {
        for spec in [build_pnet(), build_rnet(), build_onet()] {
            assert_eq!(spec.head_channels(), vec![2, 4, 10]);
        }
        assert!(!build_rnet().is_fully_convolutional());
        assert!(!build_onet().is_fully_convolutional());
        assert_eq!(build_rnet().output_extent(24), Some(3));
        assert_eq!(build_onet().output_extent(48), Some(3));
    }

    #[test]
    fn parameter_names_follow_scheme() {
        let names: Vec<String> = build_onet().parameters().into_iter().map(|(n, _)| n).collect();
        assert!(names.contains(&"onet.fc1.bias".to_string()));
        assert!(names.contains(&"onet.prelu5.slopes".to_string()));
        assert!(names.contains(&"onet.landmark.weight".to_string()));
        assert_eq!(build_pnet(), build_pnet());
    }

    #[test]
    fn stage_parses() {
        assert_eq!("RNet".parse::<Stage>().unwrap(), Stage::RNet);
        assert!("xnet".parse::<Stage>().is_err());
    }
}
