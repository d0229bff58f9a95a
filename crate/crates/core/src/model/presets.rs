//! Synthetic desk-scale models shaped after the benchmark families.
//!
//! All presets take a `16x16x3` input and end in a 10-way FC layer. Convs
//! use same padding; strides are given per layer below. Weights follow He
//! initialisation from a seeded ChaCha stream, biases are uniform in
//! `[-0.05, 0.05]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    ActivationKind, LayerSpec, LinearLayer, LinearOp, ModelError, ModelGraph, PoolKind,
    ResidualBlock,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Stacked 3x3 convolutions with max pooling, then two FC layers.
    VggLikeSmall,
    /// Strided stem, then depthwise/pointwise pairs with ReLU6 between them.
    MobilenetLikeSmall,
    /// As above with no activation inside each depthwise/pointwise pair.
    MobilenetFusedSmall,
    /// Identity and projection residual blocks, the second a pointwise
    /// bottleneck.
    ResnetLikeSmall,
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::VggLikeSmall,
        Preset::MobilenetLikeSmall,
        Preset::MobilenetFusedSmall,
        Preset::ResnetLikeSmall,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::VggLikeSmall => "vgg_like_small",
            Preset::MobilenetLikeSmall => "mobilenet_like_small",
            Preset::MobilenetFusedSmall => "mobilenet_fused_small",
            Preset::ResnetLikeSmall => "resnet_like_small",
        }
    }

    /// Declared number of linear layers, branches included.
    pub fn linear_layers(self) -> usize {
        match self {
            Preset::VggLikeSmall => 6,
            Preset::MobilenetLikeSmall | Preset::MobilenetFusedSmall => 8,
            Preset::ResnetLikeSmall => 8,
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, ModelError> {
        let norm = s.replace('-', "_");
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == norm)
            .ok_or_else(|| ModelError::UnknownPreset(s.to_string()))
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn layer(&mut self, op: LinearOp, gain: f64) -> LayerSpec {
        let fan_in = match op {
            LinearOp::Fc { h_in, .. } => h_in,
            LinearOp::Conv2d { c_in, kernel, .. } => c_in * kernel * kernel,
            LinearOp::Depthwise { kernel, .. } => kernel * kernel,
            LinearOp::Pointwise { c_in, .. } => c_in,
        };
        let normal = Normal::new(0.0, gain * (2.0 / fan_in as f64).sqrt()).expect("positive std");
        let weight = (0..op.weight_len())
            .map(|_| normal.sample(&mut self.rng) as f32)
            .collect();
        let bias = (0..op.bias_len())
            .map(|_| self.rng.random_range(-0.05f32..0.05))
            .collect();
        LayerSpec::Linear(LinearLayer { op, weight, bias })
    }
}

fn act(kind: ActivationKind) -> LayerSpec {
    LayerSpec::Activation(kind)
}

/// Deterministic synthetic model for `preset`.
pub fn make_preset(preset: Preset, seed: u64) -> ModelGraph {
    let mut init = Init {
        rng: ChaCha8Rng::seed_from_u64(seed ^ (preset as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)),
    };
    let relu = ActivationKind::Relu;
    let relu6 = ActivationKind::Relu6;
    let layers = match preset {
        Preset::VggLikeSmall => vec![
            init.layer(LinearOp::conv(16, 16, 3, 16, 3, 1), 1.0),
            act(relu),
            init.layer(LinearOp::conv(16, 16, 16, 16, 3, 1), 1.0),
            act(relu),
            LayerSpec::Pool(PoolKind::Max),
            init.layer(LinearOp::conv(8, 8, 16, 32, 3, 1), 1.0),
            act(relu),
            init.layer(LinearOp::conv(8, 8, 32, 32, 3, 1), 1.0),
            act(relu),
            LayerSpec::Pool(PoolKind::Max),
            init.layer(
                LinearOp::Fc {
                    h_in: 512,
                    h_out: 64,
                },
                1.0,
            ),
            act(relu),
            init.layer(
                LinearOp::Fc {
                    h_in: 64,
                    h_out: 10,
                },
                1.0,
            ),
        ],
        Preset::MobilenetLikeSmall | Preset::MobilenetFusedSmall => {
            let fused = preset == Preset::MobilenetFusedSmall;
            let mut layers = vec![
                init.layer(LinearOp::conv(16, 16, 3, 16, 3, 2), 1.0),
                act(relu6),
            ];
            // (h, c_in, c_out, depthwise stride)
            for (h, c_in, c_out, stride) in [(8, 16, 32, 1), (8, 32, 64, 2), (4, 64, 64, 1)] {
                layers.push(init.layer(LinearOp::depthwise(h, h, c_in, 3, stride), 1.0));
                if !fused {
                    layers.push(act(relu6));
                }
                let ho = h / stride;
                layers.push(init.layer(
                    LinearOp::Pointwise {
                        h: ho,
                        w: ho,
                        c_in,
                        c_out,
                    },
                    1.0,
                ));
                layers.push(act(relu6));
            }
            layers.push(LayerSpec::Pool(PoolKind::Avg));
            layers.push(init.layer(
                LinearOp::Fc {
                    h_in: 256,
                    h_out: 10,
                },
                1.0,
            ));
            layers
        }
        Preset::ResnetLikeSmall => vec![
            init.layer(LinearOp::conv(16, 16, 3, 16, 3, 1), 1.0),
            act(relu),
            LayerSpec::Residual(ResidualBlock {
                main: vec![
                    init.layer(LinearOp::conv(16, 16, 16, 16, 3, 1), 1.0),
                    act(relu),
                    init.layer(LinearOp::conv(16, 16, 16, 16, 3, 1), 0.5),
                ],
                shortcut: vec![],
                merge: relu,
            }),
            LayerSpec::Pool(PoolKind::Max),
            LayerSpec::Residual(ResidualBlock {
                main: vec![
                    init.layer(
                        LinearOp::Pointwise {
                            h: 8,
                            w: 8,
                            c_in: 16,
                            c_out: 32,
                        },
                        1.0,
                    ),
                    act(relu),
                    init.layer(LinearOp::conv(8, 8, 32, 32, 3, 1), 1.0),
                    act(relu),
                    init.layer(
                        LinearOp::Pointwise {
                            h: 8,
                            w: 8,
                            c_in: 32,
                            c_out: 32,
                        },
                        0.5,
                    ),
                ],
                shortcut: vec![init.layer(
                    LinearOp::Pointwise {
                        h: 8,
                        w: 8,
                        c_in: 16,
                        c_out: 32,
                    },
                    0.5,
                )],
                merge: relu,
            }),
            LayerSpec::Pool(PoolKind::Avg),
            init.layer(
                LinearOp::Fc {
                    h_in: 512,
                    h_out: 10,
                },
                1.0,
            ),
        ],
    };
    ModelGraph {
        name: preset.name().to_string(),
        input_shape: vec![16, 16, 3],
        layers,
    }
}
