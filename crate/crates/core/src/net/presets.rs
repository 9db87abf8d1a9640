//! Layer topologies for the detector variants.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::net::layers::{Activation, LayerSpec};
use crate::Error;

/// Log-Mel feature dimension.
pub const FEATURE_DIM: usize = 40;

/// Memory of the keys network SVDF layer, in frames.
pub const KEYS_MEMORY: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// About 750k body parameters.
    Paper,
    /// About 48k body parameters; trains on a single core in minutes.
    Desk,
}

impl FromStr for Scale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "paper" => Ok(Scale::Paper),
            "desk" => Ok(Scale::Desk),
            _ => Err(Error::Config(format!("unknown scale '{s}' (expected paper or desk)"))),
        }
    }
}

/// Width parameters of an SVDF body.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BodyShape {
    pub svdf_layers: usize,
    pub nodes: usize,
    pub memory: usize,
    pub bottleneck: usize,
}

impl BodyShape {
    /// SVDF layers separated by linear bottlenecks, ending in one logit.
    pub fn specs(&self, input_dim: usize) -> Vec<LayerSpec> {
        let mut out = Vec::new();
        let mut inputs = input_dim;
        for i in 0..self.svdf_layers {
            out.push(LayerSpec::Svdf {
                inputs,
                nodes: self.nodes,
                memory: self.memory,
                activation: Activation::Relu,
            });
            let last = i + 1 == self.svdf_layers;
            let outputs = if last { 1 } else { self.bottleneck };
            out.push(LayerSpec::Dense {
                inputs: self.nodes,
                outputs,
                activation: Activation::Linear,
            });
            inputs = outputs;
        }
        out
    }
}

pub fn base_shape(scale: Scale) -> BodyShape {
    match scale {
        Scale::Paper => BodyShape {
            svdf_layers: 4,
            nodes: 800,
            memory: 32,
            bottleneck: 128,
        },
        Scale::Desk => BodyShape {
            svdf_layers: 4,
            nodes: 160,
            memory: 16,
            bottleneck: 32,
        },
    }
}

/// Body with roughly twice the parameters of the base body, slightly more
/// than two base bodies combined.
pub fn base_x2_shape(scale: Scale) -> BodyShape {
    match scale {
        Scale::Paper => BodyShape {
            svdf_layers: 4,
            nodes: 1180,
            memory: 32,
            bottleneck: 185,
        },
        Scale::Desk => BodyShape {
            svdf_layers: 4,
            nodes: 240,
            memory: 16,
            bottleneck: 50,
        },
    }
}

pub fn keys_width(scale: Scale) -> usize {
    match scale {
        Scale::Paper => 561,
        Scale::Desk => 40,
    }
}

pub fn base_specs(scale: Scale) -> Vec<LayerSpec> {
    base_shape(scale).specs(FEATURE_DIM)
}

pub fn base_x2_specs(scale: Scale) -> Vec<LayerSpec> {
    base_x2_shape(scale).specs(FEATURE_DIM)
}

/// SVDF layer followed by a linear projection back to the feature dimension.
pub fn keys_specs(scale: Scale) -> Vec<LayerSpec> {
    let k = keys_width(scale);
    vec![
        LayerSpec::Svdf {
            inputs: FEATURE_DIM,
            nodes: k,
            memory: KEYS_MEMORY,
            activation: Activation::Relu,
        },
        LayerSpec::Dense {
            inputs: k,
            outputs: FEATURE_DIM,
            activation: Activation::Linear,
        },
    ]
}

/// Two-SVDF-layer body at desk widths, used for gradient checking.
pub fn grad_check_body() -> Vec<LayerSpec> {
    BodyShape {
        svdf_layers: 2,
        ..base_shape(Scale::Desk)
    }
    .specs(FEATURE_DIM)
}

pub fn count_params(specs: &[LayerSpec]) -> usize {
    specs.iter().map(LayerSpec::param_count).sum()
}
