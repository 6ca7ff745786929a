use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::sample::{CROP_CHANNELS, CROP_SIDE};
use crate::error::{Error, Result};
use crate::headmap::{MAP_CHANNELS, MAP_SIDE};
use crate::nn::ConvGeometry;

pub const HEAD_LAYERS: usize = 5;
pub const MAP_LAYERS: usize = 4;

/// Architecture of the pair classifier. Strides are (depth, height, width).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Head-track length.
    pub t: usize,
    /// Head-map length.
    pub m: usize,
    pub head_channels: Vec<usize>,
    pub head_strides: Vec<[usize; 3]>,
    pub map_channels: Vec<usize>,
    pub map_strides: Vec<[usize; 3]>,
    /// Width of the fusion layer.
    pub hidden: usize,
    pub dropout: f64,
    /// Added under the square root of the embedding norms.
    pub l2_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            t: 10,
            m: 10,
            head_channels: vec![4, 8, 16, 16, 32],
            head_strides: vec![[2, 2, 2], [1, 2, 2], [2, 2, 2], [1, 1, 1], [1, 2, 2]],
            map_channels: vec![4, 8, 8, 16],
            map_strides: vec![[2, 2, 2], [2, 2, 2], [1, 2, 2], [1, 2, 2]],
            hidden: 64,
            dropout: 0.5,
            l2_eps: 1e-12,
        }
    }
}

/// One convolution of a branch with its input and output volumes
/// (depth, height, width).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayer {
    pub cin: usize,
    pub cout: usize,
    pub kernel: [usize; 3],
    pub geom: ConvGeometry,
    pub input: [usize; 3],
    pub output: [usize; 3],
}

impl ConvLayer {
    pub fn weight_shape(&self) -> [usize; 5] {
        [self.cout, self.cin, self.kernel[0], self.kernel[1], self.kernel[2]]
    }

    pub fn num_params(&self) -> usize {
        self.weight_shape().iter().product::<usize>() + self.cout
    }

    /// Multiply-accumulates per sample.
    pub fn macs(&self) -> usize {
        self.weight_shape().iter().product::<usize>() * self.output.iter().product::<usize>()
    }

    pub fn out_len(&self) -> usize {
        self.cout * self.output.iter().product::<usize>()
    }
}

/// 3 x 3 spatial kernels with padding 1; 3-tap temporal kernels while the
/// input has depth, 1-tap (a 2D convolution) once it has none.
fn plan(cin: usize, depth: usize, side: usize, channels: &[usize], strides: &[[usize; 3]]) -> Vec<ConvLayer> {
    let mut input = [depth, side, side];
    let mut cin = cin;
    let mut out = Vec::with_capacity(channels.len());
    for (&cout, &stride) in channels.iter().zip(strides) {
        let kd = if input[0] > 1 { 3 } else { 1 };
        let kernel = [kd, 3, 3];
        let padding = [kd / 2, 1, 1];
        let mut output = [0; 3];
        for i in 0..3 {
            output[i] = (input[i] + 2 * padding[i] - kernel[i]) / stride[i] + 1;
        }
        out.push(ConvLayer {
            cin,
            cout,
            kernel,
            geom: ConvGeometry { stride, padding },
            input,
            output,
        });
        input = output;
        cin = cout;
    }
    out
}

impl ModelConfig {
    /// Smallest meaningful network, used for gradient checks.
    pub fn tiny() -> Self {
        ModelConfig {
            t: 2,
            m: 2,
            head_channels: vec![2; HEAD_LAYERS],
            map_channels: vec![2; MAP_LAYERS],
            hidden: 4,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(format!("model: {msg}")));
        if self.t == 0 || self.m == 0 {
            return bad("T and M must be >= 1");
        }
        if self.head_channels.len() != HEAD_LAYERS || self.head_strides.len() != HEAD_LAYERS {
            return bad("the head branch has 5 layers");
        }
        if self.map_channels.len() != MAP_LAYERS || self.map_strides.len() != MAP_LAYERS {
            return bad("the head-map branch has 4 layers");
        }
        let all_channels = self.head_channels.iter().chain(&self.map_channels);
        if all_channels.copied().any(|c| c == 0) || self.hidden == 0 {
            return bad("channel counts and hidden width must be >= 1");
        }
        if self.head_strides.iter().chain(&self.map_strides).flatten().any(|&s| s == 0) {
            return bad("strides must be >= 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if !(self.l2_eps >= 0.0 && self.l2_eps.is_finite()) {
            return bad("l2_eps must be finite and >= 0");
        }
        Ok(())
    }

    pub fn head_layers(&self) -> Vec<ConvLayer> {
        plan(CROP_CHANNELS, self.t, CROP_SIDE, &self.head_channels, &self.head_strides)
    }

    pub fn map_layers(&self) -> Vec<ConvLayer> {
        plan(MAP_CHANNELS, self.m, MAP_SIDE, &self.map_channels, &self.map_strides)
    }

    pub fn head_embedding_len(&self) -> usize {
        self.head_layers().last().map_or(0, |l| l.out_len())
    }

    pub fn map_embedding_len(&self) -> usize {
        self.map_layers().last().map_or(0, |l| l.out_len())
    }

    pub fn fusion_input_len(&self) -> usize {
        2 * self.head_embedding_len() + self.map_embedding_len()
    }

    /// Closed-form weight count of the classifier.
    pub fn num_params(&self) -> usize {
        let convs: usize = self.head_layers().iter().chain(&self.map_layers()).map(|l| l.num_params()).sum();
        convs + (self.fusion_input_len() + 1) * self.hidden + (self.hidden + 1) * 2
    }

    /// Multiply-accumulates of one forward pass over a pair.
    pub fn macs(&self) -> usize {
        let head: usize = self.head_layers().iter().map(|l| l.macs()).sum();
        let map: usize = self.map_layers().iter().map(|l| l.macs()).sum();
        2 * head + map + self.fusion_input_len() * self.hidden + self.hidden * 2
    }
}
