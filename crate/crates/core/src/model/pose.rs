use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::net::PoseNet;
use super::sample::CropStack;
use crate::domain::HeadPose;
use crate::error::{Error, Result};
use crate::nn::{Graph, PoseLossWeights, Sgd};
use crate::rng::{derive, derive_seed};
use crate::synth::{pose_sample, SynthConfig};

/// Indexed crop stacks with their head poses.
pub trait PoseSource {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get(&self, i: usize) -> Result<(CropStack, HeadPose)>;
}

impl PoseSource for [(CropStack, HeadPose)] {
    fn len(&self) -> usize {
        <[(CropStack, HeadPose)]>::len(self)
    }

    fn get(&self, i: usize) -> Result<(CropStack, HeadPose)> {
        Ok(self[i].clone())
    }
}

impl PoseSource for Vec<(CropStack, HeadPose)> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn get(&self, i: usize) -> Result<(CropStack, HeadPose)> {
        Ok(self[i].clone())
    }
}

/// `n` synthetic heads generated on demand.
#[derive(Debug, Clone)]
pub struct SynthPoses {
    pub n: usize,
    pub seed: u64,
    pub cfg: SynthConfig,
}

impl PoseSource for SynthPoses {
    fn len(&self) -> usize {
        self.n
    }

    fn get(&self, i: usize) -> Result<(CropStack, HeadPose)> {
        pose_sample(derive_seed(self.seed, i as u64), &self.cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weights: PoseLossWeights,
    /// Sharpness of the yaw-sign term.
    pub k: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 8,
            batch_size: 16,
            lr: 3e-2,
            momentum: 0.9,
            weights: PoseLossWeights::default(),
            k: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PretrainReport {
    pub step_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
}

/// Fits the head branch and the angle regressor to the poses of `data`.
/// The trained head-branch weights are meant for [`super::Init::PosePretrained`].
pub fn pretrain_headpose(net: &mut PoseNet, data: &dyn PoseSource, cfg: &PretrainConfig) -> Result<PretrainReport> {
    if data.is_empty() {
        return Err(Error::Empty("pose dataset"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be >= 1".into()));
    }
    let t = net.config().t;
    let mut opt = Sgd::new(cfg.lr, cfg.momentum);
    let mut report = PretrainReport::default();
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut derive(cfg.seed, epoch as u64));
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let samples = idx.iter().map(|&i| data.get(i)).collect::<Result<Vec<_>>>()?;
            let stacks: Vec<&CropStack> = samples.iter().map(|(s, _)| s).collect();
            let targets: Vec<[f64; 3]> = samples.iter().map(|(_, p)| p.normalized()).collect();
            let x = PoseNet::<f32>::crops(&stacks, t)?;
            let grads = {
                let mut g = Graph::new(net.params(), true, derive_seed(cfg.seed, report.step_losses.len() as u64));
                let pred = net.forward(&mut g, x)?;
                let loss = g.pose_loss(pred, &targets, cfg.weights, cfg.k)?;
                let l = g.value(loss).data()[0] as f64;
                report.step_losses.push(l);
                total += l * idx.len() as f64;
                g.backward(loss)?
            };
            opt.step(net.params_mut(), &grads);
        }
        report.epoch_losses.push(total / data.len() as f64);
    }
    Ok(report)
}

/// Share of samples with `0 < |yaw| <= max_abs_yaw` (degrees) whose
/// predicted yaw has the right sign.
pub fn yaw_sign_accuracy(net: &PoseNet, data: &dyn PoseSource, max_abs_yaw: f64) -> Result<f64> {
    let (mut right, mut counted) = (0usize, 0usize);
    for i in 0..data.len() {
        let (stack, pose) = data.get(i)?;
        if pose.yaw == 0.0 || pose.yaw.abs() > max_abs_yaw {
            continue;
        }
        let pred = net.predict(&[&stack])?[0];
        counted += 1;
        if (pred.yaw > 0.0) == (pose.yaw > 0.0) {
            right += 1;
        }
    }
    if counted == 0 {
        return Err(Error::Empty("samples with a signed yaw"));
    }
    Ok(right as f64 / counted as f64)
}
