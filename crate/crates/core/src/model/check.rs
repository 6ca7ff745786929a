//! Finite-difference checks of every layer, every loss and the tiny model,
//! in 64-bit arithmetic.

use alloc::vec::Vec;

use rand::Rng;

use super::config::ModelConfig;
use super::net::{build_laeonet, Batch, Init, PoseNet};
use super::sample::TrackPairSample;
use crate::domain::{HeadPose, LaeoLabel};
use crate::error::Result;
use crate::headmap::HeadMapConfig;
use crate::nn::{grad_check, ConvGeometry, GradCheckConfig, GradCheckReport, Graph, NodeId, ParamId, ParamStore, PoseLossWeights, Tensor};
use crate::rng::{seeded, uniform, SeededRng};
use crate::synth::{make_pair, pose_sample, SynthConfig};

/// Relative-error bound every check must meet.
pub const GRADCHECK_TOL: f64 = 1e-4;

fn random_param(p: &mut ParamStore<f64>, rng: &mut SeededRng, name: &str, shape: &[usize]) -> ParamId {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| uniform(rng, -1.0, 1.0)).collect();
    p.add(name, Tensor::from_f64(shape, &data).expect("shape matches data"))
}

fn coeffs(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| uniform(rng, -1.0, 1.0)).collect()
}

fn sum3(g: &mut Graph<'_, f64>, a: NodeId, b: NodeId, c: NodeId) -> Result<NodeId> {
    let parts = [g.flatten(a)?, g.flatten(b)?, g.flatten(c)?];
    let all = g.concat(&parts)?;
    g.weighted_sum(all, &[1.0, 1.0, 1.0])
}

fn dense_check(seed: u64) -> Result<GradCheckReport> {
    let mut rng = seeded(seed);
    let mut p = ParamStore::<f64>::new();
    let x = random_param(&mut p, &mut rng, "x", &[3, 5]);
    let w = random_param(&mut p, &mut rng, "w", &[4, 5]);
    let b = random_param(&mut p, &mut rng, "b", &[4]);
    let c = coeffs(&mut rng, 12);
    grad_check(
        &p,
        |g| {
            let (xn, wn, bn) = (g.param(x)?, g.param(w)?, g.param(b)?);
            let y = g.dense(xn, wn, bn)?;
            let y = g.relu(y)?;
            g.weighted_sum(y, &c)
        },
        &GradCheckConfig { tol: GRADCHECK_TOL, seed, ..Default::default() },
    )
}

fn conv_stack_check(seed: u64) -> Result<GradCheckReport> {
    let mut rng = seeded(seed);
    let mut p = ParamStore::<f64>::new();
    let x = random_param(&mut p, &mut rng, "x", &[2, 2, 3, 5, 5]);
    let w = random_param(&mut p, &mut rng, "w", &[3, 2, 3, 3, 3]);
    let b = random_param(&mut p, &mut rng, "b", &[3]);
    let fw = random_param(&mut p, &mut rng, "fw", &[2, 54]);
    let fb = random_param(&mut p, &mut rng, "fb", &[2]);
    let c = coeffs(&mut rng, 4);
    grad_check(
        &p,
        |g| {
            let (xn, wn, bn) = (g.param(x)?, g.param(w)?, g.param(b)?);
            let geom = ConvGeometry { stride: [2, 2, 2], padding: [1, 1, 1] };
            let y = g.conv3d(xn, wn, bn, geom, true)?;
            let y = g.dropout(y, 0.3)?;
            let y = g.flatten(y)?;
            let y = g.l2_normalize(y, 0.0)?;
            let (fwn, fbn) = (g.param(fw)?, g.param(fb)?);
            let z = g.dense(y, fwn, fbn)?;
            let s = g.softmax(z)?;
            g.weighted_sum(s, &c)
        },
        &GradCheckConfig { tol: GRADCHECK_TOL, seed, training: true, ..Default::default() },
    )
}

fn loss_check(seed: u64) -> Result<GradCheckReport> {
    let mut rng = seeded(seed);
    let mut p = ParamStore::<f64>::new();
    let logits = random_param(&mut p, &mut rng, "logits", &[5, 2]);
    let probs: Vec<f64> = (0..5).map(|_| uniform(&mut rng, 0.05, 0.95)).collect();
    let probs = p.add("probs", Tensor::from_f64(&[5], &probs)?);
    // predicted yaws stay away from the kink of the sign term at zero
    let pose: Vec<f64> = (0..12)
        .map(|i| {
            let v = uniform(&mut rng, 0.1, 0.9);
            if i % 2 == 0 { v } else { -v }
        })
        .collect();
    let pose = p.add("pose", Tensor::from_f64(&[4, 3], &pose)?);
    let targets: Vec<usize> = (0..5).map(|_| rng.gen_range(0..2)).collect();
    let pose_targets: Vec<[f64; 3]> = (0..4)
        .map(|_| [uniform(&mut rng, -1.0, 1.0), uniform(&mut rng, -1.0, 1.0), uniform(&mut rng, -1.0, 1.0)])
        .collect();
    grad_check(
        &p,
        |g| {
            let l = g.param(logits)?;
            let a = g.softmax_bce(l, &targets)?;
            let pr = g.param(probs)?;
            let b = g.bce(pr, &targets)?;
            let ps = g.param(pose)?;
            let c = g.pose_loss(ps, &pose_targets, PoseLossWeights::default(), 1.0)?;
            sum3(g, a, b, c)
        },
        &GradCheckConfig { tol: GRADCHECK_TOL, seed, ..Default::default() },
    )
}

/// Zero biases would put padded positions exactly on a ReLU kink.
fn randomize_biases(p: &mut ParamStore<f64>, seed: u64) {
    let mut rng = seeded(seed);
    let ids: Vec<ParamId> = p.iter().filter(|(_, n, _)| n.ends_with(".b")).map(|(id, _, _)| id).collect();
    for id in ids {
        for v in p.get_mut(id).data_mut() {
            *v = uniform(&mut rng, 0.05, 0.3);
        }
    }
}

fn tiny_synth() -> SynthConfig {
    SynthConfig {
        t: 2,
        headmap: HeadMapConfig { m: 2, ..Default::default() },
        ..Default::default()
    }
}

fn tiny_config(training: bool, seed: u64) -> GradCheckConfig {
    GradCheckConfig {
        tol: GRADCHECK_TOL,
        seed,
        training,
        samples_per_param: 8,
        // thousands of ReLU units: a small step keeps them on one side
        eps: 1e-6,
    }
}

fn tiny_model_check(training: bool, seed: u64) -> Result<GradCheckReport> {
    let cfg = ModelConfig::tiny();
    let mut net = build_laeonet(&cfg, Init::Random, seed)?.cast::<f64>();
    randomize_biases(net.params_mut(), seed ^ 1);
    let samples = [
        make_pair(seed, LaeoLabel::Laeo, &tiny_synth())?.sample,
        make_pair(seed + 1, LaeoLabel::NotLaeo, &tiny_synth())?.sample,
    ];
    let refs: Vec<&TrackPairSample> = samples.iter().collect();
    let batch = Batch::from_samples(&refs, cfg.t, cfg.m)?.cast::<f64>();
    grad_check(net.params(), |g| net.loss(g, &batch), &tiny_config(training, seed))
}

fn tiny_pose_check(seed: u64) -> Result<GradCheckReport> {
    let cfg = ModelConfig::tiny();
    let mut net = PoseNet::new(&cfg, seed)?.cast::<f64>();
    randomize_biases(net.params_mut(), seed ^ 1);
    let samples = [pose_sample(seed, &tiny_synth())?, pose_sample(seed + 1, &tiny_synth())?];
    let stacks: Vec<_> = samples.iter().map(|(s, _)| s).collect();
    let x = PoseNet::<f32>::crops(&stacks, cfg.t)?.cast::<f64>();
    let targets: Vec<[f64; 3]> = samples.iter().map(|(_, p): &(_, HeadPose)| p.normalized()).collect();
    grad_check(
        net.params(),
        |g| {
            let pred = net.forward(g, x.clone())?;
            g.pose_loss(pred, &targets, PoseLossWeights::default(), 1.0)
        },
        &tiny_config(false, seed),
    )
}

/// Runs every check; each entry names what was checked.
pub fn gradcheck_suite(seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    Ok(alloc::vec![
        ("dense+relu", dense_check(seed)?),
        ("conv3d+relu+dropout+flatten+l2norm+dense+softmax", conv_stack_check(seed + 1)?),
        ("softmax_bce+bce+pose_loss", loss_check(seed + 2)?),
        ("tiny model, inference", tiny_model_check(false, seed + 3)?),
        ("tiny model, training", tiny_model_check(true, seed + 4)?),
        ("tiny head-pose model", tiny_pose_check(seed + 5)?),
    ])
}
