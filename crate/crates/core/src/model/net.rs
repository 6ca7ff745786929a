use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::config::{ConvLayer, ModelConfig};
use super::sample::{to_channels_first, CropStack, TrackPairSample, CROP_CHANNELS, CROP_LEN, CROP_SIDE};
use crate::domain::{HeadPose, LaeoLabel};
use crate::error::{Error, Result};
use crate::headmap::{central_start, MAP_CHANNELS, MAP_SIDE};
use crate::nn::{ConvGeometry, Graph, NodeId, ParamId, ParamStore, Scalar, Tensor};
use crate::rng::{derive, normal};

/// Inputs of a batch, channels first: crops `[N, 3, T, 64, 64]`, maps
/// `[N, 3, M, 64, 64]`, and class targets (1 for LAEO).
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<S: Scalar = f32> {
    pub left: Tensor<S>,
    pub right: Tensor<S>,
    pub map: Tensor<S>,
    pub targets: Vec<usize>,
}

fn stack_tensor(stacks: &[&CropStack], t: usize) -> Result<Tensor<f32>> {
    let per = t * CROP_LEN;
    let mut data = vec![0.0f32; stacks.len() * per];
    for (s, out) in stacks.iter().zip(data.chunks_mut(per)) {
        if s.frames() < t {
            return Err(Error::Shape(format!("{} crops for T = {t}", s.frames())));
        }
        let start = central_start(s.frames(), t);
        to_channels_first(&s.data()[start * CROP_LEN..(start + t) * CROP_LEN], t, out);
    }
    Tensor::new(&[stacks.len(), CROP_CHANNELS, t, CROP_SIDE, CROP_SIDE], data)
}

impl Batch<f32> {
    /// Central `T` crops and `M` map frames of each sample. Ambiguous samples
    /// are rejected.
    pub fn from_samples(samples: &[&TrackPairSample], t: usize, m: usize) -> Result<Self> {
        let left: Vec<&CropStack> = samples.iter().map(|s| &s.left).collect();
        let right: Vec<&CropStack> = samples.iter().map(|s| &s.right).collect();
        let plane = MAP_SIDE * MAP_SIDE * MAP_CHANNELS;
        let per = m * plane;
        let mut map = vec![0.0f32; samples.len() * per];
        for (s, out) in samples.iter().zip(map.chunks_mut(per)) {
            if s.map.frames() < m {
                return Err(Error::Shape(format!("{} map frames for M = {m}", s.map.frames())));
            }
            let start = central_start(s.map.frames(), m);
            to_channels_first(&s.map.data()[start * plane..(start + m) * plane], m, out);
        }
        let targets = samples
            .iter()
            .map(|s| s.label.class().ok_or(Error::InvalidValue("ambiguous sample in a batch".into())))
            .collect::<Result<Vec<_>>>()?;
        Ok(Batch {
            left: stack_tensor(&left, t)?,
            right: stack_tensor(&right, t)?,
            map: Tensor::new(&[samples.len(), MAP_CHANNELS, m, MAP_SIDE, MAP_SIDE], map)?,
            targets,
        })
    }

    pub fn cast<T: Scalar>(&self) -> Batch<T> {
        Batch {
            left: self.left.cast(),
            right: self.right.cast(),
            map: self.map.cast(),
            targets: self.targets.clone(),
        }
    }
}

impl<S: Scalar> Batch<S> {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Weight initialization of [`build_laeonet`].
#[derive(Debug, Clone, Copy)]
pub enum Init<'a> {
    Random,
    /// Head-branch weights from head-pose pre-training; the rest random.
    PosePretrained(&'a ParamStore<f32>),
}

#[derive(Debug, Clone, Copy)]
struct ConvIds {
    w: ParamId,
    b: ParamId,
    geom: ConvGeometry,
}

#[derive(Debug, Clone, Copy)]
struct DenseIds {
    w: ParamId,
    b: ParamId,
}

/// He-normal weights (std `sqrt(2 / fan_in)`) drawn from stream `index` of
/// `seed`; zero biases.
fn he<S: Scalar>(shape: &[usize], fan_in: usize, seed: u64, index: u64) -> Tensor<S> {
    let mut rng = derive(seed, index);
    let std = libm::sqrt(2.0 / fan_in as f64);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| S::from_f64(std * normal(&mut rng))).collect();
    Tensor::new(shape, data).expect("shape and data agree")
}

fn add_convs<S: Scalar>(
    params: &mut ParamStore<S>,
    prefix: &str,
    layers: &[ConvLayer],
    seed: u64,
) -> Vec<ConvIds> {
    layers
        .iter()
        .enumerate()
        .map(|(k, l)| {
            let shape = l.weight_shape();
            let fan_in = shape[1..].iter().product();
            let index = params.len() as u64;
            let w = params.add(format!("{prefix}.conv{}.w", k + 1), he(&shape, fan_in, seed, index));
            let b = params.add(format!("{prefix}.conv{}.b", k + 1), Tensor::zeros(&[l.cout]));
            ConvIds { w, b, geom: l.geom }
        })
        .collect()
}

/// `fan_in` is the squared input norm the He scaling assumes: the width for
/// unit-variance inputs, the number of unit vectors for normalized ones.
fn add_dense<S: Scalar>(params: &mut ParamStore<S>, name: &str, din: usize, dout: usize, fan_in: usize, seed: u64) -> DenseIds {
    let index = params.len() as u64;
    let w = params.add(format!("{name}.w"), he(&[dout, din], fan_in, seed, index));
    let b = params.add(format!("{name}.b"), Tensor::zeros(&[dout]));
    DenseIds { w, b }
}

fn lookup(params: &ParamStore<impl Scalar>, name: &str, shape: &[usize]) -> Result<ParamId> {
    let id = params
        .id(name)
        .ok_or_else(|| Error::InvalidConfig(format!("missing parameter {name}")))?;
    if params.get(id).shape() != shape {
        return Err(Error::Shape(format!(
            "parameter {name} has shape {:?}, expected {shape:?}",
            params.get(id).shape()
        )));
    }
    Ok(id)
}

fn find_convs<S: Scalar>(params: &ParamStore<S>, prefix: &str, layers: &[ConvLayer]) -> Result<Vec<ConvIds>> {
    layers
        .iter()
        .enumerate()
        .map(|(k, l)| {
            Ok(ConvIds {
                w: lookup(params, &format!("{prefix}.conv{}.w", k + 1), &l.weight_shape())?,
                b: lookup(params, &format!("{prefix}.conv{}.b", k + 1), &[l.cout])?,
                geom: l.geom,
            })
        })
        .collect()
}

fn find_dense<S: Scalar>(params: &ParamStore<S>, name: &str, din: usize, dout: usize) -> Result<DenseIds> {
    Ok(DenseIds {
        w: lookup(params, &format!("{name}.w"), &[dout, din])?,
        b: lookup(params, &format!("{name}.b"), &[dout])?,
    })
}

/// Conv + ReLU layers, flatten and L2 normalization.
fn branch<S: Scalar>(g: &mut Graph<'_, S>, x: NodeId, convs: &[(NodeId, NodeId, ConvGeometry)], eps: f64) -> Result<NodeId> {
    let mut h = x;
    for &(w, b, geom) in convs {
        h = g.conv3d(h, w, b, geom, true)?;
    }
    let flat = g.flatten(h)?;
    g.l2_normalize(flat, eps)
}

fn conv_nodes<S: Scalar>(g: &mut Graph<'_, S>, ids: &[ConvIds]) -> Result<Vec<(NodeId, NodeId, ConvGeometry)>> {
    ids.iter().map(|c| Ok((g.param(c.w)?, g.param(c.b)?, c.geom))).collect()
}

/// Nodes of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub left: NodeId,
    pub right: NodeId,
    pub map: NodeId,
    /// `[N, 2]`; column 1 is LAEO.
    pub logits: NodeId,
}

/// The three-branch pair classifier. Both head crops go through one shared
/// set of head-branch weights.
#[derive(Debug, Clone)]
pub struct LaeoNet<S: Scalar = f32> {
    cfg: ModelConfig,
    params: ParamStore<S>,
    head: Vec<ConvIds>,
    map: Vec<ConvIds>,
    fc: DenseIds,
    out: DenseIds,
}

pub fn build_laeonet(cfg: &ModelConfig, init: Init<'_>, seed: u64) -> Result<LaeoNet<f32>> {
    cfg.validate()?;
    let mut params = ParamStore::new();
    let head = add_convs(&mut params, "head", &cfg.head_layers(), seed);
    let map = add_convs(&mut params, "map", &cfg.map_layers(), seed);
    // the fusion input is three unit-norm embeddings
    let fc = add_dense(&mut params, "fusion.fc", cfg.fusion_input_len(), cfg.hidden, 3, seed);
    let out = add_dense(&mut params, "fusion.out", cfg.hidden, 2, cfg.hidden, seed);
    if let Init::PosePretrained(pre) = init {
        let copied = params.load_matching(pre);
        if copied != 2 * head.len() {
            return Err(Error::InvalidConfig(format!(
                "pre-trained weights cover {copied} of {} head-branch tensors",
                2 * head.len()
            )));
        }
    }
    Ok(LaeoNet {
        cfg: cfg.clone(),
        params,
        head,
        map,
        fc,
        out,
    })
}

impl<S: Scalar> LaeoNet<S> {
    /// Rebinds a loaded parameter set, checking every name and shape.
    pub fn from_params(cfg: &ModelConfig, params: ParamStore<S>) -> Result<Self> {
        cfg.validate()?;
        let head = find_convs(&params, "head", &cfg.head_layers())?;
        let map = find_convs(&params, "map", &cfg.map_layers())?;
        let fc = find_dense(&params, "fusion.fc", cfg.fusion_input_len(), cfg.hidden)?;
        let out = find_dense(&params, "fusion.out", cfg.hidden, 2)?;
        Ok(LaeoNet {
            cfg: cfg.clone(),
            params,
            head,
            map,
            fc,
            out,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<S> {
        self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn cast<T: Scalar>(&self) -> LaeoNet<T> {
        LaeoNet {
            cfg: self.cfg.clone(),
            params: self.params.cast(),
            head: self.head.clone(),
            map: self.map.clone(),
            fc: self.fc,
            out: self.out,
        }
    }

    /// Records a forward pass on `g`, whose parameter store must be this
    /// network's.
    pub fn forward(&self, g: &mut Graph<'_, S>, batch: &Batch<S>) -> Result<Forward> {
        let eps = self.cfg.l2_eps;
        let head = conv_nodes(g, &self.head)?;
        let left_in = g.input(batch.left.clone())?;
        let right_in = g.input(batch.right.clone())?;
        let left = branch(g, left_in, &head, eps)?;
        let right = branch(g, right_in, &head, eps)?;
        let map_convs = conv_nodes(g, &self.map)?;
        let map_in = g.input(batch.map.clone())?;
        let map = branch(g, map_in, &map_convs, eps)?;
        let joined = g.concat(&[left, right, map])?;
        let (fw, fb) = (g.param(self.fc.w)?, g.param(self.fc.b)?);
        let hidden = g.dense(joined, fw, fb)?;
        let hidden = g.relu(hidden)?;
        let hidden = g.dropout(hidden, self.cfg.dropout)?;
        let (ow, ob) = (g.param(self.out.w)?, g.param(self.out.b)?);
        let logits = g.dense(hidden, ow, ob)?;
        Ok(Forward { left, right, map, logits })
    }

    /// Mean classification loss of a batch, recorded on `g`.
    pub fn loss(&self, g: &mut Graph<'_, S>, batch: &Batch<S>) -> Result<NodeId> {
        let f = self.forward(g, batch)?;
        g.softmax_bce(f.logits, &batch.targets)
    }

    /// LAEO probabilities of a batch in inference mode.
    pub fn predict(&self, batch: &Batch<S>) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.params, false, 0);
        let f = self.forward(&mut g, batch)?;
        let probs = g.softmax(f.logits)?;
        Ok(g.value(probs).data().chunks(2).map(|r| r[1].as_f64()).collect())
    }
}

/// Samples scored per forward pass at inference.
pub const SCORE_BATCH: usize = 16;

impl LaeoNet<f32> {
    /// LAEO probability of one track pair; deterministic.
    pub fn score_pair(&self, sample: &TrackPairSample) -> Result<f64> {
        Ok(self.score_samples(&[sample])?[0])
    }

    pub fn score_samples(&self, samples: &[&TrackPairSample]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(SCORE_BATCH) {
            // labels are irrelevant for scoring
            let relabelled: Vec<TrackPairSample>;
            let chunk: Vec<&TrackPairSample> = if chunk.iter().any(|s| s.label == LaeoLabel::Ambiguous) {
                relabelled = chunk
                    .iter()
                    .map(|s| TrackPairSample {
                        label: LaeoLabel::NotLaeo,
                        ..(*s).clone()
                    })
                    .collect();
                relabelled.iter().collect()
            } else {
                chunk.to_vec()
            };
            let batch = Batch::from_samples(&chunk, self.cfg.t, self.cfg.m)?;
            out.extend(self.predict(&batch)?);
        }
        Ok(out)
    }

    /// Head-branch embeddings of crop stacks (central `T` crops).
    pub fn embed(&self, stacks: &[&CropStack]) -> Result<Vec<Vec<f32>>> {
        head_embeddings(&self.params, &self.head, self.cfg.t, self.cfg.l2_eps, stacks)
    }
}

fn head_embeddings(
    params: &ParamStore<f32>,
    head: &[ConvIds],
    t: usize,
    eps: f64,
    stacks: &[&CropStack],
) -> Result<Vec<Vec<f32>>> {
    let mut out = Vec::with_capacity(stacks.len());
    for chunk in stacks.chunks(SCORE_BATCH) {
        let x = stack_tensor(chunk, t)?;
        let mut g = Graph::new(params, false, 0);
        let convs = conv_nodes(&mut g, head)?;
        let xin = g.input(x)?;
        let e = branch(&mut g, xin, &convs, eps)?;
        let v = g.value(e);
        let d = v.len() / chunk.len();
        out.extend(v.data().chunks(d).map(|r| r.to_vec()));
    }
    Ok(out)
}

/// Head branch plus a linear regressor of the three normalized angles.
#[derive(Debug, Clone)]
pub struct PoseNet<S: Scalar = f32> {
    cfg: ModelConfig,
    params: ParamStore<S>,
    head: Vec<ConvIds>,
    out: DenseIds,
}

impl PoseNet<f32> {
    /// Same head-branch initialization as [`build_laeonet`] with `seed`.
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let head = add_convs(&mut params, "head", &cfg.head_layers(), seed);
        let out = add_dense(&mut params, "pose.out", cfg.head_embedding_len(), 3, 1, seed);
        Ok(PoseNet {
            cfg: cfg.clone(),
            params,
            head,
            out,
        })
    }

    /// Predicted poses in degrees (clamped into the valid ranges).
    pub fn predict(&self, stacks: &[&CropStack]) -> Result<Vec<HeadPose>> {
        let mut out = Vec::with_capacity(stacks.len());
        for chunk in stacks.chunks(SCORE_BATCH) {
            let x = stack_tensor(chunk, self.cfg.t)?;
            let mut g = Graph::new(&self.params, false, 0);
            let y = self.forward(&mut g, x)?;
            out.extend(g.value(y).data().chunks(3).map(|r| {
                let n = [r[0] as f64, r[1] as f64, r[2] as f64].map(|v| v.clamp(-1.0, 1.0));
                HeadPose::from_normalized(n)
            }));
        }
        Ok(out)
    }

    pub fn embed(&self, stacks: &[&CropStack]) -> Result<Vec<Vec<f32>>> {
        head_embeddings(&self.params, &self.head, self.cfg.t, self.cfg.l2_eps, stacks)
    }
}

impl<S: Scalar> PoseNet<S> {
    /// Rebinds a loaded parameter set, checking every name and shape.
    pub fn from_params(cfg: &ModelConfig, params: ParamStore<S>) -> Result<Self> {
        cfg.validate()?;
        let head = find_convs(&params, "head", &cfg.head_layers())?;
        let out = find_dense(&params, "pose.out", cfg.head_embedding_len(), 3)?;
        Ok(PoseNet {
            cfg: cfg.clone(),
            params,
            head,
            out,
        })
    }

    pub fn into_params(self) -> ParamStore<S> {
        self.params
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.params
    }

    pub fn cast<T: Scalar>(&self) -> PoseNet<T> {
        PoseNet {
            cfg: self.cfg.clone(),
            params: self.params.cast(),
            head: self.head.clone(),
            out: self.out,
        }
    }

    /// Normalized angle predictions `[N, 3]` for crops `[N, 3, T, 64, 64]`.
    pub fn forward(&self, g: &mut Graph<'_, S>, crops: Tensor<S>) -> Result<NodeId> {
        let convs = conv_nodes(g, &self.head)?;
        let x = g.input(crops)?;
        let e = branch(g, x, &convs, self.cfg.l2_eps)?;
        let (w, b) = (g.param(self.out.w)?, g.param(self.out.b)?);
        g.dense(e, w, b)
    }

    pub(crate) fn crops(stacks: &[&CropStack], t: usize) -> Result<Tensor<S>> {
        Ok(stack_tensor(stacks, t)?.cast())
    }
}
