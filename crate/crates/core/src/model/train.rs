use alloc::boxed::Box;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::net::{Batch, LaeoNet};
use super::sample::{CropStack, SampleSource, TrackPairSample};
use crate::domain::LaeoLabel;
use crate::error::{Error, Result};
use crate::eval::average_precision_labels;
use crate::headmap::{HeadMap, MAP_CHANNELS};
use crate::nn::{Graph, Sgd};
use crate::rng::{derive, derive_seed, uniform, SeededRng};
use crate::synth::render::warp;
use crate::synth::{generate_dataset, SynthConfig};

/// Ranges of the training-time perturbations. One draw per sample is applied
/// to every crop of both tracks and, for the geometric part, to the head-map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub shift_px: f64,
    pub zoom: f64,
    pub brightness: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            shift_px: 3.0,
            zoom: 0.05,
            brightness: 0.1,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        AugmentConfig {
            shift_px: 0.0,
            zoom: 0.0,
            brightness: 0.0,
        }
    }

    pub fn is_none(&self) -> bool {
        self.shift_px == 0.0 && self.zoom == 0.0 && self.brightness == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Leading epochs that see synthetic data only.
    pub synth_only_epochs: usize,
    /// Epochs between difficulty increases.
    pub curriculum_period: usize,
    pub difficulty_step: f64,
    pub augment: AugmentConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 8,
            batch_size: 16,
            lr: 1e-3,
            momentum: 0.9,
            synth_only_epochs: 2,
            curriculum_period: 2,
            difficulty_step: 0.25,
            augment: AugmentConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(alloc::format!("train: {m}")));
        if self.batch_size == 0 {
            return bad("batch size must be >= 1");
        }
        if self.curriculum_period == 0 {
            return bad("curriculum period must be >= 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(0.0..1.0).contains(&self.momentum) {
            return bad("lr must be > 0 and momentum in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.difficulty_step) {
            return bad("difficulty step must be in [0, 1]");
        }
        let a = &self.augment;
        if a.shift_px < 0.0 || !(0.0..1.0).contains(&a.zoom) || a.brightness < 0.0 {
            return bad("augmentation ranges must be >= 0 and zoom < 1");
        }
        Ok(())
    }

    /// Hard-negative difficulty of `epoch` (0-based): one step per started
    /// curriculum period, capped at 1.
    pub fn difficulty(&self, epoch: usize) -> f64 {
        let steps = epoch.div_ceil(self.curriculum_period);
        (steps as f64 * self.difficulty_step).min(1.0)
    }

    /// Synthetic for the first epochs, then real and synthetic in turn.
    pub fn epoch_kind(&self, epoch: usize, has_real: bool) -> EpochKind {
        if !has_real || epoch < self.synth_only_epochs || (epoch - self.synth_only_epochs) % 2 == 1 {
            EpochKind::Synthetic
        } else {
            EpochKind::Real
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpochKind {
    Synthetic,
    Real,
}

impl EpochKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EpochKind::Synthetic => "synthetic",
            EpochKind::Real => "real",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub kind: EpochKind,
    pub difficulty: f64,
    /// Mean training loss over the epoch's samples.
    pub loss: f64,
    /// `None` when the validation set has no positives.
    pub val_ap: Option<f64>,
    pub positives: usize,
    pub negatives: usize,
    /// Negatives picked for their score rather than uniformly.
    pub hard_negatives: usize,
    /// No negative passed the difficulty threshold; sampled uniformly.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

/// Training samples of one epoch.
pub trait EpochData {
    fn epoch(&self, epoch: usize) -> Result<Box<dyn SampleSource + '_>>;
}

/// The same samples every epoch.
pub struct Fixed<'a>(pub &'a dyn SampleSource);

struct Borrowed<'a>(&'a dyn SampleSource);

impl SampleSource for Borrowed<'_> {
    fn len(&self) -> usize {
        self.0.len()
    }

    fn label(&self, i: usize) -> LaeoLabel {
        self.0.label(i)
    }

    fn get(&self, i: usize) -> Result<TrackPairSample> {
        self.0.get(i)
    }
}

impl EpochData for Fixed<'_> {
    fn epoch(&self, _epoch: usize) -> Result<Box<dyn SampleSource + '_>> {
        Ok(Box::new(Borrowed(self.0)))
    }
}

/// A fresh synthetic set per epoch: `n_pos` positives and a pool of
/// `2 n_pos` negatives for the curriculum to choose from.
#[derive(Debug, Clone)]
pub struct SynthStream {
    pub n_pos: usize,
    pub seed: u64,
    pub cfg: SynthConfig,
}

impl EpochData for SynthStream {
    fn epoch(&self, epoch: usize) -> Result<Box<dyn SampleSource + '_>> {
        let ds = generate_dataset(self.n_pos, 2 * self.n_pos, derive_seed(self.seed, epoch as u64), &self.cfg)?;
        Ok(Box::new(ds))
    }
}

/// `budget` pool positions drawn uniformly without replacement.
pub fn uniform_negatives(pool: usize, budget: usize, rng: &mut SeededRng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..pool).collect();
    idx.shuffle(rng);
    idx.truncate(budget.min(pool));
    idx
}

/// Outcome of hard-negative selection: chosen pool positions, how many of
/// them were picked by score, and whether the uniform fallback was used.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeSelection {
    pub chosen: Vec<usize>,
    pub hard: usize,
    pub fallback: bool,
}

/// Keeps the negatives scoring at or above the `(1 - d)`-quantile of the
/// pool's scores, hardest first, up to `budget`; the rest of the budget is
/// filled uniformly. `d = 0` is plain uniform sampling.
pub fn select_negatives(scores: &[f64], budget: usize, d: f64, rng: &mut SeededRng) -> NegativeSelection {
    let budget = budget.min(scores.len());
    if d <= 0.0 || scores.is_empty() {
        return NegativeSelection {
            chosen: uniform_negatives(scores.len(), budget, rng),
            hard: 0,
            fallback: false,
        };
    }
    let mut sorted: Vec<f64> = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = (1.0 - d.min(1.0)) * (sorted.len() - 1) as f64;
    let threshold = sorted[libm::floor(q) as usize];
    let mut eligible: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= threshold).collect();
    if eligible.is_empty() {
        return NegativeSelection {
            chosen: uniform_negatives(scores.len(), budget, rng),
            hard: 0,
            fallback: true,
        };
    }
    eligible.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    eligible.truncate(budget);
    let hard = eligible.len();
    let mut taken = alloc::vec![false; scores.len()];
    for &i in &eligible {
        taken[i] = true;
    }
    let mut rest: Vec<usize> = (0..scores.len()).filter(|&i| !taken[i]).collect();
    rest.shuffle(rng);
    eligible.extend(rest.into_iter().take(budget - hard));
    NegativeSelection {
        chosen: eligible,
        hard,
        fallback: false,
    }
}

/// One random perturbation applied coherently to a sample.
pub fn augment(sample: &TrackPairSample, aug: &AugmentConfig, seed: u64) -> Result<TrackPairSample> {
    if aug.is_none() {
        return Ok(sample.clone());
    }
    let mut rng = crate::rng::seeded(seed);
    let shift = (
        uniform(&mut rng, -aug.shift_px, aug.shift_px),
        uniform(&mut rng, -aug.shift_px, aug.shift_px),
    );
    let zoom = uniform(&mut rng, 1.0 - aug.zoom, 1.0 + aug.zoom);
    let brightness = uniform(&mut rng, -aug.brightness, aug.brightness);
    let crops = |s: &CropStack| -> Result<CropStack> {
        let frames: Vec<Vec<f32>> = (0..s.frames())
            .map(|i| warp(s.frame(i), 3, shift, zoom, brightness, true))
            .collect();
        CropStack::from_frames(&frames)
    };
    let plane = crate::headmap::MAP_SIDE * crate::headmap::MAP_SIDE * MAP_CHANNELS;
    let mut map = Vec::with_capacity(sample.map.data().len());
    for f in sample.map.data().chunks(plane) {
        map.extend(warp(f, MAP_CHANNELS, shift, zoom, 0.0, false));
    }
    Ok(TrackPairSample {
        left: crops(&sample.left)?,
        right: crops(&sample.right)?,
        map: HeadMap::from_data(sample.map.frames(), map)?,
        label: sample.label,
    })
}

/// LAEO probabilities of every sample of a source.
pub fn score_source(net: &LaeoNet, source: &dyn SampleSource) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(source.len());
    let mut chunk: Vec<TrackPairSample> = Vec::new();
    let (t, m) = (net.config().t, net.config().m);
    for i in 0..source.len() {
        chunk.push(source.get(i)?.narrowed(t, m)?);
        if chunk.len() == super::net::SCORE_BATCH || i + 1 == source.len() {
            let refs: Vec<&TrackPairSample> = chunk.iter().collect();
            out.extend(net.score_samples(&refs)?);
            chunk.clear();
        }
    }
    Ok(out)
}

/// AP of the network on a labelled source.
pub fn evaluate_source(net: &LaeoNet, source: &dyn SampleSource) -> Result<f64> {
    let scores = score_source(net, source)?;
    let labels: Vec<LaeoLabel> = (0..source.len()).map(|i| source.label(i)).collect();
    average_precision_labels(&scores, &labels)
}

struct Subset<'a> {
    source: &'a dyn SampleSource,
    indices: Vec<usize>,
}

impl SampleSource for Subset<'_> {
    fn len(&self) -> usize {
        self.indices.len()
    }

    fn label(&self, i: usize) -> LaeoLabel {
        self.source.label(self.indices[i])
    }

    fn get(&self, i: usize) -> Result<TrackPairSample> {
        self.source.get(self.indices[i])
    }
}

/// Trains `net` in place. Each epoch uses every positive of its data and as
/// many negatives (if available) chosen by the curriculum; the loss is the
/// mean binary cross entropy and validation AP is measured after the epoch.
pub fn train(
    net: &mut LaeoNet,
    real: Option<&dyn SampleSource>,
    synthetic: &dyn EpochData,
    val: &dyn SampleSource,
    cfg: &TrainConfig,
) -> Result<History> {
    cfg.validate()?;
    let (t, m) = (net.config().t, net.config().m);
    let mut opt = Sgd::new(cfg.lr, cfg.momentum);
    let mut history = History::default();
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let kind = cfg.epoch_kind(epoch, real.is_some());
        let generated;
        let data: &dyn SampleSource = match (kind, real) {
            (EpochKind::Real, Some(r)) => r,
            _ => {
                generated = synthetic.epoch(epoch)?;
                &*generated
            }
        };
        let d = cfg.difficulty(epoch);
        let positives: Vec<usize> = (0..data.len()).filter(|&i| data.label(i) == LaeoLabel::Laeo).collect();
        let pool: Vec<usize> = (0..data.len()).filter(|&i| data.label(i) == LaeoLabel::NotLaeo).collect();
        let budget = positives.len().min(pool.len());
        let mut rng = derive(cfg.seed, epoch as u64);
        let selection = if budget == pool.len() {
            NegativeSelection {
                chosen: (0..pool.len()).collect(),
                hard: 0,
                fallback: false,
            }
        } else {
            let scores = if d > 0.0 {
                let sub = Subset {
                    source: data,
                    indices: pool.clone(),
                };
                score_source(net, &sub)?
            } else {
                alloc::vec![0.0; pool.len()]
            };
            select_negatives(&scores, budget, d, &mut rng)
        };
        let mut order: Vec<usize> = positives.clone();
        order.extend(selection.chosen.iter().map(|&k| pool[k]));
        if order.is_empty() {
            return Err(Error::Empty("training samples"));
        }
        order.shuffle(&mut rng);
        let aug_seed = derive_seed(cfg.seed ^ 0xA5A5, epoch as u64);
        let mut total = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let mut samples = Vec::with_capacity(idx.len());
            for (j, &i) in idx.iter().enumerate() {
                let s = data.get(i)?.narrowed(t, m)?;
                let pos = (b * cfg.batch_size + j) as u64;
                samples.push(augment(&s, &cfg.augment, derive_seed(aug_seed, pos))?);
            }
            let refs: Vec<&TrackPairSample> = samples.iter().collect();
            let batch = Batch::from_samples(&refs, t, m)?;
            let grads = {
                let mut g = Graph::new(net.params(), true, derive_seed(cfg.seed, step));
                let loss = net.loss(&mut g, &batch)?;
                total += g.value(loss).data()[0] as f64 * idx.len() as f64;
                g.backward(loss)?
            };
            if !grads.is_finite() {
                return Err(Error::InvalidValue(alloc::format!("non-finite gradient at epoch {epoch}")));
            }
            opt.step(net.params_mut(), &grads);
            step += 1;
        }
        let val_ap = if val.is_empty() {
            None
        } else {
            match evaluate_source(net, val) {
                Ok(ap) => Some(ap),
                Err(Error::NoPositives) => None,
                Err(e) => return Err(e),
            }
        };
        history.epochs.push(EpochRecord {
            epoch,
            kind,
            difficulty: d,
            loss: total / order.len() as f64,
            val_ap,
            positives: positives.len(),
            negatives: selection.chosen.len(),
            hard_negatives: selection.hard,
            fallback: selection.fallback,
        });
    }
    Ok(history)
}
