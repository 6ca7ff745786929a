//! Synthetic track pairs labelled by a geometric gaze oracle.
//!
//! Heads live in a pinhole camera frame: depth follows from the head's
//! normalized height through a nominal physical head size, and the gaze
//! direction from yaw and pitch. A pair is LAEO when each head's gaze points
//! at the other head within the oracle tolerance.
//!
//! Negatives come from two strategies: mirroring one head of a positive, or
//! sampling poses that are incompatible with the geometry (heads looking the
//! same way, or one head looking past the other).

pub mod render;

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::domain::{BoundingBox, HeadPose, LaeoLabel};
use crate::error::{Error, Result};
use crate::headmap::{self, FrameHeads, FrameSize, GeometryFeatures, HeadMapConfig};
use crate::model::{CropStack, SampleSource, TrackPairSample};
use crate::rng::{derive, derive_seed, normal, seeded, uniform, SeededRng};
pub use render::{jitter_sequence, mirror_crop, render_crop, Appearance, JitterRanges};

/// Physical head height assumed when turning image scale into depth.
pub const HEAD_HEIGHT: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    /// Angular tolerance in degrees.
    pub tau_deg: f64,
    /// Frame width over frame height.
    pub aspect: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            tau_deg: 15.0,
            aspect: 16.0 / 9.0,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_deg > 0.0 && self.tau_deg < 90.0) {
            return Err(Error::InvalidConfig("oracle tolerance must lie in (0, 90) degrees".into()));
        }
        if !(self.aspect > 0.0 && self.aspect.is_finite()) {
            return Err(Error::InvalidConfig("frame aspect must be > 0".into()));
        }
        Ok(())
    }
}

/// A synthetic person: image position, scale and head pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticHead {
    /// Head center with the frame normalized to the unit square.
    pub center: (f64, f64),
    /// Head height over frame height.
    pub scale: f64,
    pub pose: HeadPose,
    /// Seed of the colors.
    pub appearance: u64,
    /// The crop is the mirror image of the head rendered with the mirrored
    /// pose (which is the original pose).
    pub mirrored: bool,
}

impl SyntheticHead {
    /// Camera-frame position: x right, y down, z away from the camera.
    pub fn position(&self, aspect: f64) -> [f64; 3] {
        let z = HEAD_HEIGHT / self.scale;
        [(self.center.0 - 0.5) * aspect * z, (self.center.1 - 0.5) * z, z]
    }

    pub fn crop(&self) -> Vec<f32> {
        let look = Appearance::sample(self.appearance);
        if self.mirrored {
            mirror_crop(&render_crop(&self.pose.mirrored(), &look))
        } else {
            render_crop(&self.pose, &look)
        }
    }

    /// The same head seen in a mirror: crop flipped, yaw and roll negated.
    pub fn mirror_head(&self) -> SyntheticHead {
        SyntheticHead {
            pose: self.pose.mirrored(),
            mirrored: !self.mirrored,
            ..*self
        }
    }
}

/// Unit gaze direction in the camera frame.
pub fn gaze_dir(pose: &HeadPose) -> [f64; 3] {
    let (y, p) = (pose.yaw.to_radians(), pose.pitch.to_radians());
    [
        libm::sin(y) * libm::cos(p),
        -libm::sin(p),
        -libm::cos(y) * libm::cos(p),
    ]
}

/// Pose whose gaze is the (unit) direction `d`.
pub fn pose_from_dir(d: [f64; 3], roll: f64) -> HeadPose {
    HeadPose {
        yaw: libm::atan2(d[0], -d[2]).to_degrees(),
        pitch: libm::asin(-d[1].clamp(-1.0, 1.0)).to_degrees(),
        roll,
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = libm::sqrt(dot(v, v));
    [v[0] / n, v[1] / n, v[2] / n]
}

fn angle_deg(a: [f64; 3], b: [f64; 3]) -> f64 {
    libm::acos((dot(a, b) / libm::sqrt(dot(a, a) * dot(b, b))).clamp(-1.0, 1.0)).to_degrees()
}

/// Angles in degrees between each head's gaze and the direction to the
/// other head.
pub fn mutual_angles(a: &SyntheticHead, b: &SyntheticHead, cfg: &OracleConfig) -> Result<(f64, f64)> {
    if a.center == b.center {
        return Err(Error::CoincidentHeads);
    }
    let (pa, pb) = (a.position(cfg.aspect), b.position(cfg.aspect));
    let ab = sub(pb, pa);
    let ba = sub(pa, pb);
    Ok((angle_deg(gaze_dir(&a.pose), ab), angle_deg(gaze_dir(&b.pose), ba)))
}

/// Slack on the tolerance that absorbs rounding in the angle computation.
const ANGLE_SLACK: f64 = 1e-9;

pub fn gaze_oracle(a: &SyntheticHead, b: &SyntheticHead, cfg: &OracleConfig) -> Result<LaeoLabel> {
    let (ta, tb) = mutual_angles(a, b, cfg)?;
    let limit = cfg.tau_deg + ANGLE_SLACK;
    Ok(if ta <= limit && tb <= limit {
        LaeoLabel::Laeo
    } else {
        LaeoLabel::NotLaeo
    })
}

/// How a synthetic pair was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PairKind {
    Positive,
    /// A positive with one head mirrored.
    Mirrored,
    /// Both heads turned the same way (yaws within 30 degrees).
    SameDirection,
    /// One head looks at the other, the other looks past it.
    LooksPast,
}

impl PairKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PairKind::Positive => "positive",
            PairKind::Mirrored => "mirrored",
            PairKind::SameDirection => "same_direction",
            PairKind::LooksPast => "looks_past",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    /// Crops per track.
    pub t: usize,
    pub frame: FrameSize,
    pub headmap: HeadMapConfig,
    pub tau_deg: f64,
    pub jitter: JitterRanges,
    /// Probability that a crop frame is replaced by noise (lost detection).
    pub lost_frame_prob: f64,
    /// Standard deviation of per-frame box center noise, in head heights.
    pub box_noise: f64,
    /// Standard deviation of per-frame relative box size noise.
    pub scale_noise: f64,
    /// Bystander heads per scene are drawn from `0..=max_others`.
    pub max_others: usize,
    pub max_attempts: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            t: 10,
            frame: FrameSize::default(),
            headmap: HeadMapConfig::default(),
            tau_deg: 15.0,
            jitter: JitterRanges::default(),
            lost_frame_prob: 0.25,
            box_noise: 0.1,
            scale_noise: 0.1,
            max_others: 2,
            max_attempts: 1000,
        }
    }
}

impl SynthConfig {
    pub fn oracle(&self) -> OracleConfig {
        OracleConfig {
            tau_deg: self.tau_deg,
            aspect: self.frame.width / self.frame.height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.oracle().validate()?;
        self.headmap.validate()?;
        if self.t == 0 || self.headmap.m > self.t {
            return Err(Error::InvalidConfig("need 1 <= M <= T".into()));
        }
        if !(0.0..=1.0).contains(&self.lost_frame_prob) {
            return Err(Error::InvalidConfig("lost_frame_prob must lie in [0, 1]".into()));
        }
        if self.box_noise < 0.0 || self.scale_noise < 0.0 || self.scale_noise >= 0.5 {
            return Err(Error::InvalidConfig("box noise must be >= 0 and scale noise in [0, 0.5)".into()));
        }
        let j = &self.jitter;
        if j.shift_px < 0.0 || !(0.0..1.0).contains(&j.zoom) || j.brightness < 0.0 {
            return Err(Error::InvalidConfig("jitter ranges must be >= 0 and zoom < 1".into()));
        }
        if self.max_attempts == 0 {
            return Err(Error::InvalidConfig("max_attempts must be >= 1".into()));
        }
        Ok(())
    }
}

/// A generated pair with the ground truth it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPair {
    pub sample: TrackPairSample,
    pub left: SyntheticHead,
    pub right: SyntheticHead,
    pub kind: PairKind,
    /// Geometry features at the central frame of the noisy boxes.
    pub geometry: GeometryFeatures,
}

/// Smallest horizontal share of the head-to-head direction, and of each
/// gaze, in generated scenes. Together with the tolerance bound this keeps a
/// mirrored gaze more than `2 tau` away from the original one.
const MIN_HORIZONTAL: f64 = 0.5;
const MIN_GAZE_HORIZONTAL: f64 = 0.3;

fn sample_head<R: Rng + ?Sized>(rng: &mut R) -> SyntheticHead {
    SyntheticHead {
        center: (uniform(rng, 0.12, 0.88), uniform(rng, 0.3, 0.7)),
        scale: uniform(rng, 0.12, 0.3),
        pose: HeadPose::default(),
        appearance: rng.gen(),
        mirrored: false,
    }
}

/// Two heads far enough apart, mostly side by side in 3D.
fn sample_layout<R: Rng + ?Sized>(rng: &mut R, cfg: &OracleConfig) -> (SyntheticHead, SyntheticHead, [f64; 3]) {
    loop {
        let a = sample_head(rng);
        let b = sample_head(rng);
        if (a.center.0 - b.center.0).abs() < 0.2 {
            continue;
        }
        let d = unit(sub(b.position(cfg.aspect), a.position(cfg.aspect)));
        if d[0].abs() >= MIN_HORIZONTAL {
            return (a, b, d);
        }
    }
}

/// `d` rotated by `angle` degrees towards a random orthogonal direction.
fn tilt<R: Rng + ?Sized>(rng: &mut R, d: [f64; 3], angle: f64) -> [f64; 3] {
    let r = loop {
        let v = [normal(rng), normal(rng), normal(rng)];
        let k = dot(v, d);
        let o = [v[0] - k * d[0], v[1] - k * d[1], v[2] - k * d[2]];
        if dot(o, o) > 1e-8 {
            break unit(o);
        }
    };
    let (c, s) = (libm::cos(angle.to_radians()), libm::sin(angle.to_radians()));
    unit([d[0] * c + r[0] * s, d[1] * c + r[1] * s, d[2] * c + r[2] * s])
}

fn neg(d: [f64; 3]) -> [f64; 3] {
    [-d[0], -d[1], -d[2]]
}

fn sample_roll<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    uniform(rng, -25.0, 25.0)
}

fn positive_heads<R: Rng + ?Sized>(rng: &mut R, cfg: &OracleConfig) -> Option<(SyntheticHead, SyntheticHead)> {
    let (mut a, mut b, d) = sample_layout(rng, cfg);
    let (ta, tb) = (uniform(rng, 0.0, 0.9 * cfg.tau_deg), uniform(rng, 0.0, 0.9 * cfg.tau_deg));
    let ga = tilt(rng, d, ta);
    let gb = tilt(rng, neg(d), tb);
    if ga[0].abs() < MIN_GAZE_HORIZONTAL || gb[0].abs() < MIN_GAZE_HORIZONTAL {
        return None;
    }
    a.pose = pose_from_dir(ga, sample_roll(rng));
    b.pose = pose_from_dir(gb, sample_roll(rng));
    Some((a, b))
}

fn wrap_deg(a: f64) -> f64 {
    let mut a = a % 360.0;
    if a > 180.0 {
        a -= 360.0;
    } else if a < -180.0 {
        a += 360.0;
    }
    a
}

fn negative_heads<R: Rng + ?Sized>(
    rng: &mut R,
    kind: PairKind,
    cfg: &OracleConfig,
) -> Option<(SyntheticHead, SyntheticHead)> {
    match kind {
        PairKind::Positive => positive_heads(rng, cfg),
        PairKind::Mirrored => {
            let (a, b) = positive_heads(rng, cfg)?;
            Some(if rng.gen::<bool>() { (a.mirror_head(), b) } else { (a, b.mirror_head()) })
        }
        PairKind::SameDirection => {
            let (mut a, mut b, _) = sample_layout(rng, cfg);
            let yaw = uniform(rng, -180.0, 180.0);
            a.pose = HeadPose {
                yaw,
                pitch: uniform(rng, -20.0, 20.0),
                roll: sample_roll(rng),
            };
            b.pose = HeadPose {
                yaw: wrap_deg(yaw + uniform(rng, -30.0, 30.0)),
                pitch: uniform(rng, -20.0, 20.0),
                roll: sample_roll(rng),
            };
            Some((a, b))
        }
        PairKind::LooksPast => {
            let (mut a, mut b, d) = sample_layout(rng, cfg);
            let good = uniform(rng, 0.0, 0.9 * cfg.tau_deg);
            let bad = uniform(rng, 2.0 * cfg.tau_deg, 5.0 * cfg.tau_deg);
            let (ta, tb) = if rng.gen::<bool>() { (bad, good) } else { (good, bad) };
            a.pose = pose_from_dir(tilt(rng, d, ta), sample_roll(rng));
            b.pose = pose_from_dir(tilt(rng, neg(d), tb), sample_roll(rng));
            Some((a, b))
        }
    }
}

/// Per-frame boxes of a static head seen through a noisy detector.
fn noisy_boxes<R: Rng + ?Sized>(rng: &mut R, head: &SyntheticHead, cfg: &SynthConfig) -> Vec<BoundingBox> {
    let (w, h) = (cfg.frame.width, cfg.frame.height);
    let size = head.scale * h;
    (0..cfg.t)
        .map(|_| {
            let cx = head.center.0 * w + cfg.box_noise * size * normal(rng);
            let cy = head.center.1 * h + cfg.box_noise * size * normal(rng);
            let s = size * (1.0 + (cfg.scale_noise * normal(rng)).clamp(-0.5, 0.5));
            BoundingBox {
                x1: cx - s / 2.0,
                y1: cy - s / 2.0,
                x2: cx + s / 2.0,
                y2: cy + s / 2.0,
            }
        })
        .collect()
}

fn crop_stack<R: Rng + ?Sized>(rng: &mut R, head: &SyntheticHead, cfg: &SynthConfig) -> Result<CropStack> {
    let mut frames = jitter_sequence(&head.crop(), cfg.t, &cfg.jitter, rng.gen());
    for f in frames.iter_mut() {
        if rng.gen::<f64>() < cfg.lost_frame_prob {
            *f = render::noise_crop(rng);
        }
    }
    CropStack::from_frames(&frames)
}

/// Packages two heads and their label as network input.
fn build_sample(
    rng: &mut SeededRng,
    a: SyntheticHead,
    b: SyntheticHead,
    label: LaeoLabel,
    kind: PairKind,
    cfg: &SynthConfig,
) -> Result<SyntheticPair> {
    let (left, right) = if a.center.0 <= b.center.0 { (a, b) } else { (b, a) };
    let left_boxes = noisy_boxes(rng, &left, cfg);
    let right_boxes = noisy_boxes(rng, &right, cfg);
    let n_others = rng.gen_range(0..=cfg.max_others);
    let others: Vec<Vec<BoundingBox>> = (0..n_others)
        .map(|_| {
            let o = sample_head(rng);
            noisy_boxes(rng, &o, cfg)
        })
        .collect();
    let start = headmap::central_start(cfg.t, cfg.headmap.m);
    let frames: Vec<FrameHeads> = (start..start + cfg.headmap.m)
        .map(|k| FrameHeads {
            left: left_boxes[k],
            right: right_boxes[k],
            others: others.iter().map(|o| o[k]).collect(),
        })
        .collect();
    let map = headmap::render_frames(&frames, &cfg.frame, &cfg.headmap)?;
    let c = cfg.t / 2;
    let geometry = headmap::geometry_from_boxes(&left_boxes[c], &right_boxes[c], &cfg.frame)?;
    let left_crops = crop_stack(rng, &left, cfg)?;
    let right_crops = crop_stack(rng, &right, cfg)?;
    Ok(SyntheticPair {
        sample: TrackPairSample {
            left: left_crops,
            right: right_crops,
            map,
            label,
        },
        left,
        right,
        kind,
        geometry,
    })
}

fn unsatisfiable(kind: PairKind, attempts: usize) -> Error {
    Error::Unsatisfiable {
        want: kind.as_str(),
        attempts,
    }
}

/// A pair of the given kind; the label always agrees with the oracle.
pub fn make_pair_of_kind(seed: u64, kind: PairKind, cfg: &SynthConfig) -> Result<SyntheticPair> {
    cfg.validate()?;
    let oracle = cfg.oracle();
    let want = if kind == PairKind::Positive {
        LaeoLabel::Laeo
    } else {
        LaeoLabel::NotLaeo
    };
    let mut rng = seeded(seed);
    for _ in 0..cfg.max_attempts {
        let Some((a, b)) = negative_heads(&mut rng, kind, &oracle) else {
            continue;
        };
        if gaze_oracle(&a, &b, &oracle)? == want {
            return build_sample(&mut rng, a, b, want, kind, cfg);
        }
    }
    Err(unsatisfiable(kind, cfg.max_attempts))
}

/// A pair with label `want`. Negatives are mirrored positives half of the
/// time and pose-incompatible pairs otherwise (same direction or looking
/// past, in equal shares).
pub fn make_pair(seed: u64, want: LaeoLabel, cfg: &SynthConfig) -> Result<SyntheticPair> {
    let kind = match want {
        LaeoLabel::Laeo => PairKind::Positive,
        LaeoLabel::NotLaeo => {
            let mut rng = derive(seed, 0x4E47);
            let u: f64 = rng.gen();
            if u < 0.5 {
                PairKind::Mirrored
            } else if u < 0.75 {
                PairKind::SameDirection
            } else {
                PairKind::LooksPast
            }
        }
        LaeoLabel::Ambiguous => {
            return Err(Error::InvalidValue("cannot synthesize ambiguous pairs".into()));
        }
    };
    make_pair_of_kind(seed, kind, cfg)
}

/// A random head with its pose, as a jittered `T`-frame crop stack for
/// head-pose pre-training.
pub fn pose_sample(seed: u64, cfg: &SynthConfig) -> Result<(CropStack, HeadPose)> {
    let mut rng = seeded(seed);
    let mut head = sample_head(&mut rng);
    head.pose = HeadPose {
        yaw: uniform(&mut rng, -180.0, 180.0),
        pitch: uniform(&mut rng, -60.0, 60.0),
        roll: sample_roll(&mut rng),
    };
    let frames = jitter_sequence(&head.crop(), cfg.t, &cfg.jitter, rng.gen());
    Ok((CropStack::from_frames(&frames)?, head.pose))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

/// Share of each class held out for validation.
pub const VAL_FRACTION: f64 = 0.1;

/// A reproducible labelled set. Samples are generated on demand from the
/// master seed and their index.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    seed: u64,
    cfg: SynthConfig,
    labels: Vec<LaeoLabel>,
    splits: Vec<Split>,
}

pub fn generate_dataset(n_pos: usize, n_neg: usize, seed: u64, cfg: &SynthConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let mut labels: Vec<LaeoLabel> = vec![LaeoLabel::Laeo; n_pos];
    labels.extend(core::iter::repeat_n(LaeoLabel::NotLaeo, n_neg));
    labels.shuffle(&mut derive(seed, u64::MAX));
    let val_pos = libm::round(n_pos as f64 * VAL_FRACTION) as usize;
    let val_neg = libm::round(n_neg as f64 * VAL_FRACTION) as usize;
    let (mut seen_pos, mut seen_neg) = (0, 0);
    let splits = labels
        .iter()
        .map(|l| {
            let (seen, quota) = if *l == LaeoLabel::Laeo {
                (&mut seen_pos, val_pos)
            } else {
                (&mut seen_neg, val_neg)
            };
            *seen += 1;
            if *seen <= quota {
                Split::Val
            } else {
                Split::Train
            }
        })
        .collect();
    Ok(SyntheticDataset {
        seed,
        cfg: *cfg,
        labels,
        splits,
    })
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn config(&self) -> &SynthConfig {
        &self.cfg
    }

    pub fn label(&self, i: usize) -> LaeoLabel {
        self.labels[i]
    }

    pub fn split(&self, i: usize) -> Split {
        self.splits[i]
    }

    pub fn pair(&self, i: usize) -> Result<SyntheticPair> {
        make_pair(derive_seed(self.seed, i as u64), self.labels[i], &self.cfg)
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn view(&self, split: Split) -> DatasetView<'_> {
        DatasetView {
            dataset: self,
            indices: self.indices(split),
        }
    }

    pub fn all(&self) -> DatasetView<'_> {
        DatasetView {
            dataset: self,
            indices: (0..self.len()).collect(),
        }
    }
}

impl SampleSource for SyntheticDataset {
    fn len(&self) -> usize {
        self.labels.len()
    }

    fn label(&self, i: usize) -> LaeoLabel {
        self.labels[i]
    }

    fn get(&self, i: usize) -> Result<TrackPairSample> {
        Ok(self.pair(i)?.sample)
    }
}

/// A subset of a [`SyntheticDataset`] as a [`SampleSource`].
#[derive(Debug, Clone)]
pub struct DatasetView<'a> {
    dataset: &'a SyntheticDataset,
    indices: Vec<usize>,
}

impl DatasetView<'_> {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn pair(&self, i: usize) -> Result<SyntheticPair> {
        self.dataset.pair(self.indices[i])
    }
}

impl SampleSource for DatasetView<'_> {
    fn len(&self) -> usize {
        self.indices.len()
    }

    fn label(&self, i: usize) -> LaeoLabel {
        self.dataset.label(self.indices[i])
    }

    fn get(&self, i: usize) -> Result<TrackPairSample> {
        Ok(self.pair(i)?.sample)
    }
}
