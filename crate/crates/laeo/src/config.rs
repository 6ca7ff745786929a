//! Run configuration: one flat namespace of typed keys. A TOML file may set
//! any subset of them (`model.t = 10` or `[model]` tables alike), command
//! line `--set key=value` pairs override the file, and unknown keys are
//! rejected. The effective configuration is echoed next to every output.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use laeo_core::eval::EvalProtocol;
use laeo_core::headmap::{FrameSize, HeadMapConfig};
use laeo_core::model::{AugmentConfig, ModelConfig, PretrainConfig, TrainConfig};
use laeo_core::nn::PoseLossWeights;
use laeo_core::synth::{JitterRanges, SynthConfig};
use laeo_core::tracker::LinkerConfig;

use crate::error::{invalid, io_at, Result};
use crate::formats::{write_file, FORMAT_VERSION};

pub const CONFIG_FILE: &str = "config.toml";

/// A value type a key can hold.
pub trait KeyValue: Sized {
    fn from_toml(v: &toml::Value) -> Option<Self>;
    fn to_toml(&self) -> String;
    fn type_name() -> &'static str;
}

impl KeyValue for u64 {
    fn from_toml(v: &toml::Value) -> Option<Self> {
        v.as_integer().and_then(|i| u64::try_from(i).ok())
    }
    fn to_toml(&self) -> String {
        self.to_string()
    }
    fn type_name() -> &'static str {
        "unsigned integer"
    }
}

impl KeyValue for usize {
    fn from_toml(v: &toml::Value) -> Option<Self> {
        v.as_integer().and_then(|i| usize::try_from(i).ok())
    }
    fn to_toml(&self) -> String {
        self.to_string()
    }
    fn type_name() -> &'static str {
        "unsigned integer"
    }
}

impl KeyValue for f64 {
    fn from_toml(v: &toml::Value) -> Option<Self> {
        v.as_float().or_else(|| v.as_integer().map(|i| i as f64)).filter(|f| f.is_finite())
    }
    fn to_toml(&self) -> String {
        // `{:?}` keeps a decimal point so the value reads back as a float
        format!("{self:?}")
    }
    fn type_name() -> &'static str {
        "number"
    }
}

impl KeyValue for String {
    fn from_toml(v: &toml::Value) -> Option<Self> {
        v.as_str().map(str::to_string)
    }
    fn to_toml(&self) -> String {
        toml::Value::String(self.clone()).to_string()
    }
    fn type_name() -> &'static str {
        "string"
    }
}

impl KeyValue for Vec<usize> {
    fn from_toml(v: &toml::Value) -> Option<Self> {
        v.as_array()?.iter().map(usize::from_toml).collect()
    }
    fn to_toml(&self) -> String {
        let items: Vec<String> = self.iter().map(|v| v.to_string()).collect();
        format!("[{}]", items.join(", "))
    }
    fn type_name() -> &'static str {
        "list of unsigned integers"
    }
}

macro_rules! run_config {
    ($($field:ident : $ty:ty = $default:expr, $key:literal, $doc:literal;)*) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct RunConfig {
            $(pub $field: $ty,)*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                RunConfig { $($field: $default,)* }
            }
        }

        impl RunConfig {
            /// Every key with its type and description, in file order.
            pub const KEYS: &'static [(&'static str, &'static str)] = &[$(($key, $doc),)*];

            pub fn set(&mut self, key: &str, value: &toml::Value) -> Result<()> {
                match key {
                    $($key => {
                        self.$field = <$ty as KeyValue>::from_toml(value).ok_or_else(|| {
                            invalid(format!("config key {key}: expected a {}, got {value}", <$ty as KeyValue>::type_name()))
                        })?;
                    })*
                    _ => return Err(invalid(format!("unknown config key {key:?}"))),
                }
                Ok(())
            }

            /// `(key, rendered value)` pairs in file order.
            pub fn values(&self) -> Vec<(&'static str, String)> {
                vec![$(($key, KeyValue::to_toml(&self.$field)),)*]
            }
        }
    };
}

run_config! {
    seed: u64 = 7, "seed", "master seed of every random draw";
    frame_width: f64 = FrameSize::default().width, "frame.width", "frame width in pixels";
    frame_height: f64 = FrameSize::default().height, "frame.height", "frame height in pixels";
    linker_iou: f64 = LinkerConfig::default().iou_link_threshold, "linker.iou_threshold", "minimum IoU to extend a track";
    linker_max_missed: u64 = LinkerConfig::default().max_missed_frames as u64, "linker.max_missed_frames", "frames a track may go undetected";
    linker_min_length: usize = LinkerConfig::default().min_track_length, "linker.min_track_length", "shorter tracks are dropped";
    headmap_m: usize = HeadMapConfig::default().m, "headmap.m", "head-map frames per sample";
    headmap_sigma_ratio: f64 = HeadMapConfig::default().sigma_ratio, "headmap.sigma_ratio", "blob width relative to head height";
    headmap_cutoff: f64 = HeadMapConfig::default().cutoff, "headmap.cutoff", "blob radius in widths";
    synth_t: usize = SynthConfig::default().t, "synth.t", "crops per track in generated samples";
    synth_tau_deg: f64 = SynthConfig::default().tau_deg, "synth.tau_deg", "gaze oracle angle threshold in degrees";
    synth_lost_frame_prob: f64 = SynthConfig::default().lost_frame_prob, "synth.lost_frame_prob", "chance a crop is replaced by noise";
    synth_box_noise: f64 = SynthConfig::default().box_noise, "synth.box_noise", "box center noise in head heights";
    synth_scale_noise: f64 = SynthConfig::default().scale_noise, "synth.scale_noise", "relative box size noise";
    synth_max_others: usize = SynthConfig::default().max_others, "synth.max_others", "maximum bystander heads per scene";
    synth_shift_px: f64 = JitterRanges::default().shift_px, "synth.jitter_shift_px", "per-frame crop shift in pixels";
    synth_zoom: f64 = JitterRanges::default().zoom, "synth.jitter_zoom", "per-frame crop zoom range";
    synth_brightness: f64 = JitterRanges::default().brightness, "synth.jitter_brightness", "per-frame crop brightness range";
    model_t: usize = ModelConfig::default().t, "model.t", "crops per track seen by the classifier";
    model_m: usize = ModelConfig::default().m, "model.m", "head-map frames seen by the classifier";
    model_head_channels: Vec<usize> = ModelConfig::default().head_channels, "model.head_channels", "channels of the five head-branch layers";
    model_map_channels: Vec<usize> = ModelConfig::default().map_channels, "model.map_channels", "channels of the four map-branch layers";
    model_hidden: usize = ModelConfig::default().hidden, "model.hidden", "width of the fusion layer";
    model_dropout: f64 = ModelConfig::default().dropout, "model.dropout", "dropout rate after the fusion layer";
    train_epochs: usize = 8, "train.epochs", "training epochs";
    train_batch_size: usize = TrainConfig::default().batch_size, "train.batch_size", "samples per step";
    train_lr: f64 = 0.01, "train.lr", "learning rate";
    train_momentum: f64 = TrainConfig::default().momentum, "train.momentum", "SGD momentum";
    train_synth_only_epochs: usize = TrainConfig::default().synth_only_epochs, "train.synth_only_epochs", "leading synthetic-only epochs when real data is given";
    train_curriculum_period: usize = TrainConfig::default().curriculum_period, "train.curriculum_period", "epochs between hard-negative difficulty steps";
    train_difficulty_step: f64 = TrainConfig::default().difficulty_step, "train.difficulty_step", "difficulty added per period";
    train_augment_shift_px: f64 = AugmentConfig::default().shift_px, "train.augment_shift_px", "augmentation shift in pixels";
    train_augment_zoom: f64 = AugmentConfig::default().zoom, "train.augment_zoom", "augmentation zoom range";
    train_augment_brightness: f64 = AugmentConfig::default().brightness, "train.augment_brightness", "augmentation brightness range";
    train_synth_pos: usize = 0, "train.synth_pos", "fresh synthetic positives per synthetic epoch (0: reuse the dataset)";
    train_val_pairs: usize = 200, "train.val_pairs", "generated validation pairs per class when no dataset is given";
    pretrain_samples: usize = 4000, "pretrain.samples", "generated heads for head-pose pre-training";
    pretrain_epochs: usize = PretrainConfig::default().epochs, "pretrain.epochs", "head-pose pre-training epochs";
    pretrain_batch_size: usize = PretrainConfig::default().batch_size, "pretrain.batch_size", "heads per pre-training step";
    pretrain_lr: f64 = PretrainConfig::default().lr, "pretrain.lr", "pre-training learning rate";
    pretrain_momentum: f64 = PretrainConfig::default().momentum, "pretrain.momentum", "pre-training SGD momentum";
    pose_w_yaw: f64 = PoseLossWeights::default().yaw, "pose.w_yaw", "yaw weight of the pose loss";
    pose_w_pitch: f64 = PoseLossWeights::default().pitch, "pose.w_pitch", "pitch weight of the pose loss";
    pose_w_roll: f64 = PoseLossWeights::default().roll, "pose.w_roll", "roll weight of the pose loss";
    pose_w_sign: f64 = PoseLossWeights::default().sign, "pose.w_sign", "yaw-sign weight of the pose loss";
    pose_k: f64 = PretrainConfig::default().k, "pose.k", "sharpness of the yaw-sign term";
    score_stride: usize = 1, "score.stride", "frames between scored windows";
    eval_protocol: String = EvalProtocol::FrameLevelIou.as_str().to_string(), "eval.protocol", "frame_iou, frame_head_in_human or shot";
}

/// Flattens nested tables into dotted keys.
fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, toml::Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

impl RunConfig {
    /// Parses a configuration file; absent keys keep their defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e| invalid(format!("config: {e}")))?;
        let mut entries = Vec::new();
        flatten("", &table, &mut entries);
        let mut cfg = RunConfig::default();
        for (key, value) in entries {
            if key == "format_version" {
                match value.as_integer() {
                    Some(v) if v == FORMAT_VERSION as i64 => continue,
                    _ => return Err(invalid(format!("unsupported config format_version {value}"))),
                }
            }
            cfg.set(&key, &value)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_at(path))?;
        Self::from_toml_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
    }

    /// Applies one `key=value` override; the value uses TOML syntax, bare
    /// words are taken as strings.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (key, raw) = spec
            .split_once('=')
            .ok_or_else(|| invalid(format!("override {spec:?} is not key=value")))?;
        let (key, raw) = (key.trim(), raw.trim());
        let value = format!("v = {raw}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        self.set(key, &value)
    }

    /// Defaults, then the file, then the overrides.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = match file {
            Some(p) => Self::load(p)?,
            None => RunConfig::default(),
        };
        for o in overrides {
            cfg.apply_override(o)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        let mut out = format!("format_version = {FORMAT_VERSION}\n");
        for (k, v) in self.values() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn write_to(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join(CONFIG_FILE), self.to_toml_string().as_bytes())
    }

    /// The key table shown by `--help`.
    pub fn help_text() -> String {
        let defaults = RunConfig::default().values();
        let width = Self::KEYS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::from("Configuration keys (set in --config FILE or with --set KEY=VALUE):\n");
        for ((key, doc), (_, value)) in Self::KEYS.iter().zip(defaults) {
            let _ = writeln!(out, "  {key:<width$}  {doc} [default: {value}]");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.linker().validate()?;
        self.synth().validate()?;
        self.model().validate()?;
        self.train().validate()?;
        self.protocol()?;
        if self.model_t > self.synth_t || self.model_m > self.headmap_m {
            return Err(invalid("model.t and model.m must not exceed synth.t and headmap.m"));
        }
        if self.score_stride == 0 {
            return Err(invalid("score.stride must be >= 1"));
        }
        if self.pretrain_batch_size == 0 {
            return Err(invalid("pretrain.batch_size must be >= 1"));
        }
        Ok(())
    }

    pub fn frame(&self) -> FrameSize {
        FrameSize {
            width: self.frame_width,
            height: self.frame_height,
        }
    }

    pub fn linker(&self) -> LinkerConfig {
        LinkerConfig {
            iou_link_threshold: self.linker_iou,
            max_missed_frames: self.linker_max_missed.min(u32::MAX as u64) as u32,
            min_track_length: self.linker_min_length,
        }
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            t: self.synth_t,
            frame: self.frame(),
            headmap: HeadMapConfig {
                m: self.headmap_m,
                sigma_ratio: self.headmap_sigma_ratio,
                cutoff: self.headmap_cutoff,
            },
            tau_deg: self.synth_tau_deg,
            jitter: JitterRanges {
                shift_px: self.synth_shift_px,
                zoom: self.synth_zoom,
                brightness: self.synth_brightness,
            },
            lost_frame_prob: self.synth_lost_frame_prob,
            box_noise: self.synth_box_noise,
            scale_noise: self.synth_scale_noise,
            max_others: self.synth_max_others,
            ..SynthConfig::default()
        }
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            t: self.model_t,
            m: self.model_m,
            head_channels: self.model_head_channels.clone(),
            map_channels: self.model_map_channels.clone(),
            hidden: self.model_hidden,
            dropout: self.model_dropout,
            ..ModelConfig::default()
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train_epochs,
            batch_size: self.train_batch_size,
            lr: self.train_lr,
            momentum: self.train_momentum,
            synth_only_epochs: self.train_synth_only_epochs,
            curriculum_period: self.train_curriculum_period,
            difficulty_step: self.train_difficulty_step,
            augment: AugmentConfig {
                shift_px: self.train_augment_shift_px,
                zoom: self.train_augment_zoom,
                brightness: self.train_augment_brightness,
            },
            seed: self.seed,
        }
    }

    pub fn pose_weights(&self) -> PoseLossWeights {
        PoseLossWeights {
            yaw: self.pose_w_yaw,
            pitch: self.pose_w_pitch,
            roll: self.pose_w_roll,
            sign: self.pose_w_sign,
        }
    }

    pub fn pretrain(&self) -> PretrainConfig {
        PretrainConfig {
            epochs: self.pretrain_epochs,
            batch_size: self.pretrain_batch_size,
            lr: self.pretrain_lr,
            momentum: self.pretrain_momentum,
            weights: self.pose_weights(),
            k: self.pose_k,
            seed: self.seed,
        }
    }

    pub fn protocol(&self) -> Result<EvalProtocol> {
        EvalProtocol::parse(&self.eval_protocol).ok_or_else(|| invalid(format!("unknown eval.protocol {:?}", self.eval_protocol)))
    }
}
