//! The three-branch pair classifier, head-pose pre-training and training.
//!
//! Two head branches with shared weights embed the `T`-frame crop stacks of
//! the left and right track; a head-map branch embeds the `M`-frame map. The
//! three L2-normalized embeddings are concatenated and classified by a dense
//! layer with dropout followed by a two-way softmax.

mod check;
mod config;
mod net;
mod pose;
mod sample;
mod train;

use alloc::string::String;
use core::fmt::Write;

pub use check::{gradcheck_suite, GRADCHECK_TOL};
pub use config::{ConvLayer, ModelConfig, HEAD_LAYERS, MAP_LAYERS};
pub use net::{build_laeonet, Batch, Forward, Init, LaeoNet, PoseNet, SCORE_BATCH};
pub use pose::{pretrain_headpose, yaw_sign_accuracy, PoseSource, PretrainConfig, PretrainReport, SynthPoses};
pub use sample::{CropStack, SampleSource, TrackPairSample, CROP_CHANNELS, CROP_LEN, CROP_SIDE};
pub use train::{
    augment, evaluate_source, score_source, select_negatives, train, uniform_negatives, AugmentConfig, EpochData,
    EpochKind, EpochRecord, Fixed, History, NegativeSelection, SynthStream, TrainConfig,
};

use crate::domain::HeadPose;
use crate::error::Result;

/// CSV of head-branch embeddings, one row per stack: `index`, the pose
/// columns (empty when unknown) and `e0..e{D-1}`, six decimals.
pub fn export_embeddings(net: &LaeoNet, stacks: &[(&CropStack, Option<HeadPose>)]) -> Result<String> {
    let refs: alloc::vec::Vec<&CropStack> = stacks.iter().map(|(s, _)| *s).collect();
    let emb = net.embed(&refs)?;
    let dim = net.config().head_embedding_len();
    let mut out = String::from("index,yaw,pitch,roll");
    for k in 0..dim {
        let _ = write!(out, ",e{k}");
    }
    out.push('\n');
    for (i, (row, (_, pose))) in emb.iter().zip(stacks).enumerate() {
        let _ = write!(out, "{i}");
        match pose {
            Some(p) => {
                let _ = write!(out, ",{:.6},{:.6},{:.6}", p.yaw, p.pitch, p.roll);
            }
            None => out.push_str(",,,"),
        }
        for v in row {
            let _ = write!(out, ",{v:.6}");
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
