use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::domain::LaeoLabel;
use crate::error::{Error, Result};
use crate::headmap::HeadMap;

pub const CROP_SIDE: usize = 64;
pub const CROP_CHANNELS: usize = 3;
/// Values in one `64 x 64 x 3` crop.
pub const CROP_LEN: usize = CROP_SIDE * CROP_SIDE * CROP_CHANNELS;

/// `T x 64 x 64 x 3` head crops of one track, channels last, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CropStack {
    t: usize,
    data: Vec<f32>,
}

impl CropStack {
    pub fn zeros(t: usize) -> Self {
        CropStack {
            t,
            data: vec![0.0; t * CROP_LEN],
        }
    }

    pub fn from_data(t: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != t * CROP_LEN {
            return Err(Error::Shape(format!("{t} crops from {} values", data.len())));
        }
        Ok(CropStack { t, data })
    }

    pub fn from_frames(frames: &[Vec<f32>]) -> Result<Self> {
        let mut data = Vec::with_capacity(frames.len() * CROP_LEN);
        for f in frames {
            if f.len() != CROP_LEN {
                return Err(Error::Shape(format!("crop of {} values", f.len())));
            }
            data.extend_from_slice(f);
        }
        Ok(CropStack { t: frames.len(), data })
    }

    pub fn frames(&self) -> usize {
        self.t
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.t, CROP_SIDE, CROP_SIDE, CROP_CHANNELS]
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        &self.data[i * CROP_LEN..(i + 1) * CROP_LEN]
    }

    pub fn frame_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * CROP_LEN..(i + 1) * CROP_LEN]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// The `n` central frames (`n <= T`).
    pub fn central(&self, n: usize) -> CropStack {
        let start = crate::headmap::central_start(self.t, n);
        CropStack {
            t: n,
            data: self.data[start * CROP_LEN..(start + n) * CROP_LEN].to_vec(),
        }
    }
}

/// Network input for one track pair plus its label.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackPairSample {
    pub left: CropStack,
    pub right: CropStack,
    pub map: HeadMap,
    pub label: LaeoLabel,
}

impl TrackPairSample {
    /// Same sample restricted to the `t` central crops and `m` central map
    /// frames.
    pub fn narrowed(&self, t: usize, m: usize) -> Result<TrackPairSample> {
        if t > self.left.frames() || m > self.map.frames() || t == 0 || m == 0 {
            return Err(Error::InvalidConfig(format!(
                "cannot narrow a ({}, {}) sample to ({t}, {m})",
                self.left.frames(),
                self.map.frames()
            )));
        }
        let start = crate::headmap::central_start(self.map.frames(), m);
        let n = crate::headmap::MAP_SIDE * crate::headmap::MAP_SIDE * crate::headmap::MAP_CHANNELS;
        let map = HeadMap::from_data(m, self.map.data()[start * n..(start + m) * n].to_vec())?;
        Ok(TrackPairSample {
            left: self.left.central(t),
            right: self.right.central(t),
            map,
            label: self.label,
        })
    }
}

/// Indexed collection of samples, materialized on demand.
pub trait SampleSource {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Label of sample `i` without building it.
    fn label(&self, i: usize) -> LaeoLabel;

    fn get(&self, i: usize) -> Result<TrackPairSample>;
}

impl SampleSource for [TrackPairSample] {
    fn len(&self) -> usize {
        <[TrackPairSample]>::len(self)
    }

    fn label(&self, i: usize) -> LaeoLabel {
        self[i].label
    }

    fn get(&self, i: usize) -> Result<TrackPairSample> {
        Ok(self[i].clone())
    }
}

impl SampleSource for Vec<TrackPairSample> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn label(&self, i: usize) -> LaeoLabel {
        self[i].label
    }

    fn get(&self, i: usize) -> Result<TrackPairSample> {
        Ok(self[i].clone())
    }
}

/// Writes a `frames x 64 x 64 x 3` channels-last stack into `out` as
/// `3 x frames x 64 x 64`.
pub(crate) fn to_channels_first(src: &[f32], frames: usize, out: &mut [f32]) {
    let plane = CROP_SIDE * CROP_SIDE;
    debug_assert_eq!(src.len(), frames * plane * 3);
    for f in 0..frames {
        for p in 0..plane {
            let s = (f * plane + p) * 3;
            for c in 0..3 {
                out[(c * frames + f) * plane + p] = src[s + c];
            }
        }
    }
}
