//! Gaussian head-maps and the geometry-feature baseline.
//!
//! A head-map is an `M x 64 x 64 x 3` image stack (channels last). Each head
//! is drawn as an isotropic Gaussian with peak 1 at its box center; channel 2
//! holds the left head of the pair, channel 1 the right head and channel 0
//! every other head. Overlaps are composed with a per-pixel maximum.
//!
//! Frame coordinates reach the grid through one uniform scale
//! `64 / max(width, height)` with the shorter side centered (letterbox).
//! Pixel `(row i, column j)` samples the grid point `(x = j, y = i)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::domain::{BoundingBox, HeadTrack};
use crate::error::{Error, Result};
use crate::tracker::TrackWindow;

pub const MAP_SIDE: usize = 64;
pub const MAP_CHANNELS: usize = 3;
pub const CHANNEL_OTHERS: usize = 0;
pub const CHANNEL_RIGHT: usize = 1;
pub const CHANNEL_LEFT: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameSize {
    pub width: f64,
    pub height: f64,
}

impl FrameSize {
    pub fn new(width: f64, height: f64) -> Result<Self> {
        if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
            return Err(Error::InvalidConfig(format!("frame size {width}x{height}")));
        }
        Ok(FrameSize { width, height })
    }

    /// Grid pixels per frame pixel.
    pub fn grid_scale(&self) -> f64 {
        MAP_SIDE as f64 / self.width.max(self.height)
    }

    /// Grid coordinates of a frame point.
    pub fn to_grid(&self, x: f64, y: f64) -> (f64, f64) {
        let s = self.grid_scale();
        let ox = (MAP_SIDE as f64 - self.width * s) / 2.0;
        let oy = (MAP_SIDE as f64 - self.height * s) / 2.0;
        (x * s + ox, y * s + oy)
    }
}

impl Default for FrameSize {
    fn default() -> Self {
        FrameSize {
            width: 640.0,
            height: 360.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadMapConfig {
    /// Frames per map.
    pub m: usize,
    /// `sigma = sigma_ratio * max(box_w, box_h) / 2`, in grid pixels.
    pub sigma_ratio: f64,
    /// Render radius in units of sigma.
    pub cutoff: f64,
}

impl Default for HeadMapConfig {
    fn default() -> Self {
        HeadMapConfig {
            m: 10,
            sigma_ratio: 0.5,
            cutoff: 3.0,
        }
    }
}

impl HeadMapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidConfig("head-map length M must be >= 1".into()));
        }
        if !(self.sigma_ratio > 0.0 && self.sigma_ratio.is_finite()) {
            return Err(Error::InvalidConfig("sigma_ratio must be > 0".into()));
        }
        if !(self.cutoff > 0.0 && self.cutoff.is_finite()) {
            return Err(Error::InvalidConfig("cutoff must be > 0".into()));
        }
        Ok(())
    }

    /// Blob width in grid pixels for a box.
    pub fn sigma_px(&self, b: &BoundingBox, frame: &FrameSize) -> f64 {
        self.sigma_ratio * b.width().max(b.height()) * frame.grid_scale() / 2.0
    }
}

/// Offset of the first of the `m` central frames of a `t`-frame window.
pub fn central_start(t: usize, m: usize) -> usize {
    (t / 2).saturating_sub(m / 2).min(t.saturating_sub(m))
}

/// Heads visible in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameHeads {
    pub left: BoundingBox,
    pub right: BoundingBox,
    pub others: Vec<BoundingBox>,
}

/// `M x 64 x 64 x 3` map, channels last, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadMap {
    m: usize,
    data: Vec<f32>,
}

impl HeadMap {
    pub fn zeros(m: usize) -> Self {
        HeadMap {
            m,
            data: vec![0.0; m * MAP_SIDE * MAP_SIDE * MAP_CHANNELS],
        }
    }

    pub fn from_data(m: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != m * MAP_SIDE * MAP_SIDE * MAP_CHANNELS {
            return Err(Error::Shape(format!("head-map of {m} frames from {} values", data.len())));
        }
        Ok(HeadMap { m, data })
    }

    pub fn frames(&self) -> usize {
        self.m
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.m, MAP_SIDE, MAP_SIDE, MAP_CHANNELS]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    fn index(frame: usize, row: usize, col: usize, channel: usize) -> usize {
        ((frame * MAP_SIDE + row) * MAP_SIDE + col) * MAP_CHANNELS + channel
    }

    pub fn get(&self, frame: usize, row: usize, col: usize, channel: usize) -> f32 {
        self.data[Self::index(frame, row, col, channel)]
    }

    /// One frame as 8-bit RGB (channel 0 is red), row-major.
    pub fn frame_rgb8(&self, frame: usize) -> Vec<u8> {
        let n = MAP_SIDE * MAP_SIDE * MAP_CHANNELS;
        self.data[frame * n..(frame + 1) * n]
            .iter()
            .map(|&v| libm::round(v.clamp(0.0, 1.0) as f64 * 255.0) as u8)
            .collect()
    }

    fn splat(&mut self, frame: usize, channel: usize, cx: f64, cy: f64, sigma: f64, cutoff: f64) {
        let radius = cutoff * sigma;
        let lo_c = libm::ceil(cx - radius).max(0.0) as usize;
        let lo_r = libm::ceil(cy - radius).max(0.0) as usize;
        let hi_c = libm::floor(cx + radius).min(MAP_SIDE as f64 - 1.0);
        let hi_r = libm::floor(cy + radius).min(MAP_SIDE as f64 - 1.0);
        if hi_c < 0.0 || hi_r < 0.0 {
            return;
        }
        let r2 = radius * radius;
        let denom = 2.0 * sigma * sigma;
        for row in lo_r..=hi_r as usize {
            let dy = row as f64 - cy;
            for col in lo_c..=hi_c as usize {
                let dx = col as f64 - cx;
                let d2 = dx * dx + dy * dy;
                if d2 > r2 {
                    continue;
                }
                let v = libm::exp(-d2 / denom) as f32;
                let slot = &mut self.data[Self::index(frame, row, col, channel)];
                if v > *slot {
                    *slot = v;
                }
            }
        }
    }
}

/// Intensity of a blob centered at `c` with width `sigma` at point `p`.
pub fn gaussian(c: (f64, f64), sigma: f64, p: (f64, f64)) -> f64 {
    let dx = p.0 - c.0;
    let dy = p.1 - c.1;
    libm::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma))
}

/// Renders one map frame per entry of `frames`.
pub fn render_frames(frames: &[FrameHeads], frame: &FrameSize, cfg: &HeadMapConfig) -> Result<HeadMap> {
    cfg.validate()?;
    let mut map = HeadMap::zeros(frames.len());
    for (f, heads) in frames.iter().enumerate() {
        let mut draw = |b: &BoundingBox, channel: usize| {
            let (x, y) = b.center();
            let (gx, gy) = frame.to_grid(x, y);
            map.splat(f, channel, gx, gy, cfg.sigma_px(b, frame), cfg.cutoff);
        };
        for b in &heads.others {
            draw(b, CHANNEL_OTHERS);
        }
        draw(&heads.right, CHANNEL_RIGHT);
        draw(&heads.left, CHANNEL_LEFT);
    }
    Ok(map)
}

/// Renders the `cfg.m` central frames of a window. Heads of `all_tracks`
/// other than the pair go to the "others" channel.
pub fn render_headmap(
    window: &TrackWindow,
    all_tracks: &[HeadTrack],
    frame: &FrameSize,
    cfg: &HeadMapConfig,
) -> Result<HeadMap> {
    cfg.validate()?;
    let t = window.len();
    if cfg.m > t {
        return Err(Error::InvalidConfig(format!(
            "head-map length {} exceeds window length {t}",
            cfg.m
        )));
    }
    let start = central_start(t, cfg.m);
    let mut frames = Vec::with_capacity(cfg.m);
    for k in start..start + cfg.m {
        let f = window.start_frame + k as u32;
        let left = *window.left_boxes.get(k).ok_or(Error::MissingBox {
            track: window.left_track,
            frame: f,
        })?;
        let right = *window.right_boxes.get(k).ok_or(Error::MissingBox {
            track: window.right_track,
            frame: f,
        })?;
        let others = all_tracks
            .iter()
            .filter(|tr| {
                tr.video_id == window.video_id
                    && tr.track_id != window.left_track
                    && tr.track_id != window.right_track
            })
            .filter_map(|tr| tr.box_at(f).copied())
            .collect();
        frames.push(FrameHeads { left, right, others });
    }
    render_frames(&frames, frame, cfg)
}

/// Pair geometry at the central frame: offset from the left to the right
/// head center in a frame normalized to unit width and height, and the ratio
/// of normalized head heights `s_L / s_R`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryFeatures {
    pub dx: f64,
    pub dy: f64,
    pub s_r: f64,
}

impl GeometryFeatures {
    pub fn to_array(&self) -> [f64; 3] {
        [self.dx, self.dy, self.s_r]
    }
}

pub fn geometry_from_boxes(left: &BoundingBox, right: &BoundingBox, frame: &FrameSize) -> Result<GeometryFeatures> {
    if !(left.height() > 0.0 && right.height() > 0.0) {
        return Err(Error::ZeroHeight);
    }
    let (lx, ly) = left.center();
    let (rx, ry) = right.center();
    Ok(GeometryFeatures {
        dx: (rx - lx) / frame.width,
        dy: (ry - ly) / frame.height,
        s_r: (left.height() / frame.height) / (right.height() / frame.height),
    })
}

pub fn geometry_features(window: &TrackWindow, frame: &FrameSize) -> Result<GeometryFeatures> {
    let c = window.central_offset();
    let f = window.central_frame();
    let left = window.left_boxes.get(c).ok_or(Error::MissingBox {
        track: window.left_track,
        frame: f,
    })?;
    let right = window.right_boxes.get(c).ok_or(Error::MissingBox {
        track: window.right_track,
        frame: f,
    })?;
    geometry_from_boxes(left, right, frame)
}
