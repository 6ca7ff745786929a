//! Records shared by every stage of the pipeline and their validation.
//!
//! Coordinates are pixels with the origin at the top-left corner and `y`
//! growing downwards. Frames are integer indices.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

/// Longest run of missing frames that is bridged by interpolation when a
/// track is built from sparse observations. Longer gaps split the track.
pub const MAX_INTERPOLATED_GAP: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = BoundingBox { x1, y1, x2, y2 };
        match b.violation() {
            None => Ok(b),
            Some(_) => Err(Error::InvalidBox { x1, y1, x2, y2 }),
        }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    /// Reason this box breaks the invariants, if any.
    pub fn violation(&self) -> Option<&'static str> {
        let all_finite = [self.x1, self.y1, self.x2, self.y2]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            Some("non-finite coordinate")
        } else if self.x2 <= self.x1 {
            Some("x2 <= x1")
        } else if self.y2 <= self.y1 {
            Some("y2 <= y1")
        } else {
            None
        }
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> BoundingBox {
        BoundingBox {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }

    /// Linear interpolation between two boxes, `t = 0` gives `self`.
    pub fn lerp(&self, other: &BoundingBox, t: f64) -> BoundingBox {
        let mix = |a: f64, b: f64| a + (b - a) * t;
        BoundingBox {
            x1: mix(self.x1, other.x1),
            y1: mix(self.y1, other.y1),
            x2: mix(self.x2, other.x2),
            y2: mix(self.y2, other.y2),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadDetection {
    pub video_id: String,
    pub frame: u32,
    pub bbox: BoundingBox,
    pub confidence: f64,
}

/// A person's head boxes over consecutive frames starting at `start_frame`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadTrack {
    pub track_id: u64,
    pub video_id: String,
    pub start_frame: u32,
    pub boxes: Vec<BoundingBox>,
}

impl HeadTrack {
    pub fn new(
        track_id: u64,
        video_id: impl Into<String>,
        start_frame: u32,
        boxes: Vec<BoundingBox>,
    ) -> Result<Self> {
        if boxes.is_empty() {
            return Err(Error::Empty("track boxes"));
        }
        if let Some(b) = boxes.iter().find(|b| b.violation().is_some()) {
            return Err(Error::InvalidBox {
                x1: b.x1,
                y1: b.y1,
                x2: b.x2,
                y2: b.y2,
            });
        }
        Ok(HeadTrack {
            track_id,
            video_id: video_id.into(),
            start_frame,
            boxes,
        })
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// Last frame covered by the track (inclusive).
    pub fn end_frame(&self) -> u32 {
        self.start_frame + self.boxes.len() as u32 - 1
    }

    pub fn alive_at(&self, frame: u32) -> bool {
        frame >= self.start_frame && frame <= self.end_frame()
    }

    pub fn box_at(&self, frame: u32) -> Option<&BoundingBox> {
        if frame < self.start_frame {
            return None;
        }
        self.boxes.get((frame - self.start_frame) as usize)
    }
}

/// Turns frame-sorted sparse observations into runs of consecutive boxes.
///
/// Gaps of at most `max_gap` missing frames are filled by linear
/// interpolation between the surrounding boxes; a longer gap starts a new run.
/// Each returned run is `(start_frame, boxes)`.
pub fn fill_gaps(observations: &[(u32, BoundingBox)], max_gap: u32) -> Vec<(u32, Vec<BoundingBox>)> {
    let mut runs: Vec<(u32, Vec<BoundingBox>)> = Vec::new();
    let mut last: Option<(u32, BoundingBox)> = None;
    for &(frame, bbox) in observations {
        match last {
            Some((prev_frame, prev_box)) if frame > prev_frame && frame - prev_frame - 1 <= max_gap => {
                let run = &mut runs.last_mut().expect("run exists").1;
                let span = (frame - prev_frame) as f64;
                for k in 1..(frame - prev_frame) {
                    run.push(prev_box.lerp(&bbox, k as f64 / span));
                }
                run.push(bbox);
            }
            Some((prev_frame, _)) if frame <= prev_frame => continue,
            _ => runs.push((frame, alloc::vec![bbox])),
        }
        last = Some((frame, bbox));
    }
    runs
}

/// Head orientation in degrees.
///
/// Positive yaw means the subject's head is turned towards the right side of
/// the image, positive pitch means looking up.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HeadPose {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl HeadPose {
    pub fn new(yaw: f64, pitch: f64, roll: f64) -> Result<Self> {
        let ok = (-180.0..=180.0).contains(&yaw)
            && (-90.0..=90.0).contains(&pitch)
            && (-180.0..=180.0).contains(&roll);
        if ok {
            Ok(HeadPose { yaw, pitch, roll })
        } else {
            Err(Error::InvalidValue(format!(
                "head pose out of range: yaw {yaw}, pitch {pitch}, roll {roll}"
            )))
        }
    }

    /// Angles scaled to `[-1, 1]`: yaw and roll by 180, pitch by 90.
    pub fn normalized(&self) -> [f64; 3] {
        [self.yaw / 180.0, self.pitch / 90.0, self.roll / 180.0]
    }

    pub fn from_normalized(v: [f64; 3]) -> Self {
        HeadPose {
            yaw: v[0] * 180.0,
            pitch: v[1] * 90.0,
            roll: v[2] * 180.0,
        }
    }

    /// Pose of the horizontally mirrored head.
    pub fn mirrored(&self) -> Self {
        HeadPose {
            yaw: -self.yaw,
            pitch: self.pitch,
            roll: -self.roll,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LaeoLabel {
    Laeo,
    NotLaeo,
    Ambiguous,
}

impl LaeoLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            LaeoLabel::Laeo => "laeo",
            LaeoLabel::NotLaeo => "not_laeo",
            LaeoLabel::Ambiguous => "ambiguous",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "laeo" | "LAEO" | "1" => Some(LaeoLabel::Laeo),
            "not_laeo" | "NOT_LAEO" | "0" => Some(LaeoLabel::NotLaeo),
            "ambiguous" | "AMBIGUOUS" => Some(LaeoLabel::Ambiguous),
            _ => None,
        }
    }

    /// Class index used by the classifier, `None` for ambiguous pairs.
    pub fn class(&self) -> Option<usize> {
        match self {
            LaeoLabel::Laeo => Some(1),
            LaeoLabel::NotLaeo => Some(0),
            LaeoLabel::Ambiguous => None,
        }
    }
}

impl fmt::Display for LaeoLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Ground truth for one pair of boxes at one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PairAnnotation {
    pub video_id: String,
    pub frame: u32,
    pub shot_id: Option<String>,
    pub box_a: BoundingBox,
    pub box_b: BoundingBox,
    pub label: LaeoLabel,
}

/// Shot-level ground truth: whether the shot contains a LAEO pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ShotLabel {
    pub video_id: String,
    pub shot_id: String,
    pub label: LaeoLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShotRecord {
    pub shot_id: String,
    pub video_id: String,
    pub first_frame: u32,
    pub last_frame: u32,
    pub tracks: Vec<u64>,
    pub annotations: Vec<PairAnnotation>,
}

impl ShotRecord {
    pub fn contains(&self, frame: u32) -> bool {
        frame >= self.first_frame && frame <= self.last_frame
    }

    pub fn num_frames(&self) -> u32 {
        self.last_frame - self.first_frame + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    Detection,
    Track,
    Annotation,
    Shot,
}

impl fmt::Display for RecordKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RecordKind::Detection => "detection",
            RecordKind::Track => "track",
            RecordKind::Annotation => "annotation",
            RecordKind::Shot => "shot",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: RecordKind,
    /// Zero-based position of the record in its input list.
    pub index: usize,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} #{}: {}", self.kind, self.index, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, kind: RecordKind, index: usize, message: String) {
        self.violations.push(Violation { kind, index, message });
    }
}

/// Checks every record invariant and the cross references between records.
///
/// Video ids are resolved against the videos that appear in `detections` or
/// `tracks`; when both are empty there is nothing to resolve against and the
/// video check is skipped.
pub fn validate_dataset(
    detections: &[HeadDetection],
    tracks: &[HeadTrack],
    annotations: &[PairAnnotation],
    shots: &[ShotRecord],
) -> ValidationReport {
    let mut report = ValidationReport::default();

    let videos: BTreeSet<&str> = detections
        .iter()
        .map(|d| d.video_id.as_str())
        .chain(tracks.iter().map(|t| t.video_id.as_str()))
        .collect();
    let known_video = |v: &str| videos.is_empty() || videos.contains(v);

    for (i, d) in detections.iter().enumerate() {
        if let Some(why) = d.bbox.violation() {
            report.push(RecordKind::Detection, i, format!("box: {why}"));
        }
        if !(0.0..=1.0).contains(&d.confidence) {
            report.push(
                RecordKind::Detection,
                i,
                format!("confidence {} outside [0,1]", d.confidence),
            );
        }
    }

    let mut track_ids = BTreeMap::new();
    for (i, t) in tracks.iter().enumerate() {
        if t.boxes.is_empty() {
            report.push(RecordKind::Track, i, format!("track {} has no boxes", t.track_id));
        }
        for (k, b) in t.boxes.iter().enumerate() {
            if let Some(why) = b.violation() {
                report.push(
                    RecordKind::Track,
                    i,
                    format!("track {} frame {}: {why}", t.track_id, t.start_frame as usize + k),
                );
            }
        }
        if track_ids.insert(t.track_id, i).is_some() {
            report.push(RecordKind::Track, i, format!("duplicate track id {}", t.track_id));
        }
    }

    let shots_by_id: BTreeMap<&str, &ShotRecord> =
        shots.iter().map(|s| (s.shot_id.as_str(), s)).collect();

    for (i, a) in annotations.iter().enumerate() {
        check_annotation(a, &mut report, RecordKind::Annotation, i, &known_video);
        if let Some(shot_id) = &a.shot_id {
            match shots_by_id.get(shot_id.as_str()) {
                None => report.push(
                    RecordKind::Annotation,
                    i,
                    format!("unknown shot id {shot_id}"),
                ),
                Some(shot) if !shot.contains(a.frame) => report.push(
                    RecordKind::Annotation,
                    i,
                    format!(
                        "frame {} outside shot {} range [{}, {}]",
                        a.frame, shot.shot_id, shot.first_frame, shot.last_frame
                    ),
                ),
                Some(_) => {}
            }
        }
    }

    for (i, s) in shots.iter().enumerate() {
        if s.first_frame > s.last_frame {
            report.push(
                RecordKind::Shot,
                i,
                format!("shot {}: first frame {} > last frame {}", s.shot_id, s.first_frame, s.last_frame),
            );
        }
        if !known_video(&s.video_id) {
            report.push(RecordKind::Shot, i, format!("unknown video id {}", s.video_id));
        }
        for id in &s.tracks {
            if !track_ids.contains_key(id) {
                report.push(RecordKind::Shot, i, format!("shot {} references missing track {id}", s.shot_id));
            }
        }
        for a in &s.annotations {
            check_annotation(a, &mut report, RecordKind::Shot, i, &known_video);
            if !s.contains(a.frame) {
                report.push(
                    RecordKind::Shot,
                    i,
                    format!(
                        "annotation frame {} outside shot {} range [{}, {}]",
                        a.frame, s.shot_id, s.first_frame, s.last_frame
                    ),
                );
            }
        }
    }

    report
}

fn check_annotation(
    a: &PairAnnotation,
    report: &mut ValidationReport,
    kind: RecordKind,
    index: usize,
    known_video: &dyn Fn(&str) -> bool,
) {
    if let Some(why) = a.box_a.violation() {
        report.push(kind, index, format!("box_a: {why}"));
    }
    if let Some(why) = a.box_b.violation() {
        report.push(kind, index, format!("box_b: {why}"));
    }
    if a.box_a == a.box_b {
        report.push(kind, index, String::from("box_a equals box_b"));
    }
    if !known_video(&a.video_id) {
        report.push(kind, index, format!("unknown video id {}", a.video_id));
    }
}
