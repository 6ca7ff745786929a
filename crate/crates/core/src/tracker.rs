//! Greedy IoU linking of head detections into tracks, and enumeration of
//! the fixed-length windows over which track pairs are scored.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use crate::domain::{fill_gaps, BoundingBox, HeadDetection, HeadTrack, MAX_INTERPOLATED_GAP};
use crate::error::{Error, Result};

/// Intersection over union of two boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkerConfig {
    pub iou_link_threshold: f64,
    pub max_missed_frames: u32,
    pub min_track_length: usize,
}

impl Default for LinkerConfig {
    fn default() -> Self {
        LinkerConfig {
            iou_link_threshold: 0.5,
            max_missed_frames: 5,
            min_track_length: 10,
        }
    }
}

impl LinkerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_link_threshold > 0.0 && self.iou_link_threshold < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "iou_link_threshold must be in (0,1), got {}",
                self.iou_link_threshold
            )));
        }
        if self.min_track_length < 1 {
            return Err(Error::InvalidConfig("min_track_length must be >= 1".into()));
        }
        Ok(())
    }
}

struct LiveTrack {
    observations: Vec<(u32, BoundingBox)>,
}

impl LiveTrack {
    fn last(&self) -> (u32, BoundingBox) {
        *self.observations.last().expect("live tracks are never empty")
    }
}

/// Links detections into tracks, video by video.
///
/// Within a video, frames are visited in increasing order. Live tracks, oldest
/// first, each claim the still-unmatched detection with the highest IoU
/// against their last box when it reaches the threshold; ties go to the
/// higher confidence and then to the lower detection index. Unclaimed
/// detections open new tracks. A track that has missed more than
/// `max_missed_frames` frames is closed. Closed tracks have their gaps
/// interpolated and are dropped when shorter than `min_track_length`.
///
/// Track ids are assigned sequentially over the surviving tracks, ordered by
/// video id and then by track creation.
pub fn link_detections(dets: &[HeadDetection], cfg: &LinkerConfig) -> Result<Vec<HeadTrack>> {
    cfg.validate()?;
    let mut by_video: BTreeMap<&str, BTreeMap<u32, Vec<&HeadDetection>>> = BTreeMap::new();
    for d in dets {
        by_video
            .entry(d.video_id.as_str())
            .or_default()
            .entry(d.frame)
            .or_default()
            .push(d);
    }

    let mut out = Vec::new();
    let mut next_id = 0u64;
    for (video, frames) in by_video {
        for observations in link_video(&frames, cfg) {
            for (start, boxes) in fill_gaps(&observations, MAX_INTERPOLATED_GAP) {
                if boxes.len() < cfg.min_track_length {
                    continue;
                }
                out.push(HeadTrack::new(next_id, video, start, boxes)?);
                next_id += 1;
            }
        }
    }
    Ok(out)
}

fn link_video(
    frames: &BTreeMap<u32, Vec<&HeadDetection>>,
    cfg: &LinkerConfig,
) -> Vec<Vec<(u32, BoundingBox)>> {
    // Tracks in creation order; `None` once closed.
    let mut tracks: Vec<LiveTrack> = Vec::new();
    let mut live: Vec<usize> = Vec::new();

    for (&frame, dets) in frames {
        live.retain(|&t| {
            let (last_frame, _) = tracks[t].last();
            frame - last_frame - 1 <= cfg.max_missed_frames
        });

        let mut claimed = alloc::vec![false; dets.len()];
        for &t in &live {
            let (_, last_box) = tracks[t].last();
            let mut best: Option<(usize, f64)> = None;
            for (j, d) in dets.iter().enumerate() {
                if claimed[j] {
                    continue;
                }
                let overlap = iou(&last_box, &d.bbox);
                if overlap < cfg.iou_link_threshold {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((k, best_iou)) => {
                        overlap > best_iou
                            || (overlap == best_iou && d.confidence > dets[k].confidence)
                    }
                };
                if better {
                    best = Some((j, overlap));
                }
            }
            if let Some((j, _)) = best {
                claimed[j] = true;
                tracks[t].observations.push((frame, dets[j].bbox));
            }
        }

        for (j, d) in dets.iter().enumerate() {
            if !claimed[j] {
                live.push(tracks.len());
                tracks.push(LiveTrack {
                    observations: alloc::vec![(frame, d.bbox)],
                });
            }
        }
    }
    tracks.into_iter().map(|t| t.observations).collect()
}

/// `T` consecutive frames on which two tracks are both alive.
///
/// `left` is the track whose head center has the smaller `x` at the central
/// frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackWindow {
    pub video_id: alloc::string::String,
    pub left_track: u64,
    pub right_track: u64,
    pub start_frame: u32,
    pub left_boxes: Vec<BoundingBox>,
    pub right_boxes: Vec<BoundingBox>,
}

impl TrackWindow {
    pub fn len(&self) -> usize {
        self.left_boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left_boxes.is_empty()
    }

    /// Index of the central frame within the window, `floor(T/2)`.
    pub fn central_offset(&self) -> usize {
        self.len() / 2
    }

    pub fn central_frame(&self) -> u32 {
        self.start_frame + self.central_offset() as u32
    }

    pub fn end_frame(&self) -> u32 {
        self.start_frame + self.len() as u32 - 1
    }

    /// Same window with the left and right roles exchanged.
    pub fn swapped(&self) -> TrackWindow {
        TrackWindow {
            video_id: self.video_id.clone(),
            left_track: self.right_track,
            right_track: self.left_track,
            start_frame: self.start_frame,
            left_boxes: self.right_boxes.clone(),
            right_boxes: self.left_boxes.clone(),
        }
    }
}

/// Every window of `t` frames (advancing by `stride`) over every unordered
/// pair of tracks of the same video that are co-alive long enough.
pub fn enumerate_pair_windows(tracks: &[HeadTrack], t: usize, stride: usize) -> Result<Vec<TrackWindow>> {
    if t == 0 || stride == 0 {
        return Err(Error::InvalidConfig("window length and stride must be >= 1".into()));
    }
    let mut out = Vec::new();
    for (i, a) in tracks.iter().enumerate() {
        for b in &tracks[i + 1..] {
            if a.video_id != b.video_id {
                continue;
            }
            let first = a.start_frame.max(b.start_frame);
            let last = a.end_frame().min(b.end_frame());
            if last < first || ((last - first + 1) as usize) < t {
                continue;
            }
            let mut start = first;
            while start as usize + t - 1 <= last as usize {
                out.push(make_window(a, b, start, t));
                start += stride as u32;
            }
        }
    }
    Ok(out)
}

fn make_window(a: &HeadTrack, b: &HeadTrack, start: u32, t: usize) -> TrackWindow {
    let slice = |track: &HeadTrack| -> Vec<BoundingBox> {
        let off = (start - track.start_frame) as usize;
        track.boxes[off..off + t].to_vec()
    };
    let central = start + (t / 2) as u32;
    let ax = a.box_at(central).expect("co-alive").center().0;
    let bx = b.box_at(central).expect("co-alive").center().0;
    let a_left = ax < bx || (ax == bx && a.track_id <= b.track_id);
    let (left, right) = if a_left { (a, b) } else { (b, a) };
    TrackWindow {
        video_id: a.video_id.clone(),
        left_track: left.track_id,
        right_track: right.track_id,
        start_frame: start,
        left_boxes: slice(left),
        right_boxes: slice(right),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;
    use proptest::prelude::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    fn det(frame: u32, b: BoundingBox, confidence: f64) -> HeadDetection {
        HeadDetection {
            video_id: "v".to_string(),
            frame,
            bbox: b,
            confidence,
        }
    }

    fn lenient() -> LinkerConfig {
        LinkerConfig {
            min_track_length: 1,
            ..LinkerConfig::default()
        }
    }

    #[test]
    fn iou_examples() {
        let a = bx(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx(5.0, 5.0, 6.0, 6.0)), 0.0);
        let third = iou(&a, &bx(1.0, 0.0, 3.0, 2.0));
        assert!((third - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn two_overlapping_frames_make_one_track() {
        // IoU = 8 / 10 = 0.8
        let dets = vec![
            det(0, bx(0.0, 0.0, 10.0, 10.0), 0.9),
            det(1, bx(0.0, 0.0, 10.0, 8.0), 0.9),
        ];
        assert!((iou(&dets[0].bbox, &dets[1].bbox) - 0.8).abs() < 1e-12);
        let tracks = link_detections(&dets, &lenient()).unwrap();
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].len(), 2);
    }

    #[test]
    fn disjoint_boxes_make_two_tracks_or_none() {
        let dets = vec![
            det(0, bx(0.0, 0.0, 10.0, 10.0), 0.9),
            det(1, bx(50.0, 0.0, 60.0, 10.0), 0.9),
        ];
        assert_eq!(link_detections(&dets, &lenient()).unwrap().len(), 2);
        let strict = LinkerConfig {
            min_track_length: 2,
            ..LinkerConfig::default()
        };
        assert!(link_detections(&dets, &strict).unwrap().is_empty());
    }

    #[test]
    fn missing_frame_is_interpolated() {
        let dets = vec![
            det(0, bx(0.0, 0.0, 10.0, 10.0), 0.9),
            det(2, bx(2.0, 0.0, 12.0, 10.0), 0.9),
        ];
        let cfg = LinkerConfig {
            max_missed_frames: 1,
            min_track_length: 1,
            ..LinkerConfig::default()
        };
        let tracks = link_detections(&dets, &cfg).unwrap();
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].len(), 3);
        assert_eq!(tracks[0].boxes[1], bx(1.0, 0.0, 11.0, 10.0));
    }

    #[test]
    fn track_closes_after_too_many_misses() {
        let dets = vec![
            det(0, bx(0.0, 0.0, 10.0, 10.0), 0.9),
            det(3, bx(0.0, 0.0, 10.0, 10.0), 0.9),
        ];
        let cfg = LinkerConfig {
            max_missed_frames: 1,
            min_track_length: 1,
            ..LinkerConfig::default()
        };
        assert_eq!(link_detections(&dets, &cfg).unwrap().len(), 2);
    }

    #[test]
    fn ties_prefer_confidence_then_index() {
        let base = bx(0.0, 0.0, 10.0, 10.0);
        let dets = vec![
            det(0, base, 0.9),
            // two identical candidates, second more confident
            det(1, bx(1.0, 0.0, 11.0, 10.0), 0.5),
            det(1, bx(1.0, 0.0, 11.0, 10.0), 0.8),
        ];
        let tracks = link_detections(&dets, &lenient()).unwrap();
        // the claimed one extends track 0; the other starts a new track
        assert_eq!(tracks.len(), 2);
        assert_eq!(tracks[0].len(), 2);
        assert_eq!(tracks[1].start_frame, 1);
    }

    #[test]
    fn empty_input_gives_no_tracks() {
        assert!(link_detections(&[], &LinkerConfig::default()).unwrap().is_empty());
    }

    fn straight_track(id: u64, start: u32, len: usize, x: f64) -> HeadTrack {
        HeadTrack::new(id, "v", start, vec![bx(x, 0.0, x + 10.0, 10.0); len]).unwrap()
    }

    #[test]
    fn window_counts() {
        let a = straight_track(0, 0, 10, 100.0);
        let b = straight_track(1, 0, 10, 0.0);
        let w = enumerate_pair_windows(&[a.clone(), b.clone()], 10, 1).unwrap();
        assert_eq!(w.len(), 1);
        // smaller x at the central frame is the left role
        assert_eq!(w[0].left_track, 1);
        assert_eq!(w[0].central_frame(), 5);

        let a = straight_track(0, 3, 15, 0.0);
        let b = straight_track(1, 0, 15, 50.0);
        // co-alive on frames 3..=14, 12 frames
        assert_eq!(enumerate_pair_windows(&[a, b], 10, 1).unwrap().len(), 3);
        assert!(enumerate_pair_windows(&[straight_track(0, 0, 20, 0.0)], 10, 1)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn stride_subsamples_windows() {
        let a = straight_track(0, 0, 14, 0.0);
        let b = straight_track(1, 0, 14, 50.0);
        let w = enumerate_pair_windows(&[a, b], 10, 2).unwrap();
        let starts: Vec<u32> = w.iter().map(|w| w.start_frame).collect();
        assert_eq!(starts, vec![0, 2, 4]);
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(
            x in 0.0f64..50.0, y in 0.0f64..50.0, w in 1.0f64..30.0, h in 1.0f64..30.0,
            x2 in 0.0f64..50.0, y2 in 0.0f64..50.0, w2 in 1.0f64..30.0, h2 in 1.0f64..30.0,
        ) {
            let a = bx(x, y, x + w, y + h);
            let b = bx(x2, y2, x2 + w2, y2 + h2);
            let v = iou(&a, &b);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v, iou(&b, &a));
            prop_assert_eq!(iou(&a, &a), 1.0);
        }

        #[test]
        fn linking_assigns_each_detection_once(
            boxes in proptest::collection::vec((0u32..12, 0.0f64..80.0, 0.0f64..80.0, 0.1f64..1.0), 0..40)
        ) {
            let mut dets: Vec<HeadDetection> = boxes
                .iter()
                .map(|&(f, x, y, c)| det(f, bx(x, y, x + 15.0, y + 15.0), c))
                .collect();
            dets.sort_by_key(|d| d.frame);
            let cfg = LinkerConfig { max_missed_frames: 0, min_track_length: 1, ..LinkerConfig::default() };
            let tracks = link_detections(&dets, &cfg).unwrap();
            // without gaps every track box is one detection
            let total: usize = tracks.iter().map(|t| t.len()).sum();
            prop_assert_eq!(total, dets.len());
            let again = link_detections(&dets, &cfg).unwrap();
            prop_assert_eq!(tracks.clone(), again);
            for w in enumerate_pair_windows(&tracks, 3, 1).unwrap() {
                let a = tracks.iter().find(|t| t.track_id == w.left_track).unwrap();
                let b = tracks.iter().find(|t| t.track_id == w.right_track).unwrap();
                for f in w.start_frame..=w.end_frame() {
                    prop_assert!(a.alive_at(f) && b.alive_at(f));
                }
            }
        }
    }
}
