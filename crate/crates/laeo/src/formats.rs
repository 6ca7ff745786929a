//! Versioned JSONL record files. The first line of every file is a header
//! `{"format": <kind>, "version": <n>}`; each further line is one record.
//! Floats are written with six decimals.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use laeo_core::domain::{BoundingBox, HeadDetection, HeadTrack, LaeoLabel, PairAnnotation, ShotLabel, ShotRecord};
use laeo_core::eval::ScoredPair;
use laeo_core::social::{CharacterPair, InteractionLabel};
use serde::de::DeserializeOwned;
use serde::ser::Error as _;
use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;

use crate::error::{invalid, io_at, Result};

pub const FORMAT_VERSION: u32 = 1;

pub const DETECTIONS: &str = "detections";
pub const TRACKS: &str = "tracks";
pub const ANNOTATIONS: &str = "annotations";
pub const SCORES: &str = "scores";
pub const SHOTS: &str = "shots";
pub const CHARACTERS: &str = "characters";

/// A float serialized with exactly six decimals.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(transparent)]
pub struct F6(pub f64);

impl Serialize for F6 {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return Err(S::Error::custom(format!("cannot write non-finite number {}", self.0)));
        }
        RawValue::from_string(format!("{:.6}", self.0)).map_err(S::Error::custom)?.serialize(s)
    }
}

pub type BoxRecord = [F6; 4];

pub fn box_record(b: &BoundingBox) -> BoxRecord {
    [F6(b.x1), F6(b.y1), F6(b.x2), F6(b.y2)]
}

pub fn parse_box(r: &BoxRecord) -> Result<BoundingBox> {
    Ok(BoundingBox::new(r[0].0, r[1].0, r[2].0, r[3].0)?)
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

/// Writes `records` under a `kind` header.
pub fn write_jsonl<T: Serialize>(path: &Path, kind: &str, records: &[T]) -> Result<()> {
    let mut out = Vec::new();
    let header = Header {
        format: kind.to_string(),
        version: FORMAT_VERSION,
    };
    serde_json::to_writer(&mut out, &header).map_err(invalid)?;
    out.push(b'\n');
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(invalid)?;
        out.push(b'\n');
    }
    write_file(path, &out)
}

/// Reads a `kind` file, rejecting other kinds and unknown versions.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(io_at(path))?;
    parse_jsonl(&text, kind).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

pub fn parse_jsonl<T: DeserializeOwned>(text: &str, kind: &str) -> Result<Vec<T>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| invalid("missing header line"))?;
    let header: Header = serde_json::from_str(first).map_err(|e| invalid(format!("line 1: bad header: {e}")))?;
    if header.format != kind {
        return Err(invalid(format!("expected a {kind} file, found {}", header.format)));
    }
    if header.version != FORMAT_VERSION {
        return Err(invalid(format!(
            "unsupported {kind} format version {} (this build reads {FORMAT_VERSION})",
            header.version
        )));
    }
    lines
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| invalid(format!("line {}: {e}", i + 1))))
        .collect()
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_at(dir))?;
    }
    let mut f = fs::File::create(path).map_err(io_at(path))?;
    f.write_all(bytes).map_err(io_at(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub video_id: String,
    pub frame: u32,
    pub x1: F6,
    pub y1: F6,
    pub x2: F6,
    pub y2: F6,
    pub conf: F6,
}

impl DetectionRecord {
    pub fn from_detection(d: &HeadDetection) -> Self {
        DetectionRecord {
            video_id: d.video_id.clone(),
            frame: d.frame,
            x1: F6(d.bbox.x1),
            y1: F6(d.bbox.y1),
            x2: F6(d.bbox.x2),
            y2: F6(d.bbox.y2),
            conf: F6(d.confidence),
        }
    }

    pub fn to_detection(&self) -> Result<HeadDetection> {
        if !(0.0..=1.0).contains(&self.conf.0) {
            return Err(invalid(format!("confidence {} outside [0, 1]", self.conf.0)));
        }
        Ok(HeadDetection {
            video_id: self.video_id.clone(),
            frame: self.frame,
            bbox: BoundingBox::new(self.x1.0, self.y1.0, self.x2.0, self.y2.0)?,
            confidence: self.conf.0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackRecord {
    pub track_id: u64,
    pub video_id: String,
    pub start_frame: u32,
    pub boxes: Vec<BoxRecord>,
}

impl TrackRecord {
    pub fn from_track(t: &HeadTrack) -> Self {
        TrackRecord {
            track_id: t.track_id,
            video_id: t.video_id.clone(),
            start_frame: t.start_frame,
            boxes: t.boxes.iter().map(box_record).collect(),
        }
    }

    pub fn to_track(&self) -> Result<HeadTrack> {
        let boxes = self.boxes.iter().map(parse_box).collect::<Result<Vec<_>>>()?;
        Ok(HeadTrack::new(self.track_id, self.video_id.clone(), self.start_frame, boxes)?)
    }
}

/// One ground-truth line. Frame-level pair labels carry `frame`, `box_a`
/// and `box_b`; shot labels carry only `shot_id`; interaction labels carry
/// `shot_id` and the two character names in `chars`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub video_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shot_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub box_a: Option<BoxRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub box_b: Option<BoxRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chars: Option<[String; 2]>,
    pub label: String,
}

pub const INTERACTING: &str = "interacting";
pub const NOT_INTERACTING: &str = "not_interacting";

#[derive(Debug, Clone, PartialEq)]
pub enum Annotation {
    Pair(PairAnnotation),
    Shot(ShotLabel),
    Interaction(InteractionLabel),
}

impl AnnotationRecord {
    pub fn from_pair(a: &PairAnnotation) -> Self {
        AnnotationRecord {
            video_id: a.video_id.clone(),
            frame: Some(a.frame),
            shot_id: a.shot_id.clone(),
            box_a: Some(box_record(&a.box_a)),
            box_b: Some(box_record(&a.box_b)),
            chars: None,
            label: a.label.as_str().to_string(),
        }
    }

    pub fn from_shot(s: &ShotLabel) -> Self {
        AnnotationRecord {
            video_id: s.video_id.clone(),
            frame: None,
            shot_id: Some(s.shot_id.clone()),
            box_a: None,
            box_b: None,
            chars: None,
            label: s.label.as_str().to_string(),
        }
    }

    pub fn from_interaction(video_id: &str, l: &InteractionLabel) -> Self {
        AnnotationRecord {
            video_id: video_id.to_string(),
            frame: None,
            shot_id: Some(l.shot_id.clone()),
            box_a: None,
            box_b: None,
            chars: Some([l.pair.a().to_string(), l.pair.b().to_string()]),
            label: if l.interacting { INTERACTING } else { NOT_INTERACTING }.to_string(),
        }
    }

    fn laeo_label(&self) -> Result<LaeoLabel> {
        LaeoLabel::parse(&self.label).ok_or_else(|| invalid(format!("unknown label {:?}", self.label)))
    }

    pub fn to_annotation(&self) -> Result<Annotation> {
        match (&self.frame, &self.shot_id, &self.box_a, &self.box_b, &self.chars) {
            (Some(frame), shot_id, Some(a), Some(b), None) => Ok(Annotation::Pair(PairAnnotation {
                video_id: self.video_id.clone(),
                frame: *frame,
                shot_id: shot_id.clone(),
                box_a: parse_box(a)?,
                box_b: parse_box(b)?,
                label: self.laeo_label()?,
            })),
            (None, Some(shot_id), None, None, None) => Ok(Annotation::Shot(ShotLabel {
                video_id: self.video_id.clone(),
                shot_id: shot_id.clone(),
                label: self.laeo_label()?,
            })),
            (None, Some(shot_id), None, None, Some([x, y])) => {
                let interacting = match self.label.as_str() {
                    INTERACTING => true,
                    NOT_INTERACTING => false,
                    other => return Err(invalid(format!("unknown interaction label {other:?}"))),
                };
                Ok(Annotation::Interaction(InteractionLabel {
                    shot_id: shot_id.clone(),
                    pair: CharacterPair::new(x, y)?,
                    interacting,
                }))
            }
            _ => Err(invalid(
                "an annotation needs frame+box_a+box_b, or shot_id alone, or shot_id+chars",
            )),
        }
    }
}

/// Annotations split by kind.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotationSet {
    pub pairs: Vec<PairAnnotation>,
    pub shots: Vec<ShotLabel>,
    pub interactions: Vec<InteractionLabel>,
}

pub fn read_annotations(path: &Path) -> Result<AnnotationSet> {
    let records: Vec<AnnotationRecord> = read_jsonl(path, ANNOTATIONS)?;
    let mut set = AnnotationSet::default();
    for (i, r) in records.iter().enumerate() {
        match r
            .to_annotation()
            .map_err(|e| invalid(format!("{}: record {}: {e}", path.display(), i + 1)))?
        {
            Annotation::Pair(p) => set.pairs.push(p),
            Annotation::Shot(s) => set.shots.push(s),
            Annotation::Interaction(l) => set.interactions.push(l),
        }
    }
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRecord {
    pub video_id: String,
    pub frame: u32,
    pub box_a: BoxRecord,
    pub box_b: BoxRecord,
    pub score: F6,
    /// Track ids of the two boxes, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracks: Option<[u64; 2]>,
}

impl ScoreRecord {
    pub fn from_scored(p: &ScoredPair) -> Self {
        ScoreRecord {
            video_id: p.video_id.clone(),
            frame: p.frame,
            box_a: box_record(&p.box_a),
            box_b: box_record(&p.box_b),
            score: F6(p.score),
            tracks: p.tracks.map(|(a, b)| [a, b]),
        }
    }

    pub fn to_scored(&self) -> Result<ScoredPair> {
        if !(0.0..=1.0).contains(&self.score.0) {
            return Err(invalid(format!("score {} outside [0, 1]", self.score.0)));
        }
        Ok(ScoredPair {
            video_id: self.video_id.clone(),
            frame: self.frame,
            box_a: parse_box(&self.box_a)?,
            box_b: parse_box(&self.box_b)?,
            score: self.score.0,
            tracks: self.tracks.map(|[a, b]| (a, b)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShotFileRecord {
    pub shot_id: String,
    pub video_id: String,
    pub first_frame: u32,
    pub last_frame: u32,
    pub tracks: Vec<u64>,
}

impl ShotFileRecord {
    pub fn from_shot(s: &ShotRecord) -> Self {
        ShotFileRecord {
            shot_id: s.shot_id.clone(),
            video_id: s.video_id.clone(),
            first_frame: s.first_frame,
            last_frame: s.last_frame,
            tracks: s.tracks.clone(),
        }
    }

    pub fn to_shot(&self) -> Result<ShotRecord> {
        if self.last_frame < self.first_frame {
            return Err(invalid(format!("shot {} ends before it starts", self.shot_id)));
        }
        Ok(ShotRecord {
            shot_id: self.shot_id.clone(),
            video_id: self.video_id.clone(),
            first_frame: self.first_frame,
            last_frame: self.last_frame,
            tracks: self.tracks.clone(),
            annotations: Vec::new(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CharacterRecord {
    pub track_id: u64,
    pub character: String,
}

pub fn read_detections(path: &Path) -> Result<Vec<HeadDetection>> {
    let recs: Vec<DetectionRecord> = read_jsonl(path, DETECTIONS)?;
    recs.iter().map(|r| r.to_detection()).collect()
}

pub fn read_tracks(path: &Path) -> Result<Vec<HeadTrack>> {
    let recs: Vec<TrackRecord> = read_jsonl(path, TRACKS)?;
    recs.iter().map(|r| r.to_track()).collect()
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoredPair>> {
    let recs: Vec<ScoreRecord> = read_jsonl(path, SCORES)?;
    recs.iter().map(|r| r.to_scored()).collect()
}

pub fn read_shots(path: &Path) -> Result<Vec<ShotRecord>> {
    let recs: Vec<ShotFileRecord> = read_jsonl(path, SHOTS)?;
    recs.iter().map(|r| r.to_shot()).collect()
}

pub fn read_characters(path: &Path) -> Result<BTreeMap<u64, String>> {
    let recs: Vec<CharacterRecord> = read_jsonl(path, CHARACTERS)?;
    let mut out = BTreeMap::new();
    for r in recs {
        if out.insert(r.track_id, r.character).is_some() {
            return Err(invalid(format!("track {} is named twice", r.track_id)));
        }
    }
    Ok(out)
}
