//! Average precision and the scoring protocols.
//!
//! AP is the exact area under the stepwise precision-recall curve:
//! predictions are ranked by descending score (ties keep input order), and
//! AP is the mean over ground-truth positives of the precision at the rank
//! where each one is retrieved. Positives never retrieved contribute zero.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::domain::{BoundingBox, LaeoLabel, PairAnnotation, ShotLabel};
use crate::error::{Error, Result};
use crate::tracker::iou;

/// Overlap a head must exceed to count as localized.
pub const MATCH_THRESHOLD: f64 = 0.5;

/// Length of the moving average used for shot scores.
pub const SHOT_SMOOTHING: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPair {
    pub video_id: String,
    pub frame: u32,
    pub box_a: BoundingBox,
    pub box_b: BoundingBox,
    pub score: f64,
    /// Track ids behind the two boxes, when known.
    pub tracks: Option<(u64, u64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EvalProtocol {
    /// Both heads with IoU above 0.5.
    FrameLevelIou,
    /// Both heads covered by the annotated person boxes: intersection over
    /// head area above 0.5.
    FrameLevelHeadInHuman,
    /// One score per shot against shot labels.
    ShotLevel,
}

impl EvalProtocol {
    pub const ALL: [EvalProtocol; 3] = [
        EvalProtocol::FrameLevelIou,
        EvalProtocol::FrameLevelHeadInHuman,
        EvalProtocol::ShotLevel,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EvalProtocol::FrameLevelIou => "frame_iou",
            EvalProtocol::FrameLevelHeadInHuman => "frame_head_in_human",
            EvalProtocol::ShotLevel => "shot",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.as_str() == s)
    }
}

fn head_in_human(head: &BoundingBox, human: &BoundingBox) -> f64 {
    head.intersection_area(human) / head.area()
}

/// Overlap of the weaker head under the better of the two head-to-head
/// assignments, or `None` when the pair is not localized.
fn pair_overlap(pred: &ScoredPair, gt: &PairAnnotation, protocol: EvalProtocol) -> Result<Option<f64>> {
    let overlap: fn(&BoundingBox, &BoundingBox) -> f64 = match protocol {
        EvalProtocol::FrameLevelIou => iou,
        EvalProtocol::FrameLevelHeadInHuman => head_in_human,
        EvalProtocol::ShotLevel => {
            return Err(Error::ProtocolMismatch {
                protocol: protocol.as_str(),
                what: "frame-level pair annotations",
            })
        }
    };
    if pred.video_id != gt.video_id || pred.frame != gt.frame {
        return Ok(None);
    }
    let direct = overlap(&pred.box_a, &gt.box_a).min(overlap(&pred.box_b, &gt.box_b));
    let crossed = overlap(&pred.box_a, &gt.box_b).min(overlap(&pred.box_b, &gt.box_a));
    let best = direct.max(crossed);
    Ok((best > MATCH_THRESHOLD).then_some(best))
}

/// Whether a predicted pair localizes an annotated pair.
pub fn match_pair(pred: &ScoredPair, gt: &PairAnnotation, protocol: EvalProtocol) -> Result<bool> {
    Ok(pair_overlap(pred, gt, protocol)?.is_some())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    TruePositive,
    FalsePositive,
    /// Matched only ambiguous ground truth; left out of the ranking.
    Ignored,
}

/// Indices of `scores` by descending score, ties in input order.
pub fn rank(scores: &[f64]) -> Result<Vec<usize>> {
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::InvalidValue(format!("score {} of prediction {i}", scores[i])));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(core::cmp::Ordering::Equal));
    Ok(order)
}

/// AP of a ranked list of outcomes against `npos` ground-truth positives.
pub fn ap_from_outcomes(ranked: &[Outcome], npos: usize) -> Result<f64> {
    if npos == 0 {
        return Err(Error::NoPositives);
    }
    let (mut tp, mut seen, mut sum) = (0usize, 0usize, 0.0);
    for o in ranked {
        match o {
            Outcome::Ignored => continue,
            Outcome::TruePositive => {
                tp += 1;
                seen += 1;
                sum += tp as f64 / seen as f64;
            }
            Outcome::FalsePositive => seen += 1,
        }
    }
    Ok(sum / npos as f64)
}

/// Greedy one-to-one matching of predictions to annotations in rank order.
/// Returns the outcome of every prediction (in input order) and the number
/// of positives.
pub fn assign(preds: &[ScoredPair], annotations: &[PairAnnotation], protocol: EvalProtocol) -> Result<(Vec<Outcome>, usize)> {
    let scores: Vec<f64> = preds.iter().map(|p| p.score).collect();
    let order = rank(&scores)?;
    let mut by_frame: BTreeMap<(&str, u32), Vec<usize>> = BTreeMap::new();
    for (i, a) in annotations.iter().enumerate() {
        by_frame.entry((a.video_id.as_str(), a.frame)).or_default().push(i);
    }
    let npos = annotations.iter().filter(|a| a.label == LaeoLabel::Laeo).count();
    let mut taken = vec![false; annotations.len()];
    let mut outcomes = vec![Outcome::FalsePositive; preds.len()];
    for &p in &order {
        let pred = &preds[p];
        let candidates = by_frame.get(&(pred.video_id.as_str(), pred.frame));
        let mut best: Option<(f64, usize)> = None;
        let mut any_match = false;
        let mut only_ambiguous = true;
        for &a in candidates.into_iter().flatten() {
            let Some(ov) = pair_overlap(pred, &annotations[a], protocol)? else {
                continue;
            };
            any_match = true;
            let label = annotations[a].label;
            if label != LaeoLabel::Ambiguous {
                only_ambiguous = false;
            }
            if label == LaeoLabel::Laeo && !taken[a] && best.is_none_or(|(b, _)| ov > b) {
                best = Some((ov, a));
            }
        }
        outcomes[p] = match best {
            Some((_, a)) => {
                taken[a] = true;
                Outcome::TruePositive
            }
            None if any_match && only_ambiguous => Outcome::Ignored,
            None => Outcome::FalsePositive,
        };
    }
    // protocol check even without predictions
    if preds.is_empty() && protocol == EvalProtocol::ShotLevel {
        return Err(Error::ProtocolMismatch {
            protocol: protocol.as_str(),
            what: "frame-level pair annotations",
        });
    }
    Ok((outcomes, npos))
}

pub fn average_precision(preds: &[ScoredPair], annotations: &[PairAnnotation], protocol: EvalProtocol) -> Result<f64> {
    let (outcomes, npos) = assign(preds, annotations, protocol)?;
    let scores: Vec<f64> = preds.iter().map(|p| p.score).collect();
    let ranked: Vec<Outcome> = rank(&scores)?.into_iter().map(|i| outcomes[i]).collect();
    ap_from_outcomes(&ranked, npos)
}

/// AP when every scored unit carries its own label (pairs, shots,
/// character pairs). Ambiguous units are left out.
pub fn average_precision_labels(scores: &[f64], labels: &[LaeoLabel]) -> Result<f64> {
    Ok(curve_from_labels(scores, labels)?.ap)
}

fn label_outcome(l: LaeoLabel) -> Outcome {
    match l {
        LaeoLabel::Laeo => Outcome::TruePositive,
        LaeoLabel::NotLaeo => Outcome::FalsePositive,
        LaeoLabel::Ambiguous => Outcome::Ignored,
    }
}

/// One step of the precision-recall curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub ap: f64,
    /// One point per ranked (non-ignored) prediction.
    pub curve: Vec<PrPoint>,
    pub num_positives: usize,
    pub num_predictions: usize,
}

fn report(scores: &[f64], outcomes: &[Outcome], npos: usize) -> Result<EvalReport> {
    let order = rank(scores)?;
    let ranked: Vec<Outcome> = order.iter().map(|&i| outcomes[i]).collect();
    let ap = ap_from_outcomes(&ranked, npos)?;
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut curve = Vec::new();
    for &i in &order {
        match outcomes[i] {
            Outcome::Ignored => continue,
            Outcome::TruePositive => tp += 1,
            Outcome::FalsePositive => {}
        }
        seen += 1;
        curve.push(PrPoint {
            threshold: scores[i],
            precision: tp as f64 / seen as f64,
            recall: tp as f64 / npos as f64,
        });
    }
    Ok(EvalReport {
        ap,
        curve,
        num_positives: npos,
        num_predictions: seen,
    })
}

fn curve_from_labels(scores: &[f64], labels: &[LaeoLabel]) -> Result<EvalReport> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    let outcomes: Vec<Outcome> = labels.iter().map(|&l| label_outcome(l)).collect();
    let npos = labels.iter().filter(|&&l| l == LaeoLabel::Laeo).count();
    report(scores, &outcomes, npos)
}

/// Score of one shot.
#[derive(Debug, Clone, PartialEq)]
pub struct ShotScore {
    pub video_id: String,
    pub shot_id: String,
    pub score: f64,
}

pub enum Predictions<'a> {
    Pairs(&'a [ScoredPair]),
    Shots(&'a [ShotScore]),
}

pub enum GroundTruth<'a> {
    Pairs(&'a [PairAnnotation]),
    Shots(&'a [ShotLabel]),
}

/// AP and precision-recall curve under a protocol. Shot labels without a
/// score rank last with score 0.
pub fn evaluate(gt: GroundTruth<'_>, preds: Predictions<'_>, protocol: EvalProtocol) -> Result<EvalReport> {
    match (gt, preds, protocol) {
        (GroundTruth::Pairs(ann), Predictions::Pairs(p), EvalProtocol::FrameLevelIou | EvalProtocol::FrameLevelHeadInHuman) => {
            let (outcomes, npos) = assign(p, ann, protocol)?;
            let scores: Vec<f64> = p.iter().map(|q| q.score).collect();
            report(&scores, &outcomes, npos)
        }
        (GroundTruth::Shots(labels), Predictions::Shots(s), EvalProtocol::ShotLevel) => {
            let by_shot: BTreeMap<(&str, &str), f64> = s
                .iter()
                .map(|x| ((x.video_id.as_str(), x.shot_id.as_str()), x.score))
                .collect();
            let scores: Vec<f64> = labels
                .iter()
                .map(|l| by_shot.get(&(l.video_id.as_str(), l.shot_id.as_str())).copied().unwrap_or(0.0))
                .collect();
            let lab: Vec<LaeoLabel> = labels.iter().map(|l| l.label).collect();
            curve_from_labels(&scores, &lab)
        }
        (_, _, protocol) => Err(Error::ProtocolMismatch {
            protocol: protocol.as_str(),
            what: "the given annotations and predictions",
        }),
    }
}

/// Score of the window starting at `start_frame`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowScore {
    pub start_frame: u32,
    pub score: f64,
}

/// Per-frame scores of one track pair from its window scores: each window
/// scores its central frame, every other frame of the covered range takes
/// the score of the nearest central frame (the earlier one on ties).
pub fn score_track_pair_series(windows: &[WindowScore], t: usize) -> Result<Vec<(u32, f64)>> {
    if t == 0 {
        return Err(Error::InvalidConfig("window length must be >= 1".into()));
    }
    if windows.is_empty() {
        return Err(Error::Empty("window scores"));
    }
    let mut w: Vec<WindowScore> = windows.to_vec();
    w.sort_by_key(|x| x.start_frame);
    let half = (t / 2) as u32;
    let first = w[0].start_frame;
    let last = w[w.len() - 1].start_frame + t as u32 - 1;
    let mut out = Vec::with_capacity((last - first + 1) as usize);
    let mut k = 0;
    for f in first..=last {
        while k + 1 < w.len() {
            let here = w[k].start_frame + half;
            let next = w[k + 1].start_frame + half;
            if f.abs_diff(next) < f.abs_diff(here) {
                k += 1;
            } else {
                break;
            }
        }
        out.push((f, w[k].score));
    }
    Ok(out)
}

/// Centered moving average of odd length `len`, shrinking at the ends.
pub fn smooth(series: &[f64], len: usize) -> Vec<f64> {
    let h = len / 2;
    (0..series.len())
        .map(|i| {
            let lo = i.saturating_sub(h);
            let hi = (i + h + 1).min(series.len());
            series[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Shot score: the maximum over pairs and frames of the smoothed per-frame
/// pair scores.
pub fn score_shot(pair_series: &[Vec<f64>]) -> Result<f64> {
    pair_series
        .iter()
        .flat_map(|s| smooth(s, SHOT_SMOOTHING))
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
        .ok_or(Error::Empty("shot without scored frames"))
}
