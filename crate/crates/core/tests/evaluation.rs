use laeo_core::domain::{BoundingBox, LaeoLabel, PairAnnotation};
use laeo_core::eval::{
    average_precision, average_precision_labels, score_shot, score_track_pair_series, smooth, EvalProtocol, ScoredPair,
    WindowScore,
};
use laeo_core::rng::seeded;
use proptest::prelude::*;
use rand::seq::SliceRandom;

/// AP as the area under the stepwise precision-recall curve, recomputed
/// from scratch at every threshold: for each distinct score, count the
/// true and false positives at or above it.
fn brute_force_ap(scores: &[f64], is_tp: &[bool], npos: usize) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let (mut ap, mut prev_recall) = (0.0, 0.0);
    for th in thresholds {
        let above: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= th).collect();
        let tp = above.iter().filter(|&&i| is_tp[i]).count();
        let recall = tp as f64 / npos as f64;
        let precision = tp as f64 / above.len() as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

fn bx(x: f64) -> BoundingBox {
    BoundingBox::new(x, 10.0, x + 20.0, 30.0).unwrap()
}

/// Predictions on their own frames: matched positives, predictions on
/// negatives or unannotated frames, and positives nobody predicted.
fn instance(kinds: &[u8], scores: &[f64], missed: usize) -> (Vec<ScoredPair>, Vec<PairAnnotation>, Vec<bool>, usize) {
    let mut preds = Vec::new();
    let mut anns = Vec::new();
    let mut tp = Vec::new();
    for (i, (&k, &s)) in kinds.iter().zip(scores).enumerate() {
        let frame = i as u32;
        preds.push(ScoredPair {
            video_id: "v".into(),
            frame,
            box_a: bx(0.0),
            box_b: bx(100.0),
            score: s,
            tracks: None,
        });
        let label = match k {
            0 => Some(LaeoLabel::Laeo),
            1 => Some(LaeoLabel::NotLaeo),
            _ => None,
        };
        if let Some(label) = label {
            anns.push(PairAnnotation {
                video_id: "v".into(),
                frame,
                shot_id: None,
                box_a: bx(100.0),
                box_b: bx(0.0),
                label,
            });
        }
        tp.push(k == 0);
    }
    for j in 0..missed {
        anns.push(PairAnnotation {
            video_id: "v".into(),
            frame: 1000 + j as u32,
            shot_id: None,
            box_a: bx(0.0),
            box_b: bx(100.0),
            label: LaeoLabel::Laeo,
        });
    }
    let npos = tp.iter().filter(|&&t| t).count() + missed;
    (preds, anns, tp, npos)
}

proptest! {
    #[test]
    fn ap_matches_the_threshold_sweep(
        items in proptest::collection::vec((0u8..3, 0u32..1_000_000), 1..=12),
        missed in 0usize..3,
    ) {
        let kinds: Vec<u8> = items.iter().map(|(k, _)| *k).collect();
        // distinct scores: ties are ordered by input position instead
        let mut scores: Vec<f64> = items.iter().enumerate().map(|(i, (_, s))| *s as f64 / 1e6 + i as f64 * 1e-9).collect();
        scores.iter_mut().for_each(|s| *s = s.min(1.0));
        let (preds, anns, tp, npos) = instance(&kinds, &scores, missed);
        prop_assume!(npos > 0);
        let ap = average_precision(&preds, &anns, EvalProtocol::FrameLevelIou).unwrap();
        prop_assert!((ap - brute_force_ap(&scores, &tp, npos)).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&ap));
    }

    #[test]
    fn ap_is_invariant_to_monotone_rescoring(
        raw in proptest::collection::vec((any::<bool>(), 0.0f64..1.0), 1..40),
    ) {
        let labels: Vec<LaeoLabel> = raw.iter().map(|(p, _)| if *p { LaeoLabel::Laeo } else { LaeoLabel::NotLaeo }).collect();
        prop_assume!(labels.contains(&LaeoLabel::Laeo));
        let scores: Vec<f64> = raw.iter().map(|(_, s)| *s).collect();
        let squashed: Vec<f64> = scores.iter().map(|s| s * s * 0.5 + 0.1).collect();
        let a = average_precision_labels(&scores, &labels).unwrap();
        let b = average_precision_labels(&squashed, &labels).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn smoothing_keeps_length_and_range(series in proptest::collection::vec(0.0f64..1.0, 1..50)) {
        let s = smooth(&series, 5);
        prop_assert_eq!(s.len(), series.len());
        let (lo, hi) = series.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        prop_assert!(s.iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
        let shot = score_shot(std::slice::from_ref(&series)).unwrap();
        prop_assert!(shot <= hi + 1e-12);
    }
}

#[test]
fn perfect_and_inverted_rankings() {
    let labels = [LaeoLabel::Laeo, LaeoLabel::Laeo, LaeoLabel::NotLaeo, LaeoLabel::NotLaeo];
    assert_eq!(average_precision_labels(&[0.9, 0.8, 0.2, 0.1], &labels).unwrap(), 1.0);
    let inverted = average_precision_labels(&[0.1, 0.2, 0.8, 0.9], &labels).unwrap();
    assert!((inverted - (1.0 / 3.0 + 2.0 / 4.0) / 2.0).abs() < 1e-12);
    assert!(average_precision_labels(&[0.5], &[LaeoLabel::NotLaeo]).is_err());
}

#[test]
fn shuffled_scores_give_ap_near_prevalence() {
    let (npos, n) = (300usize, 1000usize);
    let mut labels = vec![LaeoLabel::Laeo; npos];
    labels.resize(n, LaeoLabel::NotLaeo);
    let scores: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
    let mut rng = seeded(1);
    let mut total = 0.0;
    for _ in 0..200 {
        labels.shuffle(&mut rng);
        total += average_precision_labels(&scores, &labels).unwrap();
    }
    let mean = total / 200.0;
    assert!((mean - 0.3).abs() < 0.01, "{mean}");
}

#[test]
fn shot_score_fixtures() {
    assert_eq!(score_shot(&[vec![0.7]]).unwrap(), 0.7);
    assert!((score_shot(&[vec![1.0, 0.0, 0.0]]).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    let spike = [vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]];
    assert!((score_shot(&spike).unwrap() - 0.2).abs() < 1e-12);
    let two = [vec![0.2; 6], vec![0.9; 6]];
    assert!((score_shot(&two).unwrap() - 0.9).abs() < 1e-12);
    assert!(score_shot(&[]).is_err());
    assert!(score_shot(&[vec![]]).is_err());
}

#[test]
fn window_scores_spread_to_frames() {
    // windows of 4 frames starting at 10 and 12: central frames 12 and 14
    let w = [WindowScore { start_frame: 10, score: 0.2 }, WindowScore { start_frame: 12, score: 0.8 }];
    let s = score_track_pair_series(&w, 4).unwrap();
    let frames: Vec<u32> = s.iter().map(|(f, _)| *f).collect();
    assert_eq!(frames, (10..16).collect::<Vec<_>>());
    assert_eq!(s[0].1, 0.2);
    assert_eq!(s[3].1, 0.2); // frame 13 ties between both centers
    assert_eq!(s[4].1, 0.8);
}
