use alloc::vec;
use alloc::vec::Vec;

use super::*;
use crate::domain::LaeoLabel;
use crate::headmap::{HeadMap, HeadMapConfig};
use crate::nn::{grad_check, GradCheckConfig, Graph, Tensor};
use crate::rng::seeded;
use crate::synth::{make_pair, pose_sample, SynthConfig};

fn tiny_synth() -> SynthConfig {
    SynthConfig {
        t: 2,
        headmap: HeadMapConfig { m: 2, ..Default::default() },
        ..Default::default()
    }
}

fn tiny_samples(n: u64) -> Vec<TrackPairSample> {
    (0..n)
        .map(|i| {
            let want = if i % 2 == 0 { LaeoLabel::Laeo } else { LaeoLabel::NotLaeo };
            make_pair(i, want, &tiny_synth()).unwrap().sample
        })
        .collect()
}

fn zero_sample(t: usize, m: usize) -> TrackPairSample {
    TrackPairSample {
        left: CropStack::zeros(t),
        right: CropStack::zeros(t),
        map: HeadMap::zeros(m),
        label: LaeoLabel::NotLaeo,
    }
}

#[test]
fn parameter_count_has_a_closed_form() {
    for cfg in [ModelConfig::default(), ModelConfig::tiny(), ModelConfig { t: 1, m: 1, ..Default::default() }] {
        let net = build_laeonet(&cfg, Init::Random, 3).unwrap();
        let by_hand: usize = cfg
            .head_layers()
            .iter()
            .chain(&cfg.map_layers())
            .map(|l| l.cout * l.cin * l.kernel.iter().product::<usize>() + l.cout)
            .sum::<usize>()
            + cfg.hidden * (cfg.fusion_input_len() + 1)
            + 2 * (cfg.hidden + 1);
        assert_eq!(net.num_params(), by_hand);
        assert_eq!(cfg.num_params(), by_hand);
    }
}

#[test]
fn default_layer_volumes() {
    let cfg = ModelConfig::default();
    let head = cfg.head_layers();
    assert_eq!(head[0].output, [5, 32, 32]);
    assert_eq!(head[4].output, [3, 4, 4]);
    assert_eq!(cfg.head_embedding_len(), 32 * 3 * 16);
    assert_eq!(cfg.map_embedding_len(), 16 * 3 * 16);
    // a single frame gives 2D kernels
    let flat = ModelConfig { t: 1, m: 1, ..Default::default() };
    assert!(flat.head_layers().iter().all(|l| l.kernel == [1, 3, 3] && l.output[0] == 1));
    assert!(cfg.macs() > flat.macs());
}

#[test]
fn invalid_configs() {
    let mut c = ModelConfig::default();
    c.head_channels.pop();
    assert!(c.validate().is_err());
    assert!(ModelConfig { t: 0, ..Default::default() }.validate().is_err());
    assert!(ModelConfig { dropout: 1.0, ..Default::default() }.validate().is_err());
    assert!(build_laeonet(&ModelConfig { hidden: 0, ..Default::default() }, Init::Random, 0).is_err());
}

#[test]
fn zero_input_gives_a_probability_pair() {
    let cfg = ModelConfig::tiny();
    let net = build_laeonet(&cfg, Init::Random, 1).unwrap();
    let s = zero_sample(2, 2);
    let batch = Batch::from_samples(&[&s], 2, 2).unwrap();
    let mut g = Graph::new(net.params(), false, 0);
    let f = net.forward(&mut g, &batch).unwrap();
    let p = g.softmax(f.logits).unwrap();
    let v = g.value(p).data();
    assert!((v[0] + v[1] - 1.0).abs() < 1e-6 && v.iter().all(|&x| x > 0.0));
}

#[test]
fn zero_weights_score_one_half() {
    let cfg = ModelConfig::tiny();
    let mut net = build_laeonet(&cfg, Init::Random, 1).unwrap();
    let ids: Vec<_> = net.params().iter().map(|(id, _, _)| id).collect();
    for id in ids {
        net.params_mut().get_mut(id).data_mut().fill(0.0);
    }
    let s = &tiny_samples(1)[0];
    assert_eq!(net.score_pair(s).unwrap(), 0.5);
}

#[test]
fn inference_is_deterministic() {
    let net = build_laeonet(&ModelConfig::tiny(), Init::Random, 5).unwrap();
    let s = tiny_samples(3);
    let a = net.score_pair(&s[1]).unwrap();
    assert_eq!(a, net.score_pair(&s[1]).unwrap());
    let refs: Vec<&TrackPairSample> = s.iter().collect();
    assert_eq!(net.score_samples(&refs).unwrap()[1], a);
    assert!((0.0..=1.0).contains(&a));
}

#[test]
fn head_weights_are_shared() {
    let net = build_laeonet(&ModelConfig::tiny(), Init::Random, 5).unwrap();
    let names: Vec<&str> = net.params().iter().map(|(_, n, _)| n).collect();
    assert_eq!(names.iter().filter(|n| n.starts_with("head.")).count(), 10);
    // equal crops on both sides give equal embeddings
    let mut s = tiny_samples(1).remove(0);
    s.right = s.left.clone();
    let batch = Batch::from_samples(&[&s], 2, 2).unwrap();
    let mut g = Graph::new(net.params(), false, 0);
    let f = net.forward(&mut g, &batch).unwrap();
    assert_eq!(g.value(f.left), g.value(f.right));
}

#[test]
fn swapped_and_mirrored_input_runs_the_same_path() {
    let net = build_laeonet(&ModelConfig::tiny(), Init::Random, 2).unwrap();
    let s = tiny_samples(1).remove(0);
    let side = crate::headmap::MAP_SIDE;
    let mut map = HeadMap::zeros(2);
    for f in 0..2 {
        for r in 0..side {
            for c in 0..side {
                let src = |ch| s.map.get(f, r, side - 1 - c, ch);
                let px = [src(0), src(2), src(1)];
                for (ch, v) in px.into_iter().enumerate() {
                    map.data_mut()[((f * side + r) * side + c) * 3 + ch] = v;
                }
            }
        }
    }
    let swapped = TrackPairSample {
        left: s.right.clone(),
        right: s.left.clone(),
        map,
        label: s.label,
    };
    let (a, b) = (net.score_pair(&s).unwrap(), net.score_pair(&swapped).unwrap());
    assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
}

#[test]
fn tiny_model_passes_gradient_check() {
    let cfg = ModelConfig::tiny();
    let mut net = build_laeonet(&cfg, Init::Random, 11).unwrap().cast::<f64>();
    // zero biases put padded positions exactly on the ReLU kink
    let mut rng = seeded(12);
    let ids: Vec<_> = net.params().iter().filter(|(_, n, _)| n.ends_with(".b")).map(|(id, _, _)| id).collect();
    for id in ids {
        for v in net.params_mut().get_mut(id).data_mut() {
            *v = crate::rng::uniform(&mut rng, 0.05, 0.3);
        }
    }
    let s = tiny_samples(2);
    let refs: Vec<&TrackPairSample> = s.iter().collect();
    let batch = Batch::from_samples(&refs, 2, 2).unwrap().cast::<f64>();
    for training in [false, true] {
        let gc = GradCheckConfig {
            training,
            seed: 4,
            samples_per_param: 8,
            // thousands of ReLU units: a small step keeps them on one side
            eps: 1e-6,
            ..Default::default()
        };
        let report = grad_check(net.params(), |g| net.loss(g, &batch), &gc).unwrap();
        assert!(report.passed(), "{:?}", report.worst());
    }
}

#[test]
fn loaded_parameters_are_checked() {
    let cfg = ModelConfig::tiny();
    let net = build_laeonet(&cfg, Init::Random, 1).unwrap();
    assert!(LaeoNet::from_params(&cfg, net.params().clone()).is_ok());
    let other = ModelConfig { hidden: 5, ..ModelConfig::tiny() };
    assert!(LaeoNet::from_params(&other, net.params().clone()).is_err());
}

#[test]
fn pose_pretrained_init_copies_the_head_branch() {
    let cfg = ModelConfig::tiny();
    let pose = PoseNet::new(&cfg, 77).unwrap();
    let net = build_laeonet(&cfg, Init::PosePretrained(pose.params()), 1).unwrap();
    let id = net.params().id("head.conv3.w").unwrap();
    let pid = pose.params().id("head.conv3.w").unwrap();
    assert_eq!(net.params().get(id), pose.params().get(pid));
    let wrong = PoseNet::new(&ModelConfig { t: 3, ..cfg.clone() }, 1).unwrap();
    assert!(build_laeonet(&cfg, Init::PosePretrained(wrong.params()), 1).is_err());
}

#[test]
fn difficulty_schedule() {
    let cfg = TrainConfig::default();
    let d: Vec<f64> = (0..8).map(|e| cfg.difficulty(e)).collect();
    assert_eq!(d, vec![0.0, 0.25, 0.25, 0.5, 0.5, 0.75, 0.75, 1.0]);
    assert_eq!(cfg.difficulty(30), 1.0);
}

#[test]
fn epoch_alternation() {
    let cfg = TrainConfig::default();
    let kinds: Vec<EpochKind> = (0..6).map(|e| cfg.epoch_kind(e, true)).collect();
    use EpochKind::*;
    assert_eq!(kinds, vec![Synthetic, Synthetic, Real, Synthetic, Real, Synthetic]);
    assert!((0..6).all(|e| cfg.epoch_kind(e, false) == Synthetic));
}

#[test]
fn zero_difficulty_is_uniform_sampling() {
    let scores: Vec<f64> = (0..50).map(|i| (i * 37 % 50) as f64).collect();
    let a = select_negatives(&scores, 20, 0.0, &mut seeded(9));
    let b = uniform_negatives(50, 20, &mut seeded(9));
    assert_eq!(a.chosen, b);
    assert_eq!(a.hard, 0);
}

#[test]
fn full_difficulty_takes_the_hardest() {
    let scores: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
    let s = select_negatives(&scores, 3, 1.0, &mut seeded(1));
    assert_eq!(s.chosen, vec![9, 8, 7]);
    let q = select_negatives(&scores, 6, 0.25, &mut seeded(1));
    // 0.75-quantile is index floor(0.75 * 9) = 6
    assert_eq!(q.hard, 4);
    assert_eq!(&q.chosen[..4], &[9, 8, 7, 6]);
    assert_eq!(q.chosen.len(), 6);
    let mut sorted = q.chosen.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(sorted.len(), 6);
}

#[test]
fn augmentation_is_coherent() {
    let s = tiny_samples(1).remove(0);
    assert_eq!(augment(&s, &AugmentConfig::none(), 3).unwrap(), s);
    let shift_only = AugmentConfig {
        shift_px: 4.0,
        zoom: 0.0,
        brightness: 0.0,
    };
    let a = augment(&s, &shift_only, 3).unwrap();
    assert_ne!(a, s);
    // find the shift used on the left crops and check it on the map
    let peak = |m: &HeadMap, ch: usize| {
        let (mut best, mut at) = (f32::MIN, (0.0, 0.0));
        let mut sum = (0.0f64, 0.0f64, 0.0f64);
        for r in 0..64 {
            for c in 0..64 {
                let v = m.get(1, r, c, ch);
                if v > best {
                    best = v;
                }
                sum.0 += v as f64 * c as f64;
                sum.1 += v as f64 * r as f64;
                sum.2 += v as f64;
            }
        }
        at.0 = sum.0 / sum.2;
        at.1 = sum.1 / sum.2;
        at
    };
    let (before, after) = (peak(&s.map, 2), peak(&a.map, 2));
    let (dx, dy) = (after.0 - before.0, after.1 - before.1);
    assert!(dx.abs() <= 4.0 + 1e-9 && dy.abs() <= 4.0 + 1e-9);
    let mut rng = seeded(3);
    let sx = crate::rng::uniform(&mut rng, -4.0, 4.0);
    let sy = crate::rng::uniform(&mut rng, -4.0, 4.0);
    assert!((dx - sx).abs() < 0.5 && (dy - sy).abs() < 0.5, "{dx} {dy} vs {sx} {sy}");
    let expect = crate::synth::render::warp(s.left.frame(0), 3, (sx, sy), 1.0, 0.0, true);
    assert_eq!(a.left.frame(0), expect.as_slice());
}

#[test]
fn pretraining_needs_data() {
    let mut net = PoseNet::new(&ModelConfig::tiny(), 0).unwrap();
    let empty: Vec<(CropStack, crate::domain::HeadPose)> = vec![];
    assert!(pretrain_headpose(&mut net, &empty, &PretrainConfig::default()).is_err());
}

#[test]
fn pose_loss_decreases_on_one_sample() {
    let mut net = PoseNet::new(&ModelConfig::tiny(), 0).unwrap();
    let data = vec![pose_sample(5, &tiny_synth()).unwrap()];
    let cfg = PretrainConfig {
        epochs: 10,
        lr: 1e-3,
        momentum: 0.0,
        ..Default::default()
    };
    let r = pretrain_headpose(&mut net, &data, &cfg).unwrap();
    assert_eq!(r.step_losses.len(), 10);
    assert!(r.step_losses.windows(2).all(|w| w[1] < w[0]), "{:?}", r.step_losses);
}

#[test]
fn embeddings_csv() {
    let net = build_laeonet(&ModelConfig::tiny(), Init::Random, 1).unwrap();
    let (s, p) = pose_sample(1, &tiny_synth()).unwrap();
    let rows = [(&s, Some(p)), (&s, None), (&s, Some(p))];
    let csv = export_embeddings(&net, &rows).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    fn cols(l: &str) -> Vec<&str> {
        l.split(',').skip(4).collect()
    }
    assert_eq!(cols(lines[1]), cols(lines[2]));
    assert_eq!(cols(lines[1]).len(), ModelConfig::tiny().head_embedding_len());
    assert!(lines[2].starts_with("1,,,,"));
}

#[test]
fn batches_take_central_frames() {
    let frames: Vec<Vec<f32>> = (0..4).map(|i| vec![i as f32; CROP_LEN]).collect();
    let stack = CropStack::from_frames(&frames).unwrap();
    let s = TrackPairSample {
        left: stack.clone(),
        right: stack,
        map: HeadMap::zeros(4),
        label: LaeoLabel::Laeo,
    };
    let b = Batch::from_samples(&[&s], 1, 1).unwrap();
    assert_eq!(b.left.shape(), &[1, 3, 1, 64, 64]);
    assert_eq!(b.left.data()[0], 2.0);
    assert_eq!(b.targets, vec![1]);
    assert!(Batch::from_samples(&[&s], 5, 1).is_err());
    let amb = TrackPairSample { label: LaeoLabel::Ambiguous, ..s };
    assert!(Batch::from_samples(&[&amb], 1, 1).is_err());
    let _ = Tensor::<f32>::zeros(&[1]);
}

#[test]
fn gradcheck_suite_passes() {
    for (name, report) in super::gradcheck_suite(7).unwrap() {
        assert!(report.passed(), "{name}: {:?}", report.worst());
    }
}
