//! One test per acceptance criterion. Each prints a single
//! `criterion N: PASS|FAIL ...` line, written past the test harness's output
//! capture so it shows up in every run. The tests share one lock so that the
//! timed ones are not slowed down by each other.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use laeo_core::domain::{BoundingBox, HeadPose, HeadTrack, LaeoLabel, PairAnnotation, ShotRecord};
use laeo_core::eval::{average_precision, average_precision_labels, score_shot, EvalProtocol, ScoredPair};
use laeo_core::model::{build_laeonet, evaluate_source, gradcheck_suite, train, Fixed, Init, ModelConfig, TrainConfig, GRADCHECK_TOL};
use laeo_core::nn::loss::{head_pose_loss, laeo_loss, LossSample, PoseLossWeights};
use laeo_core::rng::{derive_seed, seeded, uniform};
use laeo_core::social::{baselines, interaction_ap, ApMode, CharacterPair, Episode, InteractionLabel, ScoreKind, TrackPairSeries};
use laeo_core::synth::{gaze_oracle, generate_dataset, make_pair_of_kind, PairKind, Split, SynthConfig};

static LOCK: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: u32, ok: bool, detail: &str) {
    let line = format!("criterion {n}: {} {detail}\n", if ok { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    assert!(ok, "criterion {n} failed: {detail}");
}

#[test]
fn criterion_01_gradients() {
    let _g = serial();
    let start = Instant::now();
    let checks = gradcheck_suite(7).unwrap();
    let elapsed = start.elapsed();
    let worst = checks.iter().map(|(_, r)| r.max_rel_error).fold(0.0, f64::max);
    let ok = worst <= GRADCHECK_TOL && checks.iter().all(|(_, r)| r.passed()) && elapsed < Duration::from_secs(30);
    report(1, ok, &format!("{} checks, max relative error {worst:.2e}, {:.1}s", checks.len(), elapsed.as_secs_f64()));
}

fn huber(d: f64) -> f64 {
    if d.abs() < 1.0 {
        d * d / 2.0
    } else {
        d.abs() - 0.5
    }
}

/// Pose loss written directly in degrees.
fn pose_loss_oracle(pred: (f64, f64, f64), gt: (f64, f64, f64), w: [f64; 4]) -> f64 {
    let side = if gt.0 > 0.0 {
        1.0
    } else if gt.0 < 0.0 {
        -1.0
    } else {
        0.0
    };
    let wrong_side = f64::max(0.0, -side * (pred.0 / 180.0).tanh());
    w[0] * huber((pred.0 - gt.0) / 180.0) + w[1] * huber((pred.1 - gt.1) / 90.0) + w[2] * huber((pred.2 - gt.2) / 180.0) + w[3] * wrong_side
}

#[test]
fn criterion_02_losses() {
    let _g = serial();
    let ln2 = laeo_loss(LossSample { class: 1, p_laeo: 0.5 });
    let w = PoseLossWeights::default();
    let mut ok = (ln2 - std::f64::consts::LN_2).abs() <= 1e-9;
    ok &= [w.yaw, w.pitch, w.roll, w.sign] == [0.6, 0.3, 0.1, 0.1];
    let mut rng = seeded(2);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let mut draw = || (uniform(&mut rng, -180.0, 180.0), uniform(&mut rng, -90.0, 90.0), uniform(&mut rng, -180.0, 180.0));
        let (p, t) = (draw(), draw());
        let got = head_pose_loss(&HeadPose::new(p.0, p.1, p.2).unwrap(), &HeadPose::new(t.0, t.1, t.2).unwrap(), &w, 1.0);
        worst = worst.max((got - pose_loss_oracle(p, t, [0.6, 0.3, 0.1, 0.1])).abs());
    }
    ok &= worst <= 1e-12;
    report(2, ok, &format!("laeo_loss(1, 0.5) = {ln2:.12}, pose loss max deviation {worst:.1e} over 20 samples"));
}

/// AP as the area under the stepwise precision-recall curve, recomputed at
/// every distinct score.
fn brute_force_ap(scores: &[f64], is_tp: &[bool], npos: usize) -> f64 {
    let mut thresholds = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let (mut ap, mut prev_recall) = (0.0, 0.0);
    for th in thresholds {
        let above: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= th).collect();
        let tp = above.iter().filter(|&&i| is_tp[i]).count();
        let recall = tp as f64 / npos as f64;
        ap += (recall - prev_recall) * tp as f64 / above.len() as f64;
        prev_recall = recall;
    }
    ap
}

fn bx(x: f64) -> BoundingBox {
    BoundingBox::new(x, 10.0, x + 20.0, 30.0).unwrap()
}

fn annotation(frame: u32, label: LaeoLabel) -> PairAnnotation {
    PairAnnotation { video_id: "v".into(), frame, shot_id: None, box_a: bx(0.0), box_b: bx(100.0), label }
}

#[test]
fn criterion_03_average_precision() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = seeded(3);
    let (mut done, mut worst) = (0, 0.0f64);
    while done < 200 {
        let n = 1 + (uniform(&mut rng, 0.0, 12.0) as usize).min(11);
        let missed = uniform(&mut rng, 0.0, 3.0) as usize;
        let (mut preds, mut anns, mut tp, mut scores) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for i in 0..n {
            let kind = uniform(&mut rng, 0.0, 3.0) as u8;
            let score = uniform(&mut rng, 0.0, 1.0);
            preds.push(ScoredPair { video_id: "v".into(), frame: i as u32, box_a: bx(100.0), box_b: bx(0.0), score, tracks: None });
            match kind {
                0 => anns.push(annotation(i as u32, LaeoLabel::Laeo)),
                1 => anns.push(annotation(i as u32, LaeoLabel::NotLaeo)),
                _ => {}
            }
            tp.push(kind == 0);
            scores.push(score);
        }
        for j in 0..missed {
            anns.push(annotation(1000 + j as u32, LaeoLabel::Laeo));
        }
        let npos = tp.iter().filter(|&&t| t).count() + missed;
        if npos == 0 {
            continue;
        }
        let ap = average_precision(&preds, &anns, EvalProtocol::FrameLevelIou).unwrap();
        worst = worst.max((ap - brute_force_ap(&scores, &tp, npos)).abs());
        done += 1;
    }
    let elapsed = start.elapsed();
    let ok = worst <= 1e-9 && elapsed < Duration::from_secs(10);
    report(3, ok, &format!("200 instances, max deviation {worst:.1e}, {:.2}s", elapsed.as_secs_f64()));
}

fn shuffled_ap(npos: usize, n: usize, rounds: usize, seed: u64) -> f64 {
    let mut labels = vec![LaeoLabel::Laeo; npos];
    labels.resize(n, LaeoLabel::NotLaeo);
    let scores: Vec<f64> = (0..n).map(|i| (n - i) as f64).collect();
    let mut rng = seeded(seed);
    let mut total = 0.0;
    for _ in 0..rounds {
        // Fisher-Yates
        for i in (1..n).rev() {
            let j = (uniform(&mut rng, 0.0, (i + 1) as f64) as usize).min(i);
            labels.swap(i, j);
        }
        total += average_precision_labels(&scores, &labels).unwrap();
    }
    total / rounds as f64
}

#[test]
fn criterion_04_chance_levels() {
    let _g = serial();
    let a = 100.0 * shuffled_ap(1558, 3858, 1000, 4);
    let b = 100.0 * shuffled_ap(5882, 34354, 1000, 5);
    let ok = (a - 40.4).abs() <= 0.5 && (b - 17.1).abs() <= 0.5;
    report(4, ok, &format!("chance AP {a:.2}% and {b:.2}% over 1000 shuffles"));
}

#[test]
fn criterion_05_synthetic_training() {
    let _g = serial();
    let start = Instant::now();
    let data = generate_dataset(2000, 2000, 7, &SynthConfig::default()).unwrap();
    let (tr, val) = (data.view(Split::Train), data.view(Split::Val));
    let mut net = build_laeonet(&ModelConfig::default(), Init::Random, 7).unwrap();
    let cfg = TrainConfig { epochs: 8, lr: 0.01, seed: 7, ..TrainConfig::default() };
    let history = train(&mut net, None, &Fixed(&tr), &val, &cfg).unwrap();
    let ap = evaluate_source(&net, &val).unwrap();
    let elapsed = start.elapsed();
    let ok = history.epochs.len() <= 20 && ap >= 0.90 && elapsed < Duration::from_secs(15 * 60);
    report(
        5,
        ok,
        &format!("held-out AP {ap:.4} on {} pairs after {} epochs, {:.0}s", val.indices().len(), history.epochs.len(), elapsed.as_secs_f64()),
    );
}

#[test]
fn criterion_06_ablation_direction() {
    let _g = serial();
    let variants = [(10, 10), (10, 1), (1, 1)];
    let mut agree = 0;
    let mut lines = Vec::new();
    for seed in [1u64, 2, 3] {
        let data = generate_dataset(1000, 1000, seed, &SynthConfig::default()).unwrap();
        let (tr, val) = (data.view(Split::Train), data.view(Split::Val));
        let test = generate_dataset(500, 500, derive_seed(seed, 100), &SynthConfig::default()).unwrap();
        let aps: Vec<f64> = variants
            .iter()
            .map(|&(t, m)| {
                let model = ModelConfig { t, m, ..ModelConfig::default() };
                let mut net = build_laeonet(&model, Init::Random, seed).unwrap();
                let cfg = TrainConfig { epochs: 6, lr: 0.01, seed, ..TrainConfig::default() };
                train(&mut net, None, &Fixed(&tr), &val, &cfg).unwrap();
                evaluate_source(&net, &test).unwrap()
            })
            .collect();
        if aps[0] >= aps[1] && aps[1] >= aps[2] {
            agree += 1;
        }
        lines.push(format!("seed {seed}: {:.3} / {:.3} / {:.3}", aps[0], aps[1], aps[2]));
    }
    report(6, agree >= 2, &format!("(T10,M10) >= (T10,M1) >= (T1,M1) in {agree}/3 seeds [{}]", lines.join("; ")));
}

#[test]
fn criterion_07_shot_scores() {
    let _g = serial();
    let third = score_shot(&[vec![1.0, 0.0, 0.0]]).unwrap();
    let single = score_shot(&[vec![0.7]]).unwrap();
    let spike = score_shot(&[vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]]).unwrap();
    let best_pair = score_shot(&[vec![0.2; 6], vec![0.9; 6]]).unwrap();
    let ok = (third - 1.0 / 3.0).abs() < 1e-12
        && single == 0.7
        && (spike - 0.2).abs() < 1e-12
        && (best_pair - 0.9).abs() < 1e-12
        && score_shot(&[]).is_err();
    report(7, ok, &format!("[1,0,0] -> {third:.6}, [0.7] -> {single}, centered spike -> {spike:.6}, two pairs -> {best_pair}"));
}

#[test]
fn criterion_08_mirroring_breaks_laeo() {
    let _g = serial();
    let cfg = SynthConfig { t: 1, headmap: laeo_core::headmap::HeadMapConfig { m: 1, ..Default::default() }, ..SynthConfig::default() };
    let oracle = cfg.oracle();
    let mut broken = 0;
    for i in 0..1000u64 {
        let pair = make_pair_of_kind(derive_seed(8, i), PairKind::Positive, &cfg).unwrap();
        assert_eq!(gaze_oracle(&pair.left, &pair.right, &oracle).unwrap(), LaeoLabel::Laeo);
        if gaze_oracle(&pair.left.mirror_head(), &pair.right, &oracle).unwrap() == LaeoLabel::NotLaeo {
            broken += 1;
        }
    }
    report(8, broken == 1000, &format!("{broken}/1000 positives not LAEO after mirroring one head"));
}

fn track(id: u64, start: u32, len: u32) -> HeadTrack {
    let x = id as f64 * 50.0;
    HeadTrack {
        track_id: id,
        video_id: "ep".into(),
        start_frame: start,
        boxes: vec![BoundingBox::new(x, 0.0, x + 20.0, 20.0).unwrap(); len as usize],
    }
}

fn shot(id: &str, first: u32, last: u32, tracks: &[u64]) -> ShotRecord {
    ShotRecord { shot_id: id.into(), video_id: "ep".into(), first_frame: first, last_frame: last, tracks: tracks.to_vec(), annotations: vec![] }
}

fn series(a: u64, b: u64, frames: std::ops::Range<u32>, s: f64) -> TrackPairSeries {
    TrackPairSeries { tracks: (a, b), scores: frames.map(|f| (f, s)).collect() }
}

#[test]
fn criterion_09_social_fixture() {
    let _g = serial();
    // Characters A..F. s1: A, B over 0..10 and C over 0..5. s2: D, E over
    // 10..20, F over 10..15 and A (second track) over 15..20. s3: B and C
    // (new tracks) over 20..24.
    let characters: BTreeMap<u64, String> =
        [(1, "A"), (2, "B"), (3, "C"), (4, "D"), (5, "E"), (6, "F"), (7, "A"), (8, "B"), (9, "C")]
            .into_iter()
            .map(|(k, v)| (k, v.to_string()))
            .collect();
    let episode = Episode {
        shots: vec![shot("s1", 0, 9, &[1, 2, 3]), shot("s2", 10, 19, &[4, 5, 6, 7]), shot("s3", 20, 23, &[8, 9])],
        tracks: vec![track(1, 0, 10), track(2, 0, 10), track(3, 0, 5), track(4, 10, 10), track(5, 10, 10), track(6, 10, 5), track(7, 15, 5), track(8, 20, 4), track(9, 20, 4)],
        characters,
        scores: vec![
            series(1, 2, 0..10, 0.9),
            series(3, 1, 0..5, 0.1),
            series(4, 5, 10..20, 0.2),
            series(7, 4, 15..20, 0.8),
            series(5, 6, 10..15, 0.3),
            series(8, 9, 20..24, 0.7),
        ],
    };
    let pair = |x: &str, y: &str| CharacterPair::new(x, y).unwrap();
    let label = |s: &str, x: &str, y: &str| InteractionLabel { shot_id: s.into(), pair: pair(x, y), interacting: true };
    let labels = vec![label("s1", "B", "A"), label("s2", "A", "D"), label("s3", "C", "B")];
    let rows = baselines(&episode, &labels, 9).unwrap();

    // (shot, pair, AL, SCR, UPS, interacting); eight distinct pairs overall.
    let expected = [
        ("s1", ("A", "B"), 0.9, 1.0, 1.0 / 3.0, true),
        ("s1", ("A", "C"), 0.1, 0.5, 1.0 / 3.0, false),
        ("s1", ("B", "C"), 0.0, 0.5, 1.0 / 3.0, false),
        ("s2", ("A", "D"), 0.8, 0.5, 0.2, true),
        ("s2", ("A", "E"), 0.0, 0.5, 0.2, false),
        ("s2", ("D", "E"), 0.2, 1.0, 0.2, false),
        ("s2", ("D", "F"), 0.0, 0.5, 0.2, false),
        ("s2", ("E", "F"), 0.3, 0.5, 0.2, false),
        ("s3", ("B", "C"), 0.7, 1.0, 1.0, true),
    ];
    let mut exact = rows.len() == expected.len();
    for (r, (s, (x, y), al, scr, ups, inter)) in rows.iter().zip(expected) {
        exact &= r.shot_id == s && r.pair == pair(x, y) && r.interacting == inter;
        exact &= (r.al - al).abs() < 1e-12 && (r.scr - scr).abs() < 1e-12 && (r.ups - ups).abs() < 1e-12 && (r.upe - 1.0 / 8.0).abs() < 1e-12;
    }
    let aps: Vec<(ScoreKind, f64)> = ScoreKind::ALL.iter().map(|&k| (k, interaction_ap(&rows, k, &ApMode::PairAgnostic).unwrap())).collect();
    let al = aps[0].1;
    let first = aps[1..].iter().all(|&(_, ap)| al > ap);
    let listing: Vec<String> = aps.iter().map(|(k, ap)| format!("{} {ap:.3}", k.as_str())).collect();
    report(9, exact && first, &format!("scores exact: {exact}; pair-agnostic AP {}", listing.join(", ")));
}

fn laeo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_laeo")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// All files under `dir` with their contents, sorted by path.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

const SMALL: [&str; 10] = ["--set", "synth.t=2", "--set", "headmap.m=2", "--set", "model.t=2", "--set", "model.m=2", "--set", "train.epochs=2"];

#[test]
fn criterion_10_determinism() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut same = Vec::new();
    let run = |args: Vec<&str>| {
        let o = laeo(&args);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        o.stdout
    };

    let (a, b) = (d.join("data_a"), d.join("data_b"));
    for out in [&a, &b] {
        let mut args = vec!["synth", "--pos", "16", "--neg", "16", "--seed", "7", "--out", p(out)];
        args.extend(SMALL);
        run(args);
    }
    same.push(("synth", snapshot(&a) == snapshot(&b)));

    let (ma, mb) = (d.join("model_a"), d.join("model_b"));
    let mut logs = Vec::new();
    for out in [&ma, &mb] {
        let mut args = vec!["train", "--data", p(&a), "--out", p(out)];
        args.extend(SMALL);
        logs.push(run(args));
    }
    same.push(("train", snapshot(&ma) == snapshot(&mb) && logs[0] == logs[1]));

    let scores = d.join("scores.jsonl");
    run(vec!["score", "--model", p(&ma.join("model.laeo1")), "--data", p(&a), "--out", p(&scores)]);
    let ann = a.join("annotations.jsonl");
    let mut evals = Vec::new();
    for name in ["pr_a.csv", "pr_b.csv"] {
        let pr = d.join(name);
        let out = run(vec!["eval", "--scores", p(&scores), "--annotations", p(&ann), "--pr", p(&pr)]);
        evals.push((out, fs::read(&pr).unwrap()));
    }
    same.push(("eval", evals[0] == evals[1]));

    let listing: Vec<String> = same.iter().map(|(n, s)| format!("{n} {}", if *s { "identical" } else { "differs" })).collect();
    report(10, same.iter().all(|(_, s)| *s), &listing.join(", "));
}
