use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use laeo::config::RunConfig;

fn laeo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_laeo")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: [&str; 8] = [
    "--set",
    "synth.t=2",
    "--set",
    "headmap.m=2",
    "--set",
    "model.t=2",
    "--set",
    "model.m=2",
];

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

#[test]
fn help_lists_every_key_with_its_default() {
    let o = laeo(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for (key, value) in RunConfig::default().values() {
        assert!(text.contains(key), "{key} missing from --help");
        assert!(text.contains(&format!("[default: {value}]")), "default of {key} missing");
    }
    let sub = stdout(&laeo(&["train", "--help"]));
    assert!(sub.contains("train.lr"));
}

#[test]
fn gradcheck_tiny_passes() {
    let o = laeo(&["gradcheck", "--tiny"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let last = text.lines().last().unwrap();
    let err: f64 = last.split_whitespace().nth(3).unwrap().parse().unwrap();
    assert!(err <= 1e-4, "{last}");
}

#[test]
fn exit_codes_distinguish_validation_and_io() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.jsonl");
    let out = dir.path().join("t.jsonl");
    assert_eq!(laeo(&["track", "--detections", p(&missing), "--out", p(&out)]).status.code(), Some(2));
    assert_eq!(laeo(&["gradcheck", "--tiny", "--bogus"]).status.code(), Some(1));
    assert_eq!(laeo(&["frobnicate"]).status.code(), Some(1));
    let bad_key = laeo(&["synth", "--pos", "1", "--neg", "1", "--set", "model.depth=3", "--out", p(dir.path())]);
    assert_eq!(bad_key.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad_key.stderr).contains("unknown config key"));
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[train]\nrate = 1\n").unwrap();
    assert_eq!(laeo(&["pretrain", "--config", p(&cfg), "--out", p(dir.path())]).status.code(), Some(1));
    let future = dir.path().join("future.jsonl");
    fs::write(&future, "{\"format\":\"detections\",\"version\":7}\n").unwrap();
    let o = laeo(&["track", "--detections", p(&future), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("version 7"));
}

#[test]
fn track_links_detections() {
    let dir = tempfile::tempdir().unwrap();
    let det = dir.path().join("det.jsonl");
    let mut text = String::from("{\"format\":\"detections\",\"version\":1}\n");
    for f in 0..12 {
        for (x, c) in [(100.0, 0.9), (400.0, 0.8)] {
            let x = x + f as f64;
            text += &format!(
                "{{\"video_id\":\"v\",\"frame\":{f},\"x1\":{x},\"y1\":50,\"x2\":{},\"y2\":90,\"conf\":{c}}}\n",
                x + 40.0
            );
        }
    }
    fs::write(&det, text).unwrap();
    let out = dir.path().join("tracks.jsonl");
    let o = laeo(&["track", "--detections", p(&det), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let tracks = laeo::formats::read_tracks(&out).unwrap();
    assert_eq!(tracks.len(), 2);
    assert!(tracks.iter().all(|t| t.len() == 12 && t.start_frame == 0));
}

#[test]
fn synth_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let mut args = vec!["synth", "--pos", "4", "--neg", "4", "--seed", "7", "--preview", "1", "--out", p(out)];
        args.extend(TINY);
        let o = laeo(&args);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (sa, sb) = (snapshot(&a), snapshot(&b));
    assert_eq!(sa, sb);
    let names: Vec<&str> = sa.iter().map(|(n, _)| n.as_str()).collect();
    assert!(names.contains(&"index.jsonl") && names.contains(&"annotations.jsonl") && names.contains(&"config.toml"));
    assert_eq!(names.iter().filter(|n| n.ends_with(".bin")).count(), 8);
    let ppm = &sa.iter().find(|(n, _)| n.ends_with("_map.ppm")).unwrap().1;
    assert!(ppm.starts_with(b"P6\n64 64\n255\n") && ppm.len() == 13 + 64 * 64 * 3);
    let echoed = RunConfig::load(&a.join("config.toml")).unwrap();
    assert_eq!((echoed.seed, echoed.synth_t), (7, 2));
}

#[test]
fn eval_of_a_perfect_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let ann = dir.path().join("ann.jsonl");
    let scores = dir.path().join("scores.jsonl");
    fs::write(
        &ann,
        "{\"format\":\"annotations\",\"version\":1}\n\
         {\"video_id\":\"v\",\"frame\":1,\"box_a\":[0,0,10,10],\"box_b\":[50,0,60,10],\"label\":\"laeo\"}\n\
         {\"video_id\":\"v\",\"frame\":2,\"box_a\":[0,0,10,10],\"box_b\":[50,0,60,10],\"label\":\"not_laeo\"}\n",
    )
    .unwrap();
    fs::write(
        &scores,
        "{\"format\":\"scores\",\"version\":1}\n\
         {\"video_id\":\"v\",\"frame\":1,\"box_a\":[50,0,60,10],\"box_b\":[0,0,10,10],\"score\":0.9}\n\
         {\"video_id\":\"v\",\"frame\":2,\"box_a\":[0,0,10,10],\"box_b\":[50,0,60,10],\"score\":0.2}\n",
    )
    .unwrap();
    let pr = dir.path().join("pr.csv");
    let o = laeo(&["eval", "--protocol", "frame_iou", "--scores", p(&scores), "--annotations", p(&ann), "--pr", p(&pr)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).trim(), "AP=1.0000");
    let csv = fs::read_to_string(&pr).unwrap();
    assert_eq!(csv, "score_threshold,precision,recall\n0.900000,1.000000,1.000000\n0.200000,0.500000,1.000000\n");
    assert_eq!(
        laeo(&["eval", "--protocol", "shot", "--scores", p(&scores), "--annotations", p(&ann)]).status.code(),
        Some(1)
    );
}

#[test]
fn shot_protocol_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let (ann, scores, shots) = (dir.path().join("a.jsonl"), dir.path().join("s.jsonl"), dir.path().join("shots.jsonl"));
    fs::write(
        &shots,
        "{\"format\":\"shots\",\"version\":1}\n\
         {\"shot_id\":\"s1\",\"video_id\":\"v\",\"first_frame\":0,\"last_frame\":9,\"tracks\":[1,2]}\n\
         {\"shot_id\":\"s2\",\"video_id\":\"v\",\"first_frame\":10,\"last_frame\":19,\"tracks\":[3,4]}\n",
    )
    .unwrap();
    fs::write(
        &ann,
        "{\"format\":\"annotations\",\"version\":1}\n\
         {\"video_id\":\"v\",\"shot_id\":\"s1\",\"label\":\"laeo\"}\n\
         {\"video_id\":\"v\",\"shot_id\":\"s2\",\"label\":\"not_laeo\"}\n",
    )
    .unwrap();
    let mut text = String::from("{\"format\":\"scores\",\"version\":1}\n");
    for f in 0..20 {
        let (s, tr) = if f < 10 { (0.8, "[1,2]") } else { (0.3, "[3,4]") };
        text += &format!(
            "{{\"video_id\":\"v\",\"frame\":{f},\"box_a\":[0,0,10,10],\"box_b\":[50,0,60,10],\"score\":{s},\"tracks\":{tr}}}\n"
        );
    }
    fs::write(&scores, text).unwrap();
    let o = laeo(&["eval", "--protocol", "shot", "--scores", p(&scores), "--annotations", p(&ann), "--shots", p(&shots)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).trim(), "AP=1.0000");
}

#[test]
fn pretrain_train_score_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    let mut args = vec!["synth", "--pos", "12", "--neg", "12", "--out", p(&data)];
    args.extend(TINY);
    assert_eq!(laeo(&args).status.code(), Some(0));

    let pose = d.join("pose");
    let mut args = vec!["pretrain", "--out", p(&pose), "--set", "pretrain.samples=8", "--set", "pretrain.epochs=1"];
    args.extend(TINY);
    let o = laeo(&args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("yaw-sign accuracy"));

    let mut runs = Vec::new();
    for name in ["m1", "m2"] {
        let out = d.join(name);
        let init = pose.join("pose.laeo1");
        let mut args = vec!["train", "--data", p(&data), "--init", p(&init), "--out", p(&out), "--set", "train.epochs=2"];
        args.extend(TINY);
        let o = laeo(&args);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        runs.push(snapshot(&out));
    }
    assert_eq!(runs[0], runs[1]);
    let hist = fs::read_to_string(d.join("m1/history.csv")).unwrap();
    let lines: Vec<&str> = hist.lines().collect();
    assert_eq!(lines[0], "epoch,split,loss,ap");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("0,train,") && lines[2].starts_with("0,val,,"));

    let scores = d.join("scores.jsonl");
    let o = laeo(&["score", "--model", p(&d.join("m1/model.laeo1")), "--data", p(&data), "--out", p(&scores)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(laeo::formats::read_scores(&scores).unwrap().len(), 24);
    let o = laeo(&["eval", "--scores", p(&scores), "--annotations", p(&data.join("annotations.jsonl"))]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("AP="));
    // a classifier cannot initialize from itself as a head-pose model
    let o = laeo(&["train", "--data", p(&data), "--init", p(&d.join("m1/model.laeo1")), "--out", p(&d.join("m3"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn social_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let write = |name: &str, text: &str| {
        let path = d.join(name);
        fs::write(&path, text).unwrap();
        path
    };
    let shots = write(
        "shots.jsonl",
        "{\"format\":\"shots\",\"version\":1}\n{\"shot_id\":\"s1\",\"video_id\":\"ep\",\"first_frame\":0,\"last_frame\":3,\"tracks\":[1,2,3]}\n",
    );
    let mut tracks = String::from("{\"format\":\"tracks\",\"version\":1}\n");
    for (id, x) in [(1, 0), (2, 100), (3, 200)] {
        tracks += &format!(
            "{{\"track_id\":{id},\"video_id\":\"ep\",\"start_frame\":0,\"boxes\":[[{x},0,{},10],[{x},0,{},10],[{x},0,{},10],[{x},0,{},10]]}}\n",
            x + 10,
            x + 10,
            x + 10,
            x + 10
        );
    }
    let tracks = write("tracks.jsonl", &tracks);
    let chars = write(
        "chars.jsonl",
        "{\"format\":\"characters\",\"version\":1}\n{\"track_id\":1,\"character\":\"ann\"}\n{\"track_id\":2,\"character\":\"bob\"}\n{\"track_id\":3,\"character\":\"cy\"}\n",
    );
    let mut scores = String::from("{\"format\":\"scores\",\"version\":1}\n");
    for f in 0..4 {
        for (tr, s) in [("[1,2]", 0.9), ("[1,3]", 0.1), ("[2,3]", 0.2)] {
            scores += &format!(
                "{{\"video_id\":\"ep\",\"frame\":{f},\"box_a\":[0,0,10,10],\"box_b\":[100,0,110,10],\"score\":{s},\"tracks\":{tr}}}\n"
            );
        }
    }
    let scores = write("scores.jsonl", &scores);
    let labels = write(
        "labels.jsonl",
        "{\"format\":\"annotations\",\"version\":1}\n{\"video_id\":\"ep\",\"shot_id\":\"s1\",\"chars\":[\"bob\",\"ann\"],\"label\":\"interacting\"}\n",
    );
    let out = d.join("out");
    let o = laeo(&[
        "social",
        "--shots",
        p(&shots),
        "--tracks",
        p(&tracks),
        "--characters",
        p(&chars),
        "--scores",
        p(&scores),
        "--labels",
        p(&labels),
        "--out",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("AL AP=1.0000"));
    let csv = fs::read_to_string(out.join("pairs.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "shot_id,char_a,char_b,AL,SCR,UPS,UPE,RP,label");
    assert!(lines[1].starts_with("s1,ann,bob,0.900000,1.000000,0.333333,0.333333,"), "{}", lines[1]);
    assert!(lines[1].ends_with(",1"));
    let dot = fs::read_to_string(out.join("friendness.dot")).unwrap();
    assert!(dot.starts_with("graph friendness {"));
    assert!(dot.contains("\"ann\" -- \"bob\" [weight=0.900000"));
}
