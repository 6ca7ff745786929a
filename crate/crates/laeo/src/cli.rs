use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use laeo_core::eval::{evaluate, score_shot, EvalProtocol, EvalReport, GroundTruth, Predictions, ScoredPair, ShotScore};
use laeo_core::model::{
    build_laeonet, gradcheck_suite, pretrain_headpose, score_source, train, yaw_sign_accuracy, EpochData, Fixed, History,
    Init, PoseNet, SampleSource, SynthPoses, SynthStream, CROP_CHANNELS, CROP_SIDE,
};
use laeo_core::rng::derive_seed;
use laeo_core::social::{baselines, friendness_graph, interaction_ap, ApMode, Episode, PairScores, ScoreKind, TrackPairSeries};
use laeo_core::synth::{generate_dataset, SyntheticDataset};
use laeo_core::tracker::link_detections;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::container::{write_synthetic, DatasetDir};
use crate::error::{invalid, CliError, Result};
use crate::formats::{
    read_annotations, read_characters, read_detections, read_scores, read_shots, read_tracks, write_file, write_jsonl,
    ScoreRecord, TrackRecord, SCORES, TRACKS,
};

pub const MODEL_FILE: &str = "model.laeo1";
pub const POSE_FILE: &str = "pose.laeo1";
pub const HISTORY_FILE: &str = "history.csv";
/// Beyond this yaw the synthetic face turns away and its side is hard to tell.
pub const FRONTAL_YAW: f64 = 90.0;

#[derive(Debug, Parser)]
#[command(name = "laeo", version, about = "Detect people looking at each other in video", after_help = RunConfig::help_text())]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// TOML file with configuration keys.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.lr=0.005`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        RunConfig::resolve(self.config.as_deref(), &self.set)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Link per-frame head detections into tracks.
    #[command(after_help = RunConfig::help_text())]
    Track {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Generate a labelled synthetic dataset directory.
    #[command(after_help = RunConfig::help_text())]
    Synth {
        #[arg(long)]
        pos: usize,
        #[arg(long)]
        neg: usize,
        /// Overrides the `seed` key.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "synth")]
        out: PathBuf,
        /// Also write PPM images of the first N samples.
        #[arg(long, default_value_t = 0)]
        preview: usize,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Pre-train the head branch on synthetic head poses.
    #[command(after_help = RunConfig::help_text())]
    Pretrain {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train the pair classifier.
    #[command(after_help = RunConfig::help_text())]
    Train {
        /// Dataset directory; its `train` split is trained on and its `val`
        /// split validates. Without it, training uses fresh synthetic data.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Head-pose checkpoint to initialize the head branch from.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score every sample of a dataset directory.
    #[command(after_help = RunConfig::help_text())]
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Only this split (`train` or `val`).
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Average precision of scores against annotations.
    #[command(after_help = RunConfig::help_text())]
    Eval {
        /// Overrides the `eval.protocol` key.
        #[arg(long)]
        protocol: Option<String>,
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        /// Shot list, needed by the shot protocol.
        #[arg(long)]
        shots: Option<PathBuf>,
        /// Write the precision-recall curve as CSV.
        #[arg(long)]
        pr: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Episode-level interaction scores, baselines and the friendness graph.
    #[command(after_help = RunConfig::help_text())]
    Social {
        #[arg(long)]
        shots: PathBuf,
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long)]
        characters: PathBuf,
        #[arg(long)]
        scores: PathBuf,
        /// Interaction labels (annotations with `chars`).
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Finite-difference check of every layer, loss and the tiny model.
    Gradcheck {
        /// Check the tiny model (T=2, M=2), the only size checked.
        #[arg(long)]
        tiny: bool,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { crate::error::EXIT_VALIDATION } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Track { detections, out, cfg } => cmd_track(&detections, &out, &cfg.resolve()?),
        Command::Synth {
            pos,
            neg,
            seed,
            out,
            preview,
            cfg,
        } => {
            let mut rc = cfg.resolve()?;
            if let Some(s) = seed {
                rc.seed = s;
            }
            cmd_synth(pos, neg, &out, preview, &rc)
        }
        Command::Pretrain { out, cfg } => cmd_pretrain(&out, &cfg.resolve()?),
        Command::Train { data, init, out, cfg } => cmd_train(data.as_deref(), init.as_deref(), &out, &cfg.resolve()?),
        Command::Score {
            model,
            data,
            split,
            out,
            cfg,
        } => {
            cfg.resolve()?;
            cmd_score(&model, &data, split.as_deref(), &out)
        }
        Command::Eval {
            protocol,
            scores,
            annotations,
            shots,
            pr,
            cfg,
        } => {
            let mut rc = cfg.resolve()?;
            if let Some(p) = protocol {
                rc.eval_protocol = p;
            }
            let report = cmd_eval(rc.protocol()?, &scores, &annotations, shots.as_deref())?;
            println!("AP={:.4}", report.ap);
            if let Some(path) = pr {
                write_file(&path, pr_csv(&report).as_bytes())?;
            }
            Ok(())
        }
        Command::Social {
            shots,
            tracks,
            characters,
            scores,
            labels,
            out,
            cfg,
        } => cmd_social(&shots, &tracks, &characters, &scores, &labels, &out, &cfg.resolve()?),
        Command::Gradcheck { tiny, seed } => cmd_gradcheck(tiny, seed),
    }
}

fn cmd_track(detections: &Path, out: &Path, rc: &RunConfig) -> Result<()> {
    let dets = read_detections(detections)?;
    let tracks = link_detections(&dets, &rc.linker())?;
    let records: Vec<TrackRecord> = tracks.iter().map(TrackRecord::from_track).collect();
    write_jsonl(out, TRACKS, &records)?;
    println!("{} detections -> {} tracks", dets.len(), tracks.len());
    Ok(())
}

fn cmd_synth(pos: usize, neg: usize, out: &Path, preview: usize, rc: &RunConfig) -> Result<()> {
    let data = generate_dataset(pos, neg, rc.seed, &rc.synth())?;
    let index = write_synthetic(out, &data)?;
    rc.write_to(out)?;
    for i in 0..preview.min(data.len()) {
        write_previews(out, &data, i)?;
    }
    let val = index.iter().filter(|e| e.split == "val").count();
    println!("{} samples ({} train, {} val) in {}", index.len(), index.len() - val, val, out.display());
    Ok(())
}

/// Binary PPM (`P6`) of an 8-bit RGB image.
pub fn ppm(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn write_previews(root: &Path, data: &SyntheticDataset, i: usize) -> Result<()> {
    let pair = data.pair(i)?;
    let s = &pair.sample;
    let dir = root.join("preview");
    let map_frame = s.map.frames() / 2;
    write_file(&dir.join(format!("{i:06}_map.ppm")), &ppm(64, 64, &s.map.frame_rgb8(map_frame)))?;
    // central left and right crops side by side
    let c = s.left.frames() / 2;
    let row = CROP_SIDE * CROP_CHANNELS;
    let mut rgb = Vec::with_capacity(2 * CROP_SIDE * row);
    for y in 0..CROP_SIDE {
        for crop in [s.left.frame(c), s.right.frame(c)] {
            rgb.extend(crop[y * row..(y + 1) * row].iter().map(|&v| to_u8(v)));
        }
    }
    write_file(&dir.join(format!("{i:06}_crops.ppm")), &ppm(2 * CROP_SIDE, CROP_SIDE, &rgb))
}

fn cmd_pretrain(out: &Path, rc: &RunConfig) -> Result<()> {
    let model = rc.model();
    let mut net = PoseNet::new(&model, rc.seed)?;
    let synth = rc.synth();
    let data = SynthPoses {
        n: rc.pretrain_samples,
        seed: derive_seed(rc.seed, 0),
        cfg: synth,
    };
    let report = pretrain_headpose(&mut net, &data, &rc.pretrain())?;
    let held_out = SynthPoses {
        n: 400,
        seed: derive_seed(rc.seed, 1),
        cfg: synth,
    };
    let all = yaw_sign_accuracy(&net, &held_out, 180.0)?;
    let frontal = yaw_sign_accuracy(&net, &held_out, FRONTAL_YAW)?;
    let mut csv = String::from("epoch,loss\n");
    for (e, l) in report.epoch_losses.iter().enumerate() {
        let _ = writeln!(csv, "{e},{l:.6}");
        println!("epoch {e}: pose loss {l:.6}");
    }
    write_file(&out.join("pretrain.csv"), csv.as_bytes())?;
    Checkpoint::from_posenet(&net).save(&out.join(POSE_FILE))?;
    rc.write_to(out)?;
    println!("held-out yaw-sign accuracy {frontal:.4} (|yaw| <= {FRONTAL_YAW}), {all:.4} (all)");
    Ok(())
}

/// `epoch,split,loss,ap`: one `train` row with the mean loss and one `val`
/// row with the validation AP per epoch.
pub fn history_csv(h: &History) -> String {
    let mut out = String::from("epoch,split,loss,ap\n");
    for r in &h.epochs {
        let _ = writeln!(out, "{},train,{:.6},", r.epoch, r.loss);
        match r.val_ap {
            Some(ap) => {
                let _ = writeln!(out, "{},val,,{ap:.6}", r.epoch);
            }
            None => {
                let _ = writeln!(out, "{},val,,", r.epoch);
            }
        }
    }
    out
}

fn cmd_train(data: Option<&Path>, init: Option<&Path>, out: &Path, rc: &RunConfig) -> Result<()> {
    let model = rc.model();
    let pose = init.map(Checkpoint::load).transpose()?;
    let init = match &pose {
        Some(ck) => {
            if ck.kind != crate::checkpoint::NetKind::Posenet {
                return Err(invalid("--init expects a head-pose checkpoint"));
            }
            Init::PosePretrained(&ck.params)
        }
        None => Init::Random,
    };
    let mut net = build_laeonet(&model, init, rc.seed)?;
    let tc = rc.train();
    let stream = SynthStream {
        n_pos: rc.train_synth_pos,
        seed: derive_seed(rc.seed, 1),
        cfg: rc.synth(),
    };
    let history = match data {
        Some(dir) => {
            let ds = DatasetDir::open(dir)?;
            let (tr, val) = (ds.view(Some("train")), ds.view(Some("val")));
            if tr.is_empty() {
                return Err(invalid("the dataset has no train split"));
            }
            if rc.train_synth_pos > 0 {
                train(&mut net, Some(&tr), &stream, &val, &tc)?
            } else {
                train(&mut net, None, &Fixed(&tr), &val, &tc)?
            }
        }
        None => {
            if rc.train_synth_pos == 0 {
                return Err(invalid("without --data, train.synth_pos must be >= 1"));
            }
            let n = rc.train_val_pairs;
            let val = generate_dataset(n, n, derive_seed(rc.seed, 2), &rc.synth())?;
            let synthetic: &dyn EpochData = &stream;
            train(&mut net, None, synthetic, &val, &tc)?
        }
    };
    for r in &history.epochs {
        let ap = r.val_ap.map_or("n/a".to_string(), |a| format!("{a:.4}"));
        println!(
            "epoch {} [{}] difficulty {:.2} loss {:.6} val AP {ap} ({} pos, {} neg, {} hard)",
            r.epoch,
            r.kind.as_str(),
            r.difficulty,
            r.loss,
            r.positives,
            r.negatives,
            r.hard_negatives
        );
    }
    write_file(&out.join(HISTORY_FILE), history_csv(&history).as_bytes())?;
    Checkpoint::from_laeonet(&net).save(&out.join(MODEL_FILE))?;
    rc.write_to(out)?;
    Ok(())
}

fn cmd_score(model: &Path, data: &Path, split: Option<&str>, out: &Path) -> Result<()> {
    let net = Checkpoint::load(model)?.into_laeonet()?;
    let ds = DatasetDir::open(data)?;
    let view = ds.view(split);
    let scores = score_source(&net, &view)?;
    let records = (0..view.len())
        .map(|i| {
            let e = view.entry(i);
            Ok(ScoreRecord {
                video_id: e.video_id.clone(),
                frame: e.frame,
                box_a: e.box_a,
                box_b: e.box_b,
                score: crate::formats::F6(scores[i]),
                tracks: Some(e.tracks),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_jsonl(out, SCORES, &records)?;
    println!("{} pairs scored", records.len());
    Ok(())
}

/// Per-shot scores from track-pair scores: each track pair's per-frame
/// series inside the shot, smoothed, max over pairs.
pub fn shot_scores(shots: &[laeo_core::domain::ShotRecord], scores: &[ScoredPair]) -> Result<Vec<ShotScore>> {
    let mut out = Vec::new();
    for shot in shots {
        let mut series: BTreeMap<(u64, u64), BTreeMap<u32, f64>> = BTreeMap::new();
        for s in scores {
            let Some((a, b)) = s.tracks else { continue };
            if s.video_id != shot.video_id || !shot.contains(s.frame) || !shot.tracks.contains(&a) || !shot.tracks.contains(&b) {
                continue;
            }
            let slot = series.entry((a.min(b), a.max(b))).or_default().entry(s.frame).or_insert(0.0);
            *slot = slot.max(s.score);
        }
        if series.is_empty() {
            continue;
        }
        let values: Vec<Vec<f64>> = series.into_values().map(|m| m.into_values().collect()).collect();
        out.push(ShotScore {
            video_id: shot.video_id.clone(),
            shot_id: shot.shot_id.clone(),
            score: score_shot(&values)?,
        });
    }
    Ok(out)
}

pub fn cmd_eval(protocol: EvalProtocol, scores: &Path, annotations: &Path, shots: Option<&Path>) -> Result<EvalReport> {
    let preds = read_scores(scores)?;
    let ann = read_annotations(annotations)?;
    let report = match protocol {
        EvalProtocol::ShotLevel => {
            let shots = shots.ok_or_else(|| invalid("the shot protocol needs --shots"))?;
            let shots = read_shots(shots)?;
            let per_shot = shot_scores(&shots, &preds)?;
            evaluate(GroundTruth::Shots(&ann.shots), Predictions::Shots(&per_shot), protocol)?
        }
        _ => evaluate(GroundTruth::Pairs(&ann.pairs), Predictions::Pairs(&preds), protocol)?,
    };
    Ok(report)
}

/// `score_threshold,precision,recall`, one row per ranked prediction.
pub fn pr_csv(report: &EvalReport) -> String {
    let mut out = String::from("score_threshold,precision,recall\n");
    for p in &report.curve {
        let _ = writeln!(out, "{:.6},{:.6},{:.6}", p.threshold, p.precision, p.recall);
    }
    out
}

/// `shot_id,char_a,char_b,AL,SCR,UPS,UPE,RP,label` with label 1 for
/// interacting pairs.
pub fn social_csv(rows: &[PairScores]) -> String {
    let mut out = String::from("shot_id,char_a,char_b,AL,SCR,UPS,UPE,RP,label\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            r.shot_id,
            r.pair.a(),
            r.pair.b(),
            r.al,
            r.scr,
            r.ups,
            r.upe,
            r.rp,
            u8::from(r.interacting)
        );
    }
    out
}

pub fn track_pair_series(scores: &[ScoredPair]) -> Vec<TrackPairSeries> {
    let mut by_pair: BTreeMap<(u64, u64), BTreeMap<u32, f64>> = BTreeMap::new();
    for s in scores {
        if let Some((a, b)) = s.tracks {
            let slot = by_pair.entry((a.min(b), a.max(b))).or_default().entry(s.frame).or_insert(0.0);
            *slot = slot.max(s.score);
        }
    }
    by_pair
        .into_iter()
        .map(|(tracks, m)| TrackPairSeries {
            tracks,
            scores: m.into_iter().collect(),
        })
        .collect()
}

fn cmd_social(
    shots: &Path,
    tracks: &Path,
    characters: &Path,
    scores: &Path,
    labels: &Path,
    out: &Path,
    rc: &RunConfig,
) -> Result<()> {
    let episode = Episode {
        shots: read_shots(shots)?,
        tracks: read_tracks(tracks)?,
        characters: read_characters(characters)?,
        scores: track_pair_series(&read_scores(scores)?),
    };
    let labels = read_annotations(labels)?.interactions;
    let rows = baselines(&episode, &labels, rc.seed)?;
    write_file(&out.join("pairs.csv"), social_csv(&rows).as_bytes())?;
    write_file(&out.join("friendness.dot"), friendness_graph(&rows).to_dot().as_bytes())?;
    rc.write_to(out)?;
    for kind in ScoreKind::ALL {
        match interaction_ap(&rows, kind, &ApMode::PairAgnostic) {
            Ok(ap) => println!("{} AP={ap:.4}", kind.as_str()),
            Err(laeo_core::Error::NoPositives) => println!("{} AP=n/a (no interacting pairs)", kind.as_str()),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

fn cmd_gradcheck(tiny: bool, seed: u64) -> Result<()> {
    if !tiny {
        return Err(invalid("only the tiny model is checked; pass --tiny"));
    }
    let mut worst = 0.0f64;
    let mut failed = Vec::new();
    for (name, report) in gradcheck_suite(seed)? {
        let entries: usize = report.params.iter().map(|p| p.checked).sum();
        println!("{name}: max relative error {:.3e} over {entries} entries", report.max_rel_error);
        worst = worst.max(report.max_rel_error);
        if !report.passed() {
            failed.push(name);
        }
    }
    println!("max relative error {worst:.3e} (tolerance {:.0e})", laeo_core::model::GRADCHECK_TOL);
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("gradient check failed: {}", failed.join(", "))))
    }
}
