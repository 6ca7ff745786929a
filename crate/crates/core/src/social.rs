//! Character-level interaction analysis over an episode: Average-LAEO per
//! shot and character pair, the four reference baselines, interaction AP and
//! the friend-ness graph.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use rand::Rng;

use crate::domain::{HeadTrack, LaeoLabel, ShotRecord};
use crate::error::{Error, Result};
use crate::eval::average_precision_labels;

/// Edge pen width of a pair with friend-ness 1.
pub const PEN_SCALE: f64 = 8.0;

/// Unordered pair of character names, stored sorted.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CharacterPair {
    a: String,
    b: String,
}

impl CharacterPair {
    pub fn new(x: &str, y: &str) -> Result<Self> {
        if x == y {
            return Err(Error::InvalidValue(format!("character {x} paired with itself")));
        }
        let (a, b) = if x < y { (x, y) } else { (y, x) };
        Ok(CharacterPair { a: a.into(), b: b.into() })
    }

    pub fn a(&self) -> &str {
        &self.a
    }

    pub fn b(&self) -> &str {
        &self.b
    }
}

/// Per-frame LAEO scores of one track pair (order of the ids is irrelevant).
#[derive(Debug, Clone, PartialEq)]
pub struct TrackPairSeries {
    pub tracks: (u64, u64),
    pub scores: Vec<(u32, f64)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionLabel {
    pub shot_id: String,
    pub pair: CharacterPair,
    pub interacting: bool,
}

/// Everything known about one episode. Tracks without a character name are
/// ignored.
#[derive(Debug, Clone, Default)]
pub struct Episode {
    pub shots: Vec<ShotRecord>,
    pub tracks: Vec<HeadTrack>,
    pub characters: BTreeMap<u64, String>,
    pub scores: Vec<TrackPairSeries>,
}

fn key(a: u64, b: u64) -> (u64, u64) {
    (a.min(b), a.max(b))
}

/// Per-frame view of one shot: named tracks alive at each frame.
struct ShotView<'e> {
    first: u32,
    present: Vec<Vec<(&'e str, u64)>>,
}

impl Episode {
    fn track(&self, id: u64) -> Option<&HeadTrack> {
        self.tracks.iter().find(|t| t.track_id == id)
    }

    fn view(&self, shot: &ShotRecord) -> ShotView<'_> {
        let present = (shot.first_frame..=shot.last_frame)
            .map(|f| {
                shot.tracks
                    .iter()
                    .filter_map(|&id| {
                        let name = self.characters.get(&id)?;
                        let t = self.track(id)?;
                        t.alive_at(f).then_some((name.as_str(), id))
                    })
                    .collect()
            })
            .collect();
        ShotView {
            first: shot.first_frame,
            present,
        }
    }

    fn score_index(&self) -> BTreeMap<(u64, u64), BTreeMap<u32, f64>> {
        let mut idx: BTreeMap<(u64, u64), BTreeMap<u32, f64>> = BTreeMap::new();
        for s in &self.scores {
            let e = idx.entry(key(s.tracks.0, s.tracks.1)).or_default();
            for &(f, v) in &s.scores {
                e.insert(f, v);
            }
        }
        idx
    }

    fn shot(&self, shot_id: &str) -> Result<&ShotRecord> {
        self.shots
            .iter()
            .find(|s| s.shot_id == shot_id)
            .ok_or_else(|| Error::InvalidValue(format!("unknown shot {shot_id}")))
    }

    /// Character pairs co-existing in at least one frame of the shot.
    pub fn shot_pairs(&self, shot_id: &str) -> Result<BTreeSet<CharacterPair>> {
        let view = self.view(self.shot(shot_id)?);
        let mut pairs = BTreeSet::new();
        for frame in &view.present {
            for (i, (x, _)) in frame.iter().enumerate() {
                for (y, _) in &frame[i + 1..] {
                    if x != y {
                        pairs.insert(CharacterPair::new(x, y)?);
                    }
                }
            }
        }
        Ok(pairs)
    }

    /// Frames of the shot where both characters are visible, with the pair's
    /// frame score: the maximum over their track pairs (0 when unscored).
    pub fn pair_frame_scores(&self, shot_id: &str, pair: &CharacterPair) -> Result<Vec<(u32, f64)>> {
        let view = self.view(self.shot(shot_id)?);
        let idx = self.score_index();
        Ok(frame_scores(&view, &idx, pair))
    }

    /// Average-LAEO of a pair in a shot.
    pub fn average_laeo(&self, shot_id: &str, pair: &CharacterPair) -> Result<f64> {
        let scores = self.pair_frame_scores(shot_id, pair)?;
        let values: Vec<f64> = scores.iter().map(|&(_, s)| s).collect();
        average_laeo(&values).map_err(|_| no_coexistence(shot_id, pair))
    }
}

fn no_coexistence(shot_id: &str, pair: &CharacterPair) -> Error {
    Error::NoCoexistence(format!("{} and {} in shot {shot_id}", pair.a, pair.b))
}

fn frame_scores(view: &ShotView<'_>, idx: &BTreeMap<(u64, u64), BTreeMap<u32, f64>>, pair: &CharacterPair) -> Vec<(u32, f64)> {
    let mut out = Vec::new();
    for (k, frame) in view.present.iter().enumerate() {
        let f = view.first + k as u32;
        let ta: Vec<u64> = frame.iter().filter(|(n, _)| *n == pair.a).map(|&(_, t)| t).collect();
        let tb: Vec<u64> = frame.iter().filter(|(n, _)| *n == pair.b).map(|&(_, t)| t).collect();
        if ta.is_empty() || tb.is_empty() {
            continue;
        }
        let mut best = 0.0f64;
        for &x in &ta {
            for &y in &tb {
                if let Some(&s) = idx.get(&key(x, y)).and_then(|m| m.get(&f)) {
                    best = best.max(s);
                }
            }
        }
        out.push((f, best));
    }
    out
}

/// Mean of the per-frame scores over the co-existing frames.
pub fn average_laeo(frame_scores: &[f64]) -> Result<f64> {
    if frame_scores.is_empty() {
        return Err(Error::NoCoexistence("no co-existing frames".into()));
    }
    Ok(frame_scores.iter().sum::<f64>() / frame_scores.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ScoreKind {
    /// Average-LAEO.
    Al,
    /// Co-existence ratio in the shot.
    Scr,
    /// Uniform over the pairs present in the shot.
    Ups,
    /// Uniform over the pairs of the episode.
    Upe,
    /// Random.
    Rp,
}

impl ScoreKind {
    pub const ALL: [ScoreKind; 5] = [ScoreKind::Al, ScoreKind::Scr, ScoreKind::Ups, ScoreKind::Upe, ScoreKind::Rp];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScoreKind::Al => "AL",
            ScoreKind::Scr => "SCR",
            ScoreKind::Ups => "UPS",
            ScoreKind::Upe => "UPE",
            ScoreKind::Rp => "RP",
        }
    }
}

/// All scores of one (shot, character pair) unit.
#[derive(Debug, Clone, PartialEq)]
pub struct PairScores {
    pub shot_id: String,
    pub pair: CharacterPair,
    pub al: f64,
    pub scr: f64,
    pub ups: f64,
    pub upe: f64,
    pub rp: f64,
    /// Unlabelled units count as not interacting.
    pub interacting: bool,
}

impl PairScores {
    pub fn get(&self, kind: ScoreKind) -> f64 {
        match kind {
            ScoreKind::Al => self.al,
            ScoreKind::Scr => self.scr,
            ScoreKind::Ups => self.ups,
            ScoreKind::Upe => self.upe,
            ScoreKind::Rp => self.rp,
        }
    }
}

/// AL and the four baselines for every character pair co-existing in some
/// shot, in shot order then pair order. RP draws from `seed`.
pub fn baselines(episode: &Episode, labels: &[InteractionLabel], seed: u64) -> Result<Vec<PairScores>> {
    let idx = episode.score_index();
    let mut units: Vec<(String, CharacterPair, Vec<(u32, f64)>, u32)> = Vec::new();
    let mut per_shot: Vec<usize> = Vec::new();
    for shot in &episode.shots {
        let view = episode.view(shot);
        let pairs = episode.shot_pairs(&shot.shot_id)?;
        per_shot.push(pairs.len());
        for pair in pairs {
            let fs = frame_scores(&view, &idx, &pair);
            units.push((shot.shot_id.clone(), pair, fs, shot.num_frames()));
        }
    }
    let episode_pairs: BTreeSet<&CharacterPair> = units.iter().map(|u| &u.1).collect();
    let upe = 1.0 / episode_pairs.len().max(1) as f64;
    let label_of: BTreeMap<(&str, &CharacterPair), bool> = labels
        .iter()
        .map(|l| ((l.shot_id.as_str(), &l.pair), l.interacting))
        .collect();
    let pairs_in: BTreeMap<&str, usize> = episode
        .shots
        .iter()
        .zip(&per_shot)
        .map(|(s, &n)| (s.shot_id.as_str(), n))
        .collect();
    let mut rng = crate::rng::seeded(seed);
    let mut rows = Vec::with_capacity(units.len());
    for (shot_id, pair, fs, frames) in &units {
        let values: Vec<f64> = fs.iter().map(|&(_, s)| s).collect();
        let al = average_laeo(&values).map_err(|_| no_coexistence(shot_id, pair))?;
        rows.push(PairScores {
            shot_id: shot_id.clone(),
            pair: pair.clone(),
            al,
            scr: fs.len() as f64 / *frames as f64,
            ups: 1.0 / pairs_in[shot_id.as_str()] as f64,
            upe,
            rp: rng.gen::<f64>(),
            interacting: label_of.get(&(shot_id.as_str(), pair)).copied().unwrap_or(false),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ApMode {
    PerPair(CharacterPair),
    PairAgnostic,
}

/// Interaction-prediction AP of one score over (shot, pair) units.
pub fn interaction_ap(rows: &[PairScores], kind: ScoreKind, mode: &ApMode) -> Result<f64> {
    let selected: Vec<&PairScores> = rows
        .iter()
        .filter(|r| match mode {
            ApMode::PerPair(p) => &r.pair == p,
            ApMode::PairAgnostic => true,
        })
        .collect();
    let scores: Vec<f64> = selected.iter().map(|r| r.get(kind)).collect();
    let labels: Vec<LaeoLabel> = selected
        .iter()
        .map(|r| if r.interacting { LaeoLabel::Laeo } else { LaeoLabel::NotLaeo })
        .collect();
    average_precision_labels(&scores, &labels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FriendGraph {
    /// Episode-level mean AL per pair, in pair order.
    pub edges: Vec<(CharacterPair, f64)>,
}

impl FriendGraph {
    /// Characters with at least one edge.
    pub fn nodes(&self) -> BTreeSet<&str> {
        self.edges.iter().flat_map(|(p, _)| [p.a(), p.b()]).collect()
    }

    pub fn weight(&self, pair: &CharacterPair) -> Option<f64> {
        self.edges.iter().find(|(p, _)| p == pair).map(|&(_, w)| w)
    }

    /// Undirected DOT graph, pen width proportional to the weight.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("graph friendness {\n");
        for n in self.nodes() {
            let _ = writeln!(s, "  \"{}\";", escape(n));
        }
        for (p, w) in &self.edges {
            let _ = writeln!(
                s,
                "  \"{}\" -- \"{}\" [weight={w:.6}, penwidth={:.6}];",
                escape(p.a()),
                escape(p.b()),
                w * PEN_SCALE
            );
        }
        s.push_str("}\n");
        s
    }
}

fn escape(name: &str) -> String {
    name.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Friend-ness: mean AL of each pair over the shots where it co-exists.
pub fn friendness_graph(rows: &[PairScores]) -> FriendGraph {
    let mut acc: BTreeMap<&CharacterPair, (f64, usize)> = BTreeMap::new();
    for r in rows {
        let e = acc.entry(&r.pair).or_insert((0.0, 0));
        e.0 += r.al;
        e.1 += 1;
    }
    FriendGraph {
        edges: acc.into_iter().map(|(p, (s, n))| (p.clone(), s / n as f64)).collect(),
    }
}
