//! Dataset directories: `index.jsonl` lists every sample with its label,
//! split and provenance; each sample's tensors live in their own binary
//! blob under `samples/`.
//!
//! Blob layout: magic `LTPS`, `u32` version, `u32` tensor count (always 3:
//! left crops, right crops, head-map), then per tensor a `u32` rank, the
//! `u32` dims and its `f32` values, all little-endian.

use std::fs;
use std::path::{Path, PathBuf};

use laeo_core::domain::{BoundingBox, LaeoLabel, PairAnnotation};
use laeo_core::headmap::{HeadMap, FrameSize};
use laeo_core::model::{CropStack, SampleSource, TrackPairSample};
use laeo_core::synth::{SyntheticDataset, SyntheticHead};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, io_at, Result};
use crate::formats::{box_record, parse_box, read_jsonl, write_file, write_jsonl, BoxRecord, ANNOTATIONS};

pub const DATASET: &str = "dataset";
pub const INDEX_FILE: &str = "index.jsonl";
pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const BLOB_MAGIC: &[u8; 4] = b"LTPS";
pub const BLOB_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexRecord {
    pub id: usize,
    /// Blob path relative to the dataset directory.
    pub file: String,
    pub label: String,
    pub split: String,
    pub kind: String,
    pub video_id: String,
    /// Frame the boxes refer to (the central frame of the window).
    pub frame: u32,
    pub box_a: BoxRecord,
    pub box_b: BoxRecord,
    pub tracks: [u64; 2],
}

impl IndexRecord {
    pub fn laeo_label(&self) -> Result<LaeoLabel> {
        LaeoLabel::parse(&self.label).ok_or_else(|| invalid(format!("sample {}: unknown label {:?}", self.id, self.label)))
    }
}

pub fn sample_to_bytes(s: &TrackPairSample) -> Vec<u8> {
    let tensors: [(&[usize], &[f32]); 3] = [
        (&s.left.shape(), s.left.data()),
        (&s.right.shape(), s.right.data()),
        (&s.map.shape(), s.map.data()),
    ];
    let total: usize = tensors.iter().map(|(_, d)| d.len()).sum();
    let mut out = Vec::with_capacity(12 + 3 * 20 + 4 * total);
    out.extend_from_slice(BLOB_MAGIC);
    out.extend_from_slice(&BLOB_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (shape, data) in tensors {
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() < n {
            return Err(invalid("truncated sample blob"));
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn tensor(&mut self) -> Result<(Vec<usize>, Vec<f32>)> {
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(invalid(format!("tensor rank {rank} in sample blob")));
        }
        let shape = (0..rank).map(|_| Ok(self.u32()? as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = self.take(4 * n)?;
        Ok((shape, raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()))
    }
}

pub fn sample_from_bytes(bytes: &[u8], label: LaeoLabel) -> Result<TrackPairSample> {
    let mut r = Reader { bytes };
    if r.take(4)? != BLOB_MAGIC {
        return Err(invalid("not a sample blob (bad magic)"));
    }
    let version = r.u32()?;
    if version != BLOB_VERSION {
        return Err(invalid(format!("unsupported sample blob version {version}")));
    }
    if r.u32()? != 3 {
        return Err(invalid("a sample blob holds exactly three tensors"));
    }
    let (ls, ld) = r.tensor()?;
    let (rs, rd) = r.tensor()?;
    let (ms, md) = r.tensor()?;
    if !r.bytes.is_empty() {
        return Err(invalid("trailing bytes in sample blob"));
    }
    let frames = |s: &[usize]| s.first().copied().ok_or_else(|| invalid("scalar tensor in sample blob"));
    let sample = TrackPairSample {
        left: CropStack::from_data(frames(&ls)?, ld)?,
        right: CropStack::from_data(frames(&rs)?, rd)?,
        map: HeadMap::from_data(frames(&ms)?, md)?,
        label,
    };
    if sample.left.shape().as_slice() != ls || sample.right.shape().as_slice() != rs || sample.map.shape().as_slice() != ms {
        return Err(invalid("unexpected tensor shape in sample blob"));
    }
    Ok(sample)
}

/// An opened dataset directory. Samples are read from disk on demand.
#[derive(Debug, Clone)]
pub struct DatasetDir {
    root: PathBuf,
    entries: Vec<IndexRecord>,
}

impl DatasetDir {
    pub fn open(root: &Path) -> Result<Self> {
        let entries: Vec<IndexRecord> = read_jsonl(&root.join(INDEX_FILE), DATASET)?;
        for e in &entries {
            e.laeo_label()?;
            let blob = root.join(&e.file);
            fs::metadata(&blob).map_err(io_at(&blob))?;
        }
        Ok(DatasetDir {
            root: root.to_path_buf(),
            entries,
        })
    }

    pub fn entries(&self) -> &[IndexRecord] {
        &self.entries
    }

    pub fn read(&self, i: usize) -> Result<TrackPairSample> {
        let e = &self.entries[i];
        let path = self.root.join(&e.file);
        let bytes = fs::read(&path).map_err(io_at(&path))?;
        sample_from_bytes(&bytes, e.laeo_label()?).map_err(|err| invalid(format!("{}: {err}", path.display())))
    }

    /// The samples of one split, or all of them for `None`.
    pub fn view(&self, split: Option<&str>) -> DirView<'_> {
        let indices = (0..self.entries.len())
            .filter(|&i| split.is_none_or(|s| self.entries[i].split == s))
            .collect();
        DirView { dir: self, indices }
    }
}

#[derive(Debug, Clone)]
pub struct DirView<'a> {
    dir: &'a DatasetDir,
    indices: Vec<usize>,
}

impl DirView<'_> {
    pub fn entry(&self, i: usize) -> &IndexRecord {
        &self.dir.entries[self.indices[i]]
    }
}

impl SampleSource for DirView<'_> {
    fn len(&self) -> usize {
        self.indices.len()
    }

    fn label(&self, i: usize) -> LaeoLabel {
        self.entry(i).laeo_label().unwrap_or(LaeoLabel::Ambiguous)
    }

    fn get(&self, i: usize) -> laeo_core::Result<TrackPairSample> {
        self.dir
            .read(self.indices[i])
            .map_err(|e| laeo_core::Error::InvalidValue(e.to_string()))
    }
}

/// Noise-free box of a synthetic head in frame pixels.
pub fn head_box(head: &SyntheticHead, frame: &FrameSize) -> Result<BoundingBox> {
    let size = head.scale * frame.height;
    Ok(BoundingBox::from_center(head.center.0 * frame.width, head.center.1 * frame.height, size, size)?)
}

/// Writes a generated set: the index, one blob per sample and frame-level
/// annotations of every pair. Sample `i` is its own clip `synth-<i>` with
/// tracks `2i` and `2i + 1`.
pub fn write_synthetic(root: &Path, data: &SyntheticDataset) -> Result<Vec<IndexRecord>> {
    let cfg = data.config();
    let frame = (cfg.t / 2) as u32;
    let mut index = Vec::with_capacity(data.len());
    let mut annotations = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let pair = data.pair(i)?;
        let file = format!("samples/{i:06}.bin");
        write_file(&root.join(&file), &sample_to_bytes(&pair.sample))?;
        let (a, b) = (head_box(&pair.left, &cfg.frame)?, head_box(&pair.right, &cfg.frame)?);
        let video_id = format!("synth-{i:06}");
        annotations.push(crate::formats::AnnotationRecord::from_pair(&PairAnnotation {
            video_id: video_id.clone(),
            frame,
            shot_id: None,
            box_a: a,
            box_b: b,
            label: pair.sample.label,
        }));
        index.push(IndexRecord {
            id: i,
            file,
            label: pair.sample.label.as_str().to_string(),
            split: data.split(i).as_str().to_string(),
            kind: pair.kind.as_str().to_string(),
            video_id,
            frame,
            box_a: box_record(&a),
            box_b: box_record(&b),
            tracks: [2 * i as u64, 2 * i as u64 + 1],
        });
    }
    write_jsonl(&root.join(INDEX_FILE), DATASET, &index)?;
    write_jsonl(&root.join(ANNOTATIONS_FILE), ANNOTATIONS, &annotations)?;
    Ok(index)
}

pub fn entry_boxes(e: &IndexRecord) -> Result<(BoundingBox, BoundingBox)> {
    Ok((parse_box(&e.box_a)?, parse_box(&e.box_b)?))
}
