//! Core domain types shared by every stage of the pipeline: feature schema,
//! micro-clips, principal shots, bags, the dataset manifest and the z-score
//! normalizer.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("duplicate clip id {0:?}")]
    DuplicateClipId(String),
    #[error("label from coder {coder:?} references unknown clip {clip:?}")]
    DanglingLabel { coder: String, clip: String },
    #[error("clip {clip:?} has non-positive duration {duration}")]
    BadDuration { clip: String, duration: f64 },
    #[error("manifest lists no clips")]
    NoClips,
    #[error("duplicate feature channel {0:?}")]
    DuplicateChannel(String),
    #[error("channel {0:?} has zero dimension")]
    EmptyChannel(String),
    #[error("cannot fit a normalizer on an empty pool")]
    EmptyPool,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("non-finite feature value at index {0}")]
    NonFinite(usize),
    #[error("malformed document: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for ModelError {
    fn from(e: serde_json::Error) -> Self {
        ModelError::Parse(e.to_string())
    }
}

/// Binary coder label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "pos", alias = "positive")]
    Positive,
    #[serde(rename = "neg", alias = "negative")]
    Negative,
}

impl Label {
    pub fn is_positive(self) -> bool {
        matches!(self, Label::Positive)
    }

    /// `+1.0` for positive, `-1.0` for negative.
    pub fn sign(self) -> f64 {
        if self.is_positive() {
            1.0
        } else {
            -1.0
        }
    }

    pub fn from_bool(positive: bool) -> Self {
        if positive {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Positive => "pos",
            Label::Negative => "neg",
        }
    }
}

impl std::str::FromStr for Label {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pos" | "positive" | "+" | "1" => Ok(Label::Positive),
            "neg" | "negative" | "-" | "0" => Ok(Label::Negative),
            other => Err(ModelError::Parse(format!("unknown label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelSource {
    Computed,
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Channel {
    pub name: String,
    pub dim: usize,
    pub source: ChannelSource,
}

/// Names and widths of the computed channels, in vector order.
pub const COMPUTED_CHANNELS: [(&str, usize); 5] = [
    ("hsvHistogram", 128),
    ("texture", 3),
    ("motionIntensity", 1),
    ("velocity", 3),
    ("audio", 5),
];

/// Dimension of the computed part of every micro-clip vector.
pub const COMPUTED_DIM: usize = 140;

/// Declaration of an externally supplied channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalChannel {
    pub name: String,
    pub dim: usize,
}

/// Ordered channel layout of micro-clip feature vectors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    channels: Vec<Channel>,
}

impl FeatureSchema {
    /// Default computed channels followed by the given external channels.
    pub fn with_external(external: &[ExternalChannel]) -> Result<Self, ModelError> {
        Self::with_histogram_dim(COMPUTED_CHANNELS[0].1, external)
    }

    /// Computed channels with a histogram of `histogram_dim` bins, then external channels.
    pub fn with_histogram_dim(histogram_dim: usize, external: &[ExternalChannel]) -> Result<Self, ModelError> {
        let mut channels: Vec<Channel> = COMPUTED_CHANNELS
            .iter()
            .enumerate()
            .map(|(i, &(name, dim))| Channel {
                name: name.to_string(),
                dim: if i == 0 { histogram_dim } else { dim },
                source: ChannelSource::Computed,
            })
            .collect();
        channels.extend(external.iter().map(|e| Channel {
            name: e.name.clone(),
            dim: e.dim,
            source: ChannelSource::External,
        }));
        Self::new(channels)
    }

    pub fn new(channels: Vec<Channel>) -> Result<Self, ModelError> {
        let mut seen = HashSet::new();
        for c in &channels {
            if !seen.insert(c.name.as_str()) {
                return Err(ModelError::DuplicateChannel(c.name.clone()));
            }
            if c.dim == 0 {
                return Err(ModelError::EmptyChannel(c.name.clone()));
            }
        }
        Ok(FeatureSchema { channels })
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn total_dim(&self) -> usize {
        self.channels.iter().map(|c| c.dim).sum()
    }

    /// Dimension of an aggregated principal-shot vector (mean, std, coverage).
    pub fn aggregated_dim(&self) -> usize {
        aggregated_dim(self.total_dim())
    }

    /// Offset and width of a named channel.
    pub fn range_of(&self, name: &str) -> Option<std::ops::Range<usize>> {
        let mut offset = 0;
        for c in &self.channels {
            if c.name == name {
                return Some(offset..offset + c.dim);
            }
            offset += c.dim;
        }
        None
    }

    pub fn external(&self) -> impl Iterator<Item = &Channel> {
        self.channels.iter().filter(|c| c.source == ChannelSource::External)
    }
}

pub fn aggregated_dim(base: usize) -> usize {
    2 * base + 1
}

/// A finite real-valued feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self, ModelError> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite(i));
        }
        Ok(FeatureVector(values))
    }

    pub fn zeros(dim: usize) -> Self {
        FeatureVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for FeatureVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MicroClip {
    pub clip_id: String,
    pub index: usize,
    #[serde(rename = "start")]
    pub start_sec: f64,
    #[serde(rename = "end")]
    pub end_sec: f64,
    #[serde(rename = "values")]
    pub features: FeatureVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PrincipalShot {
    pub clip_id: String,
    pub shot_id: usize,
    #[serde(rename = "members")]
    pub member_indices: Vec<usize>,
    pub aggregate: FeatureVector,
}

impl PrincipalShot {
    pub fn coverage(&self) -> f64 {
        *self.aggregate.as_slice().last().unwrap_or(&0.0)
    }
}

/// One video clip as a multiple-instance example.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub clip_id: String,
    pub instances: Vec<PrincipalShot>,
    pub label: Option<Label>,
    pub media_ref: Option<PathBuf>,
}

impl Bag {
    pub fn dim(&self) -> usize {
        self.instances.first().map_or(0, |s| s.aggregate.dim())
    }

    pub fn instance_vectors(&self) -> impl Iterator<Item = &[f64]> {
        self.instances.iter().map(|s| s.aggregate.as_slice())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ClipEntry {
    pub clip_id: String,
    pub frame_path: PathBuf,
    pub wav_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_channel_path: Option<PathBuf>,
    pub duration_sec: f64,
    /// Playable original (e.g. an mp4) served to reviewers; analysis never reads it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub media_path: Option<PathBuf>,
}

/// Per-coder labels: coder id → clip id → label.
pub type CoderLabels = BTreeMap<String, BTreeMap<String, Label>>;

/// Manifest document as it appears on disk, before validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RawManifest {
    pub clips: Vec<ClipEntry>,
    #[serde(default)]
    pub labels: CoderLabels,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub external_channels: Vec<ExternalChannel>,
    #[serde(default)]
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    raw: RawManifest,
    schema: FeatureSchema,
    base_dir: Option<PathBuf>,
}

pub fn validate_manifest(raw: RawManifest) -> Result<DatasetManifest, ModelError> {
    if raw.clips.is_empty() {
        return Err(ModelError::NoClips);
    }
    let mut ids = HashSet::new();
    for c in &raw.clips {
        if !ids.insert(c.clip_id.as_str()) {
            return Err(ModelError::DuplicateClipId(c.clip_id.clone()));
        }
        if !(c.duration_sec > 0.0) || !c.duration_sec.is_finite() {
            return Err(ModelError::BadDuration { clip: c.clip_id.clone(), duration: c.duration_sec });
        }
    }
    for (coder, labels) in &raw.labels {
        if let Some(clip) = labels.keys().find(|k| !ids.contains(k.as_str())) {
            return Err(ModelError::DanglingLabel { coder: coder.clone(), clip: clip.clone() });
        }
    }
    let schema = FeatureSchema::with_external(&raw.external_channels)?;
    Ok(DatasetManifest { raw, schema, base_dir: None })
}

impl DatasetManifest {
    pub fn parse(json: &str) -> Result<Self, ModelError> {
        validate_manifest(serde_json::from_str(json)?)
    }

    /// Loads a manifest; relative media paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)?;
        let mut m = Self::parse(&text)?;
        m.base_dir = path.parent().map(Path::to_path_buf);
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.raw).expect("manifest serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn raw(&self) -> &RawManifest {
        &self.raw
    }

    pub fn clips(&self) -> &[ClipEntry] {
        &self.raw.clips
    }

    pub fn clip(&self, clip_id: &str) -> Option<&ClipEntry> {
        self.raw.clips.iter().find(|c| c.clip_id == clip_id)
    }

    pub fn labels(&self) -> &CoderLabels {
        &self.raw.labels
    }

    pub fn coder_labels(&self, coder: &str) -> Option<&BTreeMap<String, Label>> {
        self.raw.labels.get(coder)
    }

    pub fn label_count(&self) -> usize {
        self.raw.labels.values().map(BTreeMap::len).sum()
    }

    /// Schema with the default histogram layout.
    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn external_channels(&self) -> &[ExternalChannel] {
        &self.raw.external_channels
    }

    pub fn base_dir(&self) -> Option<&Path> {
        self.base_dir.as_deref()
    }

    pub fn set_base_dir(&mut self, dir: Option<PathBuf>) {
        self.base_dir = dir;
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.to_path_buf(),
        }
    }
}

/// Per-dimension z-score statistics fit on a training pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Relative spread below which a dimension is treated as constant.
const CONSTANT_DIM_EPS: f64 = 1e-12;

pub fn fit_normalizer<'a, I>(instances: I) -> Result<Normalizer, ModelError>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let pool: Vec<&[f64]> = instances.into_iter().collect();
    let first = pool.first().ok_or(ModelError::EmptyPool)?;
    let dim = first.len();
    if let Some(bad) = pool.iter().find(|v| v.len() != dim) {
        return Err(ModelError::DimensionMismatch { expected: dim, actual: bad.len() });
    }
    let n = pool.len() as f64;
    let mut mean = Vec::with_capacity(dim);
    let mut std = Vec::with_capacity(dim);
    let mut column = Vec::with_capacity(pool.len());
    for d in 0..dim {
        // sorted summation: the result does not depend on pool order
        column.clear();
        column.extend(pool.iter().map(|v| v[d]));
        column.sort_by(f64::total_cmp);
        let m = column.iter().sum::<f64>() / n;
        let mut sq: Vec<f64> = column.iter().map(|x| (x - m) * (x - m)).collect();
        sq.sort_by(f64::total_cmp);
        let mut s = (sq.iter().sum::<f64>() / n).sqrt();
        if s <= CONSTANT_DIM_EPS * m.abs().max(1.0) {
            s = 0.0;
        }
        mean.push(m);
        std.push(s);
    }
    Ok(Normalizer { mean, std })
}

impl Normalizer {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>, ModelError> {
        if v.len() != self.dim() {
            return Err(ModelError::DimensionMismatch { expected: self.dim(), actual: v.len() });
        }
        Ok(v.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&x, (&m, &s))| if s > 0.0 { (x - m) / s } else { 0.0 })
            .collect())
    }
}

pub fn apply_normalizer(n: &Normalizer, v: &FeatureVector) -> Result<FeatureVector, ModelError> {
    Ok(FeatureVector(n.apply(v.as_slice())?))
}

/// Writes one JSON document per line.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), ModelError> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, ModelError> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| ModelError::Parse(format!("{}:{}: {e}", path.display(), lineno + 1)))?,
        );
    }
    Ok(out)
}
