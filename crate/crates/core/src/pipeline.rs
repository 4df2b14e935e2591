//! Manifest to bags: load media, extract micro-clip features, cluster into
//! principal shots.

use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::config::AppConfig;
use crate::features::{extract_clip_features, ExternalValues, FeatureError};
use crate::ingest::{load_frame_container, load_wav, segment_micro_clips, IngestError};
use crate::model::{read_jsonl, write_jsonl, Bag, DatasetManifest, MicroClip, ModelError, PrincipalShot};
use crate::shots::{bags_from_shots, shots_for_dataset, ShotError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("clip {clip:?}: {source}")]
    Ingest { clip: String, source: IngestError },
    #[error("clip {clip:?}: {source}")]
    Feature { clip: String, source: FeatureError },
    #[error(transparent)]
    Shots(#[from] ShotError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Micro-clip feature store for every clip, in manifest order.
pub fn extract_dataset_features(manifest: &DatasetManifest, cfg: &AppConfig) -> Result<Vec<MicroClip>, PipelineError> {
    let schema = cfg.features.schema(manifest.external_channels())?;
    let per_clip: Vec<Vec<MicroClip>> = manifest
        .clips()
        .par_iter()
        .map(|c| {
            let ingest = |source| PipelineError::Ingest { clip: c.clip_id.clone(), source };
            let feature = |source| PipelineError::Feature { clip: c.clip_id.clone(), source };
            let frames = load_frame_container(&manifest.resolve(&c.frame_path)).map_err(ingest)?;
            let audio = load_wav(&manifest.resolve(&c.wav_path)).map_err(ingest)?;
            let external = match &c.external_channel_path {
                Some(p) => Some(ExternalValues::load(&manifest.resolve(p), &c.clip_id).map_err(feature)?),
                None => None,
            };
            let spans = segment_micro_clips(&c.clip_id, c.duration_sec, cfg.segment_len_sec).map_err(ingest)?;
            extract_clip_features(&frames, &audio, &spans, &cfg.features, &schema, external.as_ref()).map_err(feature)
        })
        .collect::<Result<_, _>>()?;
    Ok(per_clip.into_iter().flatten().collect())
}

pub fn save_feature_store(path: &Path, store: &[MicroClip]) -> Result<(), PipelineError> {
    Ok(write_jsonl(path, store)?)
}

pub fn load_feature_store(path: &Path) -> Result<Vec<MicroClip>, PipelineError> {
    Ok(read_jsonl(path)?)
}

pub fn save_shots(path: &Path, shots: &[PrincipalShot]) -> Result<(), PipelineError> {
    Ok(write_jsonl(path, shots)?)
}

pub fn load_shots(path: &Path) -> Result<Vec<PrincipalShot>, PipelineError> {
    Ok(read_jsonl(path)?)
}

/// Everything the learners need for one dataset.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub features: Vec<MicroClip>,
    pub shots: Vec<PrincipalShot>,
}

impl Prepared {
    pub fn bags(&self, manifest: &DatasetManifest, coder: Option<&str>) -> Result<Vec<Bag>, PipelineError> {
        Ok(bags_from_shots(manifest, &self.shots, coder)?)
    }
}

pub fn run(manifest: &DatasetManifest, cfg: &AppConfig) -> Result<Prepared, PipelineError> {
    let features = extract_dataset_features(manifest, cfg)?;
    let shots = shots_for_dataset(manifest, &features, &cfg.clustering)?;
    Ok(Prepared { features, shots })
}

/// Coder used when a caller names none: the first in sorted order.
pub fn default_coder(manifest: &DatasetManifest) -> Option<&str> {
    manifest.labels().keys().next().map(String::as_str)
}
