//! Per-micro-clip measurable attributes assembled into a fixed-order vector:
//! HSV histogram, co-occurrence texture, motion intensity, block-matching
//! velocity, audio statistics, then any externally supplied channels.

pub mod audio;
pub mod color;
pub mod motion;
pub mod texture;

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use audio::{audio_stats, AudioParams, AudioStats};
pub use color::{hsv_histogram, rgb_to_hsv, HistBins};
pub use motion::{block_motion_velocity, motion_intensity, BlockMatchParams, VelocityStats};
pub use texture::{glcm_stats, to_gray, GrayFrame, TextureStats};

use crate::ingest::{AudioTrack, FrameSequence, SegmentSpan};
use crate::model::{
    read_jsonl, ExternalChannel, FeatureSchema, FeatureVector, MicroClip, ModelError,
};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("no frames fall inside [{start}, {end})")]
    NoFramesInWindow { start: f64, end: f64 },
    #[error("frame smaller than 2x2")]
    DegenerateFrame,
    #[error("frame pair dimensions differ")]
    DimensionMismatch,
    #[error("span [{start}, {end}) contains no audio samples")]
    EmptySpan { start: f64, end: f64 },
    #[error("clip {clip:?} micro-clip {index} lacks external channel {channel:?}")]
    MissingExternalChannel { clip: String, index: usize, channel: String },
    #[error("external channel {channel:?} has {actual} values, schema declares {expected}")]
    ExternalDimension { channel: String, expected: usize, actual: usize },
    #[error("invalid feature configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Extraction parameters. Every field has a conventional default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct FeatureConfig {
    pub analysis_fps: f64,
    pub hist_bins: HistBins,
    pub glcm_levels: usize,
    pub block_size: usize,
    pub search_radius: usize,
    /// Per-pixel mean SAD improvement a block must exceed to count as moving.
    pub motion_noise_threshold: f64,
    #[serde(flatten)]
    pub audio: AudioParams,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            analysis_fps: 2.0,
            hist_bins: HistBins::default(),
            glcm_levels: 16,
            block_size: 16,
            search_radius: 8,
            motion_noise_threshold: 1.0,
            audio: AudioParams::default(),
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        let a = &self.audio;
        let positive = [
            ("analysisFps", self.analysis_fps),
            ("motionNoiseThreshold", self.motion_noise_threshold),
            ("silenceWindowSec", a.silence_window_sec),
            ("silenceRmsThreshold", a.silence_rms_threshold),
            ("pitchWindowSec", a.pitch_window_sec),
            ("pitchHopSec", a.pitch_hop_sec),
            ("pitchMinHz", a.pitch_min_hz),
            ("voicedPeakThreshold", a.voiced_peak_threshold),
            ("minTurnSegmentSec", a.min_turn_segment_sec),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(FeatureError::BadConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(a.pitch_min_hz < a.pitch_max_hz) {
            return Err(FeatureError::BadConfig("pitch range low must be below high".into()));
        }
        let counts = [
            ("histBins.hue", self.hist_bins.hue),
            ("histBins.saturation", self.hist_bins.saturation),
            ("histBins.value", self.hist_bins.value),
            ("glcmLevels", self.glcm_levels),
            ("blockSize", self.block_size),
            ("searchRadius", self.search_radius),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(FeatureError::BadConfig(format!("{name} must be positive")));
            }
        }
        if self.glcm_levels > 256 {
            return Err(FeatureError::BadConfig("glcmLevels must not exceed 256".into()));
        }
        Ok(())
    }

    pub fn block_params(&self) -> BlockMatchParams {
        BlockMatchParams {
            block_size: self.block_size,
            search_radius: self.search_radius,
            noise_threshold: self.motion_noise_threshold,
        }
    }

    pub fn schema(&self, external: &[ExternalChannel]) -> Result<FeatureSchema, ModelError> {
        FeatureSchema::with_histogram_dim(self.hist_bins.len(), external)
    }
}

/// One line of an external-channel sidecar file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExternalRecord {
    pub clip_id: String,
    pub index: usize,
    pub channel: String,
    pub values: Vec<f64>,
}

/// External channel values of one clip, keyed by (micro-clip index, channel).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExternalValues {
    values: HashMap<(usize, String), Vec<f64>>,
}

impl ExternalValues {
    pub fn from_records<'a>(clip_id: &str, records: impl IntoIterator<Item = &'a ExternalRecord>) -> Self {
        let values = records
            .into_iter()
            .filter(|r| r.clip_id == clip_id)
            .map(|r| ((r.index, r.channel.clone()), r.values.clone()))
            .collect();
        ExternalValues { values }
    }

    pub fn load(path: &Path, clip_id: &str) -> Result<Self, FeatureError> {
        let records: Vec<ExternalRecord> = read_jsonl(path)?;
        Ok(Self::from_records(clip_id, &records))
    }

    pub fn get(&self, index: usize, channel: &str) -> Option<&[f64]> {
        self.values.get(&(index, channel.to_string())).map(Vec::as_slice)
    }
}

/// Frame indices sampled at `analysis_fps` inside `[start, end)`.
pub fn sampled_frame_indices(frames: &FrameSequence, start: f64, end: f64, analysis_fps: f64) -> Vec<usize> {
    let fps = frames.fps();
    let count = frames.frame_count();
    let mut out: Vec<usize> = Vec::new();
    let step = 1.0 / analysis_fps;
    let mut m = 0usize;
    loop {
        let t = start + m as f64 * step;
        if t >= end - 1e-9 {
            break;
        }
        let idx = (t * fps + 1e-9).floor() as usize;
        if idx >= count {
            break;
        }
        if out.last() != Some(&idx) {
            out.push(idx);
        }
        m += 1;
    }
    out
}

/// Visual part of a micro-clip vector: histogram, texture, motion intensity, velocity.
pub fn visual_features(
    frames: &FrameSequence,
    span: &SegmentSpan,
    cfg: &FeatureConfig,
) -> Result<Vec<f64>, FeatureError> {
    if cfg.analysis_fps > frames.fps() + 1e-9 {
        return Err(FeatureError::BadConfig(format!(
            "analysisFps {} exceeds source frame rate {}",
            cfg.analysis_fps,
            frames.fps()
        )));
    }
    let idx = sampled_frame_indices(frames, span.start_sec, span.end_sec, cfg.analysis_fps);
    if idx.is_empty() {
        return Err(FeatureError::NoFramesInWindow { start: span.start_sec, end: span.end_sec });
    }
    let sampled: Vec<_> = idx.iter().map(|&i| frames.frame(i)).collect();
    let mut out = hsv_histogram(&sampled, cfg.hist_bins)
        .ok_or(FeatureError::NoFramesInWindow { start: span.start_sec, end: span.end_sec })?;

    let gray: Vec<GrayFrame> = sampled.iter().map(to_gray).collect();
    let mut tex = [0.0; 3];
    for g in &gray {
        let t = glcm_stats(g, cfg.glcm_levels).ok_or(FeatureError::DegenerateFrame)?;
        tex[0] += t.entropy;
        tex[1] += t.energy;
        tex[2] += t.contrast;
    }
    out.extend(tex.iter().map(|v| v / gray.len() as f64));
    out.push(motion_intensity(&gray));

    let params = cfg.block_params();
    let fps = frames.fps();
    let mut speeds = Vec::new();
    for (w, iw) in gray.windows(2).zip(idx.windows(2)) {
        let dt = (iw[1] - iw[0]) as f64 / fps;
        speeds.extend(
            motion::block_vectors(&w[0], &w[1], &params)
                .iter()
                .filter(|v| v.moving)
                .map(|v| v.magnitude() / dt),
        );
    }
    let v = motion::speed_stats(&speeds);
    out.extend([v.mean, v.max, v.min]);
    Ok(out)
}

pub fn audio_features(audio: &AudioTrack, span: &SegmentSpan, cfg: &FeatureConfig) -> Result<AudioStats, FeatureError> {
    let sr = audio.sample_rate as f64;
    let a = ((span.start_sec * sr).round() as usize).min(audio.samples.len());
    let b = ((span.end_sec * sr).round() as usize).min(audio.samples.len());
    audio_stats(&audio.samples[a..b.max(a)], audio.sample_rate, &cfg.audio)
        .ok_or(FeatureError::EmptySpan { start: span.start_sec, end: span.end_sec })
}

/// Full feature vector of one micro-clip in schema order.
pub fn extract_micro_clip_features(
    frames: &FrameSequence,
    audio: &AudioTrack,
    span: &SegmentSpan,
    cfg: &FeatureConfig,
    schema: &FeatureSchema,
    external: Option<&ExternalValues>,
) -> Result<FeatureVector, FeatureError> {
    let mut v = visual_features(frames, span, cfg)?;
    v.extend(audio_features(audio, span, cfg)?.to_array());
    for ch in schema.external() {
        let values = external.and_then(|e| e.get(span.index, &ch.name)).ok_or_else(|| {
            FeatureError::MissingExternalChannel {
                clip: span.clip_id.clone(),
                index: span.index,
                channel: ch.name.clone(),
            }
        })?;
        if values.len() != ch.dim {
            return Err(FeatureError::ExternalDimension {
                channel: ch.name.clone(),
                expected: ch.dim,
                actual: values.len(),
            });
        }
        v.extend_from_slice(values);
    }
    Ok(FeatureVector::new(v)?)
}

/// Features of every span of one clip, extracted in parallel and returned in span order.
pub fn extract_clip_features(
    frames: &FrameSequence,
    audio: &AudioTrack,
    spans: &[SegmentSpan],
    cfg: &FeatureConfig,
    schema: &FeatureSchema,
    external: Option<&ExternalValues>,
) -> Result<Vec<MicroClip>, FeatureError> {
    cfg.validate()?;
    spans
        .par_iter()
        .map(|span| {
            Ok(MicroClip {
                clip_id: span.clip_id.clone(),
                index: span.index,
                start_sec: span.start_sec,
                end_sec: span.end_sec,
                features: extract_micro_clip_features(frames, audio, span, cfg, schema, external)?,
            })
        })
        .collect()
}
