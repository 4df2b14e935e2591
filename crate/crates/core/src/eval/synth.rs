//! Synthetic labeled corpus: positive clips carry one micro-clip-long episode
//! of a planted concept (a moving textured block, a voiced tone, or both);
//! negative clips carry only background.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::ingest::{encode_frame_container, encode_wav, FrameSequence, PixelFormat};
use crate::model::{validate_manifest, ClipEntry, DatasetManifest, Label, RawManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Concept {
    Motion,
    Tone,
    Both,
}

impl std::str::FromStr for Concept {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "motion" => Ok(Concept::Motion),
            "tone" => Ok(Concept::Tone),
            "both" => Ok(Concept::Both),
            other => Err(format!("unknown concept {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct SyntheticSpec {
    pub positives: usize,
    pub negatives: usize,
    pub concept: Concept,
    /// 0 gives identical backgrounds; 1 is heavy noise.
    pub noise_level: f64,
    pub seed: u64,
    pub duration_sec: f64,
    pub segment_len_sec: f64,
    pub width: usize,
    pub height: usize,
    pub fps: u32,
    pub sample_rate: u32,
    pub tone_hz: f64,
    /// Block displacement per frame, pixels.
    pub block_step: usize,
    pub coder: String,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            positives: 20,
            negatives: 20,
            concept: Concept::Both,
            noise_level: 0.2,
            seed: 42,
            duration_sec: 60.0,
            segment_len_sec: 10.0,
            width: 64,
            height: 48,
            fps: 2,
            sample_rate: 8000,
            tone_hz: 220.0,
            block_step: 4,
            coder: "truth".into(),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::BadSpec(m));
        if self.positives < 2 || self.negatives < 2 {
            return bad("need at least 2 clips per class".into());
        }
        if !(0.0..=1.0).contains(&self.noise_level) {
            return bad(format!("noiseLevel {} outside [0, 1]", self.noise_level));
        }
        if !(self.segment_len_sec > 0.0) || self.duration_sec < self.segment_len_sec {
            return bad("duration must cover at least one segment".into());
        }
        if self.width < 32 || self.height < 32 {
            return bad("frames must be at least 32x32".into());
        }
        if self.fps == 0 || self.sample_rate < 1000 {
            return bad("frame and sample rates too low".into());
        }
        if self.tone_hz * 2.0 >= self.sample_rate as f64 {
            return bad("tone above Nyquist".into());
        }
        Ok(())
    }

    fn segments(&self) -> usize {
        (self.duration_sec / self.segment_len_sec).floor() as usize
    }
}

/// Clip content plan, decided before any media is rendered.
#[derive(Debug, Clone)]
struct ClipPlan {
    clip_id: String,
    positive: bool,
    episode: usize,
    stream: u64,
}

const BLOCK: usize = 16;

/// Writes media under `out/media` and `out/manifest.json`; returns the loaded manifest.
pub fn generate_synthetic_corpus(spec: &SyntheticSpec, out: &Path) -> Result<DatasetManifest, EvalError> {
    spec.validate()?;
    let media = out.join("media");
    std::fs::create_dir_all(&media)?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let total = spec.positives + spec.negatives;
    let mut classes: Vec<bool> = (0..total).map(|i| i < spec.positives).collect();
    classes.shuffle(&mut rng);
    let plans: Vec<ClipPlan> = classes
        .iter()
        .enumerate()
        .map(|(i, &positive)| ClipPlan {
            clip_id: format!("clip{:03}", i + 1),
            positive,
            episode: rng.gen_range(0..spec.segments()),
            stream: i as u64 + 1,
        })
        .collect();

    let entries: Vec<ClipEntry> = plans
        .par_iter()
        .map(|plan| {
            let (frames, audio) = render(spec, plan);
            let frame_rel = PathBuf::from("media").join(format!("{}.clfv", plan.clip_id));
            let wav_rel = PathBuf::from("media").join(format!("{}.wav", plan.clip_id));
            std::fs::write(out.join(&frame_rel), encode_frame_container(&frames))?;
            std::fs::write(out.join(&wav_rel), encode_wav(spec.sample_rate, &[&audio]))?;
            Ok(ClipEntry {
                clip_id: plan.clip_id.clone(),
                frame_path: frame_rel,
                wav_path: wav_rel.clone(),
                external_channel_path: None,
                duration_sec: spec.duration_sec,
                media_path: Some(wav_rel),
            })
        })
        .collect::<Result<_, EvalError>>()?;

    let truth: BTreeMap<String, Label> =
        plans.iter().map(|p| (p.clip_id.clone(), Label::from_bool(p.positive))).collect();
    let raw = RawManifest {
        clips: entries,
        labels: BTreeMap::from([(spec.coder.clone(), truth)]),
        external_channels: Vec::new(),
        config: serde_json::json!({
            "synthetic": spec,
            "episodes": plans.iter().filter(|p| p.positive).map(|p| (p.clip_id.clone(), p.episode)).collect::<BTreeMap<_, _>>(),
        }),
    };
    let mut manifest = validate_manifest(raw)?;
    manifest.save(&out.join("manifest.json"))?;
    manifest.set_base_dir(Some(out.to_path_buf()));
    Ok(manifest)
}

fn render(spec: &SyntheticSpec, plan: &ClipPlan) -> (FrameSequence, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(plan.stream);
    let noise = spec.noise_level;
    let (w, h) = (spec.width, spec.height);
    let n_frames = (spec.duration_sec * spec.fps as f64).round() as usize;
    let tint: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..=1.0) * noise * 40.0);
    let pixel_noise = noise * 24.0;

    let show_block = plan.positive && matches!(spec.concept, Concept::Motion | Concept::Both);
    let play_tone = plan.positive && matches!(spec.concept, Concept::Tone | Concept::Both);
    let ep_start = plan.episode as f64 * spec.segment_len_sec;
    let ep_end = ep_start + spec.segment_len_sec;
    let block_y = rng.gen_range(4..h - BLOCK - 4);
    let span = w - BLOCK;

    let mut data = Vec::with_capacity(n_frames * w * h * 3);
    let mut ep_frame = 0usize;
    for f in 0..n_frames {
        let t = f as f64 / spec.fps as f64;
        let block_x = if show_block && t >= ep_start && t < ep_end {
            // bounce across the frame
            let pos = ep_frame * spec.block_step % (2 * span);
            ep_frame += 1;
            Some(if pos <= span { pos } else { 2 * span - pos })
        } else {
            None
        };
        for y in 0..h {
            for x in 0..w {
                let mut px = background(x, y, w, h);
                if let Some(bx) = block_x {
                    if x >= bx && x < bx + BLOCK && y >= block_y && y < block_y + BLOCK {
                        px = block_texture(x - bx, y - block_y);
                    }
                }
                for c in 0..3 {
                    let jitter = if pixel_noise > 0.0 { rng.gen_range(-pixel_noise..=pixel_noise) } else { 0.0 };
                    data.push((px[c] + tint[c] + jitter).round().clamp(0.0, 255.0) as u8);
                }
            }
        }
    }
    let frames = FrameSequence::new(w, h, spec.fps, 1, PixelFormat::Rgb8, data).expect("frame buffer sized");

    let sr = spec.sample_rate as f64;
    let n_samples = (spec.duration_sec * sr).round() as usize;
    let hiss = noise * 0.01;
    let audio = (0..n_samples)
        .map(|i| {
            let t = i as f64 / sr;
            let mut s = if hiss > 0.0 { rng.gen_range(-hiss..=hiss) } else { 0.0 };
            if play_tone && t >= ep_start && t < ep_end {
                s += 0.3 * (2.0 * std::f64::consts::PI * spec.tone_hz * (t - ep_start)).sin();
            }
            s
        })
        .collect();
    (frames, audio)
}

fn background(x: usize, y: usize, w: usize, h: usize) -> [f64; 3] {
    let gx = x as f64 / w as f64;
    let gy = y as f64 / h as f64;
    [60.0 + 50.0 * gx, 80.0 + 40.0 * gy, 110.0 - 30.0 * gx]
}

fn block_texture(x: usize, y: usize) -> [f64; 3] {
    if (x / 4 + y / 4) % 2 == 0 {
        [235.0, 130.0, 30.0]
    } else {
        [40.0, 20.0, 10.0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec { positives: 2, negatives: 2, duration_sec: 20.0, ..Default::default() }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = generate_synthetic_corpus(&small(), a.path()).unwrap();
        generate_synthetic_corpus(&small(), b.path()).unwrap();
        for c in ma.clips() {
            for p in [&c.frame_path, &c.wav_path] {
                assert_eq!(std::fs::read(a.path().join(p)).unwrap(), std::fs::read(b.path().join(p)).unwrap());
            }
        }
        assert_eq!(
            std::fs::read(a.path().join("manifest.json")).unwrap(),
            std::fs::read(b.path().join("manifest.json")).unwrap()
        );
    }

    #[test]
    fn labels_balanced() {
        let d = tempfile::tempdir().unwrap();
        let m = generate_synthetic_corpus(&small(), d.path()).unwrap();
        let l = m.coder_labels("truth").unwrap();
        assert_eq!(l.values().filter(|v| **v == Label::Positive).count(), 2);
        assert_eq!(l.len(), 4);
    }

    #[test]
    fn bad_spec() {
        let d = tempfile::tempdir().unwrap();
        let s = SyntheticSpec { positives: 1, ..small() };
        assert!(matches!(generate_synthetic_corpus(&s, d.path()), Err(EvalError::BadSpec(_))));
    }
}
