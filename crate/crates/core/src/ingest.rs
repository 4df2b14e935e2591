//! Codec-free media ingestion: the CLFV raw frame container, netpbm frame
//! directories, 16-bit PCM WAV, and micro-clip segmentation.
//!
//! CLFV layout (little-endian):
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `CLFV`                            |
//! | 4      | 2    | version (= 1)                           |
//! | 6      | 2    | width                                   |
//! | 8      | 2    | height                                  |
//! | 10     | 4    | fps numerator                           |
//! | 14     | 4    | fps denominator                         |
//! | 18     | 4    | frame count                             |
//! | 22     | 1    | pixel format (0 = gray8, 1 = rgb8)      |
//! | 23     | 3    | reserved                                |
//! | 26     | ..   | frames, frame-major, rows top to bottom |

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CLFV_MAGIC: &[u8; 4] = b"CLFV";
pub const CLFV_VERSION: u16 = 1;
pub const CLFV_HEADER_LEN: usize = 26;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("bad magic in {0}")]
    BadMagic(String),
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("{extra} unexpected bytes after the last frame")]
    TrailingBytes { extra: usize },
    #[error("unsupported pixel format: {0}")]
    UnsupportedPixelFormat(String),
    #[error("frame {index} is {width}x{height}, expected {expected_width}x{expected_height}")]
    InconsistentFrameDimensions { index: usize, width: usize, height: usize, expected_width: usize, expected_height: usize },
    #[error("frame rate must be positive")]
    BadFrameRate,
    #[error("malformed frame metadata: {0}")]
    BadMetadata(String),
    #[error("not a RIFF/WAVE file")]
    NotRiffWave,
    #[error("unsupported audio encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("audio file contains no samples")]
    ZeroSamples,
    #[error("duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("segment length must be positive, got {0}")]
    NonPositiveSegmentLength(f64),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PixelFormat {
    Gray8,
    Rgb8,
}

impl PixelFormat {
    pub fn bytes_per_pixel(self) -> usize {
        match self {
            PixelFormat::Gray8 => 1,
            PixelFormat::Rgb8 => 3,
        }
    }

    fn code(self) -> u8 {
        match self {
            PixelFormat::Gray8 => 0,
            PixelFormat::Rgb8 => 1,
        }
    }

    fn from_code(c: u8) -> Result<Self, IngestError> {
        match c {
            0 => Ok(PixelFormat::Gray8),
            1 => Ok(PixelFormat::Rgb8),
            other => Err(IngestError::UnsupportedPixelFormat(format!("code {other}"))),
        }
    }
}

/// Decoded raw frames of one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub width: usize,
    pub height: usize,
    pub fps_num: u32,
    pub fps_den: u32,
    pub pixel_format: PixelFormat,
    data: Vec<u8>,
}

impl FrameSequence {
    pub fn new(
        width: usize,
        height: usize,
        fps_num: u32,
        fps_den: u32,
        pixel_format: PixelFormat,
        data: Vec<u8>,
    ) -> Result<Self, IngestError> {
        if fps_num == 0 || fps_den == 0 {
            return Err(IngestError::BadFrameRate);
        }
        let frame_len = width * height * pixel_format.bytes_per_pixel();
        if frame_len == 0 || data.len() % frame_len != 0 {
            return Err(IngestError::TruncatedPayload {
                expected: frame_len * data.len().div_ceil(frame_len.max(1)),
                actual: data.len(),
            });
        }
        Ok(FrameSequence { width, height, fps_num, fps_den, pixel_format, data })
    }

    pub fn fps(&self) -> f64 {
        self.fps_num as f64 / self.fps_den as f64
    }

    pub fn frame_len(&self) -> usize {
        self.width * self.height * self.pixel_format.bytes_per_pixel()
    }

    pub fn frame_count(&self) -> usize {
        self.data.len() / self.frame_len()
    }

    pub fn duration_sec(&self) -> f64 {
        self.frame_count() as f64 * self.fps_den as f64 / self.fps_num as f64
    }

    pub fn frame(&self, i: usize) -> Frame<'_> {
        let len = self.frame_len();
        Frame {
            width: self.width,
            height: self.height,
            format: self.pixel_format,
            data: &self.data[i * len..(i + 1) * len],
        }
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }
}

/// Borrowed view of a single frame.
#[derive(Debug, Clone, Copy)]
pub struct Frame<'a> {
    pub width: usize,
    pub height: usize,
    pub format: PixelFormat,
    pub data: &'a [u8],
}

impl Frame<'_> {
    pub fn rgb(&self, x: usize, y: usize) -> (u8, u8, u8) {
        let i = y * self.width + x;
        match self.format {
            PixelFormat::Gray8 => {
                let g = self.data[i];
                (g, g, g)
            }
            PixelFormat::Rgb8 => (self.data[3 * i], self.data[3 * i + 1], self.data[3 * i + 2]),
        }
    }
}

pub fn encode_frame_container(seq: &FrameSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(CLFV_HEADER_LEN + seq.data.len());
    out.extend_from_slice(CLFV_MAGIC);
    out.extend_from_slice(&CLFV_VERSION.to_le_bytes());
    out.extend_from_slice(&(seq.width as u16).to_le_bytes());
    out.extend_from_slice(&(seq.height as u16).to_le_bytes());
    out.extend_from_slice(&seq.fps_num.to_le_bytes());
    out.extend_from_slice(&seq.fps_den.to_le_bytes());
    out.extend_from_slice(&(seq.frame_count() as u32).to_le_bytes());
    out.push(seq.pixel_format.code());
    out.extend_from_slice(&[0, 0, 0]);
    out.extend_from_slice(&seq.data);
    out
}

pub fn decode_frame_container(bytes: &[u8]) -> Result<FrameSequence, IngestError> {
    if bytes.len() < 4 || &bytes[..4] != CLFV_MAGIC {
        return Err(IngestError::BadMagic("CLFV header".into()));
    }
    if bytes.len() < CLFV_HEADER_LEN {
        return Err(IngestError::TruncatedPayload { expected: CLFV_HEADER_LEN, actual: bytes.len() });
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
    let version = u16_at(4);
    if version != CLFV_VERSION {
        return Err(IngestError::UnsupportedVersion(version));
    }
    let width = u16_at(6) as usize;
    let height = u16_at(8) as usize;
    let fps_num = u32_at(10);
    let fps_den = u32_at(14);
    let count = u32_at(18) as usize;
    let format = PixelFormat::from_code(bytes[22])?;
    if fps_num == 0 || fps_den == 0 {
        return Err(IngestError::BadFrameRate);
    }
    let expected = count * width * height * format.bytes_per_pixel();
    let payload = &bytes[CLFV_HEADER_LEN..];
    if payload.len() < expected {
        return Err(IngestError::TruncatedPayload { expected, actual: payload.len() });
    }
    if payload.len() > expected {
        return Err(IngestError::TrailingBytes { extra: payload.len() - expected });
    }
    if count > 0 && width * height == 0 {
        return Err(IngestError::InconsistentFrameDimensions {
            index: 0,
            width,
            height,
            expected_width: width.max(1),
            expected_height: height.max(1),
        });
    }
    Ok(FrameSequence { width, height, fps_num, fps_den, pixel_format: format, data: payload.to_vec() })
}

pub fn write_frame_container(path: &Path, seq: &FrameSequence) -> Result<(), IngestError> {
    fs::write(path, encode_frame_container(seq)).map_err(io_err(path))
}

/// Loads a CLFV file, or a netpbm frame directory when `path` is a directory.
pub fn load_frame_container(path: &Path) -> Result<FrameSequence, IngestError> {
    if path.is_dir() {
        return load_netpbm_dir(path);
    }
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_frame_container(&bytes).map_err(|e| match e {
        IngestError::BadMagic(_) => IngestError::BadMagic(path.display().to_string()),
        other => other,
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct NetpbmMeta {
    fps: f64,
    #[serde(default)]
    fps_den: Option<u32>,
    pixel_format: PixelFormat,
}

fn fps_rational(fps: f64, den: Option<u32>) -> Result<(u32, u32), IngestError> {
    if !(fps > 0.0) || !fps.is_finite() {
        return Err(IngestError::BadFrameRate);
    }
    match den {
        Some(0) => Err(IngestError::BadFrameRate),
        Some(d) => Ok(((fps * d as f64).round() as u32, d)),
        None if fps.fract() == 0.0 => Ok((fps as u32, 1)),
        None => Ok(((fps * 1000.0).round() as u32, 1000)),
    }
}

struct Pnm<'a> {
    format: PixelFormat,
    width: usize,
    height: usize,
    raster: &'a [u8],
}

fn parse_pnm(bytes: &[u8]) -> Result<Pnm<'_>, IngestError> {
    let format = match bytes.get(..2) {
        Some(b"P5") => PixelFormat::Gray8,
        Some(b"P6") => PixelFormat::Rgb8,
        _ => return Err(IngestError::BadMagic("netpbm frame (expected P5 or P6)".into())),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(IngestError::BadMetadata("malformed netpbm header".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| IngestError::BadMetadata("malformed netpbm header".into()))?;
    }
    // exactly one whitespace byte separates maxval from the raster
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(IngestError::UnsupportedPixelFormat(format!("maxval {maxval}")));
    }
    let expected = width * height * format.bytes_per_pixel();
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() < expected {
        return Err(IngestError::TruncatedPayload { expected, actual: raster.len() });
    }
    Ok(Pnm { format, width, height, raster: &raster[..expected] })
}

fn load_netpbm_dir(dir: &Path) -> Result<FrameSequence, IngestError> {
    let meta_path = dir.join("meta.json");
    let meta_text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
    let meta: NetpbmMeta =
        serde_json::from_str(&meta_text).map_err(|e| IngestError::BadMetadata(e.to_string()))?;
    let (fps_num, fps_den) = fps_rational(meta.fps, meta.fps_den)?;

    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(p.extension().and_then(|e| e.to_str()), Some("pgm" | "ppm" | "pnm"))
        })
        .collect();
    files.sort();

    let mut data = Vec::new();
    let mut dims: Option<(usize, usize)> = None;
    for (index, file) in files.iter().enumerate() {
        let bytes = fs::read(file).map_err(io_err(file))?;
        let pnm = parse_pnm(&bytes)?;
        if pnm.format != meta.pixel_format {
            return Err(IngestError::UnsupportedPixelFormat(format!(
                "{} is {:?}, metadata declares {:?}",
                file.display(),
                pnm.format,
                meta.pixel_format
            )));
        }
        match dims {
            None => dims = Some((pnm.width, pnm.height)),
            Some((w, h)) if (w, h) != (pnm.width, pnm.height) => {
                return Err(IngestError::InconsistentFrameDimensions {
                    index,
                    width: pnm.width,
                    height: pnm.height,
                    expected_width: w,
                    expected_height: h,
                })
            }
            _ => {}
        }
        data.extend_from_slice(pnm.raster);
    }
    let (width, height) = dims.unwrap_or((0, 0));
    Ok(FrameSequence { width, height, fps_num, fps_den, pixel_format: meta.pixel_format, data })
}

/// Writes a sequence as zero-padded numbered P5/P6 files plus `meta.json`.
pub fn write_netpbm_dir(dir: &Path, seq: &FrameSequence) -> Result<(), IngestError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let (magic, ext) = match seq.pixel_format {
        PixelFormat::Gray8 => ("P5", "pgm"),
        PixelFormat::Rgb8 => ("P6", "ppm"),
    };
    for i in 0..seq.frame_count() {
        let mut bytes = format!("{magic}\n{} {}\n255\n", seq.width, seq.height).into_bytes();
        bytes.extend_from_slice(seq.frame(i).data);
        let p = dir.join(format!("{i:06}.{ext}"));
        fs::write(&p, bytes).map_err(io_err(&p))?;
    }
    let meta = NetpbmMeta { fps: seq.fps(), fps_den: Some(seq.fps_den), pixel_format: seq.pixel_format };
    let p = dir.join("meta.json");
    fs::write(&p, serde_json::to_string_pretty(&meta).expect("meta serializes")).map_err(io_err(&p))
}

/// Mono audio with samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioTrack {
    pub sample_rate: u32,
    pub samples: Vec<f64>,
}

impl AudioTrack {
    pub fn duration_sec(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

pub fn decode_wav(bytes: &[u8]) -> Result<AudioTrack, IngestError> {
    if bytes.len() < 12 || &bytes[..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(IngestError::NotRiffWave);
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes([bytes[pos + 4], bytes[pos + 5], bytes[pos + 6], bytes[pos + 7]]) as usize;
        let body_start = pos + 8;
        let body_end = (body_start + size).min(bytes.len());
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(IngestError::NotRiffWave);
                }
                let mut tag = u16::from_le_bytes([body[0], body[1]]);
                let channels = u16::from_le_bytes([body[2], body[3]]);
                let rate = u32::from_le_bytes([body[4], body[5], body[6], body[7]]);
                let bits = u16::from_le_bytes([body[14], body[15]]);
                // WAVE_FORMAT_EXTENSIBLE carries the real format in its sub-format GUID
                if tag == 0xFFFE && body.len() >= 26 {
                    tag = u16::from_le_bytes([body[24], body[25]]);
                }
                fmt = Some((tag, channels, rate, bits));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        pos = body_start + size + (size & 1);
    }
    let (tag, channels, rate, bits) = fmt.ok_or(IngestError::NotRiffWave)?;
    if tag != 1 {
        return Err(IngestError::UnsupportedEncoding(format!("format tag {tag}")));
    }
    if bits != 16 {
        return Err(IngestError::UnsupportedEncoding(format!("{bits}-bit PCM")));
    }
    if !(channels == 1 || channels == 2) {
        return Err(IngestError::UnsupportedEncoding(format!("{channels} channels")));
    }
    if rate == 0 {
        return Err(IngestError::UnsupportedEncoding("sample rate 0".into()));
    }
    let data = data.ok_or(IngestError::ZeroSamples)?;
    let frame_bytes = 2 * channels as usize;
    let samples: Vec<f64> = data
        .chunks_exact(frame_bytes)
        .map(|f| {
            let l = i16::from_le_bytes([f[0], f[1]]) as f64;
            if channels == 2 {
                let r = i16::from_le_bytes([f[2], f[3]]) as f64;
                (l + r) / 2.0 / 32768.0
            } else {
                l / 32768.0
            }
        })
        .collect();
    if samples.is_empty() {
        return Err(IngestError::ZeroSamples);
    }
    Ok(AudioTrack { sample_rate: rate, samples })
}

pub fn load_wav(path: &Path) -> Result<AudioTrack, IngestError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_wav(&bytes)
}

/// Encodes 16-bit PCM; each channel is a slice of samples in [-1, 1].
pub fn encode_wav(sample_rate: u32, channels: &[&[f64]]) -> Vec<u8> {
    let nch = channels.len() as u16;
    let frames = channels.iter().map(|c| c.len()).min().unwrap_or(0);
    let data_len = frames * 2 * nch as usize;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&nch.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2 * nch as u32).to_le_bytes());
    out.extend_from_slice(&(2 * nch).to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for i in 0..frames {
        for c in channels {
            out.extend_from_slice(&pcm16(c[i]).to_le_bytes());
        }
    }
    out
}

pub fn pcm16(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn write_wav(path: &Path, sample_rate: u32, channels: &[&[f64]]) -> Result<(), IngestError> {
    fs::write(path, encode_wav(sample_rate, channels)).map_err(io_err(path))
}

/// One micro-clip interval `[start_sec, end_sec)` of a clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SegmentSpan {
    pub clip_id: String,
    pub index: usize,
    pub start_sec: f64,
    pub end_sec: f64,
}

impl SegmentSpan {
    pub fn len_sec(&self) -> f64 {
        self.end_sec - self.start_sec
    }
}

/// A trailing span shorter than this fraction of the segment length merges into its predecessor.
pub const SHORT_TAIL_FRACTION: f64 = 0.25;

pub fn segment_micro_clips(
    clip_id: &str,
    duration_sec: f64,
    segment_len_sec: f64,
) -> Result<Vec<SegmentSpan>, IngestError> {
    if !(duration_sec > 0.0) || !duration_sec.is_finite() {
        return Err(IngestError::NonPositiveDuration(duration_sec));
    }
    if !(segment_len_sec > 0.0) || !segment_len_sec.is_finite() {
        return Err(IngestError::NonPositiveSegmentLength(segment_len_sec));
    }
    // tolerate representation error such as 0.3 / 0.1 = 2.9999999999999996
    let ratio = duration_sec / segment_len_sec;
    let count = ((ratio - 1e-9).ceil() as usize).max(1);
    let mut spans: Vec<SegmentSpan> = (0..count)
        .map(|i| SegmentSpan {
            clip_id: clip_id.to_string(),
            index: i,
            start_sec: i as f64 * segment_len_sec,
            end_sec: if i + 1 == count { duration_sec } else { (i + 1) as f64 * segment_len_sec },
        })
        .collect();
    if spans.len() > 1 && spans.last().unwrap().len_sec() < SHORT_TAIL_FRACTION * segment_len_sec {
        spans.pop();
        spans.last_mut().unwrap().end_sec = duration_sec;
    }
    Ok(spans)
}
