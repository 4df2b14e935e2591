//! Silence, pitch and turn-taking statistics from a mono waveform.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct AudioParams {
    pub silence_window_sec: f64,
    pub silence_rms_threshold: f64,
    pub pitch_window_sec: f64,
    pub pitch_hop_sec: f64,
    pub pitch_min_hz: f64,
    pub pitch_max_hz: f64,
    pub voiced_peak_threshold: f64,
    pub min_turn_segment_sec: f64,
}

impl Default for AudioParams {
    fn default() -> Self {
        AudioParams {
            silence_window_sec: 0.025,
            silence_rms_threshold: 0.01,
            pitch_window_sec: 0.040,
            pitch_hop_sec: 0.020,
            pitch_min_hz: 50.0,
            pitch_max_hz: 500.0,
            voiced_peak_threshold: 0.5,
            min_turn_segment_sec: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AudioStats {
    pub silence_fraction: f64,
    pub pitch_mean_hz: f64,
    pub pitch_std_hz: f64,
    pub voiced_fraction: f64,
    pub turns_per_minute: f64,
}

impl AudioStats {
    pub fn to_array(&self) -> [f64; 5] {
        [self.silence_fraction, self.pitch_mean_hz, self.pitch_std_hz, self.voiced_fraction, self.turns_per_minute]
    }
}

/// Among local maxima of the correlation curve, the first one reaching this
/// fraction of the global maximum is taken as the period (guards against
/// octave errors, where multiples of the period correlate equally well).
const PEAK_PICK_RATIO: f64 = 0.9;

fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Normalized autocorrelation of `x` at each lag in `lags`.
pub fn normalized_autocorrelation(x: &[f64], lags: std::ops::RangeInclusive<usize>) -> Vec<f64> {
    lags.map(|tau| {
        if tau >= x.len() {
            return 0.0;
        }
        let (a, b) = (&x[..x.len() - tau], &x[tau..]);
        let mut cross = 0.0;
        let mut ea = 0.0;
        let mut eb = 0.0;
        for (&u, &v) in a.iter().zip(b) {
            cross += u * v;
            ea += u * u;
            eb += v * v;
        }
        let denom = (ea * eb).sqrt();
        if denom > 0.0 {
            cross / denom
        } else {
            0.0
        }
    })
    .collect()
}

/// Period estimate for one analysis window: `(peak correlation, lag)`.
pub fn pitch_peak(window: &[f64], min_lag: usize, max_lag: usize) -> Option<(f64, usize)> {
    if min_lag > max_lag || min_lag == 0 {
        return None;
    }
    let r = normalized_autocorrelation(window, min_lag..=max_lag);
    let global = r.iter().copied().fold(f64::MIN, f64::max);
    if !(global > 0.0) {
        return None;
    }
    let n = r.len();
    for i in 0..n {
        let left_ok = i == 0 || r[i] >= r[i - 1];
        let right_ok = i + 1 == n || r[i] >= r[i + 1];
        if left_ok && right_ok && r[i] >= PEAK_PICK_RATIO * global {
            return Some((r[i], min_lag + i));
        }
    }
    None
}

/// Statistics of `samples` (one micro-clip span) at `sample_rate`.
pub fn audio_stats(samples: &[f64], sample_rate: u32, p: &AudioParams) -> Option<AudioStats> {
    if samples.is_empty() || sample_rate == 0 {
        return None;
    }
    let sr = sample_rate as f64;

    let silence_win = ((p.silence_window_sec * sr).round() as usize).max(1);
    let mut windows: Vec<&[f64]> = samples.chunks_exact(silence_win).collect();
    if windows.is_empty() {
        windows.push(samples);
    }
    let silent = windows.iter().filter(|w| rms(w) < p.silence_rms_threshold).count();
    let silence_fraction = silent as f64 / windows.len() as f64;

    let win = ((p.pitch_window_sec * sr).round() as usize).max(2);
    let hop = ((p.pitch_hop_sec * sr).round() as usize).max(1);
    let min_lag = ((sr / p.pitch_max_hz).floor() as usize).max(1);
    let max_lag = ((sr / p.pitch_min_hz).ceil() as usize).min(win - 1);

    let mut voiced = Vec::new();
    let mut pitches = Vec::new();
    let mut start = 0;
    while start + win <= samples.len() {
        let w = &samples[start..start + win];
        let is_voiced = rms(w) >= p.silence_rms_threshold
            && match pitch_peak(w, min_lag, max_lag) {
                Some((peak, lag)) if peak >= p.voiced_peak_threshold => {
                    pitches.push(sr / lag as f64);
                    true
                }
                _ => false,
            };
        voiced.push(is_voiced);
        start += hop;
    }

    let voiced_fraction =
        if voiced.is_empty() { 0.0 } else { pitches.len() as f64 / voiced.len() as f64 };
    let (pitch_mean_hz, pitch_std_hz) = if pitches.is_empty() {
        (0.0, 0.0)
    } else {
        let m = pitches.iter().sum::<f64>() / pitches.len() as f64;
        let v = pitches.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / pitches.len() as f64;
        (m, v.sqrt())
    };

    let hop_sec = hop as f64 / sr;
    let mut turns = 0usize;
    let mut run = 0usize;
    for &v in voiced.iter().chain(std::iter::once(&false)) {
        if v {
            run += 1;
        } else {
            if run > 0 && run as f64 * hop_sec >= p.min_turn_segment_sec {
                turns += 1;
            }
            run = 0;
        }
    }
    let minutes = samples.len() as f64 / sr / 60.0;
    let turns_per_minute = turns as f64 / minutes;

    Some(AudioStats { silence_fraction, pitch_mean_hz, pitch_std_hz, voiced_fraction, turns_per_minute })
}
