//! Global HSV color histogram.

use crate::ingest::Frame;

/// Hexcone RGB → HSV. Hue in degrees `[0, 360)`, saturation and value in `[0, 1]`.
/// Hue is 0 for achromatic pixels.
pub fn rgb_to_hsv(r: u8, g: u8, b: u8) -> (f64, f64, f64) {
    let (rf, gf, bf) = (r as f64 / 255.0, g as f64 / 255.0, b as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let v = max as f64 / 255.0;
    if max == 0 || max == min {
        return (0.0, 0.0, v);
    }
    let delta = (max - min) as f64 / 255.0;
    let s = delta / v;
    let sector = if max == r {
        ((gf - bf) / delta).rem_euclid(6.0)
    } else if max == g {
        (bf - rf) / delta + 2.0
    } else {
        (rf - gf) / delta + 4.0
    };
    let mut h = 60.0 * sector;
    if h >= 360.0 {
        h -= 360.0;
    }
    (h, s, v)
}

/// Number of hue, saturation and value bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct HistBins {
    pub hue: usize,
    pub saturation: usize,
    pub value: usize,
}

impl Default for HistBins {
    fn default() -> Self {
        HistBins { hue: 8, saturation: 4, value: 4 }
    }
}

impl HistBins {
    pub fn len(&self) -> usize {
        self.hue * self.saturation * self.value
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat bin index, hue-major.
    pub fn bin_of(&self, h: f64, s: f64, v: f64) -> usize {
        let q = |x: f64, n: usize| ((x * n as f64) as usize).min(n - 1);
        let hb = ((h * self.hue as f64 / 360.0) as usize).min(self.hue - 1);
        let sb = q(s, self.saturation);
        let vb = q(v, self.value);
        (hb * self.saturation + sb) * self.value + vb
    }
}

/// L1-normalized histogram of one frame.
pub fn frame_histogram(frame: &Frame<'_>, bins: HistBins) -> Vec<f64> {
    let mut counts = vec![0u64; bins.len()];
    for y in 0..frame.height {
        for x in 0..frame.width {
            let (r, g, b) = frame.rgb(x, y);
            let (h, s, v) = rgb_to_hsv(r, g, b);
            counts[bins.bin_of(h, s, v)] += 1;
        }
    }
    let total = (frame.width * frame.height) as f64;
    counts.into_iter().map(|c| c as f64 / total).collect()
}

/// Mean of per-frame normalized histograms, renormalized to sum to one.
/// Returns `None` when no frames are given.
pub fn hsv_histogram(frames: &[Frame<'_>], bins: HistBins) -> Option<Vec<f64>> {
    if frames.is_empty() {
        return None;
    }
    let mut acc = vec![0.0; bins.len()];
    for f in frames {
        for (a, p) in acc.iter_mut().zip(frame_histogram(f, bins)) {
            *a += p;
        }
    }
    let total: f64 = acc.iter().sum();
    if total > 0.0 {
        acc.iter_mut().for_each(|a| *a /= total);
    }
    Some(acc)
}
