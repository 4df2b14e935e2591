//! Gray-level co-occurrence texture statistics.

use crate::ingest::{Frame, PixelFormat};

/// Rec.601 luma, rounded to the nearest integer.
pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64).round().clamp(0.0, 255.0) as u8
}

/// Grayscale copy of a frame.
pub fn to_gray(frame: &Frame<'_>) -> GrayFrame {
    let data = match frame.format {
        PixelFormat::Gray8 => frame.data.to_vec(),
        PixelFormat::Rgb8 => frame.data.chunks_exact(3).map(|p| luma(p[0], p[1], p[2])).collect(),
    };
    GrayFrame { width: frame.width, height: frame.height, data }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrayFrame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl GrayFrame {
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TextureStats {
    pub entropy: f64,
    pub energy: f64,
    pub contrast: f64,
}

/// Symmetric co-occurrence counts pooled over the horizontal and vertical
/// unit offsets. `None` for frames smaller than 2x2.
pub fn glcm(frame: &GrayFrame, levels: usize) -> Option<Vec<u64>> {
    if frame.width < 2 || frame.height < 2 {
        return None;
    }
    let quant: Vec<usize> = frame.data.iter().map(|&g| g as usize * levels / 256).collect();
    let mut m = vec![0u64; levels * levels];
    let w = frame.width;
    for y in 0..frame.height {
        for x in 0..w {
            let a = quant[y * w + x];
            if x + 1 < w {
                let b = quant[y * w + x + 1];
                m[a * levels + b] += 1;
                m[b * levels + a] += 1;
            }
            if y + 1 < frame.height {
                let b = quant[(y + 1) * w + x];
                m[a * levels + b] += 1;
                m[b * levels + a] += 1;
            }
        }
    }
    Some(m)
}

pub fn glcm_stats(frame: &GrayFrame, levels: usize) -> Option<TextureStats> {
    let m = glcm(frame, levels)?;
    let total: u64 = m.iter().sum();
    let total = total as f64;
    let (mut entropy, mut energy, mut contrast) = (0.0, 0.0, 0.0);
    for i in 0..levels {
        for j in 0..levels {
            let c = m[i * levels + j];
            if c == 0 {
                continue;
            }
            let p = c as f64 / total;
            energy += p * p;
            contrast += ((i as f64) - (j as f64)).powi(2) * p;
            entropy -= p * p.log2();
        }
    }
    Some(TextureStats { entropy: entropy.max(0.0), energy, contrast })
}
