//! Frame differencing and exhaustive block-matching motion estimation.

use super::texture::GrayFrame;

/// Mean over consecutive pairs of the mean absolute grayscale difference.
/// Zero for fewer than two frames.
pub fn motion_intensity(frames: &[GrayFrame]) -> f64 {
    if frames.len() < 2 {
        return 0.0;
    }
    let total: f64 = frames.windows(2).map(|w| mean_abs_diff(&w[0], &w[1])).sum();
    total / (frames.len() - 1) as f64
}

fn mean_abs_diff(a: &GrayFrame, b: &GrayFrame) -> f64 {
    let sum: u64 = a.data.iter().zip(&b.data).map(|(&x, &y)| x.abs_diff(y) as u64).sum();
    sum as f64 / a.data.len().max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockMatchParams {
    pub block_size: usize,
    pub search_radius: usize,
    /// Minimum per-pixel SAD improvement over the zero vector for a block to count as moving.
    pub noise_threshold: f64,
}

/// Displacement found for one tile of the current frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockVector {
    pub bx: usize,
    pub by: usize,
    pub dx: i32,
    pub dy: i32,
    pub moving: bool,
}

impl BlockVector {
    pub fn magnitude(&self) -> f64 {
        ((self.dx * self.dx + self.dy * self.dy) as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityStats {
    pub mean: f64,
    pub max: f64,
    pub min: f64,
}

impl VelocityStats {
    pub const ZERO: VelocityStats = VelocityStats { mean: 0.0, max: 0.0, min: 0.0 };
}

fn sad(prev: &GrayFrame, cur: &GrayFrame, bx: usize, by: usize, px: usize, py: usize, n: usize) -> u64 {
    let w = cur.width;
    let mut total = 0u64;
    for row in 0..n {
        let c = &cur.data[(by + row) * w + bx..(by + row) * w + bx + n];
        let p = &prev.data[(py + row) * w + px..(py + row) * w + px + n];
        total += c.iter().zip(p).map(|(&a, &b)| a.abs_diff(b) as u32).sum::<u32>() as u64;
    }
    total
}

/// Motion vectors of every full tile of `cur`, matched against `prev`.
///
/// Candidates are restricted to positions fully inside `prev`. Among equal
/// SADs the shorter vector wins, then the earlier one in row-major scan order.
pub fn block_vectors(prev: &GrayFrame, cur: &GrayFrame, p: &BlockMatchParams) -> Vec<BlockVector> {
    let n = p.block_size;
    let r = p.search_radius as i64;
    let (w, h) = (cur.width as i64, cur.height as i64);
    let mut out = Vec::new();
    if n == 0 {
        return out;
    }
    for by in (0..cur.height / n).map(|i| i * n) {
        for bx in (0..cur.width / n).map(|i| i * n) {
            let zero = sad(prev, cur, bx, by, bx, by, n);
            let mut best = (zero, 0i64, 0i64);
            for dy in -r..=r {
                for dx in -r..=r {
                    let (px, py) = (bx as i64 + dx, by as i64 + dy);
                    if px < 0 || py < 0 || px + n as i64 > w || py + n as i64 > h {
                        continue;
                    }
                    let s = sad(prev, cur, bx, by, px as usize, py as usize, n);
                    let better = s < best.0
                        || (s == best.0 && dx * dx + dy * dy < best.1 * best.1 + best.2 * best.2);
                    if better {
                        best = (s, dx, dy);
                    }
                }
            }
            let improvement = (zero - best.0) as f64 / (n * n) as f64;
            let moving = (best.1, best.2) != (0, 0) && improvement > p.noise_threshold;
            // the tile's content came from (bx+dx, by+dy), so it moved by the negated vector
            out.push(BlockVector { bx, by, dx: -best.1 as i32, dy: -best.2 as i32, moving });
        }
    }
    out
}

/// Speed statistics (pixels per second) over moving blocks of one frame pair.
pub fn block_motion_velocity(
    prev: &GrayFrame,
    cur: &GrayFrame,
    p: &BlockMatchParams,
    dt_sec: f64,
) -> Option<VelocityStats> {
    if prev.width != cur.width || prev.height != cur.height {
        return None;
    }
    let speeds: Vec<f64> = block_vectors(prev, cur, p)
        .iter()
        .filter(|v| v.moving)
        .map(|v| v.magnitude() / dt_sec)
        .collect();
    Some(speed_stats(&speeds))
}

pub fn speed_stats(speeds: &[f64]) -> VelocityStats {
    if speeds.is_empty() {
        return VelocityStats::ZERO;
    }
    let mean = speeds.iter().sum::<f64>() / speeds.len() as f64;
    let max = speeds.iter().copied().fold(f64::MIN, f64::max);
    let min = speeds.iter().copied().fold(f64::MAX, f64::min);
    VelocityStats { mean, max, min }
}
