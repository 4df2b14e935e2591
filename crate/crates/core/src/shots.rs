//! Principal shots: micro-clips of one clip grouped by adaptive k-means and
//! aggregated into multiple-instance learning instances.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{fit_normalizer, Bag, DatasetManifest, FeatureVector, MicroClip, ModelError, PrincipalShot};

#[derive(Debug, Error)]
pub enum ShotError {
    #[error("no points to cluster")]
    EmptyInput,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("clustering covers {clustered} points but {given} micro-clips were given")]
    AssignmentMismatch { clustered: usize, given: usize },
    #[error("no features for clip {0:?}")]
    MissingFeatures(String),
    #[error("invalid clustering configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct ClusteringConfig {
    pub k_max: usize,
    /// Threshold factor: a clustering is accepted when no point lies farther
    /// from its centroid than `alpha` times the RMS spread around the global mean.
    pub alpha: f64,
    pub max_lloyd_iterations: usize,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        ClusteringConfig { k_max: 10, alpha: 0.5, max_lloyd_iterations: 100 }
    }
}

impl ClusteringConfig {
    pub fn validate(&self) -> Result<(), ShotError> {
        if self.k_max == 0 {
            return Err(ShotError::BadConfig("kMax must be at least 1".into()));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(ShotError::BadConfig(format!("alpha must be positive, got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ClusteringResult {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub max_point_distance: f64,
    pub threshold: f64,
}

impl ClusteringResult {
    /// False when the fallback `k = min(kMax, n)` was returned without meeting the threshold.
    pub fn within_threshold(&self) -> bool {
        self.max_point_distance <= self.threshold
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn mean_of<'a>(points: impl Iterator<Item = &'a [f64]>, dim: usize) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    let mut n = 0usize;
    for p in points {
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v;
        }
        n += 1;
    }
    if n > 0 {
        acc.iter_mut().for_each(|a| *a /= n as f64);
    }
    acc
}

/// Index of the minimum under `key`, lowest index on ties.
fn argmin_by(n: usize, mut key: impl FnMut(usize) -> f64) -> usize {
    let mut best = 0;
    let mut best_val = f64::INFINITY;
    for i in 0..n {
        let v = key(i);
        if v < best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

/// Deterministic farthest-first seeds: the point nearest the global mean,
/// then repeatedly the point farthest from all chosen seeds. Lowest index wins ties.
pub fn farthest_first_seeds(points: &[&[f64]], k: usize) -> Vec<usize> {
    let dim = points[0].len();
    let mean = mean_of(points.iter().copied(), dim);
    let mut seeds = vec![argmin_by(points.len(), |i| sq_dist(points[i], &mean))];
    let mut nearest: Vec<f64> = points.iter().map(|p| sq_dist(p, points[seeds[0]])).collect();
    while seeds.len() < k {
        let next = argmin_by(points.len(), |i| -nearest[i]);
        seeds.push(next);
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, points[next]));
        }
    }
    seeds
}

/// Outcome of Lloyd's iterations for a fixed `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LloydRun {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared point-to-centroid distances after each centroid update.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

fn assign_all(points: &[&[f64]], centroids: &[Vec<f64>]) -> Vec<usize> {
    points.iter().map(|p| argmin_by(centroids.len(), |c| sq_dist(p, &centroids[c]))).collect()
}

/// Moves the point farthest from its centroid into each empty cluster.
fn repair_empty(points: &[&[f64]], assignments: &mut [usize], centroids: &mut [Vec<f64>]) {
    let k = centroids.len();
    loop {
        let mut sizes = vec![0usize; k];
        for &a in assignments.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else { return };
        let donor = argmin_by(points.len(), |i| {
            if sizes[assignments[i]] >= 2 {
                -sq_dist(points[i], &centroids[assignments[i]])
            } else {
                f64::INFINITY
            }
        });
        assignments[donor] = empty;
        centroids[empty] = points[donor].to_vec();
    }
}

fn objective(points: &[&[f64]], assignments: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points.iter().zip(assignments).map(|(p, &a)| sq_dist(p, &centroids[a])).sum()
}

fn update_centroids(points: &[&[f64]], assignments: &[usize], k: usize) -> Vec<Vec<f64>> {
    let dim = points[0].len();
    (0..k)
        .map(|c| {
            mean_of(
                points.iter().zip(assignments).filter(|(_, &a)| a == c).map(|(p, _)| *p),
                dim,
            )
        })
        .collect()
}

pub fn lloyd(points: &[&[f64]], k: usize, max_iterations: usize) -> LloydRun {
    let mut centroids: Vec<Vec<f64>> =
        farthest_first_seeds(points, k).into_iter().map(|i| points[i].to_vec()).collect();
    let mut assignments = assign_all(points, &centroids);
    repair_empty(points, &mut assignments, &mut centroids);
    centroids = update_centroids(points, &assignments, k);
    let mut trace = vec![objective(points, &assignments, &centroids)];
    let mut iterations = 0;
    while iterations < max_iterations {
        let mut next = assign_all(points, &centroids);
        repair_empty(points, &mut next, &mut centroids);
        iterations += 1;
        if next == assignments {
            centroids = update_centroids(points, &assignments, k);
            break;
        }
        assignments = next;
        centroids = update_centroids(points, &assignments, k);
        trace.push(objective(points, &assignments, &centroids));
    }
    LloydRun { assignments, centroids, objective_trace: trace, iterations }
}

/// Smallest `k` whose worst point-to-centroid distance is within the
/// data-relative threshold, or `min(kMax, n)` when none qualifies.
pub fn adaptive_kmeans(points: &[&[f64]], cfg: &ClusteringConfig) -> Result<ClusteringResult, ShotError> {
    cfg.validate()?;
    let first = points.first().ok_or(ShotError::EmptyInput)?;
    let dim = first.len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(ShotError::DimensionMismatch { expected: dim, actual: p.len() });
    }
    let mean = mean_of(points.iter().copied(), dim);
    let rms = (points.iter().map(|p| sq_dist(p, &mean)).sum::<f64>() / points.len() as f64).sqrt();
    let threshold = cfg.alpha * rms;
    let k_limit = cfg.k_max.min(points.len());

    let mut last = None;
    for k in 1..=k_limit {
        let run = lloyd(points, k, cfg.max_lloyd_iterations);
        let max_point_distance = points
            .iter()
            .zip(&run.assignments)
            .map(|(p, &a)| sq_dist(p, &run.centroids[a]))
            .fold(0.0, f64::max)
            .sqrt();
        let result = ClusteringResult {
            k,
            assignments: run.assignments,
            centroids: run.centroids,
            max_point_distance,
            threshold,
        };
        if result.within_threshold() {
            return Ok(result);
        }
        last = Some(result);
    }
    Ok(last.expect("k_limit >= 1"))
}

/// Aggregate vector of a group: per-dimension mean, population std, then coverage.
pub fn aggregate(members: &[&[f64]], total_micro_clips: usize) -> Vec<f64> {
    let dim = members[0].len();
    let n = members.len() as f64;
    let mean = mean_of(members.iter().copied(), dim);
    let std: Vec<f64> = (0..dim)
        .map(|d| (members.iter().map(|m| (m[d] - mean[d]).powi(2)).sum::<f64>() / n).sqrt())
        .collect();
    let mut out = mean;
    out.extend(std);
    out.push(n / total_micro_clips as f64);
    out
}

/// One principal shot per cluster, ordered by the earliest member start time.
pub fn build_principal_shots(
    micro_clips: &[MicroClip],
    clustering: &ClusteringResult,
) -> Result<Vec<PrincipalShot>, ShotError> {
    if clustering.assignments.len() != micro_clips.len() {
        return Err(ShotError::AssignmentMismatch {
            clustered: clustering.assignments.len(),
            given: micro_clips.len(),
        });
    }
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); clustering.k];
    for (pos, &a) in clustering.assignments.iter().enumerate() {
        if a >= clustering.k {
            return Err(ShotError::AssignmentMismatch { clustered: a + 1, given: clustering.k });
        }
        groups[a].push(pos);
    }
    groups.retain(|g| !g.is_empty());
    let start = |g: &Vec<usize>| {
        g.iter().map(|&i| micro_clips[i].start_sec).fold(f64::INFINITY, f64::min)
    };
    groups.sort_by(|a, b| start(a).total_cmp(&start(b)));

    let clip_id = micro_clips.first().map(|m| m.clip_id.clone()).unwrap_or_default();
    groups
        .into_iter()
        .enumerate()
        .map(|(shot_id, g)| {
            let members: Vec<&[f64]> = g.iter().map(|&i| micro_clips[i].features.as_slice()).collect();
            let mut member_indices: Vec<usize> = g.iter().map(|&i| micro_clips[i].index).collect();
            member_indices.sort_unstable();
            Ok(PrincipalShot {
                clip_id: clip_id.clone(),
                shot_id,
                member_indices,
                aggregate: FeatureVector::new(aggregate(&members, micro_clips.len()))?,
            })
        })
        .collect()
}

/// Clusters one clip's micro-clips on per-clip z-scored features and builds its shots.
pub fn shots_for_clip(micro_clips: &[MicroClip], cfg: &ClusteringConfig) -> Result<Vec<PrincipalShot>, ShotError> {
    if micro_clips.is_empty() {
        return Err(ShotError::EmptyInput);
    }
    let norm = fit_normalizer(micro_clips.iter().map(|m| m.features.as_slice()))?;
    let normalized: Vec<Vec<f64>> = micro_clips
        .iter()
        .map(|m| norm.apply(m.features.as_slice()))
        .collect::<Result<_, _>>()?;
    let refs: Vec<&[f64]> = normalized.iter().map(Vec::as_slice).collect();
    let clustering = adaptive_kmeans(&refs, cfg)?;
    build_principal_shots(micro_clips, &clustering)
}

/// Groups a micro-clip store by clip id, keeping micro-clips in index order.
pub fn group_by_clip(store: &[MicroClip]) -> BTreeMap<&str, Vec<MicroClip>> {
    let mut by_clip: BTreeMap<&str, Vec<MicroClip>> = BTreeMap::new();
    for m in store {
        by_clip.entry(m.clip_id.as_str()).or_default().push(m.clone());
    }
    for v in by_clip.values_mut() {
        v.sort_by_key(|m| m.index);
    }
    by_clip
}

/// Principal shots of every manifest clip, in manifest order.
pub fn shots_for_dataset(
    manifest: &DatasetManifest,
    store: &[MicroClip],
    cfg: &ClusteringConfig,
) -> Result<Vec<PrincipalShot>, ShotError> {
    let by_clip = group_by_clip(store);
    let per_clip: Vec<Vec<PrincipalShot>> = manifest
        .clips()
        .par_iter()
        .map(|c| {
            let mcs = by_clip.get(c.clip_id.as_str()).ok_or_else(|| ShotError::MissingFeatures(c.clip_id.clone()))?;
            shots_for_clip(mcs, cfg)
        })
        .collect::<Result<_, _>>()?;
    Ok(per_clip.into_iter().flatten().collect())
}

/// One bag per manifest clip; labels come from `coder` when given.
pub fn bags_from_shots(
    manifest: &DatasetManifest,
    shots: &[PrincipalShot],
    coder: Option<&str>,
) -> Result<Vec<Bag>, ShotError> {
    let mut by_clip: BTreeMap<&str, Vec<PrincipalShot>> = BTreeMap::new();
    for s in shots {
        by_clip.entry(s.clip_id.as_str()).or_default().push(s.clone());
    }
    let labels = coder.and_then(|c| manifest.coder_labels(c));
    manifest
        .clips()
        .iter()
        .map(|c| {
            let mut instances =
                by_clip.remove(c.clip_id.as_str()).ok_or_else(|| ShotError::MissingFeatures(c.clip_id.clone()))?;
            instances.sort_by_key(|s| s.shot_id);
            Ok(Bag {
                clip_id: c.clip_id.clone(),
                instances,
                label: labels.and_then(|l| l.get(&c.clip_id).copied()),
                media_ref: c.media_path.as_ref().map(|p| manifest.resolve(p)),
            })
        })
        .collect()
}

/// Bags straight from a micro-clip feature store.
pub fn bags_from_dataset(
    manifest: &DatasetManifest,
    store: &[MicroClip],
    cfg: &ClusteringConfig,
    coder: Option<&str>,
) -> Result<Vec<Bag>, ShotError> {
    let shots = shots_for_dataset(manifest, store, cfg)?;
    bags_from_shots(manifest, &shots, coder)
}
