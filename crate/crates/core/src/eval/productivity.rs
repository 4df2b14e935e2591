//! Expected positives viewed within a fixed viewing capacity, under a random
//! order versus an order that puts predicted positives first.
//!
//! `f` is the base rate of positives, `t`/`n` the true positive/negative
//! rates, `k` the number of clips viewable (fractional clips earn
//! proportional credit).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mean_std, EvalError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProductivityParams {
    pub base_rate: f64,
    pub true_positive_rate: f64,
    pub true_negative_rate: f64,
    pub capacity: f64,
}

impl ProductivityParams {
    pub fn new(f: f64, t: f64, n: f64, k: f64) -> Result<Self, EvalError> {
        let p = ProductivityParams { base_rate: f, true_positive_rate: t, true_negative_rate: n, capacity: k };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        for (name, v) in [
            ("baseRate", self.base_rate),
            ("truePositiveRate", self.true_positive_rate),
            ("trueNegativeRate", self.true_negative_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(EvalError::InvalidParams(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if !(self.capacity > 0.0 && self.capacity.is_finite()) {
            return Err(EvalError::InvalidParams(format!("capacity must be positive, got {}", self.capacity)));
        }
        Ok(())
    }

    /// Share of true positives among predicted positives.
    pub fn precision(&self) -> Result<f64, EvalError> {
        let (f, t, n) = (self.base_rate, self.true_positive_rate, self.true_negative_rate);
        let mass = f * t + (1.0 - f) * (1.0 - n);
        if mass <= 0.0 {
            return Err(EvalError::NoPredictedPositives);
        }
        Ok(f * t / mass)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TheoreticProductivity {
    pub expected_random: f64,
    pub expected_filtered: f64,
    pub precision: f64,
}

pub fn productivity_theoretic(p: &ProductivityParams) -> Result<TheoreticProductivity, EvalError> {
    p.validate()?;
    let precision = p.precision()?;
    Ok(TheoreticProductivity {
        expected_random: p.capacity * p.base_rate,
        expected_filtered: p.capacity * precision,
        precision,
    })
}

/// How a replication turns its viewing order into a positives count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum SimulationMode {
    /// Draw one random viewing order and count the positives seen.
    Sampled,
    /// Average over all viewing orders given the replication's predicted labels.
    Expected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimulationReport {
    pub params: ProductivityParams,
    pub pos_count: usize,
    pub neg_count: usize,
    pub replications: usize,
    pub seed: u64,
    pub mode: SimulationMode,
    pub per_replication: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Simulated viewing on a set of `pos_count` positive and `neg_count`
/// negative clips. Each replication draws predicted labels, then views
/// predicted positives before predicted negatives. Inside each group clips
/// are drawn without replacement with probability proportional to a weight
/// that restores base rate `f`: `f / pos_count` for positives and
/// `(1 - f) / neg_count` for negatives. When the set already has base rate
/// `f` the weights are equal and the order is uniformly random.
pub fn productivity_simulate(
    p: &ProductivityParams,
    pos_count: usize,
    neg_count: usize,
    replications: usize,
    seed: u64,
    mode: SimulationMode,
) -> Result<SimulationReport, EvalError> {
    p.validate()?;
    let total = pos_count + neg_count;
    if p.capacity > total as f64 {
        return Err(EvalError::CapacityExceedsSet { capacity: p.capacity, available: total });
    }
    if replications == 0 {
        return Err(EvalError::EmptyInput);
    }
    if (pos_count == 0 && p.base_rate > 0.0) || (neg_count == 0 && p.base_rate < 1.0) {
        return Err(EvalError::InvalidParams("set lacks a class the base rate requires".into()));
    }
    let wp = if pos_count > 0 { p.base_rate / pos_count as f64 } else { 0.0 };
    let wn = if neg_count > 0 { (1.0 - p.base_rate) / neg_count as f64 } else { 0.0 };
    let slots = slot_weights(p.capacity);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_replication = Vec::with_capacity(replications);
    for _ in 0..replications {
        let pp_pos = (0..pos_count).filter(|_| rng.gen_bool(p.true_positive_rate)).count();
        let pp_neg = (0..neg_count).filter(|_| !rng.gen_bool(p.true_negative_rate)).count();
        let groups = [(pp_pos, pp_neg), (pos_count - pp_pos, neg_count - pp_neg)];
        let viewed = match mode {
            SimulationMode::Sampled => sampled_view(&groups, wp, wn, &slots, &mut rng),
            SimulationMode::Expected => expected_view(&groups, wp, wn, &slots),
        };
        per_replication.push(viewed);
    }
    let (mean, std) = mean_std(&per_replication);
    Ok(SimulationReport {
        params: *p,
        pos_count,
        neg_count,
        replications,
        seed,
        mode,
        per_replication,
        mean,
        std,
    })
}

/// Credit for each viewing position: 1 for the first ⌊k⌋, frac(k) for the next.
fn slot_weights(k: f64) -> Vec<f64> {
    let whole = k.floor() as usize;
    let mut w = vec![1.0; whole];
    let frac = k - whole as f64;
    if frac > 0.0 {
        w.push(frac);
    }
    w
}

fn draw_probability(pos_left: usize, neg_left: usize, wp: f64, wn: f64) -> f64 {
    let rp = pos_left as f64 * wp;
    let rn = neg_left as f64 * wn;
    if rp + rn > 0.0 {
        rp / (rp + rn)
    } else {
        pos_left as f64 / (pos_left + neg_left) as f64
    }
}

fn sampled_view(groups: &[(usize, usize)], wp: f64, wn: f64, slots: &[f64], rng: &mut ChaCha8Rng) -> f64 {
    let mut credit = 0.0;
    let mut slot = 0;
    for &(mut pos, mut neg) in groups {
        while slot < slots.len() && pos + neg > 0 {
            let positive = rng.gen_bool(draw_probability(pos, neg, wp, wn));
            if positive {
                credit += slots[slot];
                pos -= 1;
            } else {
                neg -= 1;
            }
            slot += 1;
        }
    }
    credit
}

/// Exact expectation of `sampled_view` over the draw order, by dynamic
/// programming over the number of positives drawn so far.
fn expected_view(groups: &[(usize, usize)], wp: f64, wn: f64, slots: &[f64]) -> f64 {
    let mut credit = 0.0;
    let mut slot = 0;
    for &(pos, neg) in groups {
        let draws = (slots.len() - slot).min(pos + neg);
        // dist[i]: probability that i positives have been drawn from this group
        let mut dist = vec![1.0];
        for r in 0..draws {
            let mut next = vec![0.0; r + 2];
            let mut p_positive = 0.0;
            for (i, &mass) in dist.iter().enumerate() {
                if mass == 0.0 || i > pos || r - i > neg {
                    continue;
                }
                let q = draw_probability(pos - i, neg - (r - i), wp, wn);
                p_positive += mass * q;
                next[i + 1] += mass * q;
                next[i] += mass * (1.0 - q);
            }
            credit += slots[slot] * p_positive;
            slot += 1;
            dist = next;
        }
    }
    credit
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_classifier() {
        let p = ProductivityParams::new(0.5, 1.0, 1.0, 10.0 / 3.0).unwrap();
        let r = productivity_theoretic(&p).unwrap();
        assert!((r.expected_random - 5.0 / 3.0).abs() < 1e-12);
        assert!((r.expected_filtered - 10.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn uninformative_classifier_matches_random() {
        for (f, t) in [(0.25, 0.3), (0.5, 0.8), (0.1, 0.5)] {
            let p = ProductivityParams::new(f, t, 1.0 - t, 3.0).unwrap();
            let r = productivity_theoretic(&p).unwrap();
            assert!((r.precision - f).abs() < 1e-12);
            assert!((r.expected_filtered - r.expected_random).abs() < 1e-12);
        }
    }

    #[test]
    fn boosted_example() {
        let p = ProductivityParams::new(0.25, 0.9, 0.9, 10.0 / 3.0).unwrap();
        let r = productivity_theoretic(&p).unwrap();
        assert!((r.precision - 0.75).abs() < 1e-12);
        assert!((r.expected_filtered / r.expected_random - 3.0).abs() < 1e-12);
    }

    #[test]
    fn no_predicted_positives() {
        let p = ProductivityParams::new(0.0, 0.5, 1.0, 3.0).unwrap();
        assert!(matches!(productivity_theoretic(&p), Err(EvalError::NoPredictedPositives)));
    }

    #[test]
    fn perfect_ordering_views_only_positives() {
        let p = ProductivityParams::new(0.5, 1.0, 1.0, 4.0).unwrap();
        for mode in [SimulationMode::Sampled, SimulationMode::Expected] {
            let r = productivity_simulate(&p, 10, 10, 20, 1, mode).unwrap();
            assert!(r.per_replication.iter().all(|&v| v == 4.0));
        }
    }

    #[test]
    fn expectation_matches_brute_force() {
        // enumerate all orders of a tiny group and weight by draw probability
        fn brute(pos: usize, neg: usize, wp: f64, wn: f64, slots: &[f64], depth: usize) -> f64 {
            if depth == slots.len() || pos + neg == 0 {
                return 0.0;
            }
            let q = draw_probability(pos, neg, wp, wn);
            let mut v = 0.0;
            if pos > 0 {
                v += q * (slots[depth] + brute(pos - 1, neg, wp, wn, slots, depth + 1));
            }
            if neg > 0 {
                v += (1.0 - q) * brute(pos, neg - 1, wp, wn, slots, depth + 1);
            }
            v
        }
        let slots = slot_weights(10.0 / 3.0);
        for (pos, neg, wp, wn) in [(3, 5, 0.1, 0.3), (7, 2, 0.02, 0.5), (1, 1, 1.0, 1.0)] {
            let e = expected_view(&[(pos, neg)], wp, wn, &slots);
            assert!((e - brute(pos, neg, wp, wn, &slots, 0)).abs() < 1e-12);
        }
    }

    #[test]
    fn sampled_mean_tracks_expectation() {
        let p = ProductivityParams::new(0.25, 0.7, 0.7, 10.0 / 3.0).unwrap();
        let s = productivity_simulate(&p, 100, 100, 4000, 5, SimulationMode::Sampled).unwrap();
        let e = productivity_simulate(&p, 100, 100, 4000, 5, SimulationMode::Expected).unwrap();
        assert!((s.mean - e.mean).abs() < 4.0 * s.std / (4000f64).sqrt());
    }

    #[test]
    fn deterministic_and_capacity_checked() {
        let p = ProductivityParams::new(0.5, 0.8, 0.8, 3.0).unwrap();
        let a = productivity_simulate(&p, 5, 5, 10, 9, SimulationMode::Sampled).unwrap();
        let b = productivity_simulate(&p, 5, 5, 10, 9, SimulationMode::Sampled).unwrap();
        assert_eq!(a, b);
        let big = ProductivityParams::new(0.5, 0.8, 0.8, 11.0).unwrap();
        assert!(matches!(
            productivity_simulate(&big, 5, 5, 10, 9, SimulationMode::Sampled),
            Err(EvalError::CapacityExceedsSet { .. })
        ));
    }
}
