//! Diverse density with the noisy-OR bag model.
//!
//! ```text
//! P(x)  = exp(-sum_d s_d^2 (x_d - t_d)^2)
//! P_bag = 1 - prod_j (1 - P(x_j))
//! L     = sum_pos log P_bag + sum_neg log(1 - P_bag)
//! ```

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{prepare, InitialScaling, MilConfig, MilError};
use crate::model::{Bag, Label, Normalizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConceptPointModel {
    pub target: Vec<f64>,
    pub scalings: Vec<f64>,
    pub normalizer: Normalizer,
    pub log_likelihood: f64,
    pub config: MilConfig,
    pub trace: DdTrace,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DdTrace {
    /// Index of each restart's starting instance in the flattened positive pool.
    pub restart_starts: Vec<usize>,
    pub restart_objectives: Vec<f64>,
    pub restart_iterations: Vec<usize>,
    pub best_restart: usize,
}

impl ConceptPointModel {
    pub fn instance_probability(&self, x: &[f64]) -> f64 {
        instance_probability(x, &self.target, &self.scalings)
    }

    /// Unclamped noisy-OR probability over normalized instances.
    pub fn bag_probability<'a>(&self, instances: impl IntoIterator<Item = &'a [f64]>) -> f64 {
        let log_q: f64 = instances.into_iter().map(|x| (-self.instance_probability(x)).ln_1p()).sum();
        -log_q.exp_m1()
    }
}

pub fn instance_probability(x: &[f64], t: &[f64], s: &[f64]) -> f64 {
    (-sq_distance(x, t, s)).exp()
}

fn sq_distance(x: &[f64], t: &[f64], s: &[f64]) -> f64 {
    x.iter().zip(t).zip(s).map(|((x, t), s)| s * s * (x - t) * (x - t)).sum()
}

/// A labeled bag of normalized instances, as seen by the objective.
#[derive(Debug, Clone)]
pub struct DdBag {
    pub instances: Vec<Vec<f64>>,
    pub positive: bool,
}

/// Log-likelihood and its gradient with respect to `t` and `s`.
/// Bags whose probability falls outside `[eps, 1 - eps]` contribute the
/// clamped constant and no gradient.
pub fn log_likelihood_and_gradient(bags: &[DdBag], t: &[f64], s: &[f64], eps: f64) -> (f64, Vec<f64>, Vec<f64>) {
    let dim = t.len();
    let mut value = 0.0;
    let mut gt = vec![0.0; dim];
    let mut gs = vec![0.0; dim];
    let mut probs = Vec::new();
    for bag in bags {
        probs.clear();
        probs.extend(bag.instances.iter().map(|x| instance_probability(x, t, s)));
        let log_q: f64 = probs.iter().map(|p| (-p).ln_1p()).sum();
        let q = log_q.exp();
        let p_bag = -log_q.exp_m1();
        if p_bag < eps {
            value += if bag.positive { eps.ln() } else { (1.0 - eps).ln() };
            continue;
        }
        if p_bag > 1.0 - eps {
            value += if bag.positive { (1.0 - eps).ln() } else { eps.ln() };
            continue;
        }
        // d(value)/dp_j for each instance
        let coef: Box<dyn Fn(f64) -> f64> = if bag.positive {
            value += p_bag.ln();
            Box::new(move |p: f64| q / ((1.0 - p) * p_bag))
        } else {
            value += log_q;
            Box::new(|p: f64| -1.0 / (1.0 - p))
        };
        for (x, &p) in bag.instances.iter().zip(&probs) {
            let c = coef(p) * p;
            if c == 0.0 {
                continue;
            }
            for d in 0..dim {
                let diff = x[d] - t[d];
                gt[d] += c * 2.0 * s[d] * s[d] * diff;
                gs[d] -= c * 2.0 * s[d] * diff * diff;
            }
        }
    }
    (value, gt, gs)
}

pub fn log_likelihood(bags: &[DdBag], t: &[f64], s: &[f64], eps: f64) -> f64 {
    let mut value = 0.0;
    for bag in bags {
        let log_q: f64 = bag.instances.iter().map(|x| (-instance_probability(x, t, s)).ln_1p()).sum();
        let p = (-log_q.exp_m1()).clamp(eps, 1.0 - eps);
        value += if bag.positive { p.ln() } else { (1.0 - p).ln() };
    }
    value
}

#[derive(Debug, Clone, PartialEq)]
pub struct AscentRun {
    pub target: Vec<f64>,
    pub scalings: Vec<f64>,
    pub objective: f64,
    /// Objective after every accepted step, starting with the initial value.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

/// Gradient ascent with Armijo backtracking from `(t0, s0)`.
pub fn ascend(bags: &[DdBag], t0: Vec<f64>, s0: Vec<f64>, config: &MilConfig) -> AscentRun {
    let eps = config.probability_clamp;
    let dim = t0.len();
    let mut t = t0;
    let mut s = s0;
    let (mut value, mut gt, mut gs) = log_likelihood_and_gradient(bags, &t, &s, eps);
    let mut trace = vec![value];
    let mut step = config.dd_initial_step;
    let mut iterations = 0;
    let mut ct = vec![0.0; dim];
    let mut cs = vec![0.0; dim];
    while iterations < config.dd_max_iterations {
        let g2: f64 = gt.iter().chain(&gs).map(|g| g * g).sum();
        if g2.sqrt() <= config.dd_tolerance {
            break;
        }
        let mut accepted = None;
        while step > 1e-14 {
            for d in 0..dim {
                ct[d] = t[d] + step * gt[d];
                cs[d] = s[d] + step * gs[d];
            }
            let v = log_likelihood(bags, &ct, &cs, eps);
            if v >= value + config.dd_armijo * step * g2 {
                accepted = Some(v);
                break;
            }
            step *= config.dd_backtrack;
        }
        let Some(v) = accepted else { break };
        iterations += 1;
        let gain = v - value;
        std::mem::swap(&mut t, &mut ct);
        std::mem::swap(&mut s, &mut cs);
        (value, gt, gs) = log_likelihood_and_gradient(bags, &t, &s, eps);
        trace.push(value);
        step = (step / config.dd_backtrack).min(1e6);
        if gain <= config.dd_tolerance * (1.0 + value.abs()) {
            break;
        }
    }
    AscentRun { target: t, scalings: s, objective: value, objective_trace: trace, iterations }
}

fn initial_scale(config: &MilConfig, active_dims: usize) -> f64 {
    match config.dd_initial_scaling {
        InitialScaling::Ones => 1.0,
        InitialScaling::InverseSqrtDim => 1.0 / (active_dims.max(1) as f64).sqrt(),
    }
}

pub fn train_dd(bags: &[Bag], config: &MilConfig) -> Result<ConceptPointModel, MilError> {
    config.validate()?;
    let set = prepare(bags)?;
    let dim = set.normalizer.dim();
    // dimensions constant over the training pool normalize to zero everywhere
    // and never affect the objective
    let active: Vec<usize> = (0..dim).filter(|&d| set.normalizer.std[d] > 0.0).collect();
    let project = |x: &Vec<f64>| active.iter().map(|&d| x[d]).collect::<Vec<f64>>();
    let dd_bags: Vec<DdBag> = set
        .bags
        .iter()
        .zip(&set.labels)
        .map(|(b, l)| DdBag { instances: b.iter().map(project).collect(), positive: *l == Label::Positive })
        .collect();

    let starts: Vec<&Vec<f64>> = dd_bags.iter().filter(|b| b.positive).flat_map(|b| &b.instances).collect();
    let mut chosen: Vec<usize> = if starts.len() > config.dd_restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        sample(&mut rng, starts.len(), config.dd_restarts).into_vec()
    } else {
        (0..starts.len()).collect()
    };
    chosen.sort_unstable();

    let runs: Vec<AscentRun> = chosen
        .par_iter()
        .map(|&i| ascend(&dd_bags, starts[i].clone(), vec![initial_scale(config, active.len()); active.len()], config))
        .collect();
    let mut best = 0;
    for (i, r) in runs.iter().enumerate() {
        if r.objective > runs[best].objective {
            best = i;
        }
    }

    let mut target = vec![0.0; dim];
    let mut scalings = vec![1.0; dim];
    for (k, &d) in active.iter().enumerate() {
        target[d] = runs[best].target[k];
        scalings[d] = runs[best].scalings[k];
    }
    let trace = DdTrace {
        restart_starts: chosen,
        restart_objectives: runs.iter().map(|r| r.objective).collect(),
        restart_iterations: runs.iter().map(|r| r.iterations).collect(),
        best_restart: best,
    };
    Ok(ConceptPointModel {
        target,
        scalings,
        normalizer: set.normalizer,
        log_likelihood: runs[best].objective,
        config: config.clone(),
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mil::testutil::bag;
    use crate::mil::{predict_bag, MilModel};
    use proptest::prelude::*;
    use rand::Rng;

    fn random_bags(rng: &mut ChaCha8Rng, dim: usize) -> Vec<DdBag> {
        (0..rng.gen_range(2..5))
            .map(|i| DdBag {
                instances: (0..rng.gen_range(1..4)).map(|_| (0..dim).map(|_| rng.gen_range(-1.5..1.5)).collect()).collect(),
                positive: i % 2 == 0,
            })
            .collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = na.max(nb);
        if scale < 1e-10 {
            diff
        } else {
            diff / scale
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-5;
        for _ in 0..50 {
            let bags = random_bags(&mut rng, 3);
            let t: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let s: Vec<f64> = (0..3).map(|_| rng.gen_range(0.3..1.5)).collect();
            let (_, gt, gs) = log_likelihood_and_gradient(&bags, &t, &s, 1e-12);
            let mut analytic = gt.clone();
            analytic.extend(&gs);
            let mut numeric = Vec::new();
            for which in 0..2 {
                for d in 0..3 {
                    let (mut tp, mut sp) = (t.clone(), s.clone());
                    let (mut tm, mut sm) = (t.clone(), s.clone());
                    if which == 0 {
                        tp[d] += h;
                        tm[d] -= h;
                    } else {
                        sp[d] += h;
                        sm[d] -= h;
                    }
                    let f = |t: &[f64], s: &[f64]| log_likelihood(&bags, t, s, 1e-12);
                    numeric.push((f(&tp, &sp) - f(&tm, &sm)) / (2.0 * h));
                }
            }
            assert!(rel_err(&analytic, &numeric) <= 1e-4, "{analytic:?} vs {numeric:?}");
        }
    }

    #[test]
    fn value_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bags = random_bags(&mut rng, 4);
        let t = vec![0.1, -0.2, 0.3, 0.0];
        let s = vec![1.0; 4];
        let (v, _, _) = log_likelihood_and_gradient(&bags, &t, &s, 1e-12);
        assert!((v - log_likelihood(&bags, &t, &s, 1e-12)).abs() < 1e-12);
    }

    #[test]
    fn certain_witness_gives_probability_one() {
        let m = ConceptPointModel {
            target: vec![0.5, -1.0],
            scalings: vec![2.0, 3.0],
            normalizer: Normalizer { mean: vec![0.0; 2], std: vec![1.0; 2] },
            log_likelihood: 0.0,
            config: MilConfig::default(),
            trace: DdTrace::default(),
        };
        let inst = [vec![0.5, -1.0], vec![4.0, 4.0]];
        assert_eq!(m.bag_probability(inst.iter().map(Vec::as_slice)), 1.0);
    }

    #[test]
    fn planted_concept_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = vec![1.0, 2.0, -1.0];
        let mut bags = Vec::new();
        for i in 0..5 {
            let mut pts = vec![p.clone()];
            pts.push((0..3).map(|_| rng.gen_range(-8.0..8.0)).collect());
            bags.push(bag(&format!("p{i}"), Some(Label::Positive), &pts));
        }
        for i in 0..5 {
            let pts: Vec<Vec<f64>> = (0..2).map(|_| (0..3).map(|_| rng.gen_range(6.0..10.0)).collect()).collect();
            bags.push(bag(&format!("n{i}"), Some(Label::Negative), &pts));
        }
        let pn = |m: &ConceptPointModel| m.normalizer.apply(&p).unwrap();
        // unit start: t lands on p in every coordinate
        let ones = MilConfig {
            algorithm: crate::mil::Algorithm::DiverseDensity,
            dd_initial_scaling: crate::mil::InitialScaling::Ones,
            ..Default::default()
        };
        let m = train_dd(&bags, &ones).unwrap();
        for (d, want) in pn(&m).iter().enumerate() {
            assert!((m.target[d] - want).abs() < 1e-3, "dim {d}: {} vs {want}", m.target[d]);
        }
        // default start may find a higher likelihood that switches a
        // dimension off; t must still match p wherever the scaling is live
        let default = MilConfig { algorithm: crate::mil::Algorithm::DiverseDensity, ..Default::default() };
        let md = train_dd(&bags, &default).unwrap();
        assert!(md.log_likelihood >= m.log_likelihood - 1e-9);
        for (d, want) in pn(&md).iter().enumerate() {
            let off = (md.target[d] - want).abs() * md.scalings[d].abs().min(1.0);
            assert!(off < 1e-3, "dim {d}: t {} vs {want}, s {}", md.target[d], md.scalings[d]);
        }
        for m in [m, md] {
            let best = m.trace.restart_objectives[m.trace.best_restart];
            assert!(m.trace.restart_objectives.iter().all(|&o| o <= best));
            let model = MilModel::DiverseDensity(m);
            for b in &bags {
                assert_eq!(predict_bag(&model, b).unwrap().0, b.label.unwrap());
            }
        }
    }

    #[test]
    fn ascent_trace_non_decreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bags = random_bags(&mut rng, 3);
        let start = bags[0].instances[0].clone();
        let run = ascend(&bags, start, vec![1.0; 3], &MilConfig::default());
        assert!(run.objective_trace.windows(2).all(|w| w[1] >= w[0]));
    }

    proptest! {
        #[test]
        fn adding_instance_never_lowers_probability(
            base in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), 1..5),
            extra in prop::collection::vec(-3.0f64..3.0, 2),
            t in prop::collection::vec(-2.0f64..2.0, 2),
            s in prop::collection::vec(-2.0f64..2.0, 2),
        ) {
            let m = ConceptPointModel {
                target: t,
                scalings: s,
                normalizer: Normalizer { mean: vec![0.0; 2], std: vec![1.0; 2] },
                log_likelihood: 0.0,
                config: MilConfig::default(),
                trace: DdTrace::default(),
            };
            let before = m.bag_probability(base.iter().map(Vec::as_slice));
            let after = m.bag_probability(base.iter().chain(std::iter::once(&extra)).map(Vec::as_slice));
            prop_assert!(after >= before);
        }

        #[test]
        fn label_invariant_under_instance_permutation(
            pts in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), 1..6),
            rot in 0usize..6,
        ) {
            let m = MilModel::DiverseDensity(ConceptPointModel {
                target: vec![0.2, 0.4],
                scalings: vec![1.0, 0.7],
                normalizer: Normalizer { mean: vec![0.0; 2], std: vec![1.0; 2] },
                log_likelihood: 0.0,
                config: MilConfig::default(),
                trace: DdTrace::default(),
            });
            let mut rotated = pts.clone();
            rotated.rotate_left(rot % pts.len());
            let a = predict_bag(&m, &bag("a", None, &pts)).unwrap().0;
            let b = predict_bag(&m, &bag("a", None, &rotated)).unwrap().0;
            prop_assert_eq!(a, b);
        }
    }
}
