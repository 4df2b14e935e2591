use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{mean_std, EvalError};
use crate::mil::{predict_bag, train, MilConfig};
use crate::model::{Bag, Label};

/// Resampling attempts before a split is forced to contain both classes.
const MAX_SPLIT_ATTEMPTS: usize = 1000;

pub fn accuracy(predictions: &[Label], labels: &[Label]) -> Result<f64, EvalError> {
    if predictions.len() != labels.len() {
        return Err(EvalError::LengthMismatch(predictions.len(), labels.len()));
    }
    if labels.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ReplicationReport {
    pub per_replication_accuracy: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub train_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CurvePoint {
    pub size: usize,
    pub mean: f64,
    pub std: f64,
    pub per_replication_accuracy: Vec<f64>,
}

fn labeled(bags: &[Bag]) -> Result<Vec<&Bag>, EvalError> {
    let out: Vec<&Bag> = bags.iter().filter(|b| b.label.is_some()).collect();
    if out.len() < 4 {
        return Err(EvalError::TooFewBags { needed: 4, have: out.len() });
    }
    let pos = out.iter().any(|b| b.label == Some(Label::Positive));
    let neg = out.iter().any(|b| b.label == Some(Label::Negative));
    if !(pos && neg) {
        return Err(EvalError::SingleClassDataset);
    }
    Ok(out)
}

/// Random split with `train_size` training bags containing both classes.
/// Splits are redrawn until the training side is two-class.
fn split(bags: &[&Bag], train_size: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..bags.len()).collect();
    let two_class = |train: &[usize]| {
        let pos = train.iter().filter(|&&i| bags[i].label == Some(Label::Positive)).count();
        pos > 0 && pos < train.len()
    };
    for _ in 0..MAX_SPLIT_ATTEMPTS {
        idx.shuffle(rng);
        if two_class(&idx[..train_size]) {
            let test = idx[train_size..].to_vec();
            return (idx[..train_size].to_vec(), test);
        }
    }
    // extremely unbalanced data: put one bag of each class up front
    let p = idx.iter().position(|&i| bags[i].label == Some(Label::Positive)).unwrap();
    idx.swap(0, p);
    let n = idx.iter().position(|&i| bags[i].label == Some(Label::Negative)).unwrap();
    idx.swap(1, n);
    (idx[..train_size].to_vec(), idx[train_size..].to_vec())
}

fn run_once(bags: &[&Bag], train_size: usize, rng: &mut ChaCha8Rng, cfg: &MilConfig) -> Result<f64, EvalError> {
    let (tr, te) = split(bags, train_size, rng);
    let train_bags: Vec<Bag> = tr.iter().map(|&i| bags[i].clone()).collect();
    let model = train(&train_bags, cfg)?;
    let mut preds = Vec::with_capacity(te.len());
    let mut truth = Vec::with_capacity(te.len());
    for &i in &te {
        preds.push(predict_bag(&model, bags[i])?.0);
        truth.push(bags[i].label.unwrap());
    }
    accuracy(&preds, &truth)
}

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Repeated equal-sized random train/test splits.
pub fn replicate(bags: &[Bag], cfg: &MilConfig, replications: usize, seed: u64) -> Result<ReplicationReport, EvalError> {
    let pool = labeled(bags)?;
    if replications == 0 {
        return Err(EvalError::EmptyInput);
    }
    let train_size = pool.len() / 2;
    let accs: Vec<f64> = (0..replications)
        .into_par_iter()
        .map(|r| run_once(&pool, train_size, &mut stream(seed, r as u64), cfg))
        .collect::<Result<_, _>>()?;
    let (mean, std) = mean_std(&accs);
    Ok(ReplicationReport {
        per_replication_accuracy: accs,
        mean,
        std,
        train_size,
        test_size: pool.len() - train_size,
        seed,
    })
}

/// Mean/std test accuracy per training-set size; the remaining bags are the test set.
pub fn learning_curve(
    bags: &[Bag],
    cfg: &MilConfig,
    sizes: &[usize],
    replications: usize,
    seed: u64,
) -> Result<Vec<CurvePoint>, EvalError> {
    let pool = labeled(bags)?;
    if replications == 0 {
        return Err(EvalError::EmptyInput);
    }
    if let Some(&bad) = sizes.iter().find(|&&s| s < 2 || s >= pool.len()) {
        return Err(EvalError::SizeTooLarge { size: bad, limit: pool.len() });
    }
    sizes
        .iter()
        .map(|&size| {
            let accs: Vec<f64> = (0..replications)
                .into_par_iter()
                .map(|r| run_once(&pool, size, &mut stream(seed, ((size as u64) << 32) | r as u64), cfg))
                .collect::<Result<_, _>>()?;
            let (mean, std) = mean_std(&accs);
            Ok(CurvePoint { size, mean, std, per_replication_accuracy: accs })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FeatureVector, PrincipalShot};
    use rand::Rng;

    fn bag(id: usize, positive: bool, rng: &mut ChaCha8Rng) -> Bag {
        let mut pts: Vec<Vec<f64>> = (0..3).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        if positive {
            pts[1] = vec![6.0 + rng.gen_range(-0.2..0.2), 6.0 + rng.gen_range(-0.2..0.2)];
        }
        Bag {
            clip_id: format!("c{id:02}"),
            instances: pts
                .into_iter()
                .enumerate()
                .map(|(i, p)| PrincipalShot {
                    clip_id: format!("c{id:02}"),
                    shot_id: i,
                    member_indices: vec![i],
                    aggregate: FeatureVector::new(p).unwrap(),
                })
                .collect(),
            label: Some(Label::from_bool(positive)),
            media_ref: None,
        }
    }

    fn dataset(n: usize) -> Vec<Bag> {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        (0..n).map(|i| bag(i, i % 2 == 0, &mut rng)).collect()
    }

    #[test]
    fn accuracy_basics() {
        use Label::*;
        assert_eq!(accuracy(&[Positive, Negative], &[Positive, Negative]).unwrap(), 1.0);
        let truth: Vec<Label> = (0..40).map(|i| Label::from_bool(i % 2 == 0)).collect();
        let half: Vec<Label> = (0..40).map(|i| if i < 20 { truth[i] } else { Label::from_bool(i % 2 == 1) }).collect();
        assert_eq!(accuracy(&half, &truth).unwrap(), 0.5);
        let flipped: Vec<Label> = truth.iter().map(|l| Label::from_bool(!l.is_positive())).collect();
        assert_eq!(accuracy(&flipped, &truth).unwrap(), 0.0);
        assert!(matches!(accuracy(&[], &[]), Err(EvalError::EmptyInput)));
        assert!(matches!(accuracy(&[Positive], &[]), Err(EvalError::LengthMismatch(1, 0))));
    }

    #[test]
    fn separable_data_is_perfect_and_reproducible() {
        let bags = dataset(40);
        let cfg = MilConfig::default();
        let a = replicate(&bags, &cfg, 10, 3).unwrap();
        assert_eq!(a.per_replication_accuracy.len(), 10);
        assert_eq!((a.train_size, a.test_size), (20, 20));
        assert_eq!(a.mean, 1.0);
        let b = replicate(&bags, &cfg, 10, 3).unwrap();
        assert_eq!(a, b);
        let mean = a.per_replication_accuracy.iter().sum::<f64>() / 10.0;
        assert!((mean - a.mean).abs() < 1e-12);
    }

    #[test]
    fn curve_sizes_and_bounds() {
        let bags = dataset(12);
        let cfg = MilConfig::default();
        let c = learning_curve(&bags, &cfg, &[4, 8, 11], 3, 1).unwrap();
        assert_eq!(c.iter().map(|p| p.size).collect::<Vec<_>>(), [4, 8, 11]);
        assert!(matches!(learning_curve(&bags, &cfg, &[12], 3, 1), Err(EvalError::SizeTooLarge { .. })));
    }

    #[test]
    fn splits_always_two_class() {
        let bags = dataset(10);
        let refs: Vec<&Bag> = bags.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let (tr, te) = split(&refs, 2, &mut rng);
            assert_eq!(tr.len() + te.len(), 10);
            let pos = tr.iter().filter(|&&i| refs[i].label == Some(Label::Positive)).count();
            assert_eq!(pos, 1);
        }
    }

    #[test]
    fn single_class_rejected() {
        let mut bags = dataset(6);
        for b in &mut bags {
            b.label = Some(Label::Positive);
        }
        assert!(matches!(replicate(&bags, &MilConfig::default(), 1, 0), Err(EvalError::SingleClassDataset)));
        assert!(matches!(replicate(&bags[..3], &MilConfig::default(), 1, 0), Err(EvalError::TooFewBags { .. })));
    }
}
