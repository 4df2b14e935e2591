//! Deterministic full-batch linear SVM: L2-regularized hinge loss solved by
//! dual coordinate descent, with the duality gap as stopping certificate.
//!
//! Objective over `n` instances, with the bias folded into the regularizer:
//!
//! ```text
//! lambda/2 * (|w|^2 + b^2) + 1/n * sum_i max(0, 1 - y_i (w.x_i + b))
//! ```

use super::MilError;

#[derive(Debug, Clone, PartialEq)]
pub struct SvmSolution {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub objective: f64,
    /// Primal objective of every accepted (strictly improving) iterate.
    pub objective_trace: Vec<f64>,
    pub duality_gap: f64,
    pub epochs: usize,
}

/// Primal objective evaluated by direct summation.
pub fn svm_objective(instances: &[&[f64]], labels: &[f64], weights: &[f64], bias: f64, lambda: f64) -> f64 {
    let reg = 0.5 * lambda * (weights.iter().map(|w| w * w).sum::<f64>() + bias * bias);
    let loss: f64 = instances
        .iter()
        .zip(labels)
        .map(|(x, y)| (1.0 - y * (dot(weights, x) + bias)).max(0.0))
        .sum();
    reg + loss / instances.len() as f64
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn solve_linear_svm(
    instances: &[&[f64]],
    labels: &[f64],
    lambda: f64,
    tolerance: f64,
    max_epochs: usize,
) -> Result<SvmSolution, MilError> {
    let n = instances.len();
    if n != labels.len() {
        return Err(MilError::DimensionMismatch { expected: n, actual: labels.len() });
    }
    if !labels.iter().any(|&y| y > 0.0) || !labels.iter().any(|&y| y < 0.0) {
        return Err(MilError::SingleClassInput);
    }
    if !(lambda > 0.0) {
        return Err(MilError::BadConfig(format!("lambda must be positive, got {lambda}")));
    }
    let dim = instances[0].len();
    if let Some(x) = instances.iter().find(|x| x.len() != dim) {
        return Err(MilError::DimensionMismatch { expected: dim, actual: x.len() });
    }

    let c = 1.0 / (lambda * n as f64);
    let q: Vec<f64> = instances.iter().map(|x| dot(x, x) + 1.0).collect();
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; dim];
    let mut b = 0.0;

    let mut best_w = w.clone();
    let mut best_b = b;
    let mut best = svm_objective(instances, labels, &w, b, lambda);
    let mut trace = vec![best];
    let mut gap = f64::INFINITY;
    let mut epochs = 0;

    while epochs < max_epochs {
        epochs += 1;
        for i in 0..n {
            let y = labels[i];
            let g = y * (dot(&w, instances[i]) + b) - 1.0;
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= c {
                g.max(0.0)
            } else {
                g
            };
            if pg.abs() <= 1e-15 {
                continue;
            }
            let new = (alpha[i] - g / q[i]).clamp(0.0, c);
            let delta = (new - alpha[i]) * y;
            if delta != 0.0 {
                for (wd, xd) in w.iter_mut().zip(instances[i]) {
                    *wd += delta * xd;
                }
                b += delta;
                alpha[i] = new;
            }
        }
        let primal = svm_objective(instances, labels, &w, b, lambda);
        let norm2 = dot(&w, &w) + b * b;
        let dual = lambda * (alpha.iter().sum::<f64>() - 0.5 * norm2);
        gap = primal - dual;
        if primal < best {
            best = primal;
            best_w.clone_from(&w);
            best_b = b;
            trace.push(primal);
        }
        if gap <= tolerance {
            break;
        }
    }
    Ok(SvmSolution { weights: best_w, bias: best_b, objective: best, objective_trace: trace, duality_gap: gap, epochs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
        v.iter().map(Vec::as_slice).collect()
    }

    #[test]
    fn separable_pair_in_one_dimension() {
        let x = vec![vec![-1.0], vec![1.0]];
        let s = solve_linear_svm(&refs(&x), &[-1.0, 1.0], 0.01, 1e-6, 5000).unwrap();
        assert!(s.weights[0] > 0.0);
        assert!(s.weights[0] * -1.0 + s.bias < 0.0);
        assert!(s.weights[0] + s.bias > 0.0);
    }

    #[test]
    fn duplicated_data_keeps_boundary() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<Vec<f64>> = (0..20).map(|_| vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]).collect();
        let y: Vec<f64> = x.iter().map(|p| if p[0] + 0.3 * p[1] > 0.1 { 1.0 } else { -1.0 }).collect();
        let a = solve_linear_svm(&refs(&x), &y, 0.01, 1e-9, 20000).unwrap();
        let x2: Vec<Vec<f64>> = x.iter().flat_map(|p| [p.clone(), p.clone()]).collect();
        let y2: Vec<f64> = y.iter().flat_map(|&v| [v, v]).collect();
        let b = solve_linear_svm(&refs(&x2), &y2, 0.01, 1e-9, 20000).unwrap();
        for p in &x {
            let fa = dot(&a.weights, p) + a.bias;
            let fb = dot(&b.weights, p) + b.bias;
            assert_eq!(fa > 0.0, fb > 0.0);
        }
        assert!((a.objective - b.objective).abs() < 1e-6);
    }

    #[test]
    fn random_separable_set_reaches_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut x = Vec::new();
        let mut y = Vec::new();
        while x.len() < 40 {
            let p: Vec<f64> = vec![rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
            let m = p[0] - p[1] + 0.5;
            if m.abs() > 2.0 {
                y.push(m.signum());
                x.push(p);
            }
        }
        let lambda = 1e-3;
        let s = solve_linear_svm(&refs(&x), &y, lambda, 1e-9, 50000).unwrap();
        let mut hinge = 0.0;
        for (p, t) in x.iter().zip(&y) {
            hinge += (1.0 - t * (s.weights[0] * p[0] + s.weights[1] * p[1] + s.bias)).max(0.0);
        }
        assert!(hinge < 1e-6, "hinge {hinge}");
        let direct = 0.5 * lambda * (s.weights[0].powi(2) + s.weights[1].powi(2) + s.bias.powi(2)) + hinge / 40.0;
        assert!((direct - s.objective).abs() < 1e-12);
        assert!(s.duality_gap <= 1e-9);
    }

    #[test]
    fn accepted_objectives_never_increase() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x: Vec<Vec<f64>> = (0..30).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let y: Vec<f64> = (0..30).map(|i| if i % 3 == 0 { 1.0 } else { -1.0 }).collect();
        let s = solve_linear_svm(&refs(&x), &y, 0.01, 1e-6, 5000).unwrap();
        assert!(s.objective_trace.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(*s.objective_trace.last().unwrap(), s.objective);
    }

    #[test]
    fn single_class_rejected() {
        let x = vec![vec![1.0], vec![2.0]];
        assert!(matches!(solve_linear_svm(&refs(&x), &[1.0, 1.0], 0.01, 1e-6, 10), Err(MilError::SingleClassInput)));
    }
}
