//! mi-SVM style alternating scheme: impute instance labels inside positive
//! bags, refit a linear SVM, repeat until the imputation is stable.

use serde::{Deserialize, Serialize};

use super::svm::{dot, solve_linear_svm};
use super::{prepare, MilConfig, MilError};
use crate::model::{Bag, Label, Normalizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LinearWitnessModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub normalizer: Normalizer,
    pub config: MilConfig,
    pub trace: MisvmTrace,
}

impl LinearWitnessModel {
    /// Margin of an already normalized instance.
    pub fn instance_score(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MisvmTrace {
    pub outer_iterations: usize,
    pub converged: bool,
    /// Imputed labels (+1/-1) per bag and instance after each outer iteration;
    /// entry 0 is the initialization.
    pub label_history: Vec<Vec<Vec<i8>>>,
    pub solver_objectives: Vec<f64>,
}

impl MisvmTrace {
    pub fn final_labels(&self) -> Option<&Vec<Vec<i8>>> {
        self.label_history.last()
    }
}

pub fn train_misvm(bags: &[Bag], config: &MilConfig) -> Result<LinearWitnessModel, MilError> {
    config.validate()?;
    let set = prepare(bags)?;
    let dim = set.normalizer.dim();
    let flat: Vec<&[f64]> = set.bags.iter().flatten().map(Vec::as_slice).collect();

    let mut labels: Vec<Vec<i8>> = set
        .bags
        .iter()
        .zip(&set.labels)
        .map(|(b, l)| vec![if *l == Label::Positive { 1 } else { -1 }; b.len()])
        .collect();
    let mut trace = MisvmTrace { label_history: vec![labels.clone()], ..Default::default() };
    let mut weights = vec![0.0; dim];
    let mut bias = 0.0;

    for _ in 0..config.max_outer_iterations {
        let y: Vec<f64> = labels.iter().flatten().map(|&l| l as f64).collect();
        let sol = solve_linear_svm(&flat, &y, config.lambda, config.solver_tolerance, config.solver_max_iterations)?;
        weights = sol.weights;
        bias = sol.bias;
        trace.outer_iterations += 1;
        trace.solver_objectives.push(sol.objective);

        let next: Vec<Vec<i8>> = set
            .bags
            .iter()
            .zip(&set.labels)
            .map(|(b, l)| impute(b, *l, &weights, bias))
            .collect();
        trace.label_history.push(next.clone());
        if next == labels {
            trace.converged = true;
            break;
        }
        labels = next;
    }

    Ok(LinearWitnessModel { weights, bias, normalizer: set.normalizer, config: config.clone(), trace })
}

fn impute(instances: &[Vec<f64>], label: Label, w: &[f64], b: f64) -> Vec<i8> {
    if label == Label::Negative {
        return vec![-1; instances.len()];
    }
    let scores: Vec<f64> = instances.iter().map(|x| dot(w, x) + b).collect();
    let mut out: Vec<i8> = scores.iter().map(|&s| if s > 0.0 { 1 } else { -1 }).collect();
    if !out.contains(&1) {
        // witness rule: the best-scoring instance stays positive
        let mut best = 0;
        for (i, s) in scores.iter().enumerate() {
            if *s > scores[best] {
                best = i;
            }
        }
        out[best] = 1;
    }
    out
}
