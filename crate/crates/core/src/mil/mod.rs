//! Multiple-instance learners over bags of principal shots.

pub mod dd;
pub mod misvm;
pub mod svm;

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{fit_normalizer, Bag, Label, ModelError, Normalizer};

pub use dd::{train_dd, ConceptPointModel, DdTrace};
pub use misvm::{train_misvm, LinearWitnessModel, MisvmTrace};
pub use svm::{solve_linear_svm, SvmSolution};

#[derive(Debug, Error)]
pub enum MilError {
    #[error("training set needs at least one positive and one negative bag")]
    MissingClass,
    #[error("solver needs instances of both signs")]
    SingleClassInput,
    #[error("bag {0:?} has no instances")]
    EmptyBag(String),
    #[error("bag {0:?} has no label")]
    Unlabeled(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Algorithm {
    MiSvm,
    DiverseDensity,
}

impl std::str::FromStr for Algorithm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "miSvm" | "misvm" | "mi-svm" => Ok(Algorithm::MiSvm),
            "diverseDensity" | "dd" | "diverse-density" => Ok(Algorithm::DiverseDensity),
            other => Err(format!("unknown algorithm {other:?}")),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::MiSvm => "miSvm",
            Algorithm::DiverseDensity => "diverseDensity",
        })
    }
}

/// Starting value of every scaling `s_d` in diverse-density restarts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum InitialScaling {
    /// `s_d = 1`.
    Ones,
    /// `s_d = 1 / sqrt(D)` over the `D` non-constant dimensions, so the initial
    /// squared distance is a per-dimension average and does not underflow
    /// the instance probability in high dimension.
    InverseSqrtDim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct MilConfig {
    pub algorithm: Algorithm,
    pub lambda: f64,
    pub max_outer_iterations: usize,
    pub solver_tolerance: f64,
    pub solver_max_iterations: usize,
    /// Upper bound on restarts; one restart per positive-bag instance otherwise.
    pub dd_restarts: usize,
    pub dd_max_iterations: usize,
    pub dd_initial_scaling: InitialScaling,
    pub dd_initial_step: f64,
    pub dd_armijo: f64,
    pub dd_backtrack: f64,
    pub dd_tolerance: f64,
    pub probability_clamp: f64,
    pub seed: u64,
}

impl Default for MilConfig {
    fn default() -> Self {
        MilConfig {
            algorithm: Algorithm::MiSvm,
            lambda: 0.01,
            max_outer_iterations: 20,
            solver_tolerance: 1e-6,
            solver_max_iterations: 5000,
            dd_restarts: 50,
            dd_max_iterations: 500,
            dd_initial_scaling: InitialScaling::InverseSqrtDim,
            dd_initial_step: 1.0,
            dd_armijo: 1e-4,
            dd_backtrack: 0.5,
            dd_tolerance: 1e-6,
            probability_clamp: 1e-12,
            seed: 0,
        }
    }
}

impl MilConfig {
    pub fn validate(&self) -> Result<(), MilError> {
        let bad = |m: &str| Err(MilError::BadConfig(m.to_string()));
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be positive");
        }
        if !(self.probability_clamp > 0.0 && self.probability_clamp <= 1e-6) {
            return bad("probabilityClamp must lie in (0, 1e-6]");
        }
        if self.max_outer_iterations == 0 || self.solver_max_iterations == 0 {
            return bad("iteration limits must be positive");
        }
        if self.dd_restarts == 0 {
            return bad("ddRestarts must be positive");
        }
        if !(self.dd_backtrack > 0.0 && self.dd_backtrack < 1.0) {
            return bad("ddBacktrack must lie in (0, 1)");
        }
        if !(self.dd_initial_step > 0.0) || !(self.dd_armijo > 0.0 && self.dd_armijo < 1.0) {
            return bad("line-search parameters out of range");
        }
        Ok(())
    }
}

/// A trained bag classifier. Serializes to the model file layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "camelCase")]
pub enum MilModel {
    MiSvm(LinearWitnessModel),
    DiverseDensity(ConceptPointModel),
}

impl MilModel {
    pub fn algorithm(&self) -> Algorithm {
        match self {
            MilModel::MiSvm(_) => Algorithm::MiSvm,
            MilModel::DiverseDensity(_) => Algorithm::DiverseDensity,
        }
    }

    pub fn normalizer(&self) -> &Normalizer {
        match self {
            MilModel::MiSvm(m) => &m.normalizer,
            MilModel::DiverseDensity(m) => &m.normalizer,
        }
    }

    pub fn dim(&self) -> usize {
        self.normalizer().dim()
    }

    pub fn threshold(&self) -> f64 {
        match self {
            MilModel::MiSvm(_) => 0.0,
            MilModel::DiverseDensity(_) => 0.5,
        }
    }

    /// Score of one normalized instance.
    pub fn instance_score(&self, x: &[f64]) -> f64 {
        match self {
            MilModel::MiSvm(m) => m.instance_score(x),
            MilModel::DiverseDensity(m) => m.instance_probability(x),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, MilError> {
        serde_json::from_str(s).map_err(|e| MilError::Model(ModelError::Parse(e.to_string())))
    }

    pub fn save(&self, path: &Path) -> Result<(), MilError> {
        std::fs::write(path, self.to_json()).map_err(|e| MilError::Model(e.into()))
    }

    pub fn load(path: &Path) -> Result<Self, MilError> {
        let s = std::fs::read_to_string(path).map_err(|e| MilError::Model(e.into()))?;
        Self::from_json(&s)
    }
}

/// Instances of training bags, normalized, plus the bag labels.
pub(crate) struct TrainingSet {
    pub normalizer: Normalizer,
    pub bags: Vec<Vec<Vec<f64>>>,
    pub labels: Vec<Label>,
}

pub(crate) fn prepare(bags: &[Bag]) -> Result<TrainingSet, MilError> {
    let mut labels = Vec::with_capacity(bags.len());
    for b in bags {
        if b.instances.is_empty() {
            return Err(MilError::EmptyBag(b.clip_id.clone()));
        }
        labels.push(b.label.ok_or_else(|| MilError::Unlabeled(b.clip_id.clone()))?);
    }
    if !labels.contains(&Label::Positive) || !labels.contains(&Label::Negative) {
        return Err(MilError::MissingClass);
    }
    let normalizer = fit_normalizer(bags.iter().flat_map(Bag::instance_vectors))?;
    let normalized = bags
        .iter()
        .map(|b| b.instance_vectors().map(|x| normalizer.apply(x)).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TrainingSet { normalizer, bags: normalized, labels })
}

pub fn train(bags: &[Bag], config: &MilConfig) -> Result<MilModel, MilError> {
    config.validate()?;
    Ok(match config.algorithm {
        Algorithm::MiSvm => MilModel::MiSvm(train_misvm(bags, config)?),
        Algorithm::DiverseDensity => MilModel::DiverseDensity(train_dd(bags, config)?),
    })
}

/// Bag-level prediction: the score and the thresholded label.
pub fn predict_bag(model: &MilModel, bag: &Bag) -> Result<(Label, f64), MilError> {
    let score = bag_score(model, bag)?;
    Ok((Label::from_bool(score > model.threshold()), score))
}

pub fn bag_score(model: &MilModel, bag: &Bag) -> Result<f64, MilError> {
    let norm = model.normalizer();
    let mut xs = Vec::with_capacity(bag.instances.len());
    for v in bag.instance_vectors() {
        if v.len() != norm.dim() {
            return Err(MilError::DimensionMismatch { expected: norm.dim(), actual: v.len() });
        }
        xs.push(norm.apply(v)?);
    }
    Ok(match model {
        MilModel::MiSvm(m) => xs.iter().map(|x| m.instance_score(x)).fold(f64::NEG_INFINITY, f64::max),
        MilModel::DiverseDensity(m) => m.bag_probability(xs.iter().map(Vec::as_slice)),
    })
}

/// Descending score, ties by clip id.
pub fn rank_bags(model: &MilModel, bags: &[Bag]) -> Result<Vec<(String, f64)>, MilError> {
    let mut out = bags
        .iter()
        .map(|b| Ok((b.clip_id.clone(), bag_score(model, b)?)))
        .collect::<Result<Vec<_>, MilError>>()?;
    out.sort_by(|a, b| order_scores(a.1, b.1).then_with(|| a.0.cmp(&b.0)));
    Ok(out)
}

fn order_scores(a: f64, b: f64) -> Ordering {
    b.total_cmp(&a)
}
