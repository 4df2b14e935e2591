//! JSON and flat CSV report files.

use std::path::Path;

use serde::Serialize;

use super::{CurvePoint, EvalError, ReplicationReport, SimulationReport, TheoreticProductivity};

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), EvalError> {
    std::fs::write(path, to_json(value))?;
    Ok(())
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct ReplicationRow {
    replication: usize,
    accuracy: f64,
}

pub fn write_replication_csv(path: &Path, report: &ReplicationReport) -> Result<(), EvalError> {
    write_rows(
        path,
        report.per_replication_accuracy.iter().enumerate().map(|(replication, &accuracy)| ReplicationRow { replication, accuracy }),
    )
}

#[derive(Serialize)]
struct CurveRow {
    size: usize,
    mean: f64,
    std: f64,
}

pub fn write_curve_csv(path: &Path, points: &[CurvePoint]) -> Result<(), EvalError> {
    write_rows(path, points.iter().map(|p| CurveRow { size: p.size, mean: p.mean, std: p.std }))
}

/// One row per parameter combination.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ProductivityRow {
    pub base_rate: f64,
    pub true_positive_rate: f64,
    pub true_negative_rate: f64,
    pub capacity: f64,
    pub expected_random: f64,
    pub expected_filtered: f64,
    pub simulated_mean: Option<f64>,
    pub simulated_std: Option<f64>,
}

impl ProductivityRow {
    pub fn new(t: &TheoreticProductivity, sim: Option<&SimulationReport>, p: &super::ProductivityParams) -> Self {
        ProductivityRow {
            base_rate: p.base_rate,
            true_positive_rate: p.true_positive_rate,
            true_negative_rate: p.true_negative_rate,
            capacity: p.capacity,
            expected_random: t.expected_random,
            expected_filtered: t.expected_filtered,
            simulated_mean: sim.map(|s| s.mean),
            simulated_std: sim.map(|s| s.std),
        }
    }
}

pub fn write_productivity_csv(path: &Path, rows: &[ProductivityRow]) -> Result<(), EvalError> {
    write_rows(path, rows)
}
