//! Fleiss' kappa over items rated by a constant number of raters.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::model::Label;

/// Rater counts per item (rows) and category (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementTable {
    counts: Vec<Vec<u64>>,
    raters: u64,
}

impl AgreementTable {
    pub fn new(counts: Vec<Vec<u64>>) -> Result<Self, EvalError> {
        if counts.len() < 2 {
            return Err(EvalError::InvalidTable(format!("need at least 2 items, got {}", counts.len())));
        }
        let cats = counts[0].len();
        if cats < 2 {
            return Err(EvalError::InvalidTable("need at least 2 categories".into()));
        }
        let raters: u64 = counts[0].iter().sum();
        if raters < 2 {
            return Err(EvalError::InvalidTable(format!("need at least 2 raters, got {raters}")));
        }
        for (i, row) in counts.iter().enumerate() {
            if row.len() != cats {
                return Err(EvalError::InvalidTable(format!("row {i} has {} categories, expected {cats}", row.len())));
            }
            let s: u64 = row.iter().sum();
            if s != raters {
                return Err(EvalError::InvalidTable(format!("row {i} sums to {s}, expected {raters}")));
            }
        }
        Ok(AgreementTable { counts, raters })
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn raters(&self) -> u64 {
        self.raters
    }

    pub fn items(&self) -> usize {
        self.counts.len()
    }

    /// Two-category table (positive, negative) from per-coder labels. Only
    /// clips labeled by every coder are counted.
    pub fn from_coder_labels(labels: &BTreeMap<String, BTreeMap<String, Label>>) -> Result<Self, EvalError> {
        let mut coders = labels.values();
        let first = coders.next().ok_or(EvalError::EmptyInput)?;
        let rows = first
            .keys()
            .filter(|clip| labels.values().all(|l| l.contains_key(*clip)))
            .map(|clip| {
                let pos = labels.values().filter(|l| l[clip] == Label::Positive).count() as u64;
                vec![pos, labels.len() as u64 - pos]
            })
            .collect();
        Self::new(rows)
    }

    /// CSV with header `clipId,coder1,...,coderN` and `pos`/`neg` cells.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, EvalError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let mut pos = 0;
            let mut neg = 0;
            for cell in rec.iter().skip(1) {
                match cell.parse::<Label>() {
                    Ok(Label::Positive) => pos += 1,
                    Ok(Label::Negative) => neg += 1,
                    Err(_) => return Err(EvalError::InvalidTable(format!("bad label {cell:?}"))),
                }
            }
            rows.push(vec![pos, neg]);
        }
        Self::new(rows)
    }
}

pub fn fleiss_kappa(table: &AgreementTable) -> Result<f64, EvalError> {
    let n = table.raters;
    let items = table.items() as f64;
    let cats = table.counts[0].len();
    let mut p_bar = 0.0;
    let mut totals = vec![0u64; cats];
    for row in &table.counts {
        let sq: u64 = row.iter().map(|c| c * c).sum();
        p_bar += (sq - n) as f64 / (n * (n - 1)) as f64;
        for (t, c) in totals.iter_mut().zip(row) {
            *t += c;
        }
    }
    p_bar /= items;
    let denom = (table.items() as u64 * n) as f64;
    let p_e: f64 = totals.iter().map(|&t| (t as f64 / denom).powi(2)).sum();
    if p_e == 1.0 {
        return if p_bar == 1.0 { Ok(1.0) } else { Err(EvalError::DegenerateExpectedAgreement) };
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}
