//! Coverage, weighted F1 and label quality.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::LabeledExample;
use crate::error::{Error, Result};
use crate::label_model::{argmax, ProbabilisticLabel};
use crate::lf::LabelMatrix;

/// Fraction of rows with at least one non-abstain vote.
pub fn coverage(matrix: &LabelMatrix) -> f64 {
    if matrix.n_rows() == 0 {
        return 0.0;
    }
    let covered = (0..matrix.n_rows()).filter(|&i| matrix.row_covered(i)).count();
    covered as f64 / matrix.n_rows() as f64
}

/// `confusion[gold][pred]` counts.
pub fn confusion_matrix(pred: &[usize], gold: &[usize], classes: usize) -> Vec<Vec<usize>> {
    let mut conf = vec![vec![0usize; classes]; classes];
    for (&p, &g) in pred.iter().zip(gold) {
        conf[g][p] += 1;
    }
    conf
}

fn f1_from_confusion(conf: &[Vec<usize>]) -> (Vec<f64>, f64) {
    let c = conf.len();
    let n: usize = conf.iter().flatten().sum();
    let mut per_class = vec![0.0; c];
    let mut weighted = 0.0;
    for k in 0..c {
        let tp = conf[k][k] as f64;
        let support: usize = conf[k].iter().sum();
        let predicted: usize = conf.iter().map(|row| row[k]).sum();
        let p = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let r = if support == 0 { 0.0 } else { tp / support as f64 };
        per_class[k] = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        if n > 0 {
            weighted += support as f64 / n as f64 * per_class[k];
        }
    }
    (per_class, weighted)
}

/// Per-class F1 and the support-weighted mean.
pub fn weighted_f1(pred: &[usize], gold: &[usize], classes: usize) -> Result<(Vec<f64>, f64)> {
    if pred.len() != gold.len() {
        return Err(Error::LengthMismatch(pred.len(), gold.len()));
    }
    if pred.is_empty() {
        return Err(Error::Precondition("weighted F1 needs at least one item".into()));
    }
    if let Some(&k) = pred.iter().chain(gold).find(|&&k| k >= classes) {
        return Err(Error::UnknownLabel(format!("class index {k} with {classes} classes")));
    }
    Ok(f1_from_confusion(&confusion_matrix(pred, gold, classes)))
}

pub fn label_quality(coverage: f64, weighted_f1: f64) -> f64 {
    coverage * weighted_f1
}

/// Which rows the F1 in a report was computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum F1Scope {
    CoveredRows,
    AllRows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub coverage: f64,
    pub per_class_f1: Vec<f64>,
    pub weighted_f1: f64,
    pub label_quality: f64,
    pub confusion: Vec<Vec<usize>>,
    pub n_evaluated: usize,
    pub f1_scope: F1Scope,
}

impl EvalReport {
    /// Report over every given prediction with an externally supplied coverage.
    pub fn from_predictions(
        pred: &[usize],
        gold: &[usize],
        classes: usize,
        coverage: f64,
    ) -> Result<Self> {
        let (per_class_f1, weighted) = weighted_f1(pred, gold, classes)?;
        Ok(Self {
            coverage,
            per_class_f1,
            weighted_f1: weighted,
            label_quality: label_quality(coverage, weighted),
            confusion: confusion_matrix(pred, gold, classes),
            n_evaluated: pred.len(),
            f1_scope: F1Scope::AllRows,
        })
    }
}

/// Labeling-stage report. Coverage comes from the matrix; F1 is computed on
/// covered rows only, from hard labels, against gold matched by doc id.
pub fn evaluate_labeling(
    matrix: &LabelMatrix,
    probs: &[ProbabilisticLabel],
    gold: &[LabeledExample],
) -> Result<EvalReport> {
    if probs.len() != matrix.n_rows() {
        return Err(Error::LengthMismatch(probs.len(), matrix.n_rows()));
    }
    let covered: Vec<bool> = (0..matrix.n_rows()).map(|i| matrix.row_covered(i)).collect();
    report_over_covered(&matrix.row_ids, probs, &covered, gold)
}

/// Same report from exported labels, trusting their `covered` flags.
pub fn evaluate_labels(
    row_ids: &[String],
    probs: &[ProbabilisticLabel],
    gold: &[LabeledExample],
) -> Result<EvalReport> {
    if probs.len() != row_ids.len() {
        return Err(Error::LengthMismatch(probs.len(), row_ids.len()));
    }
    let covered: Vec<bool> = probs.iter().map(|p| p.covered).collect();
    report_over_covered(row_ids, probs, &covered, gold)
}

fn report_over_covered(
    row_ids: &[String],
    probs: &[ProbabilisticLabel],
    covered: &[bool],
    gold: &[LabeledExample],
) -> Result<EvalReport> {
    let classes = probs.first().map_or(0, |p| p.dist.len());
    let by_id: BTreeMap<&str, usize> = gold.iter().map(|e| (e.doc.id.as_str(), e.gold)).collect();
    if by_id.len() != row_ids.len() {
        return Err(Error::IdAlignment(format!(
            "{} gold labels for {} rows",
            by_id.len(),
            row_ids.len()
        )));
    }
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for (i, id) in row_ids.iter().enumerate() {
        let g = *by_id
            .get(id.as_str())
            .ok_or_else(|| Error::IdAlignment(format!("no gold label for {id:?}")))?;
        if covered[i] {
            pred.push(argmax(&probs[i].dist));
            truth.push(g);
        }
    }
    let cov = if row_ids.is_empty() {
        0.0
    } else {
        covered.iter().filter(|&&c| c).count() as f64 / row_ids.len() as f64
    };
    let (per_class_f1, weighted, confusion) = if pred.is_empty() {
        (vec![0.0; classes], 0.0, vec![vec![0; classes]; classes])
    } else {
        let (pc, w) = weighted_f1(&pred, &truth, classes)?;
        (pc, w, confusion_matrix(&pred, &truth, classes))
    };
    Ok(EvalReport {
        coverage: cov,
        per_class_f1,
        weighted_f1: weighted,
        label_quality: label_quality(cov, weighted),
        confusion,
        n_evaluated: pred.len(),
        f1_scope: F1Scope::CoveredRows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub dataset: String,
    pub label_model: String,
    pub coverage: f64,
    pub weighted_f1: f64,
    pub label_quality: f64,
    pub e2e_f1: Option<f64>,
    pub config_hash: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

/// Appends one summary row, writing the header when the file is new.
pub fn append_ledger_row(path: &Path, row: &LedgerRow) -> Result<()> {
    let fresh = !path.exists() || std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    w.serialize(row)?;
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
