//! Label functions, weak labels and the label matrix.

use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::candidate::CalibratedClassifierLf;
use crate::corpus::{Document, LabeledExample};
use crate::error::{Error, Result};
use crate::surface::SurfaceRule;

/// Guard added to precision denominators.
pub const EPSILON: f64 = 1e-9;

/// A class index or an abstention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WeakLabel {
    Class(usize),
    Abstain,
}

impl WeakLabel {
    pub fn class(self) -> Option<usize> {
        match self {
            WeakLabel::Class(k) => Some(k),
            WeakLabel::Abstain => None,
        }
    }

    pub fn is_abstain(self) -> bool {
        matches!(self, WeakLabel::Abstain)
    }

    /// Export encoding: class index, or -1 for abstain.
    pub fn code(self) -> i64 {
        match self {
            WeakLabel::Class(k) => k as i64,
            WeakLabel::Abstain => -1,
        }
    }

    pub fn from_code(code: i64) -> Self {
        if code < 0 {
            WeakLabel::Abstain
        } else {
            WeakLabel::Class(code as usize)
        }
    }
}

impl fmt::Display for WeakLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LfCategory {
    Surface,
    Structural,
    Semantic,
}

impl LfCategory {
    pub const ALL: [LfCategory; 3] = [
        LfCategory::Surface,
        LfCategory::Structural,
        LfCategory::Semantic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LfCategory::Surface => "surface",
            LfCategory::Structural => "structural",
            LfCategory::Semantic => "semantic",
        }
    }
}

impl fmt::Display for LfCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub enum LfRule {
    Surface(SurfaceRule),
    Classifier(CalibratedClassifierLf),
}

#[derive(Debug, Clone)]
pub struct LabelFunction {
    pub id: String,
    pub category: LfCategory,
    pub rule: LfRule,
    pub est_accuracy: f64,
    pub est_coverage: f64,
}

impl LabelFunction {
    pub fn surface(id: impl Into<String>, rule: SurfaceRule) -> Self {
        Self {
            id: id.into(),
            category: LfCategory::Surface,
            rule: LfRule::Surface(rule),
            est_accuracy: 0.0,
            est_coverage: 0.0,
        }
    }

    pub fn classifier(
        id: impl Into<String>,
        category: LfCategory,
        clf: CalibratedClassifierLf,
    ) -> Self {
        Self {
            id: id.into(),
            category,
            rule: LfRule::Classifier(clf),
            est_accuracy: 0.0,
            est_coverage: 0.0,
        }
    }

    /// Confidence threshold; surface rules have none and report 0.
    pub fn threshold(&self) -> f64 {
        match &self.rule {
            LfRule::Surface(_) => 0.0,
            LfRule::Classifier(c) => c.omega,
        }
    }

    pub fn apply(&self, doc: &Document) -> WeakLabel {
        apply_lf(self, doc)
    }

    /// Fills `est_accuracy` from the seed set and `est_coverage` from `docs`.
    pub fn estimate(&mut self, seed: &[LabeledExample], docs: &[Document]) {
        self.est_accuracy = estimate_accuracy(self, seed);
        self.est_coverage = estimate_coverage(self, docs);
    }
}

pub fn apply_lf(lf: &LabelFunction, doc: &Document) -> WeakLabel {
    match &lf.rule {
        LfRule::Surface(rule) => rule.eval(doc),
        LfRule::Classifier(clf) => clf.apply(doc),
    }
}

/// Outputs of one LF over a document list.
pub fn apply_all(lf: &LabelFunction, docs: &[Document]) -> Vec<WeakLabel> {
    docs.par_iter().map(|d| apply_lf(lf, d)).collect()
}

/// Precision over covered instances: `correct / (covered + EPSILON)`.
pub fn accuracy_from_outputs(outputs: &[WeakLabel], gold: &[usize]) -> f64 {
    let mut covered = 0usize;
    let mut correct = 0usize;
    for (o, &g) in outputs.iter().zip(gold) {
        if let WeakLabel::Class(k) = o {
            covered += 1;
            if *k == g {
                correct += 1;
            }
        }
    }
    correct as f64 / (covered as f64 + EPSILON)
}

pub fn coverage_from_outputs(outputs: &[WeakLabel]) -> f64 {
    if outputs.is_empty() {
        return 0.0;
    }
    outputs.iter().filter(|o| !o.is_abstain()).count() as f64 / outputs.len() as f64
}

pub fn estimate_accuracy(lf: &LabelFunction, seed: &[LabeledExample]) -> f64 {
    let outputs: Vec<WeakLabel> = seed.iter().map(|e| apply_lf(lf, &e.doc)).collect();
    let gold: Vec<usize> = seed.iter().map(|e| e.gold).collect();
    accuracy_from_outputs(&outputs, &gold)
}

pub fn estimate_coverage(lf: &LabelFunction, docs: &[Document]) -> f64 {
    coverage_from_outputs(&apply_all(lf, docs))
}

/// Dense `N x m` grid of weak labels, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix {
    entries: Vec<WeakLabel>,
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
}

impl LabelMatrix {
    pub fn from_rows(
        rows: Vec<Vec<WeakLabel>>,
        row_ids: Vec<String>,
        col_ids: Vec<String>,
    ) -> Result<Self> {
        if rows.len() != row_ids.len() {
            return Err(Error::LengthMismatch(rows.len(), row_ids.len()));
        }
        let m = col_ids.len();
        let mut entries = Vec::with_capacity(rows.len() * m);
        for row in rows {
            if row.len() != m {
                return Err(Error::LengthMismatch(row.len(), m));
            }
            entries.extend(row);
        }
        Ok(Self {
            entries,
            row_ids,
            col_ids,
        })
    }

    /// Builds a matrix from per-LF output columns.
    pub fn from_columns(
        columns: &[Vec<WeakLabel>],
        row_ids: Vec<String>,
        col_ids: Vec<String>,
    ) -> Result<Self> {
        if columns.len() != col_ids.len() {
            return Err(Error::LengthMismatch(columns.len(), col_ids.len()));
        }
        let n = row_ids.len();
        if let Some(bad) = columns.iter().find(|c| c.len() != n) {
            return Err(Error::LengthMismatch(bad.len(), n));
        }
        let rows = (0..n)
            .map(|i| columns.iter().map(|c| c[i]).collect())
            .collect();
        Self::from_rows(rows, row_ids, col_ids)
    }

    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.col_ids.len()
    }

    pub fn get(&self, i: usize, j: usize) -> WeakLabel {
        self.entries[i * self.n_cols() + j]
    }

    pub fn row(&self, i: usize) -> &[WeakLabel] {
        let m = self.n_cols();
        &self.entries[i * m..(i + 1) * m]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[WeakLabel]> {
        (0..self.n_rows()).map(move |i| self.row(i))
    }

    pub fn column(&self, j: usize) -> Vec<WeakLabel> {
        (0..self.n_rows()).map(|i| self.get(i, j)).collect()
    }

    pub fn column_coverage(&self, j: usize) -> f64 {
        coverage_from_outputs(&self.column(j))
    }

    pub fn row_covered(&self, i: usize) -> bool {
        self.row(i).iter().any(|l| !l.is_abstain())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["doc_id".to_string()];
        header.extend(self.col_ids.iter().cloned());
        w.write_record(&header)?;
        for (i, id) in self.row_ids.iter().enumerate() {
            let mut rec = vec![id.clone()];
            rec.extend(self.row(i).iter().map(|l| l.code().to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<label matrix>", e))?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        let col_ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut rows = Vec::new();
        let mut row_ids = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            row_ids.push(rec.get(0).unwrap_or_default().to_string());
            let row = rec
                .iter()
                .skip(1)
                .map(|cell| {
                    cell.trim()
                        .parse::<i64>()
                        .map(WeakLabel::from_code)
                        .map_err(|e| Error::MalformedRecord {
                            line: line + 2,
                            reason: e.to_string(),
                        })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::from_rows(rows, row_ids, col_ids)
    }
}

/// `L[i][j] = lfs[j](docs[i])`. Rows are evaluated in parallel; the result
/// does not depend on scheduling.
pub fn build_label_matrix(lfs: &[LabelFunction], docs: &[Document]) -> Result<LabelMatrix> {
    if lfs.is_empty() {
        return Err(Error::EmptyLfSet);
    }
    let rows: Vec<Vec<WeakLabel>> = docs
        .par_iter()
        .map(|d| lfs.iter().map(|lf| apply_lf(lf, d)).collect())
        .collect();
    LabelMatrix::from_rows(
        rows,
        docs.iter().map(|d| d.id.clone()).collect(),
        lfs.iter().map(|lf| lf.id.clone()).collect(),
    )
}
