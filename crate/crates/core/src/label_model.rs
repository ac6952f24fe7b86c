//! Aggregation of a label matrix into probabilistic labels.
//!
//! ABSTAIN is treated as missing data throughout: it never counts as a vote
//! and is skipped in the Dawid-Skene likelihood.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::LabelSpace;
use crate::error::{Error, Result};
use crate::lf::{LabelMatrix, WeakLabel};

/// Add-delta smoothing applied to Dawid-Skene M-step counts.
pub const DS_SMOOTHING: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilisticLabel {
    pub dist: Vec<f64>,
    /// False when every LF abstained on the row.
    pub covered: bool,
}

impl ProbabilisticLabel {
    pub fn uniform(classes: usize) -> Self {
        Self {
            dist: vec![1.0 / classes as f64; classes],
            covered: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelModelKind {
    MajorityVote,
    /// `None` means "use each LF's estimated accuracy"; the pipeline fills
    /// those in before aggregating.
    WeightedMajorityVote {
        #[serde(default)]
        weights: Option<Vec<f64>>,
    },
    DawidSkene {
        #[serde(default = "default_max_iter")]
        max_iter: usize,
        #[serde(default = "default_tol")]
        tol: f64,
    },
}

fn default_max_iter() -> usize {
    100
}
fn default_tol() -> f64 {
    1e-6
}

impl LabelModelKind {
    pub fn dawid_skene() -> Self {
        LabelModelKind::DawidSkene {
            max_iter: default_max_iter(),
            tol: default_tol(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LabelModelKind::MajorityVote => "majority_vote",
            LabelModelKind::WeightedMajorityVote { .. } => "weighted_majority_vote",
            LabelModelKind::DawidSkene { .. } => "dawid_skene",
        }
    }
}

/// Index of the largest entry; the smallest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = k;
        }
    }
    best
}

fn vote_dist(row: &[WeakLabel], weights: &[f64], classes: usize) -> ProbabilisticLabel {
    let mut mass = vec![0.0; classes];
    let mut counts = vec![0.0; classes];
    for (l, w) in row.iter().zip(weights) {
        if let WeakLabel::Class(k) = *l {
            mass[k] += w;
            counts[k] += 1.0;
        }
    }
    let total: f64 = mass.iter().sum();
    let n: f64 = counts.iter().sum();
    if n == 0.0 {
        return ProbabilisticLabel::uniform(classes);
    }
    // A row whose only voters carry zero weight falls back to raw counts.
    let (mass, total) = if total > 0.0 { (mass, total) } else { (counts, n) };
    ProbabilisticLabel {
        dist: mass.into_iter().map(|m| m / total).collect(),
        covered: true,
    }
}

fn check_matrix(matrix: &LabelMatrix, classes: usize) -> Result<()> {
    if matrix.n_rows() == 0 || matrix.n_cols() == 0 {
        return Err(Error::Precondition("label matrix is empty".into()));
    }
    for row in matrix.rows() {
        if let Some(k) = row.iter().filter_map(|l| l.class()).find(|&k| k >= classes) {
            return Err(Error::UnknownLabel(format!("class index {k} with {classes} classes")));
        }
    }
    Ok(())
}

pub fn majority_vote(matrix: &LabelMatrix, classes: usize) -> Vec<ProbabilisticLabel> {
    let ones = vec![1.0; matrix.n_cols()];
    matrix
        .rows()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|row| vote_dist(row, &ones, classes))
        .collect()
}

pub fn weighted_majority_vote(
    matrix: &LabelMatrix,
    weights: &[f64],
    classes: usize,
) -> Result<Vec<ProbabilisticLabel>> {
    if weights.len() != matrix.n_cols() {
        return Err(Error::LengthMismatch(weights.len(), matrix.n_cols()));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Precondition("weights must be finite and >= 0".into()));
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(Error::AllWeightsZero);
    }
    // Dividing by the largest weight makes equal weights exactly 1, so that
    // case reproduces the unweighted vote bit for bit.
    let max = weights.iter().copied().fold(0.0, f64::max);
    let weights: Vec<f64> = weights.iter().map(|w| w / max).collect();
    Ok(matrix
        .rows()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|row| vote_dist(row, &weights, classes))
        .collect())
}

pub fn aggregate(
    matrix: &LabelMatrix,
    kind: &LabelModelKind,
    labels: &LabelSpace,
) -> Result<Vec<ProbabilisticLabel>> {
    let classes = labels.len();
    check_matrix(matrix, classes)?;
    match kind {
        LabelModelKind::MajorityVote => Ok(majority_vote(matrix, classes)),
        LabelModelKind::WeightedMajorityVote { weights } => match weights {
            Some(w) => weighted_majority_vote(matrix, w, classes),
            None => Ok(majority_vote(matrix, classes)),
        },
        LabelModelKind::DawidSkene { max_iter, tol } => {
            let model = fit_dawid_skene(matrix, classes, *max_iter, *tol)?;
            Ok(model.predict(matrix))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DawidSkeneModel {
    pub class_priors: Vec<f64>,
    /// `confusion[j][true][emitted]`, each row sums to 1.
    pub confusion: Vec<Vec<Vec<f64>>>,
    pub iterations_run: usize,
    pub converged: bool,
    /// Marginal log-likelihood of the covered rows after each M-step.
    pub log_likelihood: Vec<f64>,
    /// Log-likelihood plus the smoothing log-prior; EM never decreases it.
    pub objective: Vec<f64>,
}

impl DawidSkeneModel {
    pub fn classes(&self) -> usize {
        self.class_priors.len()
    }

    fn log_joint(&self, row: &[WeakLabel]) -> Vec<f64> {
        (0..self.classes())
            .map(|c| {
                let mut s = self.class_priors[c].ln();
                for (j, l) in row.iter().enumerate() {
                    if let WeakLabel::Class(k) = *l {
                        s += self.confusion[j][c][k].ln();
                    }
                }
                s
            })
            .collect()
    }

    fn row_posterior(&self, row: &[WeakLabel]) -> (Vec<f64>, f64) {
        let lj = self.log_joint(row);
        let max = lj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = lj.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        (exps.into_iter().map(|e| e / z).collect(), max + z.ln())
    }

    /// Posterior class distribution per row; all-abstain rows are uniform
    /// and uncovered.
    pub fn predict(&self, matrix: &LabelMatrix) -> Vec<ProbabilisticLabel> {
        let rows: Vec<&[WeakLabel]> = matrix.rows().collect();
        rows.par_iter()
            .map(|row| {
                if row.iter().all(|l| l.is_abstain()) {
                    ProbabilisticLabel::uniform(self.classes())
                } else {
                    ProbabilisticLabel {
                        dist: self.row_posterior(row).0,
                        covered: true,
                    }
                }
            })
            .collect()
    }

    fn log_prior(&self) -> f64 {
        let d = DS_SMOOTHING;
        let mut s: f64 = self.class_priors.iter().map(|p| d * p.ln()).sum();
        for conf in &self.confusion {
            for row in conf {
                s += row.iter().map(|p| d * p.ln()).sum::<f64>();
            }
        }
        s
    }
}

fn m_step(rows: &[&[WeakLabel]], post: &[Vec<f64>], m: usize, classes: usize) -> DawidSkeneModel {
    let d = DS_SMOOTHING;
    let mut prior = vec![d; classes];
    let mut counts = vec![vec![vec![d; classes]; classes]; m];
    for (row, t) in rows.iter().zip(post) {
        for c in 0..classes {
            prior[c] += t[c];
        }
        for (j, l) in row.iter().enumerate() {
            if let WeakLabel::Class(k) = *l {
                for c in 0..classes {
                    counts[j][c][k] += t[c];
                }
            }
        }
    }
    let total: f64 = prior.iter().sum();
    prior.iter_mut().for_each(|p| *p /= total);
    for conf in &mut counts {
        for row in conf.iter_mut() {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
    }
    DawidSkeneModel {
        class_priors: prior,
        confusion: counts,
        iterations_run: 0,
        converged: false,
        log_likelihood: Vec::new(),
        objective: Vec::new(),
    }
}

/// Classical Dawid-Skene EM over the covered rows, initialized from
/// majority-vote posteriors. Stops when no posterior entry moves by `tol` or
/// more, or after `max_iter` M-steps.
pub fn fit_dawid_skene(
    matrix: &LabelMatrix,
    classes: usize,
    max_iter: usize,
    tol: f64,
) -> Result<DawidSkeneModel> {
    check_matrix(matrix, classes)?;
    let rows: Vec<&[WeakLabel]> = matrix
        .rows()
        .filter(|r| r.iter().any(|l| !l.is_abstain()))
        .collect();
    if rows.is_empty() {
        return Err(Error::NoSignal);
    }
    let ones = vec![1.0; matrix.n_cols()];
    let mut post: Vec<Vec<f64>> = rows.iter().map(|r| vote_dist(r, &ones, classes).dist).collect();
    let mut lls = Vec::new();
    let mut objs = Vec::new();
    let mut converged = false;
    let mut iters = 0;
    let mut model = m_step(&rows, &post, matrix.n_cols(), classes);
    for _ in 0..max_iter.max(1) {
        model = m_step(&rows, &post, matrix.n_cols(), classes);
        iters += 1;
        let results: Vec<(Vec<f64>, f64)> = rows.par_iter().map(|r| model.row_posterior(r)).collect();
        let ll: f64 = results.iter().map(|r| r.1).sum();
        lls.push(ll);
        objs.push(ll + model.log_prior());
        let delta = results
            .iter()
            .zip(&post)
            .flat_map(|(new, old)| new.0.iter().zip(old).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        post = results.into_iter().map(|r| r.0).collect();
        if delta < tol {
            converged = true;
            break;
        }
    }
    model.iterations_run = iters;
    model.converged = converged;
    model.log_likelihood = lls;
    model.objective = objs;
    Ok(model)
}

/// `(argmax class, covered)` per row.
pub fn hard_labels(probs: &[ProbabilisticLabel]) -> Vec<(usize, bool)> {
    probs.iter().map(|p| (argmax(&p.dist), p.covered)).collect()
}

#[derive(Serialize)]
struct LabelLine<'a> {
    doc_id: &'a str,
    dist: &'a [f64],
    covered: bool,
    hard: &'a str,
}

pub fn write_labels_jsonl<W: Write>(
    mut out: W,
    row_ids: &[String],
    probs: &[ProbabilisticLabel],
    labels: &LabelSpace,
) -> Result<()> {
    if row_ids.len() != probs.len() {
        return Err(Error::LengthMismatch(row_ids.len(), probs.len()));
    }
    for (id, p) in row_ids.iter().zip(probs) {
        let line = LabelLine {
            doc_id: id,
            dist: &p.dist,
            covered: p.covered,
            hard: labels.name(argmax(&p.dist)),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n").map_err(|e| Error::io("<labels>", e))?;
    }
    Ok(())
}
