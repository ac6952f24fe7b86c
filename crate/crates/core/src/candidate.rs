//! Classifier-backed label functions: seed-subsample training, confidence
//! threshold calibration, and candidate synthesis for the structural and
//! semantic categories.
//!
//! A candidate votes `argmax p(y|x)` when `max p(y|x) > omega` and abstains
//! otherwise. `omega` is picked on a grid over `[0, 1]` by maximizing the
//! weighted harmonic mean of precision (on the seed set) and coverage.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::corpus::{Dataset, Document, LabeledExample};
use crate::downstream::{fit_mlp, MlpClassifier, MlpTrainConfig};
use crate::error::{Error, Result};
use crate::features::{fit_tfidf_with, FeatureSpec, Featurizer, SparseVec, TfidfConfig};
use crate::label_model::argmax;
use crate::lf::{self, LabelFunction, LfCategory, WeakLabel, EPSILON};

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subsample {
    pub indices: Vec<usize>,
    pub rng_seed: u64,
}

/// Multinomial logistic regression, `softmax(W x + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    /// `C` rows of length `d`.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub trained_on: Option<Subsample>,
}

impl LinearClassifier {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        Self {
            weights: vec![vec![0.0; dim]; classes],
            bias: vec![0.0; classes],
            trained_on: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn classes(&self) -> usize {
        self.bias.len()
    }

    fn logits(&self, x: &SparseVec) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| b + x.dot_dense(w))
            .collect()
    }

    pub fn predict_proba_sparse(&self, x: &SparseVec) -> Result<Vec<f64>> {
        if x.dim != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.dim,
            });
        }
        Ok(softmax(&self.logits(x)))
    }

    pub fn predict_proba(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.predict_proba_sparse(&SparseVec::from_dense(features))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for LinearTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            learning_rate: 0.5,
            l2: 1e-3,
        }
    }
}

/// Mean cross-entropy plus `l2/2 * ||W||^2` (bias unpenalized).
pub fn linear_loss(clf: &LinearClassifier, xs: &[&SparseVec], ys: &[usize], l2: f64) -> f64 {
    let ce: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, &y)| -softmax(&clf.logits(x))[y].max(1e-300).ln())
        .sum::<f64>()
        / xs.len() as f64;
    let reg: f64 = clf.weights.iter().flatten().map(|w| w * w).sum();
    ce + 0.5 * l2 * reg
}

/// Full-batch gradient descent from zero weights. Returns the model and the
/// loss before each epoch followed by the final loss.
pub fn fit_linear(
    xs: &[&SparseVec],
    ys: &[usize],
    classes: usize,
    dim: usize,
    cfg: &LinearTrainConfig,
) -> (LinearClassifier, Vec<f64>) {
    let mut clf = LinearClassifier::zeros(classes, dim);
    let n = xs.len() as f64;
    let mut losses = Vec::with_capacity(cfg.epochs + 1);
    let mut gw = vec![vec![0.0; dim]; classes];
    let mut gb = vec![0.0; classes];
    for _ in 0..cfg.epochs {
        gw.iter_mut().flatten().for_each(|g| *g = 0.0);
        gb.iter_mut().for_each(|g| *g = 0.0);
        let mut ce = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let p = softmax(&clf.logits(x));
            ce -= p[y].max(1e-300).ln();
            for c in 0..classes {
                let d = (p[c] - if c == y { 1.0 } else { 0.0 }) / n;
                gb[c] += d;
                for &(i, v) in &x.entries {
                    gw[c][i as usize] += d * v;
                }
            }
        }
        let reg: f64 = clf.weights.iter().flatten().map(|w| w * w).sum();
        losses.push(ce / n + 0.5 * cfg.l2 * reg);
        for c in 0..classes {
            for (w, g) in clf.weights[c].iter_mut().zip(&gw[c]) {
                *w -= cfg.learning_rate * (g + cfg.l2 * *w);
            }
            clf.bias[c] -= cfg.learning_rate * gb[c];
        }
    }
    losses.push(linear_loss(&clf, xs, ys, cfg.l2));
    (clf, losses)
}

/// A probabilistic classifier head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProbClassifier {
    Linear(LinearClassifier),
    Mlp(MlpClassifier),
}

impl ProbClassifier {
    pub fn predict_proba_sparse(&self, x: &SparseVec) -> Result<Vec<f64>> {
        match self {
            ProbClassifier::Linear(c) => c.predict_proba_sparse(x),
            ProbClassifier::Mlp(m) => m.predict_proba(x),
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            ProbClassifier::Linear(c) => c.classes(),
            ProbClassifier::Mlp(m) => m.classes,
        }
    }
}

/// A classifier turned into a label function by a confidence threshold.
#[derive(Debug, Clone)]
pub struct CalibratedClassifierLf {
    pub classifier: Arc<ProbClassifier>,
    pub featurizer: Arc<Featurizer>,
    pub omega: f64,
}

impl CalibratedClassifierLf {
    pub fn new(classifier: ProbClassifier, featurizer: Arc<Featurizer>) -> Self {
        Self {
            classifier: Arc::new(classifier),
            featurizer,
            omega: 0.0,
        }
    }

    /// `(argmax, max probability)` for a document.
    pub fn score(&self, doc: &Document) -> Result<(usize, f64)> {
        let x = self.featurizer.features(doc)?;
        let p = self.classifier.predict_proba_sparse(&x)?;
        let k = argmax(&p);
        Ok((k, p[k]))
    }

    pub fn apply(&self, doc: &Document) -> WeakLabel {
        match self.score(doc) {
            Ok((k, conf)) => vote(k, conf, self.omega),
            Err(e) => {
                log::warn!("classifier LF abstained on {:?}: {e}", doc.id);
                WeakLabel::Abstain
            }
        }
    }
}

fn vote(k: usize, conf: f64, omega: f64) -> WeakLabel {
    if conf > omega {
        WeakLabel::Class(k)
    } else {
        WeakLabel::Abstain
    }
}

/// Weighted harmonic mean `(1+b^2) p c / (b^2 p + c)`, 0 when the
/// denominator vanishes.
pub fn whm(precision: f64, coverage: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let denom = b2 * precision + coverage;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * coverage / denom
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub omega: f64,
    pub precision: f64,
    pub coverage: f64,
    pub whm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    pub grid: Vec<CalibrationPoint>,
    pub best_omega: f64,
    pub beta: f64,
}

impl CalibrationCurve {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["omega", "precision", "coverage", "whm"])?;
        for p in &self.grid {
            w.write_record([
                p.omega.to_string(),
                p.precision.to_string(),
                p.coverage.to_string(),
                p.whm.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<calibration curve>", e))?;
        Ok(())
    }
}

/// `{0, step, 2 step, ..., 1}`; the last point is exactly 1. When `1/step`
/// is an integer `n`, points are computed as `k / n` so that e.g. 0.6 is the
/// nearest double to 0.6.
pub fn omega_grid(step: f64) -> Vec<f64> {
    let n = (1.0 / step).round().max(1.0) as usize;
    if (n as f64 * step - 1.0).abs() < 1e-9 {
        (0..=n).map(|k| k as f64 / n as f64).collect()
    } else {
        let last = (1.0 / step).floor() as usize;
        let mut grid: Vec<f64> = (0..=last).map(|k| (k as f64 * step).min(1.0)).collect();
        if grid.last().is_some_and(|&w| w < 1.0) {
            grid.push(1.0);
        }
        grid
    }
}

/// Grid search over omega from precomputed scores. `seed` holds
/// `(predicted class, confidence, gold)`, `coverage_confidences` the
/// confidences on the coverage reference set. Ties go to the smallest omega.
pub fn calibrate_scores(
    seed: &[(usize, f64, usize)],
    coverage_confidences: &[f64],
    beta: f64,
    grid_step: f64,
) -> CalibrationCurve {
    let mut grid = Vec::new();
    let mut best: Option<CalibrationPoint> = None;
    for omega in omega_grid(grid_step) {
        let mut covered = 0usize;
        let mut correct = 0usize;
        for &(k, conf, gold) in seed {
            if conf > omega {
                covered += 1;
                if k == gold {
                    correct += 1;
                }
            }
        }
        let precision = correct as f64 / (covered as f64 + EPSILON);
        let coverage = if coverage_confidences.is_empty() {
            0.0
        } else {
            coverage_confidences.iter().filter(|&&c| c > omega).count() as f64
                / coverage_confidences.len() as f64
        };
        let point = CalibrationPoint {
            omega,
            precision,
            coverage,
            whm: whm(precision, coverage, beta),
        };
        if best.is_none_or(|b| point.whm > b.whm) {
            best = Some(point);
        }
        grid.push(point);
    }
    CalibrationCurve {
        best_omega: best.map_or(0.0, |b| b.omega),
        grid,
        beta,
    }
}

/// Seed sets smaller than this measure coverage on the unlabeled pool.
pub const SMALL_SEED: usize = 50;

/// Picks omega for `clf_lf` and stores it. Precision is measured on `seed`;
/// coverage on `unlabeled` when the seed has fewer than 50 examples,
/// otherwise on the seed.
pub fn calibrate_threshold(
    clf_lf: &mut CalibratedClassifierLf,
    seed: &[LabeledExample],
    unlabeled: &[Document],
    beta: f64,
    grid_step: f64,
) -> Result<CalibrationCurve> {
    if seed.is_empty() {
        return Err(Error::Precondition("calibration needs a non-empty seed".into()));
    }
    if !(grid_step > 0.0 && grid_step <= 1.0) {
        return Err(Error::Precondition(format!("grid_step {grid_step} not in (0, 1]")));
    }
    let seed_scores = seed
        .iter()
        .map(|e| clf_lf.score(&e.doc).map(|(k, c)| (k, c, e.gold)))
        .collect::<Result<Vec<_>>>()?;
    let cov_conf: Vec<f64> = if seed.len() < SMALL_SEED {
        unlabeled
            .par_iter()
            .map(|d| clf_lf.score(d).map(|(_, c)| c))
            .collect::<Result<_>>()?
    } else {
        seed_scores.iter().map(|s| s.1).collect()
    };
    let curve = calibrate_scores(&seed_scores, &cov_conf, beta, grid_step);
    clf_lf.omega = curve.best_omega;
    Ok(curve)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadConfig {
    Linear(LinearTrainConfig),
    Mlp(MlpTrainConfig),
}

fn distinct_classes(seed: &[LabeledExample], idx: &[usize]) -> usize {
    let mut seen: Vec<usize> = idx.iter().map(|&i| seed[i].gold).collect();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}

/// Draws a subsample of size `subsample_size` without replacement, with at
/// least two classes (up to 10 draws).
pub fn draw_subsample(
    seed: &[LabeledExample],
    subsample_size: usize,
    rng_seed: u64,
) -> Result<Subsample> {
    if subsample_size == 0 || subsample_size > seed.len() {
        return Err(Error::Precondition(format!(
            "subsample size {subsample_size} not in [1, {}]",
            seed.len()
        )));
    }
    if subsample_size == seed.len() {
        let indices: Vec<usize> = (0..seed.len()).collect();
        if distinct_classes(seed, &indices) < 2 {
            return Err(Error::DegenerateSubsample);
        }
        return Ok(Subsample { indices, rng_seed });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut all: Vec<usize> = (0..seed.len()).collect();
    for _ in 0..10 {
        all.shuffle(&mut rng);
        let mut indices = all[..subsample_size].to_vec();
        indices.sort_unstable();
        if distinct_classes(seed, &indices) >= 2 {
            return Ok(Subsample { indices, rng_seed });
        }
    }
    Err(Error::DegenerateSubsample)
}

/// Trains one candidate head on a seed subsample.
pub fn train_candidate(
    seed: &[LabeledExample],
    num_classes: usize,
    featurizer: &Featurizer,
    subsample_size: usize,
    rng_seed: u64,
    head: &HeadConfig,
) -> Result<ProbClassifier> {
    let sub = draw_subsample(seed, subsample_size, rng_seed)?;
    let feats = sub
        .indices
        .iter()
        .map(|&i| featurizer.features(&seed[i].doc))
        .collect::<Result<Vec<_>>>()?;
    let ys: Vec<usize> = sub.indices.iter().map(|&i| seed[i].gold).collect();
    let dim = featurizer.dim().max(feats.first().map_or(0, |f| f.dim));
    let xs: Vec<&SparseVec> = feats.iter().map(Arc::as_ref).collect();
    Ok(match head {
        HeadConfig::Linear(cfg) => {
            let (mut clf, _) = fit_linear(&xs, &ys, num_classes, dim, cfg);
            clf.trained_on = Some(sub);
            ProbClassifier::Linear(clf)
        }
        HeadConfig::Mlp(cfg) => {
            let rows: Vec<(&SparseVec, Vec<f64>)> = xs
                .iter()
                .zip(&ys)
                .map(|(x, &y)| {
                    let mut t = vec![0.0; num_classes];
                    t[y] = 1.0;
                    (*x, t)
                })
                .collect();
            let cfg = MlpTrainConfig {
                seed: rng_seed,
                ..cfg.clone()
            };
            ProbClassifier::Mlp(fit_mlp(&rows, dim, num_classes, &cfg)?.0)
        }
    })
}

/// Lazily fitted featurizers shared by all candidates of a run.
pub struct FeaturizerBank {
    docs: Vec<Document>,
    tokenizer: crate::features::Tokenizer,
    min_df: usize,
    tfidf: Mutex<BTreeMap<(usize, usize), Arc<Featurizer>>>,
    embedding: Arc<Featurizer>,
}

impl FeaturizerBank {
    pub fn new(dataset: &Dataset, config: &PipelineConfig) -> Result<Self> {
        Ok(Self {
            docs: dataset.unlabeled.clone(),
            tokenizer: config.tokenizer,
            min_df: config.structural.min_df,
            tfidf: Mutex::new(BTreeMap::new()),
            embedding: Arc::new(Featurizer::embedding(&config.semantic.embedding)?),
        })
    }

    pub fn tfidf(&self, ngram_range: (usize, usize)) -> Result<Arc<Featurizer>> {
        let mut map = self.tfidf.lock().unwrap();
        if let Some(f) = map.get(&ngram_range) {
            return Ok(f.clone());
        }
        let model = fit_tfidf_with(
            &self.docs,
            &self.tokenizer,
            TfidfConfig {
                ngram_range,
                min_df: self.min_df,
            },
        )?;
        let f = Arc::new(Featurizer::tfidf(model));
        map.insert(ngram_range, f.clone());
        Ok(f)
    }

    pub fn embedding(&self) -> Arc<Featurizer> {
        self.embedding.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipReport {
    pub category: LfCategory,
    pub candidate: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Synthesized {
    pub lfs: Vec<LabelFunction>,
    pub curves: BTreeMap<String, CalibrationCurve>,
    pub skipped: Vec<SkipReport>,
}

/// Describes a candidate's featurization and head, for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateVariant {
    pub features: FeatureSpec,
    pub head: HeadConfig,
    pub rng_seed: u64,
}

pub fn subsample_size(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64).ceil() as usize).clamp(1, n.max(1))
}

/// Trains, calibrates and scores `m` candidates of a classifier category.
/// Candidate `k` (1-based) uses `rng_seed = base_seed + k` and the `(k-1)`-th
/// entry of each variation list, cycled. Output order follows `k`.
pub fn synthesize_candidates(
    category: LfCategory,
    dataset: &Dataset,
    m: usize,
    config: &PipelineConfig,
    bank: &FeaturizerBank,
    base_seed: u64,
    id_prefix: &str,
) -> Result<Synthesized> {
    if m == 0 {
        return Err(Error::Precondition("candidate count must be >= 1".into()));
    }
    if category == LfCategory::Surface {
        return Err(Error::Precondition(
            "surface LFs come from a provider, not a classifier".into(),
        ));
    }
    let results: Vec<(String, Result<(LabelFunction, CalibrationCurve)>)> = (1..=m)
        .into_par_iter()
        .map(|k| {
            let id = format!("{id_prefix}-k{k:02}");
            let out = build_one(category, dataset, config, bank, base_seed + k as u64, k - 1, &id);
            (id, out)
        })
        .collect();
    let mut lfs = Vec::new();
    let mut curves = BTreeMap::new();
    let mut skipped = Vec::new();
    for (id, r) in results {
        match r {
            Ok((lf, curve)) => {
                curves.insert(id, curve);
                lfs.push(lf);
            }
            Err(e) => skipped.push(SkipReport {
                category,
                candidate: id,
                reason: e.to_string(),
            }),
        }
    }
    Ok(Synthesized {
        lfs,
        curves,
        skipped,
    })
}

fn build_one(
    category: LfCategory,
    dataset: &Dataset,
    config: &PipelineConfig,
    bank: &FeaturizerBank,
    rng_seed: u64,
    variant: usize,
    id: &str,
) -> Result<(LabelFunction, CalibrationCurve)> {
    let n_l = dataset.seed.len();
    let (featurizer, head, fraction) = match category {
        LfCategory::Structural => {
            let s = &config.structural;
            let ngram = s.ngram_ranges[variant % s.ngram_ranges.len()];
            let head = HeadConfig::Linear(LinearTrainConfig {
                epochs: s.epochs,
                learning_rate: s.learning_rate,
                l2: s.l2[variant % s.l2.len()],
            });
            (bank.tfidf(ngram)?, head, s.subsample_fraction)
        }
        _ => {
            let s = &config.semantic;
            let width = s.head_widths[variant % s.head_widths.len()];
            let head = if width == 0 {
                HeadConfig::Linear(LinearTrainConfig {
                    epochs: s.epochs,
                    learning_rate: s.learning_rate,
                    l2: s.l2,
                })
            } else {
                HeadConfig::Mlp(MlpTrainConfig {
                    hidden: width,
                    ..s.mlp_head.clone()
                })
            };
            (bank.embedding(), head, s.subsample_fraction)
        }
    };
    let clf = train_candidate(
        &dataset.seed,
        dataset.num_classes(),
        &featurizer,
        subsample_size(fraction, n_l),
        rng_seed,
        &head,
    )?;
    let mut clf_lf = CalibratedClassifierLf::new(clf, featurizer);
    let curve = calibrate_threshold(
        &mut clf_lf,
        &dataset.seed,
        &dataset.unlabeled,
        config.beta,
        config.grid_step,
    )?;
    if !config.abstain_enabled {
        clf_lf.omega = 0.0;
    }
    let mut lf = LabelFunction::classifier(id, category, clf_lf);
    lf.est_accuracy = lf::estimate_accuracy(&lf, &dataset.seed);
    lf.est_coverage = lf::estimate_coverage(&lf, &dataset.unlabeled);
    Ok((lf, curve))
}
