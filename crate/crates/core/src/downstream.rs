//! End classifier: a one-hidden-layer ReLU network trained on probabilistic
//! labels, and its end-to-end evaluation on the gold test split.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::candidate::softmax;
use crate::corpus::{Document, LabeledExample};
use crate::error::{Error, Result};
use crate::features::{Featurizer, SparseVec};
use crate::label_model::{argmax, ProbabilisticLabel};
use crate::metrics::EvalReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetMode {
    Soft,
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpTrainConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub optimizer: Optimizer,
    pub target_mode: TargetMode,
    pub seed: u64,
}

impl Default for MlpTrainConfig {
    fn default() -> Self {
        Self {
            hidden: 100,
            epochs: 50,
            batch_size: 32,
            learning_rate: 0.01,
            l2: 1e-4,
            optimizer: Optimizer::Adam,
            target_mode: TargetMode::Soft,
            seed: 0,
        }
    }
}

/// Input -> ReLU hidden layer -> softmax. `w1` is stored input-major so a
/// sparse input entry touches one contiguous row of hidden weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpClassifier {
    pub input_dim: usize,
    pub hidden: usize,
    pub classes: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

struct Forward {
    pre: Vec<f64>,
    act: Vec<f64>,
    probs: Vec<f64>,
}

impl MlpClassifier {
    pub fn init(input_dim: usize, hidden: usize, classes: usize, rng: &mut impl Rng) -> Self {
        let mut uniform = |fan_in: usize, fan_out: usize, n: usize| -> Vec<f64> {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..n).map(|_| rng.gen_range(-limit..=limit)).collect()
        };
        let w1 = uniform(input_dim, hidden, input_dim * hidden);
        let w2 = uniform(hidden, classes, hidden * classes);
        Self {
            input_dim,
            hidden,
            classes,
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: vec![0.0; classes],
        }
    }

    fn forward(&self, x: &SparseVec) -> Forward {
        let mut pre = self.b1.clone();
        for &(i, v) in &x.entries {
            let row = &self.w1[i as usize * self.hidden..(i as usize + 1) * self.hidden];
            for (p, w) in pre.iter_mut().zip(row) {
                *p += w * v;
            }
        }
        let act: Vec<f64> = pre.iter().map(|&z| z.max(0.0)).collect();
        let mut logits = self.b2.clone();
        for (j, &a) in act.iter().enumerate() {
            if a != 0.0 {
                let row = &self.w2[j * self.classes..(j + 1) * self.classes];
                for (l, w) in logits.iter_mut().zip(row) {
                    *l += w * a;
                }
            }
        }
        Forward {
            pre,
            act,
            probs: softmax(&logits),
        }
    }

    pub fn predict_proba(&self, x: &SparseVec) -> Result<Vec<f64>> {
        if x.dim != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: x.dim,
            });
        }
        Ok(self.forward(x).probs)
    }

    pub fn predict(&self, x: &SparseVec) -> Result<usize> {
        Ok(argmax(&self.predict_proba(x)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-example loss of each epoch, computed before each batch update.
    pub epoch_losses: Vec<f64>,
    pub n_rows: usize,
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, t: i32) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        let c1 = 1.0 - B1.powi(t);
        let c2 = 1.0 - B2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = B1 * *m + (1.0 - B1) * g;
            *v = B2 * *v + (1.0 - B2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
        }
    }
}

fn one_hot(k: usize, c: usize) -> Vec<f64> {
    let mut t = vec![0.0; c];
    t[k] = 1.0;
    t
}

/// Mini-batch cross-entropy training against target distributions.
/// Deterministic for a fixed `config.seed`.
pub fn fit_mlp(
    rows: &[(&SparseVec, Vec<f64>)],
    input_dim: usize,
    classes: usize,
    config: &MlpTrainConfig,
) -> Result<(MlpClassifier, TrainReport)> {
    if rows.is_empty() {
        return Err(Error::DegenerateTargets);
    }
    if let Some((x, _)) = rows.iter().find(|(x, _)| x.dim != input_dim) {
        return Err(Error::DimensionMismatch {
            expected: input_dim,
            got: x.dim,
        });
    }
    let targets: Vec<Vec<f64>> = rows
        .iter()
        .map(|(_, t)| match config.target_mode {
            TargetMode::Soft => t.clone(),
            TargetMode::Hard => one_hot(argmax(t), classes),
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let hidden = config.hidden.max(1);
    let mut model = MlpClassifier::init(input_dim, hidden, classes, &mut rng);
    let mut opt = [
        AdamState::new(model.w1.len()),
        AdamState::new(model.b1.len()),
        AdamState::new(model.w2.len()),
        AdamState::new(model.b2.len()),
    ];
    let mut g_w1 = vec![0.0; model.w1.len()];
    let mut g_b1 = vec![0.0; hidden];
    let mut g_w2 = vec![0.0; model.w2.len()];
    let mut g_b2 = vec![0.0; classes];
    let batch = config.batch_size.max(1);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut t = 0i32;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            g_w1.iter_mut().for_each(|g| *g = 0.0);
            g_b1.iter_mut().for_each(|g| *g = 0.0);
            g_w2.iter_mut().for_each(|g| *g = 0.0);
            g_b2.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / chunk.len() as f64;
            for &r in chunk {
                let x = rows[r].0;
                let target = &targets[r];
                let f = model.forward(x);
                epoch_loss -= target
                    .iter()
                    .zip(&f.probs)
                    .filter(|(t, _)| **t > 0.0)
                    .map(|(t, p)| t * p.max(1e-300).ln())
                    .sum::<f64>();
                let dz2: Vec<f64> = f.probs.iter().zip(target).map(|(p, t)| (p - t) * scale).collect();
                let mut dz1 = vec![0.0; hidden];
                for j in 0..hidden {
                    let w2_row = &model.w2[j * classes..(j + 1) * classes];
                    if f.act[j] != 0.0 {
                        for (g, d) in g_w2[j * classes..(j + 1) * classes].iter_mut().zip(&dz2) {
                            *g += f.act[j] * d;
                        }
                    }
                    if f.pre[j] > 0.0 {
                        dz1[j] = w2_row.iter().zip(&dz2).map(|(w, d)| w * d).sum();
                    }
                }
                for (g, d) in g_b2.iter_mut().zip(&dz2) {
                    *g += d;
                }
                for (g, d) in g_b1.iter_mut().zip(&dz1) {
                    *g += d;
                }
                for &(i, v) in &x.entries {
                    let row = &mut g_w1[i as usize * hidden..(i as usize + 1) * hidden];
                    for (g, d) in row.iter_mut().zip(&dz1) {
                        *g += v * d;
                    }
                }
            }
            if config.l2 > 0.0 {
                for (g, w) in g_w1.iter_mut().zip(&model.w1) {
                    *g += config.l2 * w;
                }
                for (g, w) in g_w2.iter_mut().zip(&model.w2) {
                    *g += config.l2 * w;
                }
            }
            t += 1;
            let lr = config.learning_rate;
            match config.optimizer {
                Optimizer::Adam => {
                    let [o_w1, o_b1, o_w2, o_b2] = &mut opt;
                    o_w1.step(&mut model.w1, &g_w1, lr, t);
                    o_b1.step(&mut model.b1, &g_b1, lr, t);
                    o_w2.step(&mut model.w2, &g_w2, lr, t);
                    o_b2.step(&mut model.b2, &g_b2, lr, t);
                }
                Optimizer::Sgd => {
                    for (params, grads) in [
                        (&mut model.w1, &g_w1),
                        (&mut model.b1, &g_b1),
                        (&mut model.w2, &g_w2),
                        (&mut model.b2, &g_b2),
                    ] {
                        for (p, g) in params.iter_mut().zip(grads.iter()) {
                            *p -= lr * g;
                        }
                    }
                }
            }
        }
        epoch_losses.push(epoch_loss / rows.len() as f64);
    }
    Ok((
        model,
        TrainReport {
            epoch_losses,
            n_rows: rows.len(),
        },
    ))
}

/// Trains the end model on aggregated labels. Uncovered rows are skipped
/// unless `include_uncovered` is set.
pub fn train_downstream(
    probs: &[ProbabilisticLabel],
    docs: &[Document],
    featurizer: &Featurizer,
    config: &MlpTrainConfig,
    include_uncovered: bool,
) -> Result<(MlpClassifier, TrainReport)> {
    if probs.len() != docs.len() {
        return Err(Error::LengthMismatch(probs.len(), docs.len()));
    }
    let classes = probs.first().map_or(0, |p| p.dist.len());
    let mut feats = Vec::new();
    let mut targets = Vec::new();
    let mut seen = vec![false; classes];
    for (p, d) in probs.iter().zip(docs) {
        if !p.covered && !include_uncovered {
            continue;
        }
        if p.covered {
            seen[argmax(&p.dist)] = true;
        }
        feats.push(featurizer.features(d)?);
        targets.push(p.dist.clone());
    }
    if seen.iter().filter(|s| **s).count() < 2 {
        return Err(Error::DegenerateTargets);
    }
    let rows: Vec<(&SparseVec, Vec<f64>)> = feats
        .iter()
        .map(|f| f.as_ref())
        .zip(targets)
        .collect();
    fit_mlp(&rows, featurizer.dim(), classes, config)
}

pub fn predict_docs(
    clf: &MlpClassifier,
    docs: &[Document],
    featurizer: &Featurizer,
) -> Result<Vec<Vec<f64>>> {
    docs.iter()
        .map(|d| clf.predict_proba(featurizer.features(d)?.as_ref()))
        .collect()
}

/// Weighted F1 of argmax predictions against the gold test split.
pub fn evaluate_e2e(
    clf: &MlpClassifier,
    test: &[LabeledExample],
    featurizer: &Featurizer,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::Precondition("test split is empty".into()));
    }
    let docs: Vec<Document> = test.iter().map(|e| e.doc.clone()).collect();
    let pred: Vec<usize> = predict_docs(clf, &docs, featurizer)?
        .iter()
        .map(|p| argmax(p))
        .collect();
    let gold: Vec<usize> = test.iter().map(|e| e.gold).collect();
    EvalReport::from_predictions(&pred, &gold, clf.classes, 1.0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config_hash: String,
    pub model: MlpClassifier,
}

#[derive(Debug, Serialize)]
struct PredictionLine<'a> {
    doc_id: &'a str,
    pred: &'a str,
    dist: &'a [f64],
}

pub fn write_predictions<W: Write>(
    mut out: W,
    docs: &[Document],
    dists: &[Vec<f64>],
    class_names: &[String],
) -> Result<()> {
    for (d, p) in docs.iter().zip(dists) {
        let line = PredictionLine {
            doc_id: &d.id,
            pred: &class_names[argmax(p)],
            dist: p,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n").map_err(|e| Error::io("<predictions>", e))?;
    }
    Ok(())
}
