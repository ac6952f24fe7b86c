//! Intra- and inter-category filtering, redundancy suppression and the
//! loop-back that asks the generators for more candidates until each
//! category holds `K_c` label functions or the round budget runs out.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::candidate::{CalibrationCurve, SkipReport, Synthesized};
use crate::config::PipelineConfig;
use crate::corpus::{Dataset, Document};
use crate::error::Result;
use crate::label_model::{argmax, majority_vote};
use crate::lf::{apply_all, build_label_matrix, LabelFunction, LfCategory, LfRule, WeakLabel};
use crate::surface::surface_similarity;

#[derive(Debug, Clone, Default)]
pub struct LfPool {
    pub by_category: BTreeMap<LfCategory, Vec<LabelFunction>>,
    pub round: usize,
    pub skip_reports: Vec<SkipReport>,
}

impl LfPool {
    pub fn len(&self) -> usize {
        self.by_category.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn category(&self, c: LfCategory) -> &[LabelFunction] {
        self.by_category.get(&c).map_or(&[], Vec::as_slice)
    }

    /// All LFs in category order, each category sorted as stored.
    pub fn all(&self) -> Vec<LabelFunction> {
        self.by_category.values().flatten().cloned().collect()
    }

    pub fn ids(&self) -> Vec<String> {
        self.by_category.values().flatten().map(|lf| lf.id.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    pub lf_id: String,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicateRemoval {
    pub lf_id: String,
    pub similar_to: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub round: usize,
    pub theta_intra: BTreeMap<LfCategory, f64>,
    pub theta_inter: f64,
    pub removed_intra: Vec<Removal>,
    pub removed_inter: Vec<Removal>,
    pub removed_duplicate: Vec<DuplicateRemoval>,
    /// Survivors cut by the top-`K_c` truncation.
    pub removed_truncation: Vec<Removal>,
    pub candidates: BTreeMap<LfCategory, usize>,
    pub kept: BTreeMap<LfCategory, usize>,
    /// `K_c - kept` for categories still under target after this round.
    pub shortfall: BTreeMap<LfCategory, usize>,
}

fn removal(lf: &LabelFunction) -> Removal {
    Removal {
        lf_id: lf.id.clone(),
        accuracy: lf.est_accuracy,
    }
}

/// Keeps LFs with `est_accuracy >= alpha * max accuracy`. An empty pool
/// gives `theta = 0`.
pub fn intra_filter(
    pool: Vec<LabelFunction>,
    alpha: f64,
) -> (Vec<LabelFunction>, Vec<LabelFunction>, f64) {
    if pool.is_empty() {
        return (Vec::new(), Vec::new(), 0.0);
    }
    let max = pool.iter().map(|lf| lf.est_accuracy).fold(f64::NEG_INFINITY, f64::max);
    let theta = alpha * max;
    let (kept, removed) = pool.into_iter().partition(|lf| lf.est_accuracy >= theta);
    (kept, removed, theta)
}

/// Removes LFs of any category with `est_accuracy < 0.5 * max(thetas)`.
pub fn inter_filter(
    pools: BTreeMap<LfCategory, Vec<LabelFunction>>,
    thetas: &BTreeMap<LfCategory, f64>,
) -> (BTreeMap<LfCategory, Vec<LabelFunction>>, Vec<LabelFunction>, f64) {
    let theta = 0.5 * thetas.values().copied().fold(0.0, f64::max);
    let mut removed = Vec::new();
    let kept = pools
        .into_iter()
        .map(|(c, lfs)| {
            let (k, r): (Vec<_>, Vec<_>) = lfs.into_iter().partition(|lf| lf.est_accuracy >= theta);
            removed.extend(r);
            (c, k)
        })
        .collect();
    (kept, removed, theta)
}

/// Share of positions where both vote the same class, out of positions where
/// either votes. Two LFs that never vote are identical (1.0).
pub fn output_agreement(a: &[WeakLabel], b: &[WeakLabel]) -> f64 {
    let mut either = 0usize;
    let mut same = 0usize;
    for (x, y) in a.iter().zip(b) {
        if x.is_abstain() && y.is_abstain() {
            continue;
        }
        either += 1;
        if x == y {
            same += 1;
        }
    }
    if either == 0 {
        1.0
    } else {
        same as f64 / either as f64
    }
}

/// The `min(N, size)` documents used for agreement checks, drawn with a
/// fixed seed and kept in corpus order.
pub fn dedup_sample(docs: &[Document], size: usize, rng_seed: u64) -> Vec<Document> {
    if docs.len() <= size {
        return docs.to_vec();
    }
    let mut idx: Vec<usize> = (0..docs.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
    let mut chosen = idx[..size].to_vec();
    chosen.sort_unstable();
    chosen.into_iter().map(|i| docs[i].clone()).collect()
}

fn similarity(
    a: &LabelFunction,
    a_out: &[WeakLabel],
    b: &LabelFunction,
    b_out: &[WeakLabel],
) -> f64 {
    match (&a.rule, &b.rule) {
        (LfRule::Surface(x), LfRule::Surface(y)) => surface_similarity(x, y),
        _ => output_agreement(a_out, b_out),
    }
}

/// Drops candidates whose similarity to any accepted LF reaches `tau`.
/// Surface pairs compare pattern sets; everything else compares outputs on
/// `docs`.
pub fn deduplicate(
    candidates: Vec<LabelFunction>,
    existing: &[LabelFunction],
    tau: f64,
    docs: &[Document],
) -> (Vec<LabelFunction>, Vec<DuplicateRemoval>) {
    if existing.is_empty() {
        return (candidates, Vec::new());
    }
    let needs_outputs = |lf: &LabelFunction| !matches!(lf.rule, LfRule::Surface(_));
    let outputs = |lf: &LabelFunction| {
        if needs_outputs(lf) {
            apply_all(lf, docs)
        } else {
            Vec::new()
        }
    };
    let existing_out: Vec<Vec<WeakLabel>> = existing.iter().map(outputs).collect();
    let mut novel = Vec::new();
    let mut dropped = Vec::new();
    for cand in candidates {
        let out = outputs(&cand);
        let hit = existing
            .iter()
            .zip(&existing_out)
            .map(|(e, e_out)| (e, similarity(&cand, &out, e, e_out)))
            .find(|(_, s)| *s >= tau);
        match hit {
            Some((e, s)) => dropped.push(DuplicateRemoval {
                lf_id: cand.id.clone(),
                similar_to: e.id.clone(),
                similarity: s,
            }),
            None => novel.push(cand),
        }
    }
    (novel, dropped)
}

/// Sorts by accuracy (descending, ties by id) and keeps the first `k`.
pub fn truncate_top_k(
    mut lfs: Vec<LabelFunction>,
    k: usize,
) -> (Vec<LabelFunction>, Vec<LabelFunction>) {
    lfs.sort_by(|a, b| {
        b.est_accuracy
            .total_cmp(&a.est_accuracy)
            .then_with(|| a.id.cmp(&b.id))
    });
    let cut = if lfs.len() > k { lfs.split_off(k) } else { Vec::new() };
    (lfs, cut)
}

/// Feedback about the current pool, passed to generators.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CoverageHint {
    /// Fraction of unlabeled documents with no non-abstain vote.
    pub uncovered_fraction: f64,
    /// Share of covered documents whose majority label is each class.
    pub class_share: Vec<f64>,
}

impl CoverageHint {
    pub fn compute(pool: &[LabelFunction], docs: &[Document], classes: usize) -> Self {
        let Ok(matrix) = build_label_matrix(pool, docs) else {
            return Self {
                uncovered_fraction: 1.0,
                class_share: vec![0.0; classes],
            };
        };
        let probs = majority_vote(&matrix, classes);
        let mut share = vec![0.0; classes];
        let mut covered = 0usize;
        for p in probs.iter().filter(|p| p.covered) {
            share[argmax(&p.dist)] += 1.0;
            covered += 1;
        }
        if covered > 0 {
            share.iter_mut().for_each(|s| *s /= covered as f64);
        }
        Self {
            uncovered_fraction: 1.0 - covered as f64 / docs.len().max(1) as f64,
            class_share: share,
        }
    }

    pub fn describe(&self, class_names: &[String]) -> String {
        let mut s = format!(
            "{:.1}% of the unlabeled documents receive no label from the current rules.",
            100.0 * self.uncovered_fraction
        );
        for (name, share) in class_names.iter().zip(&self.class_share) {
            s.push_str(&format!("\n{name}: {:.1}% of labeled documents", 100.0 * share));
        }
        s
    }
}

pub struct RoundContext<'a> {
    pub round: usize,
    pub category: LfCategory,
    /// `K_c` minus the LFs already accepted in this category.
    pub needed: usize,
    pub hint: &'a CoverageHint,
}

pub type Generator<'a> = Box<dyn FnMut(&RoundContext) -> Result<Synthesized> + 'a>;

#[derive(Debug, Clone)]
pub struct ExploitationOutcome {
    pub pool: LfPool,
    pub reports: Vec<FilterReport>,
    /// Calibration curves of every classifier candidate, keyed by LF id.
    pub curves: BTreeMap<String, CalibrationCurve>,
    /// True when the round budget ran out before every category was full.
    pub hit_round_limit: bool,
}

/// Runs the generate / deduplicate / filter / truncate loop. Categories
/// without a generator are skipped. Terminates after at most
/// `config.max_rounds` rounds.
pub fn run_exploitation_loop(
    dataset: &Dataset,
    config: &PipelineConfig,
    generators: &mut BTreeMap<LfCategory, Generator<'_>>,
) -> ExploitationOutcome {
    let categories: Vec<LfCategory> = config
        .categories
        .iter()
        .copied()
        .filter(|c| generators.contains_key(c))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let sample = dedup_sample(&dataset.unlabeled, config.dedup_sample, config.base_seed);
    let classes = dataset.num_classes();
    let mut pool = LfPool {
        by_category: categories.iter().map(|&c| (c, Vec::new())).collect(),
        ..Default::default()
    };
    let mut reports = Vec::new();
    let mut curves = BTreeMap::new();
    let mut seen_ids: BTreeSet<String> = BTreeSet::new();
    let full = |pool: &LfPool| categories.iter().all(|&c| pool.category(c).len() >= config.k_for(c));

    for round in 1..=config.max_rounds {
        if full(&pool) {
            break;
        }
        pool.round = round;
        let hint = CoverageHint::compute(&pool.all(), &dataset.unlabeled, classes);
        let mut report = FilterReport {
            round,
            ..Default::default()
        };
        let mut combined: BTreeMap<LfCategory, Vec<LabelFunction>> = BTreeMap::new();
        for &c in &categories {
            let accepted = pool.by_category.remove(&c).unwrap_or_default();
            let k = config.k_for(c);
            let mut novel = Vec::new();
            if accepted.len() < k {
                let ctx = RoundContext {
                    round,
                    category: c,
                    needed: k - accepted.len(),
                    hint: &hint,
                };
                let generate = generators.get_mut(&c).expect("generator present");
                match generate(&ctx) {
                    Ok(batch) => {
                        pool.skip_reports.extend(batch.skipped);
                        curves.extend(batch.curves);
                        let mut fresh = Vec::new();
                        for mut lf in batch.lfs {
                            if !seen_ids.insert(lf.id.clone()) {
                                pool.skip_reports.push(SkipReport {
                                    category: c,
                                    candidate: lf.id.clone(),
                                    reason: "id already used".into(),
                                });
                                continue;
                            }
                            lf.estimate(&dataset.seed, &dataset.unlabeled);
                            fresh.push(lf);
                        }
                        report.candidates.insert(c, fresh.len());
                        let (n, dropped) = deduplicate(fresh, &accepted, config.tau_for(c), &sample);
                        report.removed_duplicate.extend(dropped);
                        novel = n;
                    }
                    Err(e) => {
                        log::warn!("{c} generation failed in round {round}: {e}");
                        pool.skip_reports.push(SkipReport {
                            category: c,
                            candidate: format!("{c}-r{round:02}"),
                            reason: e.to_string(),
                        });
                    }
                }
            }
            let mut all = accepted;
            all.extend(novel);
            let (kept, removed, theta) = intra_filter(all, config.alpha);
            report.theta_intra.insert(c, theta);
            report.removed_intra.extend(removed.iter().map(removal));
            combined.insert(c, kept);
        }
        let (kept, removed, theta_inter) = inter_filter(combined, &report.theta_intra);
        report.theta_inter = theta_inter;
        report.removed_inter.extend(removed.iter().map(removal));
        for (c, lfs) in kept {
            let k = config.k_for(c);
            let (top, cut) = truncate_top_k(lfs, k);
            report.removed_truncation.extend(cut.iter().map(removal));
            report.kept.insert(c, top.len());
            if top.len() < k {
                report.shortfall.insert(c, k - top.len());
            }
            pool.by_category.insert(c, top);
        }
        reports.push(report);
    }
    let hit_round_limit = !full(&pool);
    if hit_round_limit {
        log::info!(
            "round budget of {} exhausted with {} LFs accepted",
            config.max_rounds,
            pool.len()
        );
    }
    ExploitationOutcome {
        pool,
        reports,
        curves,
        hit_round_limit,
    }
}
