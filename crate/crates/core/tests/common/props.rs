//! Property checks shared by the `invariants` target (one test each) and the
//! acceptance suite (all at once). Every check runs 200 deterministic cases.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;

use labelcraft::candidate::{
    calibrate_threshold, fit_linear, omega_grid, whm, CalibratedClassifierLf, LinearClassifier,
    LinearTrainConfig, ProbClassifier,
};
use labelcraft::config::PipelineConfig;
use labelcraft::corpus::{
    load_dataset, stratified_seed_sample, write_dataset, Dataset, Document, Format, LabeledExample,
};
use labelcraft::downstream::{fit_mlp, MlpClassifier, MlpTrainConfig, TargetMode};
use labelcraft::exploitation::{inter_filter, intra_filter, run_exploitation_loop, Generator, RoundContext};
use labelcraft::features::{
    cosine, fit_tfidf_with, hashed_counts, hashing_embedding, Featurizer, SparseVec, TfidfConfig, Tokenizer,
};
use labelcraft::label_model::{fit_dawid_skene, majority_vote, weighted_majority_vote, ProbabilisticLabel};
use labelcraft::lf::{
    accuracy_from_outputs, build_label_matrix, estimate_coverage, LabelFunction, LabelMatrix, LfCategory,
    WeakLabel, EPSILON,
};
use labelcraft::metrics::{confusion_matrix, label_quality, weighted_f1};
use labelcraft::pipeline::{run_pipeline, RunStages};
use labelcraft::surface::{generate_surface_lfs, GenerationRequest, MatchMode, OfflineProvider, SurfaceRule};
use labelcraft::synth::{self, SynthConfig};
use labelcraft::candidate::Synthesized;
use labelcraft::label_model::write_labels_jsonl;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::seq::SliceRandom;
use rand::Rng;
use std::sync::Arc;

use super::{random_matrix, random_text, rng, small_dataset, word};

pub const CASES: u32 = 200;

pub type Check = fn() -> Result<(), String>;

fn run<S: Strategy>(
    name: &str,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let config = Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, test).map_err(|e| format!("{name}: {e}"))
}

/// Runs `test` on 200 seeds; complex inputs are built from the seed.
fn seeded(name: &str, test: impl Fn(u64) -> Result<(), TestCaseError>) -> Result<(), String> {
    run(name, any::<u64>(), test)
}

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(TestCaseError::fail(format!($($fmt)+)));
        }
    };
}

fn err<E: std::fmt::Display>(e: E) -> TestCaseError {
    TestCaseError::fail(e.to_string())
}

// ---- corpus ----

pub fn dataset_round_trip() -> Result<(), String> {
    seeded("dataset_round_trip", |s| {
        let mut r = rng(s);
        let a0 = r.gen_range(1..30);
        let a1 = r.gen_range(0..10);
        let a2 = r.gen_range(0..10);
        let ds = small_dataset(&mut r, a0, a1, a2);
        let dir = tempfile::tempdir().map_err(err)?;
        for (name, format) in [("d.jsonl", Format::Jsonl), ("d.csv", Format::Csv)] {
            let path = dir.path().join(name);
            write_dataset(&ds, &path, format).map_err(err)?;
            let back = load_dataset(&path, format, &ds.labels).map_err(err)?;
            ensure!(back == ds, "{name} round trip differs");
        }
        Ok(())
    })
}

pub fn seed_sample_partitions() -> Result<(), String> {
    run(
        "seed_sample_partitions",
        (any::<u64>(), 1usize..60, 0.01f64..=1.0, any::<bool>()),
        |(s, n, frac, stratify)| {
            let mut r = rng(s);
            let examples: Vec<LabeledExample> = (0..n)
                .map(|i| LabeledExample::new(format!("e{i}"), random_text(&mut r, 3), r.gen_range(0..3)))
                .collect();
            let (seed, rest) = match stratified_seed_sample(&examples, frac, s, stratify) {
                Ok(x) => x,
                Err(_) => return Ok(()),
            };
            let mut ids: Vec<&str> = seed.iter().chain(&rest).map(|e| e.doc.id.as_str()).collect();
            ids.sort_unstable();
            let mut want: Vec<&str> = examples.iter().map(|e| e.doc.id.as_str()).collect();
            want.sort_unstable();
            ensure!(ids == want, "seed + remainder is not the input");
            ids.dedup();
            ensure!(ids.len() == n, "seed and remainder overlap");
            Ok(())
        },
    )
}

// ---- label functions ----

fn random_rule(r: &mut impl Rng, classes: usize) -> SurfaceRule {
    let patterns = (0..classes).map(|c| {
        let k = r.gen_range(0..3);
        (c, (0..k).map(|_| word(r.gen_range(0..12)).to_string()).collect::<Vec<_>>())
    });
    let patterns: Vec<_> = patterns.collect();
    let mode = if r.gen_bool(0.5) { MatchMode::Token } else { MatchMode::Substring };
    SurfaceRule::from_class_patterns(patterns, mode).expect("valid rule")
}

fn random_lfs(r: &mut impl Rng, m: usize) -> Vec<LabelFunction> {
    (0..m).map(|j| LabelFunction::surface(format!("lf{j}"), random_rule(r, 3))).collect()
}

pub fn column_coverage_matches_estimate() -> Result<(), String> {
    seeded("column_coverage_matches_estimate", |s| {
        let mut r = rng(s);
        let a0 = r.gen_range(1..40);
        let ds = small_dataset(&mut r, a0, 0, 0);
        let a0 = r.gen_range(1..6);
        let lfs = random_lfs(&mut r, a0);
        let m = build_label_matrix(&lfs, &ds.unlabeled).map_err(err)?;
        for (j, lf) in lfs.iter().enumerate() {
            let a = m.column_coverage(j);
            let b = estimate_coverage(lf, &ds.unlabeled);
            ensure!((a - b).abs() < 1e-12, "column {j}: {a} vs {b}");
        }
        Ok(())
    })
}

pub fn accuracy_count_oracle() -> Result<(), String> {
    seeded("accuracy_count_oracle", |s| {
        let mut r = rng(s);
        let n = r.gen_range(0..40);
        let gold: Vec<usize> = (0..n).map(|_| r.gen_range(0..3)).collect();
        let out: Vec<WeakLabel> = (0..n)
            .map(|_| if r.gen_bool(0.3) { WeakLabel::Abstain } else { WeakLabel::Class(r.gen_range(0..3)) })
            .collect();
        let covered = out.iter().filter(|o| !o.is_abstain()).count();
        let correct = out.iter().zip(&gold).filter(|(o, g)| o.class() == Some(**g)).count();
        let acc = accuracy_from_outputs(&out, &gold);
        ensure!((0.0..=1.0).contains(&acc), "accuracy {acc} out of range");
        ensure!(
            (acc - correct as f64 / (covered as f64 + EPSILON)).abs() < 1e-12,
            "accuracy {acc} disagrees with counts"
        );
        let (mut out2, mut gold2) = (out.clone(), gold.clone());
        out2.push(WeakLabel::Class(1));
        gold2.push(1);
        let acc2 = accuracy_from_outputs(&out2, &gold2);
        let want = (correct + 1) as f64 / ((covered + 1) as f64 + EPSILON);
        ensure!((acc2 - want).abs() < 1e-12, "after adding a correct vote: {acc2} vs {want}");
        ensure!(acc2 >= acc - 1e-12, "adding a correct vote lowered accuracy");
        Ok(())
    })
}

pub fn label_matrix_is_pure() -> Result<(), String> {
    seeded("label_matrix_is_pure", |s| {
        let mut r = rng(s);
        let a0 = r.gen_range(1..40);
        let ds = small_dataset(&mut r, a0, 0, 0);
        let a0 = r.gen_range(1..6);
        let lfs = random_lfs(&mut r, a0);
        let a = build_label_matrix(&lfs, &ds.unlabeled).map_err(err)?;
        let b = build_label_matrix(&lfs, &ds.unlabeled).map_err(err)?;
        ensure!(a == b, "two builds differ");
        Ok(())
    })
}

// ---- surface rules ----

pub fn surface_case_and_whitespace_invariant() -> Result<(), String> {
    seeded("surface_case_and_whitespace_invariant", |s| {
        let mut r = rng(s);
        let rule = random_rule(&mut r, 3);
        let len = r.gen_range(0..8);
        let text = random_text(&mut r, len);
        let upper: String = text
            .chars()
            .map(|ch| if r.gen_bool(0.5) { ch.to_ascii_uppercase() } else { ch })
            .collect();
        let padded = format!("{}{upper}{}", " \t\n".repeat(r.gen_range(0..3)), "  \n".repeat(r.gen_range(0..3)));
        let a = rule.eval(&Document::new("x", text.clone()));
        let b = rule.eval(&Document::new("x", padded));
        ensure!(a == b, "{text:?}: {a:?} vs {b:?}");
        Ok(())
    })
}

pub fn surface_rule_round_trip() -> Result<(), String> {
    seeded("surface_rule_round_trip", |s| {
        let mut r = rng(s);
        let rule = random_rule(&mut r, 3);
        let json = serde_json::to_string(&rule).map_err(err)?;
        let back: SurfaceRule = serde_json::from_str(&json).map_err(err)?;
        ensure!(back == rule, "serde round trip differs");
        let labels = labelcraft::corpus::LabelSpace::new(["a", "b", "c"]).map_err(err)?;
        let file = rule.to_file("r", &labels);
        let back = SurfaceRule::from_file(&file, &labels).map_err(err)?;
        ensure!(back == rule, "rule file round trip differs");
        Ok(())
    })
}

pub fn offline_provider_deterministic() -> Result<(), String> {
    seeded("offline_provider_deterministic", |s| {
        let mut r = rng(s);
        let names = vec!["a".to_string(), "b".to_string()];
        let examples = (0..r.gen_range(1..20))
            .map(|_| (random_text(&mut r, 5), names[r.gen_range(0..2)].clone()))
            .collect();
        let request = GenerationRequest {
            task_description: "t".into(),
            class_names: names,
            examples,
            count: r.gen_range(1..6),
            hint: None,
        };
        let a = generate_surface_lfs(&OfflineProvider::new(s), &request).map_err(err)?;
        let b = generate_surface_lfs(&OfflineProvider::new(s), &request).map_err(err)?;
        ensure!(a == b, "offline provider is not deterministic");
        Ok(())
    })
}

// ---- features ----

pub fn tfidf_unit_norm() -> Result<(), String> {
    seeded("tfidf_unit_norm", |s| {
        let mut r = rng(s);
        let a0 = r.gen_range(1..30);
        let ds = small_dataset(&mut r, a0, 0, 0);
        let model = match fit_tfidf_with(&ds.unlabeled, &Tokenizer::default(), TfidfConfig::default()) {
            Ok(m) => m,
            Err(_) => return Ok(()),
        };
        let len = r.gen_range(1..10);
        let text = random_text(&mut r, len);
        let v = model.transform_sparse(&text);
        if !v.entries.is_empty() {
            ensure!((v.norm() - 1.0).abs() < 1e-9, "norm {}", v.norm());
        }
        Ok(())
    })
}

pub fn tfidf_permutation_invariant() -> Result<(), String> {
    seeded("tfidf_permutation_invariant", |s| {
        let mut r = rng(s);
        let a0 = r.gen_range(1..30);
        let ds = small_dataset(&mut r, a0, 0, 0);
        let mut shuffled = ds.unlabeled.clone();
        shuffled.shuffle(&mut r);
        let cfg = TfidfConfig { ngram_range: (1, r.gen_range(1..3)), min_df: r.gen_range(1..3) };
        let (a, b) = match (
            fit_tfidf_with(&ds.unlabeled, &Tokenizer::default(), cfg),
            fit_tfidf_with(&shuffled, &Tokenizer::default(), cfg),
        ) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(_), Err(_)) => return Ok(()),
            _ => return Err(TestCaseError::fail("only one order fitted")),
        };
        for d in &ds.unlabeled {
            ensure!(a.transform_terms(&d.text) == b.transform_terms(&d.text), "{:?} differs", d.text);
        }
        Ok(())
    })
}

pub fn hashing_embedding_stable() -> Result<(), String> {
    seeded("hashing_embedding_stable", |s| {
        let mut r = rng(s);
        let dim = [8, 64, 256][r.gen_range(0..3)];
        let len = r.gen_range(1..10);
        let text = random_text(&mut r, len);
        let x = hashing_embedding(&text, dim);
        if x.iter().any(|v| *v != 0.0) {
            ensure!((cosine(&x, &x) - 1.0).abs() < 1e-12, "cos(x, x) != 1");
        }
        let longer = format!("{text} {}", word(r.gen_range(0..12)));
        let (a, b) = (hashed_counts(&text, dim), hashed_counts(&longer, dim));
        let changed = a.iter().zip(&b).filter(|(p, q)| p != q).count();
        ensure!(changed <= 2, "one appended token changed {changed} coordinates");
        Ok(())
    })
}

// ---- candidates and calibration ----

pub fn whm_is_a_mean_and_monotone() -> Result<(), String> {
    run(
        "whm_is_a_mean_and_monotone",
        (1e-6f64..=1.0, 1e-6f64..=1.0, 0.0f64..5.0, 0.0f64..0.5),
        |(p, c, beta, d)| {
            let h = whm(p, c, beta);
            ensure!(h >= p.min(c) - 1e-12 && h <= p.max(c) + 1e-12, "whm({p},{c},{beta}) = {h}");
            ensure!(whm((p + d).min(1.0), c, beta) >= h - 1e-12, "not monotone in p");
            ensure!(whm(p, (c + d).min(1.0), beta) >= h - 1e-12, "not monotone in c");
            Ok(())
        },
    )
}

fn random_linear_lf(r: &mut impl Rng, ds: &Dataset, classes: usize) -> Result<CalibratedClassifierLf, TestCaseError> {
    let model = fit_tfidf_with(&ds.unlabeled, &Tokenizer::default(), TfidfConfig::default()).map_err(err)?;
    let dim = model.dim();
    let scale = r.gen_range(0.5..6.0);
    let clf = LinearClassifier {
        weights: (0..classes).map(|_| (0..dim).map(|_| r.gen_range(-scale..scale)).collect()).collect(),
        bias: (0..classes).map(|_| r.gen_range(-1.0..1.0)).collect(),
        trained_on: None,
    };
    Ok(CalibratedClassifierLf::new(ProbClassifier::Linear(clf), Arc::new(Featurizer::tfidf(model))))
}

/// Exhaustive grid argmax written from the definitions, independent of the
/// library's calibration code.
pub fn brute_force_omega(
    seed: &[(usize, f64, usize)],
    coverage_conf: &[f64],
    beta: f64,
    step_count: usize,
) -> f64 {
    let mut best = (f64::NEG_INFINITY, 0.0);
    for k in 0..=step_count {
        let omega = k as f64 / step_count as f64;
        let votes: Vec<&(usize, f64, usize)> = seed.iter().filter(|t| t.1 > omega).collect();
        let precision = votes.iter().filter(|t| t.0 == t.2).count() as f64 / (votes.len() as f64 + 1e-9);
        let coverage = coverage_conf.iter().filter(|&&c| c > omega).count() as f64 / coverage_conf.len() as f64;
        let b2 = beta * beta;
        let score = if b2 * precision + coverage == 0.0 {
            0.0
        } else {
            (1.0 + b2) * precision * coverage / (b2 * precision + coverage)
        };
        if score > best.0 {
            best = (score, omega);
        }
    }
    best.1
}

/// `(argmax, max probability)` from raw weights, bypassing the library's
/// prediction code.
pub fn manual_score(clf: &LinearClassifier, x: &SparseVec) -> (usize, f64) {
    let dense = x.to_dense();
    let logits: Vec<f64> = clf
        .weights
        .iter()
        .zip(&clf.bias)
        .map(|(w, b)| w.iter().zip(&dense).map(|(a, v)| a * v).sum::<f64>() + b)
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let mut best = (0, f64::NEG_INFINITY);
    for (k, l) in logits.iter().enumerate() {
        let p = (l - max).exp() / z;
        if p > best.1 {
            best = (k, p);
        }
    }
    best
}

pub fn calibration_oracle_case(r: &mut impl Rng, n_unlabeled: usize, n_seed: usize) -> Result<(f64, f64), TestCaseError> {
    let mut local = rng(r.gen());
    let ds = small_dataset(&mut local, n_unlabeled, n_seed, 0);
    let mut lf = random_linear_lf(r, &ds, 3)?;
    let beta = [0.1, 0.5, 1.0, 2.0][r.gen_range(0..4)];
    let curve = calibrate_threshold(&mut lf, &ds.seed, &ds.unlabeled, beta, 0.01).map_err(err)?;
    let ProbClassifier::Linear(clf) = lf.classifier.as_ref() else { unreachable!() };
    let score = |d: &Document| manual_score(clf, &lf.featurizer.features(d).expect("tfidf features"));
    let seed: Vec<(usize, f64, usize)> = ds.seed.iter().map(|e| {
        let (k, c) = score(&e.doc);
        (k, c, e.gold)
    }).collect();
    let cov: Vec<f64> = if ds.seed.len() < 50 {
        ds.unlabeled.iter().map(|d| score(d).1).collect()
    } else {
        seed.iter().map(|t| t.1).collect()
    };
    Ok((curve.best_omega, brute_force_omega(&seed, &cov, beta, 100)))
}

pub fn calibration_matches_brute_force() -> Result<(), String> {
    seeded("calibration_matches_brute_force", |s| {
        let mut r = rng(s);
        let n_seed = if r.gen_bool(0.5) { r.gen_range(1..50) } else { r.gen_range(50..70) };
        let a0 = r.gen_range(5..40);
        let (got, want) = calibration_oracle_case(&mut r, a0, n_seed)?;
        ensure!(got == want, "best omega {got} vs brute force {want}");
        Ok(())
    })
}

pub fn coverage_non_increasing_in_omega() -> Result<(), String> {
    seeded("coverage_non_increasing_in_omega", |s| {
        let mut r = rng(s);
        let mut local = rng(r.gen());
        let ds = small_dataset(&mut local, r.gen_range(5..40), r.gen_range(1..30), 0);
        let mut lf = random_linear_lf(&mut r, &ds, 3)?;
        let curve = calibrate_threshold(&mut lf, &ds.seed, &ds.unlabeled, 0.1, 0.01).map_err(err)?;
        ensure!(curve.grid.len() == omega_grid(0.01).len(), "grid size");
        for w in curve.grid.windows(2) {
            ensure!(w[1].coverage <= w[0].coverage, "coverage rose from {} to {}", w[0].omega, w[1].omega);
        }
        Ok(())
    })
}

pub fn linear_training_loss_non_increasing() -> Result<(), String> {
    seeded("linear_training_loss_non_increasing", |s| {
        let mut r = rng(s);
        let n = r.gen_range(2..30);
        let dim = r.gen_range(1..12);
        let classes = r.gen_range(2..4);
        let xs: Vec<SparseVec> = (0..n)
            .map(|_| {
                let v: Vec<f64> = (0..dim).map(|_| if r.gen_bool(0.4) { r.gen_range(-1.0..1.0) } else { 0.0 }).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                SparseVec::from_dense(&v.iter().map(|x| if norm > 0.0 { x / norm } else { 0.0 }).collect::<Vec<_>>())
            })
            .collect();
        let ys: Vec<usize> = (0..n).map(|_| r.gen_range(0..classes)).collect();
        let refs: Vec<&SparseVec> = xs.iter().collect();
        let cfg = LinearTrainConfig { epochs: 60, ..LinearTrainConfig::default() };
        let (_, losses) = fit_linear(&refs, &ys, classes, dim, &cfg);
        for (t, w) in losses.windows(2).enumerate() {
            ensure!(w[1] <= w[0] + 1e-9, "loss rose at epoch {t}: {} -> {}", w[0], w[1]);
        }
        Ok(())
    })
}

// ---- exploitation ----

fn accuracy_pool(r: &mut impl Rng, category: LfCategory, prefix: &str) -> Vec<LabelFunction> {
    (0..r.gen_range(0..8))
        .map(|i| super::lf_with_accuracy(&format!("{prefix}{i}"), category, r.gen_range(0.0..=1.0)))
        .collect()
}

pub fn intra_filter_keeps_max() -> Result<(), String> {
    run("intra_filter_keeps_max", (any::<u64>(), 0.0f64..=1.0), |(s, alpha)| {
        let mut r = rng(s);
        let pool = accuracy_pool(&mut r, LfCategory::Surface, "x");
        let best = pool.iter().map(|l| l.est_accuracy).fold(f64::NEG_INFINITY, f64::max);
        let n = pool.len();
        let (kept, removed, theta) = intra_filter(pool.clone(), alpha);
        ensure!(kept.len() + removed.len() == n, "lost LFs");
        if n > 0 {
            ensure!(kept.iter().any(|l| l.est_accuracy == best), "max-accuracy LF removed");
        }
        let (kept0, removed0, theta0) = intra_filter(pool, 0.0);
        ensure!(theta0 == 0.0 && removed0.is_empty() && kept0.len() == n, "alpha = 0 is not a no-op");
        ensure!(theta <= best.max(0.0), "theta above max");
        Ok(())
    })
}

pub fn filters_are_monotone() -> Result<(), String> {
    run("filters_are_monotone", (any::<u64>(), 0.0f64..=1.0), |(s, alpha)| {
        let mut r = rng(s);
        let mut thetas = BTreeMap::new();
        let mut survivors = BTreeMap::new();
        let mut total = 0;
        let mut after_intra = 0;
        for c in LfCategory::ALL {
            let pool = accuracy_pool(&mut r, c, c.as_str());
            total += pool.len();
            let (kept, _, theta) = intra_filter(pool, alpha);
            after_intra += kept.len();
            thetas.insert(c, theta);
            survivors.insert(c, kept);
        }
        let intra_ids: Vec<String> = survivors.values().flatten().map(|l| l.id.clone()).collect();
        let (kept, removed, theta) = inter_filter(survivors, &thetas);
        let after_inter: usize = kept.values().map(Vec::len).sum();
        ensure!(total >= after_intra && after_intra >= after_inter, "kept set grew");
        ensure!(after_inter + removed.len() == after_intra, "inter filter lost LFs");
        ensure!(removed.iter().all(|l| intra_ids.contains(&l.id)), "inter removed a non-survivor");
        if alpha == 0.0 {
            ensure!(theta == 0.0 && removed.is_empty(), "alpha = 0 is not a no-op");
        }
        Ok(())
    })
}

fn stub_generators<'a>(seed: u64) -> BTreeMap<LfCategory, Generator<'a>> {
    let mut gens: BTreeMap<LfCategory, Generator<'a>> = BTreeMap::new();
    for c in LfCategory::ALL {
        let gen: Generator<'a> = Box::new(move |ctx: &RoundContext| {
            let mut r = rng(seed ^ (ctx.round as u64) << 8 ^ c as u64);
            let lfs = (0..r.gen_range(0..4))
                .map(|k| {
                    let mut lf = LabelFunction::surface(format!("{}-r{}-k{k}", c.as_str(), ctx.round), random_rule(&mut r, 3));
                    lf.category = c;
                    lf
                })
                .collect();
            Ok(Synthesized { lfs, curves: BTreeMap::new(), skipped: Vec::new() })
        });
        gens.insert(c, gen);
    }
    gens
}

fn loop_config(r: &mut impl Rng) -> PipelineConfig {
    let mut cfg = PipelineConfig::default().with_k(r.gen_range(1..5));
    cfg.alpha = r.gen_range(0.0..=1.0);
    cfg.max_rounds = r.gen_range(1..6);
    cfg.candidates_per_round = r.gen_range(1..5);
    cfg
}

pub fn loop_terminates_within_budget() -> Result<(), String> {
    seeded("loop_terminates_within_budget", |s| {
        let mut r = rng(s);
        let a0 = r.gen_range(1..30);
        let a1 = r.gen_range(1..15);
        let ds = small_dataset(&mut r, a0, a1, 0);
        let cfg = loop_config(&mut r);
        let out = run_exploitation_loop(&ds, &cfg, &mut stub_generators(s));
        ensure!(out.reports.len() <= cfg.max_rounds, "{} rounds > {}", out.reports.len(), cfg.max_rounds);
        for c in LfCategory::ALL {
            ensure!(out.pool.category(c).len() <= cfg.k_for(c), "category {c:?} over K");
        }
        Ok(())
    })
}

pub fn loop_is_reproducible() -> Result<(), String> {
    seeded("loop_is_reproducible", |s| {
        let mut r = rng(s);
        let a0 = r.gen_range(1..30);
        let a1 = r.gen_range(1..15);
        let ds = small_dataset(&mut r, a0, a1, 0);
        let cfg = loop_config(&mut r);
        let a = run_exploitation_loop(&ds, &cfg, &mut stub_generators(s));
        let b = run_exploitation_loop(&ds, &cfg, &mut stub_generators(s));
        ensure!(a.pool.ids() == b.pool.ids(), "pools differ");
        Ok(())
    })
}

// ---- label models ----

fn check_simplex(probs: &[ProbabilisticLabel]) -> Result<(), TestCaseError> {
    for p in probs {
        let sum: f64 = p.dist.iter().sum();
        ensure!((sum - 1.0).abs() < 1e-9, "sum {sum}");
        ensure!(p.dist.iter().all(|&x| x >= 0.0), "negative mass");
    }
    Ok(())
}

fn random_weights(r: &mut impl Rng, m: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..m).map(|_| r.gen_range(0.0..2.0)).collect();
    w[0] += 0.1;
    w
}

pub fn label_model_outputs_are_distributions() -> Result<(), String> {
    seeded("label_model_outputs_are_distributions", |s| {
        let mut r = rng(s);
        let (n, m, c) = (r.gen_range(1..60), r.gen_range(1..6), r.gen_range(2..5));
        let a0 = r.gen_range(0.05..1.0);
        let matrix = random_matrix(&mut r, n, m, c, a0);
        check_simplex(&majority_vote(&matrix, c))?;
        check_simplex(&weighted_majority_vote(&matrix, &random_weights(&mut r, m), c).map_err(err)?)?;
        if let Ok(model) = fit_dawid_skene(&matrix, c, 30, 1e-6) {
            check_simplex(&model.predict(&matrix))?;
        }
        Ok(())
    })
}

fn permute_columns(matrix: &LabelMatrix, perm: &[usize]) -> LabelMatrix {
    let cols: Vec<Vec<WeakLabel>> = perm.iter().map(|&j| matrix.column(j)).collect();
    LabelMatrix::from_columns(&cols, matrix.row_ids.clone(), perm.iter().map(|&j| matrix.col_ids[j].clone()).collect())
        .expect("rectangular")
}

pub fn voting_symmetries() -> Result<(), String> {
    seeded("voting_symmetries", |s| {
        let mut r = rng(s);
        let (n, m, c) = (r.gen_range(1..60), r.gen_range(1..6), r.gen_range(2..5));
        let a0 = r.gen_range(0.05..1.0);
        let matrix = random_matrix(&mut r, n, m, c, a0);
        let mv = majority_vote(&matrix, c);
        let mut perm: Vec<usize> = (0..m).collect();
        perm.shuffle(&mut r);
        ensure!(majority_vote(&permute_columns(&matrix, &perm), c) == mv, "MV depends on column order");
        let w = r.gen_range(0.1..5.0);
        ensure!(weighted_majority_vote(&matrix, &vec![w; m], c).map_err(err)? == mv, "equal weights differ from MV");
        let weights = random_weights(&mut r, m);
        let k = r.gen_range(0.01..100.0);
        let scaled: Vec<f64> = weights.iter().map(|x| x * k).collect();
        let a = weighted_majority_vote(&matrix, &weights, c).map_err(err)?;
        let b = weighted_majority_vote(&matrix, &scaled, c).map_err(err)?;
        for (p, q) in a.iter().zip(&b) {
            ensure!(p.covered == q.covered, "coverage changed under scaling");
            for (x, y) in p.dist.iter().zip(&q.dist) {
                ensure!((x - y).abs() < 1e-12, "scaling changed {x} to {y}");
            }
        }
        Ok(())
    })
}

pub fn dawid_skene_objective_non_decreasing() -> Result<(), String> {
    seeded("dawid_skene_objective_non_decreasing", |s| {
        let mut r = rng(s);
        let (n, m, c) = (r.gen_range(5..120), r.gen_range(2..6), r.gen_range(2..4));
        let gold: Vec<usize> = (0..n).map(|_| r.gen_range(0..c)).collect();
        let acc: Vec<f64> = (0..m).map(|_| r.gen_range(0.2..0.95)).collect();
        let a0 = r.gen_range(0.2..1.0);
        let matrix = super::noisy_lf_matrix(&mut r, &gold, &acc, c, a0);
        let Ok(model) = fit_dawid_skene(&matrix, c, 40, 0.0) else { return Ok(()) };
        for (t, w) in model.objective.windows(2).enumerate() {
            ensure!(w[1] >= w[0] - 1e-9, "EM objective fell at iteration {t}: {} -> {}", w[0], w[1]);
        }
        Ok(())
    })
}

// ---- metrics ----

fn brute_f1(pred: &[usize], gold: &[usize], k: usize) -> f64 {
    let tp = pred.iter().zip(gold).filter(|(p, g)| **p == k && **g == k).count() as f64;
    let fp = pred.iter().zip(gold).filter(|(p, g)| **p == k && **g != k).count() as f64;
    let fne = pred.iter().zip(gold).filter(|(p, g)| **p != k && **g == k).count() as f64;
    if 2.0 * tp + fp + fne == 0.0 {
        0.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fne)
    }
}

pub fn f1_matches_oracle() -> Result<(), String> {
    seeded("f1_matches_oracle", |s| {
        let mut r = rng(s);
        let (n, c) = (r.gen_range(1..=10), r.gen_range(2..5));
        let gold: Vec<usize> = (0..n).map(|_| r.gen_range(0..c)).collect();
        let pred: Vec<usize> = (0..n).map(|_| r.gen_range(0..c)).collect();
        let (per_class, weighted) = weighted_f1(&pred, &gold, c).map_err(err)?;
        ensure!((0.0..=1.0).contains(&weighted), "weighted F1 {weighted}");
        let mut want = 0.0;
        for (k, &got) in per_class.iter().enumerate() {
            let f = brute_f1(&pred, &gold, k);
            ensure!((got - f).abs() < 1e-12, "class {k}: {got} vs {f}");
            want += gold.iter().filter(|&&g| g == k).count() as f64 / n as f64 * f;
        }
        ensure!((weighted - want).abs() < 1e-12, "weighted {weighted} vs {want}");
        let conf = confusion_matrix(&pred, &gold, c);
        ensure!(conf.iter().flatten().sum::<usize>() == n, "confusion total");
        Ok(())
    })
}

pub fn f1_balanced_equals_macro() -> Result<(), String> {
    seeded("f1_balanced_equals_macro", |s| {
        let mut r = rng(s);
        let (per, c) = (r.gen_range(1..6), r.gen_range(2..5));
        let mut gold: Vec<usize> = (0..c).flat_map(|k| std::iter::repeat_n(k, per)).collect();
        gold.shuffle(&mut r);
        let pred: Vec<usize> = gold.iter().map(|&g| if r.gen_bool(0.6) { g } else { r.gen_range(0..c) }).collect();
        let (per_class, weighted) = weighted_f1(&pred, &gold, c).map_err(err)?;
        let macro_f1 = per_class.iter().sum::<f64>() / c as f64;
        ensure!((weighted - macro_f1).abs() < 1e-12, "{weighted} vs macro {macro_f1}");
        Ok(())
    })
}

pub fn label_quality_bounded() -> Result<(), String> {
    run("label_quality_bounded", (0.0f64..=1.0, 0.0f64..=1.0), |(c, f)| {
        let q = label_quality(c, f);
        ensure!(q <= c && q <= f, "quality {q} exceeds a factor ({c}, {f})");
        Ok(())
    })
}

// ---- downstream ----

fn mlp_rows(r: &mut impl Rng, n: usize, dim: usize, classes: usize) -> Vec<(SparseVec, usize)> {
    (0..n)
        .map(|_| {
            let y = r.gen_range(0..classes);
            let mut v = vec![0.0; dim];
            v[y % dim] = 1.0;
            for x in v.iter_mut() {
                if r.gen_bool(0.2) {
                    *x += r.gen_range(0.0..0.5);
                }
            }
            (SparseVec::from_dense(&v), y)
        })
        .collect()
}

fn one_hot(k: usize, c: usize) -> Vec<f64> {
    (0..c).map(|i| if i == k { 1.0 } else { 0.0 }).collect()
}

fn small_mlp(seed: u64) -> MlpTrainConfig {
    MlpTrainConfig { hidden: 16, epochs: 30, batch_size: 8, seed, ..MlpTrainConfig::default() }
}

pub fn mlp_loss_settles() -> Result<(), String> {
    seeded("mlp_loss_settles", |s| {
        let mut r = rng(s);
        let (dim, c) = (r.gen_range(3..12), r.gen_range(2..4));
        let a0 = r.gen_range(8..40);
        let rows = mlp_rows(&mut r, a0, dim, c);
        let data: Vec<(&SparseVec, Vec<f64>)> = rows.iter().map(|(x, y)| (x, one_hot(*y, c))).collect();
        let cfg = small_mlp(s);
        let (_, report) = fit_mlp(&data, dim, c, &cfg).map_err(err)?;
        let start = cfg.epochs / 5;
        for t in start.max(1)..report.epoch_losses.len() {
            let (prev, cur) = (report.epoch_losses[t - 1], report.epoch_losses[t]);
            ensure!(cur <= prev * 1.05 + 1e-6, "epoch {t}: {prev} -> {cur}");
        }
        Ok(())
    })
}

pub fn mlp_soft_one_hot_equals_hard() -> Result<(), String> {
    seeded("mlp_soft_one_hot_equals_hard", |s| {
        let mut r = rng(s);
        let (dim, c) = (r.gen_range(3..12), r.gen_range(2..4));
        let a0 = r.gen_range(4..20);
        let rows = mlp_rows(&mut r, a0, dim, c);
        let data: Vec<(&SparseVec, Vec<f64>)> = rows.iter().map(|(x, y)| (x, one_hot(*y, c))).collect();
        let soft = MlpTrainConfig { target_mode: TargetMode::Soft, epochs: 5, ..small_mlp(s) };
        let hard = MlpTrainConfig { target_mode: TargetMode::Hard, ..soft.clone() };
        let a = fit_mlp(&data, dim, c, &soft).map_err(err)?;
        let b = fit_mlp(&data, dim, c, &hard).map_err(err)?;
        ensure!(a.0 == b.0 && a.1 == b.1, "soft one-hot training differs from hard");
        Ok(())
    })
}

pub fn mlp_forward_is_distribution() -> Result<(), String> {
    seeded("mlp_forward_is_distribution", |s| {
        let mut r = rng(s);
        let (dim, c) = (r.gen_range(1..20), r.gen_range(2..5));
        let model = MlpClassifier::init(dim, r.gen_range(1..20), c, &mut r);
        let v: Vec<f64> = (0..dim).map(|_| if r.gen_bool(0.5) { r.gen_range(-50.0..50.0) } else { 0.0 }).collect();
        let p = model.predict_proba(&SparseVec::from_dense(&v)).map_err(err)?;
        ensure!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9, "sum {}", p.iter().sum::<f64>());
        ensure!(p.iter().all(|x| *x >= 0.0), "negative probability");
        Ok(())
    })
}

// ---- config and pipeline ----

pub fn config_round_trip() -> Result<(), String> {
    run(
        "config_round_trip",
        (0.0f64..=1.0, 0.0f64..3.0, 1usize..30, any::<u64>(), any::<bool>(), 1usize..20),
        |(alpha, beta, k, seed, abstain, rounds)| {
            let mut cfg = PipelineConfig::default().with_k(k);
            cfg.alpha = alpha;
            cfg.beta = beta;
            cfg.base_seed = seed;
            cfg.abstain_enabled = abstain;
            cfg.max_rounds = rounds;
            let back = PipelineConfig::from_json(&cfg.to_json_pretty()).map_err(err)?;
            ensure!(back == cfg, "config round trip differs");
            ensure!(back.hash() == cfg.hash(), "hash changed after round trip");
            Ok(())
        },
    )
}

fn tiny_corpus(seed: u64) -> Dataset {
    let cfg = SynthConfig { n_unlabeled: 60, n_seed: 12, n_test: 4, ..SynthConfig::noisy() };
    synth::generate(&cfg, seed).expect("synthetic corpus").dataset
}

fn tiny_config(seed: u64) -> PipelineConfig {
    let mut cfg = synth::separable_config(seed).with_k(2);
    cfg.candidates_per_round = 2;
    cfg.max_rounds = 2;
    cfg.structural.epochs = 30;
    cfg.semantic.epochs = 30;
    cfg.semantic.mlp_head.epochs = 5;
    cfg.dedup_sample = 30;
    cfg
}

pub fn abstain_off_zeroes_thresholds() -> Result<(), String> {
    seeded("abstain_off_zeroes_thresholds", |s| {
        let ds = tiny_corpus(s);
        let mut cfg = tiny_config(s);
        cfg.abstain_enabled = false;
        let res = run_pipeline(&ds, &cfg, RunStages { skip_downstream: true }).map_err(err)?;
        for lf in &res.lfs {
            ensure!(lf.threshold() == 0.0, "{} has omega {}", lf.id, lf.threshold());
            if lf.category != LfCategory::Surface {
                for d in &ds.unlabeled {
                    ensure!(!lf.apply(d).is_abstain(), "{} abstained with abstention off", lf.id);
                }
            }
        }
        Ok(())
    })
}

fn labels_bytes(res: &labelcraft::pipeline::PipelineResult, ds: &Dataset) -> Result<Vec<u8>, TestCaseError> {
    let mut out = Vec::new();
    write_labels_jsonl(&mut out, &res.matrix.row_ids, &res.probs, &ds.labels).map_err(err)?;
    Ok(out)
}

pub fn pipeline_is_deterministic() -> Result<(), String> {
    seeded("pipeline_is_deterministic", |s| {
        let ds = tiny_corpus(s);
        let cfg = tiny_config(s);
        let a = run_pipeline(&ds, &cfg, RunStages { skip_downstream: true }).map_err(err)?;
        let b = run_pipeline(&ds, &cfg, RunStages { skip_downstream: true }).map_err(err)?;
        ensure!(labels_bytes(&a, &ds)? == labels_bytes(&b, &ds)?, "label JSONL differs");
        Ok(())
    })
}

/// Every property, in module order.
pub const ALL: &[(&str, Check)] = &[
    ("dataset_round_trip", dataset_round_trip),
    ("seed_sample_partitions", seed_sample_partitions),
    ("column_coverage_matches_estimate", column_coverage_matches_estimate),
    ("accuracy_count_oracle", accuracy_count_oracle),
    ("label_matrix_is_pure", label_matrix_is_pure),
    ("surface_case_and_whitespace_invariant", surface_case_and_whitespace_invariant),
    ("surface_rule_round_trip", surface_rule_round_trip),
    ("offline_provider_deterministic", offline_provider_deterministic),
    ("tfidf_unit_norm", tfidf_unit_norm),
    ("tfidf_permutation_invariant", tfidf_permutation_invariant),
    ("hashing_embedding_stable", hashing_embedding_stable),
    ("whm_is_a_mean_and_monotone", whm_is_a_mean_and_monotone),
    ("calibration_matches_brute_force", calibration_matches_brute_force),
    ("coverage_non_increasing_in_omega", coverage_non_increasing_in_omega),
    ("linear_training_loss_non_increasing", linear_training_loss_non_increasing),
    ("intra_filter_keeps_max", intra_filter_keeps_max),
    ("filters_are_monotone", filters_are_monotone),
    ("loop_terminates_within_budget", loop_terminates_within_budget),
    ("loop_is_reproducible", loop_is_reproducible),
    ("label_model_outputs_are_distributions", label_model_outputs_are_distributions),
    ("voting_symmetries", voting_symmetries),
    ("dawid_skene_objective_non_decreasing", dawid_skene_objective_non_decreasing),
    ("f1_matches_oracle", f1_matches_oracle),
    ("f1_balanced_equals_macro", f1_balanced_equals_macro),
    ("label_quality_bounded", label_quality_bounded),
    ("mlp_loss_settles", mlp_loss_settles),
    ("mlp_soft_one_hot_equals_hard", mlp_soft_one_hot_equals_hard),
    ("mlp_forward_is_distribution", mlp_forward_is_distribution),
    ("config_round_trip", config_round_trip),
    ("abstain_off_zeroes_thresholds", abstain_off_zeroes_thresholds),
    ("pipeline_is_deterministic", pipeline_is_deterministic),
];
