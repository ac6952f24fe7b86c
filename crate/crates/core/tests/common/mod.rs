#![allow(dead_code)]

pub mod props;

use std::time::Instant;

use labelcraft::corpus::{Dataset, Document, LabelSpace, LabeledExample};
use labelcraft::lf::{LabelFunction, LabelMatrix, LfCategory, WeakLabel};
use labelcraft::surface::{MatchMode, SurfaceRule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Surface LF with a placeholder rule and a preset accuracy estimate.
pub fn lf_with_accuracy(id: &str, category: LfCategory, accuracy: f64) -> LabelFunction {
    let rule = SurfaceRule::from_class_patterns([(0, vec![id.to_string()])], MatchMode::Token)
        .expect("valid rule");
    let mut lf = LabelFunction::surface(id, rule);
    lf.category = category;
    lf.est_accuracy = accuracy;
    lf
}

pub fn random_matrix(rng: &mut ChaCha8Rng, n: usize, m: usize, classes: usize, vote_p: f64) -> LabelMatrix {
    let rows = (0..n)
        .map(|_| {
            (0..m)
                .map(|_| {
                    if rng.gen_bool(vote_p) {
                        WeakLabel::Class(rng.gen_range(0..classes))
                    } else {
                        WeakLabel::Abstain
                    }
                })
                .collect()
        })
        .collect();
    LabelMatrix::from_rows(
        rows,
        (0..n).map(|i| format!("d{i}")).collect(),
        (0..m).map(|j| format!("lf{j}")).collect(),
    )
    .expect("rectangular")
}

/// Matrix whose column `j` votes the gold class with probability `acc[j]`
/// and a uniformly chosen wrong class otherwise, on a `vote_p` share of rows.
pub fn noisy_lf_matrix(
    rng: &mut ChaCha8Rng,
    gold: &[usize],
    acc: &[f64],
    classes: usize,
    vote_p: f64,
) -> LabelMatrix {
    let rows = gold
        .iter()
        .map(|&g| {
            acc.iter()
                .map(|&a| {
                    if !rng.gen_bool(vote_p) {
                        WeakLabel::Abstain
                    } else if rng.gen_bool(a) {
                        WeakLabel::Class(g)
                    } else {
                        let w = rng.gen_range(0..classes - 1);
                        WeakLabel::Class(if w >= g { w + 1 } else { w })
                    }
                })
                .collect()
        })
        .collect();
    LabelMatrix::from_rows(
        rows,
        (0..gold.len()).map(|i| format!("d{i}")).collect(),
        (0..acc.len()).map(|j| format!("lf{j}")).collect(),
    )
    .expect("rectangular")
}

const WORDS: [&str; 12] = [
    "apple", "berry", "cloud", "delta", "ember", "flint", "grove", "harbor", "iris", "jade", "kelp",
    "lumen",
];

pub fn random_text(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

pub fn word(i: usize) -> &'static str {
    WORDS[i % WORDS.len()]
}

/// Small random dataset over a 12-word vocabulary; the seed split gets at
/// least one example.
pub fn small_dataset(rng: &mut ChaCha8Rng, n_unlabeled: usize, n_seed: usize, n_test: usize) -> Dataset {
    let labels = LabelSpace::new(["a", "b", "c"]).unwrap();
    let docs = (0..n_unlabeled)
        .map(|i| {
            let len = rng.gen_range(1..8);
            Document::new(format!("u{i}"), random_text(rng, len))
        })
        .collect();
    let labeled = |prefix: &str, n: usize, rng: &mut ChaCha8Rng| {
        (0..n)
            .map(|i| {
                let len = rng.gen_range(1..8);
                LabeledExample::new(format!("{prefix}{i}"), random_text(rng, len), rng.gen_range(0..3))
            })
            .collect::<Vec<_>>()
    };
    let seed = labeled("s", n_seed.max(1), rng);
    let test = labeled("t", n_test, rng);
    Dataset::new(labels, docs, seed, test).unwrap()
}

/// Prints one acceptance line and returns whether it passed.
pub fn report(criterion: u8, name: &str, pass: bool, started: Instant, detail: &str) -> bool {
    println!(
        "criterion {criterion} [{name}]: {} ({:.1}s) {detail}",
        if pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    pass
}
