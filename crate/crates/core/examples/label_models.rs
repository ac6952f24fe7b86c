//! Majority vote, weighted vote and Dawid-Skene on the same label matrix.

use labelcraft::corpus::LabelSpace;
use labelcraft::label_model::{aggregate, fit_dawid_skene, hard_labels, LabelModelKind};
use labelcraft::lf::{LabelMatrix, WeakLabel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let labels = LabelSpace::new(["neg", "pos"])?;
    let accuracies = [0.95, 0.9, 0.6, 0.55, 0.55];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let gold: Vec<usize> = (0..2000).map(|_| rng.gen_range(0..2)).collect();
    let rows = gold
        .iter()
        .map(|&g| {
            accuracies
                .iter()
                .map(|&a| match (rng.gen_bool(0.7), rng.gen_bool(a)) {
                    (false, _) => WeakLabel::Abstain,
                    (true, true) => WeakLabel::Class(g),
                    (true, false) => WeakLabel::Class(1 - g),
                })
                .collect()
        })
        .collect();
    let matrix = LabelMatrix::from_rows(
        rows,
        (0..gold.len()).map(|i| format!("d{i}")).collect(),
        (0..accuracies.len()).map(|j| format!("lf{j}")).collect(),
    )?;

    let kinds = [
        LabelModelKind::MajorityVote,
        LabelModelKind::WeightedMajorityVote { weights: Some(accuracies.to_vec()) },
        LabelModelKind::dawid_skene(),
    ];
    for kind in &kinds {
        let probs = aggregate(&matrix, kind, &labels)?;
        let hard = hard_labels(&probs);
        let (mut right, mut covered) = (0, 0);
        for ((k, cov), g) in hard.iter().zip(&gold) {
            if *cov {
                covered += 1;
                right += usize::from(k == g);
            }
        }
        println!("{:<24} accuracy on covered rows {:.4}", kind.name(), right as f64 / covered as f64);
    }

    let model = fit_dawid_skene(&matrix, 2, 100, 1e-6)?;
    for (j, m) in model.confusion.iter().enumerate() {
        println!("lf{j}: P(correct) {:.3} / {:.3}", m[0][0], m[1][1]);
    }
    Ok(())
}
