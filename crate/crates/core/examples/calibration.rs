//! Train a linear head on the seed set, then pick its abstention threshold
//! by grid search over the precision/coverage trade-off.

use std::sync::Arc;

use labelcraft::candidate::{calibrate_threshold, fit_linear, CalibratedClassifierLf, LinearTrainConfig, ProbClassifier};
use labelcraft::features::{fit_tfidf, Featurizer, Tokenizer};
use labelcraft::synth;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dataset = synth::noisy_corpus(3)?;
    let featurizer = Arc::new(Featurizer::tfidf(fit_tfidf(&dataset.unlabeled, &Tokenizer::default())?));
    let feats = dataset
        .seed
        .iter()
        .map(|e| featurizer.features(&e.doc))
        .collect::<Result<Vec<_>, _>>()?;
    let xs: Vec<_> = feats.iter().map(|f| f.as_ref()).collect();
    let ys: Vec<usize> = dataset.seed.iter().map(|e| e.gold).collect();
    let (clf, losses) = fit_linear(&xs, &ys, dataset.num_classes(), featurizer.dim(), &LinearTrainConfig::default());
    println!("loss {:.4} -> {:.4}", losses[0], losses[losses.len() - 1]);

    let mut lf = CalibratedClassifierLf::new(ProbClassifier::Linear(clf), featurizer);
    for beta in [0.5, 1.0, 2.0] {
        let curve = calibrate_threshold(&mut lf, &dataset.seed, &dataset.unlabeled, beta, 0.05)?;
        let best = curve.grid.iter().find(|p| p.omega == curve.best_omega).unwrap();
        println!(
            "beta {beta}: omega {:.2} precision {:.3} coverage {:.3}",
            best.omega, best.precision, best.coverage
        );
    }
    curve_to_stdout(&mut lf, &dataset)?;
    Ok(())
}

fn curve_to_stdout(
    lf: &mut CalibratedClassifierLf,
    dataset: &labelcraft::corpus::Dataset,
) -> Result<(), Box<dyn std::error::Error>> {
    let curve = calibrate_threshold(lf, &dataset.seed, &dataset.unlabeled, 1.0, 0.1)?;
    curve.write_csv(std::io::stdout())?;
    Ok(())
}
