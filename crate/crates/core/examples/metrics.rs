//! Weighted F1, label quality and the results ledger.

use labelcraft::metrics::{append_ledger_row, confusion_matrix, label_quality, weighted_f1, EvalReport};
use labelcraft::{pipeline, synth};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let gold = [0, 0, 0, 1, 1, 2, 2, 2, 2];
    let pred = [0, 0, 1, 1, 1, 2, 2, 0, 2];
    let (per_class, weighted) = weighted_f1(&pred, &gold, 3)?;
    println!("per-class F1 {per_class:.3?}, weighted {weighted:.4}");
    println!("confusion {:?}", confusion_matrix(&pred, &gold, 3));
    println!("LQ at 80% coverage: {:.4}", label_quality(0.8, weighted));
    let report = EvalReport::from_predictions(&pred, &gold, 3, 0.8)?;
    println!("{}", serde_json::to_string_pretty(&report)?);

    let dataset = synth::separable_corpus(2)?;
    let config = synth::separable_config(2);
    let result = pipeline::run_pipeline(&dataset, &config, Default::default()).map_err(|e| e.error)?;
    let dir = tempfile::tempdir()?;
    let ledger = dir.path().join("results_ledger.csv");
    append_ledger_row(&ledger, &pipeline::ledger_row(&result, "separable", &config))?;
    print!("{}", std::fs::read_to_string(&ledger)?);
    Ok(())
}
