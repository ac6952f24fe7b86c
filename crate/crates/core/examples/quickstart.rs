//! Full pipeline on the separable synthetic corpus.

use labelcraft::{pipeline, synth};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dataset = synth::separable_corpus(0)?;
    let config = synth::separable_config(0);
    let result = pipeline::run_pipeline(&dataset, &config, Default::default()).map_err(|e| e.error)?;

    println!("config {}: {} LFs", result.config_hash, result.lfs.len());
    for lf in &result.lfs {
        println!("  {:<28} {:<10} acc {:.3} cov {:.3}", lf.id, lf.category.as_str(), lf.est_accuracy, lf.est_coverage);
    }
    if let Some(r) = &result.labeling {
        println!("labeling: coverage {:.3}, weighted F1 {:.3}, LQ {:.3}", r.coverage, r.weighted_f1, r.label_quality);
    }
    if let Some(r) = &result.e2e {
        println!("end model: weighted F1 {:.3}", r.weighted_f1);
    }
    Ok(())
}
