//! Sweep the intra-category filter strength on the noisy corpus.

use labelcraft::corpus::{write_dataset, Format};
use labelcraft::pipeline::{cmd_sweep, SweepParam};
use labelcraft::synth;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let data = dir.path().join("noisy.jsonl");
    write_dataset(&synth::noisy_corpus(0)?, &data, Format::Jsonl)?;
    let config = dir.path().join("config.json");
    std::fs::write(&config, synth::noisy_config(0).to_json_pretty())?;

    let values: Vec<String> = ["0.0", "0.5", "0.9"].map(String::from).to_vec();
    let rows = cmd_sweep(Some(&config), &data, SweepParam::Alpha, &values, &dir.path().join("sweep"), None)
        .map_err(|e| e.error)?;
    println!("{:<6} {:>8} {:>8} {:>8}", "alpha", "cov", "LQ", "E2E F1");
    for r in rows {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!("{:<6} {:>8} {:>8} {:>8}", r.value, f(r.coverage), f(r.label_quality), f(r.e2e_f1));
    }
    Ok(())
}
