//! Generate a synthetic corpus, write it to disk and read it back.

use labelcraft::corpus::{infer_label_space, load_dataset, write_dataset, Format};
use labelcraft::synth::{generate, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = SynthConfig::noisy();
    cfg.n_unlabeled = 600;
    let corpus = generate(&cfg, 11)?;
    let ds = &corpus.dataset;
    println!(
        "{} classes, {} unlabeled ({} ambiguous), {} seed, {} test",
        ds.num_classes(),
        ds.unlabeled.len(),
        corpus.ambiguous_ids.iter().filter(|id| id.starts_with('u')).count(),
        ds.seed.len(),
        ds.test.len()
    );
    for e in ds.seed.iter().take(3) {
        println!("  [{}] {}", ds.labels.name(e.gold), e.doc.text);
    }
    println!("oracle rule: {:?}", cfg.oracle_rule().to_file("oracle", &ds.labels).patterns.keys().collect::<Vec<_>>());

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("corpus.jsonl");
    write_dataset(ds, &path, Format::Jsonl)?;
    let labels = infer_label_space(&path, Format::Jsonl)?;
    let back = load_dataset(&path, Format::Jsonl, &labels)?;
    println!("round trip: {} unlabeled, hidden gold kept: {}", back.unlabeled.len(), back.unlabeled_gold().is_some());
    Ok(())
}
