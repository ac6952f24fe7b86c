//! Keyword rules: write them by hand, or let the offline generator derive
//! them from a seed set.

use labelcraft::corpus::{Document, LabelSpace};
use labelcraft::surface::{generate_surface_lfs, GenerationRequest, MatchMode, OfflineProvider, SurfaceRule};
use labelcraft::synth;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let labels = LabelSpace::new(["ham", "spam"])?;
    let rule = SurfaceRule::from_class_patterns(
        [(1, vec!["free money", "prize"]), (0, vec!["meeting"])],
        MatchMode::Substring,
    )?;
    for text in ["Claim your PRIZE today", "Team meeting at 3", "nothing to see"] {
        println!("{text:?} -> {:?}", rule.eval(&Document::new("x", text)));
    }
    println!("{}", serde_json::to_string(&rule.to_file("spam_words", &labels))?);

    let dataset = synth::separable_corpus(1)?;
    let request = GenerationRequest {
        task_description: "synthetic topics".into(),
        class_names: dataset.labels.names().to_vec(),
        examples: dataset
            .seed
            .iter()
            .map(|e| (e.doc.text.clone(), dataset.labels.name(e.gold).to_string()))
            .collect(),
        count: 4,
        hint: None,
    };
    let generated = generate_surface_lfs(&OfflineProvider::new(7), &request)?;
    for (i, rule) in generated.rules.iter().enumerate() {
        let file = rule.to_file(&format!("gen{i}"), &dataset.labels);
        println!("gen{i}: {:?}", file.patterns);
    }
    Ok(())
}
