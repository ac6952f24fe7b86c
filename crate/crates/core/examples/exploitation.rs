//! The filter steps on a hand-made pool, then the full explore/exploit loop.

use std::collections::BTreeMap;

use labelcraft::exploitation::{inter_filter, intra_filter, truncate_top_k};
use labelcraft::lf::{LabelFunction, LfCategory};
use labelcraft::surface::{MatchMode, SurfaceRule};
use labelcraft::{pipeline, synth};

fn lf(id: &str, category: LfCategory, acc: f64) -> LabelFunction {
    let rule = SurfaceRule::from_class_patterns([(0, vec![id])], MatchMode::Token).unwrap();
    let mut lf = LabelFunction::surface(id, rule);
    lf.category = category;
    lf.est_accuracy = acc;
    lf
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let pool = vec![
        lf("a", LfCategory::Surface, 0.92),
        lf("b", LfCategory::Surface, 0.70),
        lf("c", LfCategory::Surface, 0.40),
    ];
    let (kept, removed, theta) = intra_filter(pool, 0.8);
    println!("intra theta {theta:.3}: kept {:?}, removed {:?}", ids(&kept), ids(&removed));

    let mut pools = BTreeMap::new();
    pools.insert(LfCategory::Surface, kept);
    pools.insert(LfCategory::Semantic, vec![lf("s1", LfCategory::Semantic, 0.30), lf("s2", LfCategory::Semantic, 0.60)]);
    let thetas = BTreeMap::from([(LfCategory::Surface, theta), (LfCategory::Semantic, 0.48)]);
    let (pools, removed, theta) = inter_filter(pools, &thetas);
    println!("inter theta {theta:.3}: removed {:?}", ids(&removed));
    let (top, cut) = truncate_top_k(pools.into_values().flatten().collect(), 2);
    println!("top-2 {:?}, cut {:?}", ids(&top), ids(&cut));

    let dataset = synth::noisy_corpus(0)?;
    let outcome = pipeline::explore_and_exploit(&dataset, &synth::noisy_config(0))?;
    for r in &outcome.reports {
        println!(
            "round {}: candidates {:?} kept {:?} shortfall {:?}",
            r.round, r.candidates, r.kept, r.shortfall
        );
    }
    println!("pool {:?} (round limit hit: {})", outcome.pool.ids(), outcome.hit_round_limit);
    Ok(())
}

fn ids(lfs: &[LabelFunction]) -> Vec<&str> {
    lfs.iter().map(|l| l.id.as_str()).collect()
}
