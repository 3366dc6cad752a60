//! Leaf confidences, the perturbation matrix and the perturbed-leaf ratio.
//!
//! Replaying the batch a forest was measured on flags nothing; a batch whose
//! labels disagree with the leaves' majorities flags most of them.

use adforest::repair::{find_perturbed_leaves, leaf_confidences, perturbed_ratio};
use adforest::streamgen::{drift_stream, shifted_label, DriftConfig};
use adforest::tree::{build_forest, ForestMode, InductionParams};

fn main() -> adforest::Result<()> {
    let stream = drift_stream(&DriftConfig { records: 4_000, batches: 4, shift_at: 3, seed: 5 })?;
    let first = &stream[0].0;
    let forest = build_forest(first, 5, ForestMode::RfStyle, &InductionParams::default())?;
    let stats = leaf_confidences(&forest, first);

    for (k, tree) in stats.trees.iter().enumerate().take(2) {
        let shown: Vec<String> = tree
            .iter()
            .take(6)
            .map(|(id, s)| format!("{id}:{:.2}/{}", s.confidence.unwrap_or(f64::NAN), s.support))
            .collect();
        println!("tree {k} leaves (id:confidence/support) {}", shown.join(" "));
    }

    let same = find_perturbed_leaves(first, &forest, 0.02, &stats)?;
    println!("same batch again:   ratio {:.3}", perturbed_ratio(&same)?);
    let next = &stream[1].0;
    let flags = find_perturbed_leaves(next, &forest, 0.02, &stats)?;
    println!("next batch:         ratio {:.3}", perturbed_ratio(&flags)?);
    let shifted = &stream[3].0;
    let flags = find_perturbed_leaves(shifted, &forest, 0.02, &stats)?;
    println!(
        "after label shift:  ratio {:.3}  ({} of {} leaves; class 0 now reads {})",
        perturbed_ratio(&flags)?,
        flags.f_total,
        flags.l_total,
        shifted_label(0)
    );
    for k in 0..forest.len() {
        println!("  tree {k}: {:.3}", flags.tree_ratio(k)?);
    }
    Ok(())
}
