//! A tree trained on one region meets a batch from a region it has never
//! seen. The separating-axis step adds a root split that isolates the new
//! region; entropy regrowth then splits the fresh leaf by class.

use std::sync::Arc;

use adforest::dataset::{Attribute, Batch, Record, Schema, Value};
use adforest::geometry::{isat_expand, sat_split, IsatOutcome};
use adforest::repair::{find_perturbed_leaves, leaf_confidences, perturbed_ratio, repair_forest, SplitStrategy};
use adforest::tree::{build_forest, ForestMode, InductionParams};

fn batch(schema: &Arc<Schema>, rows: &[(f64, f64, u32)], id: u64) -> adforest::Result<Batch> {
    let records = rows
        .iter()
        .map(|&(a, b, c)| Record::new(vec![Value::Num(a), Value::Num(b), Value::Missing], Some(c)))
        .collect();
    Batch::new(schema.clone(), records, id)
}

fn grid(x0: f64, classes: [u32; 2]) -> Vec<(f64, f64, u32)> {
    (0..120)
        .map(|i| {
            let x = x0 + (i % 12) as f64 * 0.25;
            let y = (i / 12) as f64;
            (x, y, if y < 5.0 { classes[0] } else { classes[1] })
        })
        .collect()
}

fn main() -> adforest::Result<()> {
    let schema = Arc::new(Schema::new(
        vec![Attribute::numeric("area"), Attribute::numeric("beds"), Attribute::numeric("rent")],
        2,
        vec!["low".into(), "mid".into(), "high".into(), "luxury".into()],
    )?);
    let old = batch(&schema, &grid(0.0, [0, 1]), 1)?;
    let new = batch(&schema, &grid(10.0, [2, 3]), 2)?;

    let params = InductionParams { min_leaf_size: 10, ..InductionParams::default() };
    let forest = build_forest(&old, 3, ForestMode::SysForStyle, &params)?;
    let tree = forest.trees[0].clone();

    let split = sat_split(tree.bounds().unwrap(), &adforest::geometry::aabb_of_records(&new.records, &schema)?)?;
    println!("separating axis: {split:?}");

    let expanded = isat_expand(tree, &new);
    match &expanded.outcome {
        IsatOutcome::Disjoint(s) => println!("disjoint: new root on attribute {} at {}", s.attr_index, s.split_value),
        other => println!("{other:?}"),
    }
    println!("fresh leaves {:?}, tree now has {} leaves", expanded.fresh_leaves, expanded.tree.leaf_count());

    // The full repair path: stats on the old batch, flags on the new one.
    let stats = leaf_confidences(&forest, &old);
    let flags = find_perturbed_leaves(&new, &forest, 0.02, &stats)?;
    println!("perturbed ratio on the new batch: {:.2}", perturbed_ratio(&flags)?);
    for strategy in [SplitStrategy::SatOnly, SplitStrategy::EntropyOnly, SplitStrategy::Isat] {
        let (repaired, _) = repair_forest(&forest, &new, &stats, &flags, 0.4, strategy)?;
        println!(
            "{strategy:<13} leaves {:>3}  accuracy old {:.3} new {:.3}",
            repaired.leaf_count(),
            repaired.accuracy_on(&old),
            repaired.accuracy_on(&new)
        );
    }
    Ok(())
}
