//! Generate the synthetic House dataset and cut it into the 34-batch stream.
//!
//! Run with `cargo run --release --example house_stream -- [seed]`.

use adforest::dataset::class_scenario;
use adforest::streamgen::{generate_house_dataset, rearrange_scenarios, simulate_batches};

fn main() -> adforest::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let data = generate_house_dataset(20_000, seed)?;
    println!("{} records, classes {:?}", data.len(), data.schema.class_values());

    let (batches, manifest) = simulate_batches(&data, seed)?;
    println!("halves {:?}  batch size {}", manifest.pools.half_classes, manifest.batch_size);

    let known = manifest.known_classes();
    for ((train, test), spec) in batches.iter().zip(&manifest.batches) {
        let observed = class_scenario(&train.class_set(), &known)?;
        let labels: Vec<_> = train.class_labels().into_iter().collect();
        println!(
            "{:>2} {:<7} {:<5} train {:>3} test {:>3}  classes {}{}",
            spec.batch_id,
            spec.block.label(),
            observed,
            train.len(),
            test.len(),
            labels.join(""),
            if spec.topped_up { "  (topped up)" } else { "" }
        );
    }

    let rearranged = rearrange_scenarios(&manifest, &data, seed)?;
    let order: Vec<_> = rearranged.batches.iter().map(|b| b.block.label()).collect();
    println!("rearranged: {} batches, {}", order.len(), order.join(" "));
    Ok(())
}
