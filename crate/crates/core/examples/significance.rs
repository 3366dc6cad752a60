//! Compare several methods on the House stream, then run the sign test and
//! the Nemenyi test against the iSAT variant.

use adforest::adf::AdfParams;
use adforest::evalstat::{mean_ranks, run_experiment, significance_report, ExperimentConfig, Method, StreamStep};
use adforest::streamgen::{generate_house_dataset, simulate_batches};

fn main() -> adforest::Result<()> {
    let data = generate_house_dataset(20_000, 4)?;
    let (batches, manifest) = simulate_batches(&data, 4)?;
    let steps: Vec<StreamStep> = batches
        .iter()
        .zip(&manifest.batches)
        .map(|((train, test), spec)| StreamStep {
            label: format!("b{:02}", spec.batch_id),
            scenario: spec.scenario.to_string(),
            train,
            test,
        })
        .collect();
    let config = ExperimentConfig {
        methods: vec![Method::AdfIsat, Method::AdfEntropyOnly, Method::FullRetrain, Method::WindowRetrain],
        params: AdfParams { seed: 4, ..AdfParams::default() },
    };
    let table = run_experiment(&steps, &config)?;
    for m in &table.methods {
        println!(
            "{m:<18} accuracy {:.3}  train {:.1} ms/batch",
            table.mean_accuracy(m).unwrap_or(f64::NAN),
            table.mean_train_ms(m).unwrap_or(f64::NAN)
        );
    }
    println!("ranks {:?}\n", mean_ranks(&table)?);
    print!("{}", significance_report(&table, "adf-isat", 0.025)?);
    Ok(())
}
