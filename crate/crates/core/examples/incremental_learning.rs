//! Feed the House stream through the three-forest learner and watch which
//! forest it recommends as the class mix changes.

use adforest::adf::{AdfParams, AdfState};
use adforest::evalstat::accuracy;
use adforest::streamgen::{generate_house_dataset, simulate_batches};

fn main() -> adforest::Result<()> {
    let data = generate_house_dataset(20_000, 1)?;
    let (batches, manifest) = simulate_batches(&data, 1)?;
    let mut adf = AdfState::new(AdfParams { seed: 1, ..AdfParams::default() })?;

    println!("batch scenario  theta_A  cdf  AF        TF         rec  accuracy");
    for ((train, test), spec) in batches.iter().zip(&manifest.batches) {
        let report = adf.learn(train)?;
        let truths: Vec<_> = test.records.iter().filter_map(|r| r.label).collect();
        let preds = test
            .records
            .iter()
            .map(|r| adf.predict(&r.unlabeled()))
            .collect::<adforest::Result<Vec<_>>>()?;
        println!(
            "{:>5} {:<9} {:>7} {:>4}  {:<9} {:<10} {:<4} {:.3}",
            spec.batch_id,
            spec.scenario.to_string(),
            report.theta_a.map_or("-".into(), |v| format!("{v:.3}")),
            report.cdf,
            format!("{:?}", report.af),
            format!("{:?}", report.tf),
            report.recommendation.to_string(),
            accuracy(&preds, &truths)?
        );
    }
    Ok(())
}
