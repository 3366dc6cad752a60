//! A sustained concept shift at batch 15. With the temporary forest the
//! learner promotes a new active forest within a few batches; without it the
//! active forest is only ever patched and stays behind.

use adforest::adf::{AdfParams, AdfState, ForestRole};
use adforest::streamgen::{drift_stream, DriftConfig};

fn run(temporary_forest: bool) -> adforest::Result<(Vec<f64>, Vec<ForestRole>)> {
    let stream = drift_stream(&DriftConfig { seed: 2, ..DriftConfig::default() })?;
    let mut adf = AdfState::new(AdfParams { seed: 2, temporary_forest, ..AdfParams::default() })?;
    let (mut accs, mut recs) = (Vec::new(), Vec::new());
    for (train, test) in &stream {
        let report = adf.learn(train)?;
        let hits = test
            .records
            .iter()
            .filter(|r| adf.predict(&r.unlabeled()).ok() == r.label)
            .count();
        accs.push(hits as f64 / test.len() as f64);
        recs.push(report.recommendation);
    }
    Ok((accs, recs))
}

fn main() -> adforest::Result<()> {
    let (with_tf, recs) = run(true)?;
    let (no_tf, _) = run(false)?;
    for (i, ((a, b), r)) in with_tf.iter().zip(&no_tf).zip(&recs).enumerate() {
        let mark = if i + 1 == 15 { "  <- shift" } else { "" };
        println!("{:>2}  adf {a:.3} ({r})  no-tf {b:.3}{mark}", i + 1);
    }
    let tail = |v: &[f64]| v[19..].iter().sum::<f64>() / v[19..].len() as f64;
    println!("batches 20-34: adf {:.3}  no-tf {:.3}", tail(&with_tf), tail(&no_tf));
    Ok(())
}
