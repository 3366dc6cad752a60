//! Stop a run halfway, save it, restore it and finish: the result is the
//! same state, down to the serialized bytes.

use adforest::adf::{AdfParams, AdfState};
use adforest::streamgen::{generate_house_dataset, simulate_batches};

fn main() -> adforest::Result<()> {
    let data = generate_house_dataset(20_000, 9)?;
    let (batches, _) = simulate_batches(&data, 9)?;
    let params = AdfParams { seed: 9, ..AdfParams::default() };

    let mut straight = AdfState::new(params.clone())?;
    for (train, _) in &batches {
        straight.learn(train)?;
    }

    let mut first = AdfState::new(params)?;
    for (train, _) in &batches[..17] {
        first.learn(train)?;
    }
    let saved = first.to_checkpoint()?;
    println!("checkpoint after 17 batches: {} bytes", saved.len());
    drop(first);

    let mut resumed = AdfState::from_checkpoint(&saved)?;
    for (train, _) in &batches[resumed.batches_seen as usize..] {
        resumed.learn(train)?;
    }
    let (a, b) = (straight.to_checkpoint()?, resumed.to_checkpoint()?);
    println!("final checkpoints: {} and {} bytes, identical: {}", a.len(), b.len(), a == b);
    Ok(())
}
