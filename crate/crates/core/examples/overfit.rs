//! Trains the full default network on 40 labelled 5x5x200 patches until it
//! fits them, printing the loss curve.
//!
//!     cargo run --release --example overfit

use specpat::synthetic::bump_patches;
use specpat::train::{train_with_progress, TrainConfig};
use specpat::{Model, ModelConfig};

fn main() -> specpat::Result<()> {
    let samples = bump_patches(40, 200, 5, 0.02, 3);
    let model = Model::build(ModelConfig::default(), 200, 2, 3)?;
    let config = TrainConfig {
        epochs: 200,
        eval_every: 0,
        ..TrainConfig::seeded(3)
    };
    let outcome = train_with_progress(model, &samples, None, None, &config, |r| {
        if r.epoch % 20 == 0 || r.train_acc == 1.0 && r.epoch < 20 {
            println!("epoch {:>3}  loss {:.5}  train acc {:.3}", r.epoch, r.train_loss, r.train_acc);
        }
    })?;
    let first_perfect = outcome
        .history
        .epochs
        .iter()
        .find(|r| r.train_acc == 1.0)
        .map(|r| r.epoch);
    println!("first epoch at 100% train accuracy: {first_perfect:?}");
    println!("Adam steps taken: {}", outcome.optimizer.t);
    Ok(())
}
