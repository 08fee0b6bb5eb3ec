//! The whole workflow on a synthetic scene: normalise, split, train with
//! validation tracking, evaluate per class, and classify every pixel.
//!
//!     cargo run --release --example scene_workflow

use specpat::data::{normalize_minmax, stratified_split, Fractions, PatchSet, Subset};
use specpat::infer::{predict_map, Schedule, ScheduleMode};
use specpat::synthetic::striped_scene;
use specpat::train::{evaluate, train, CheckpointPolicy, TrainConfig};
use specpat::{Model, ModelConfig};

fn main() -> specpat::Result<()> {
    let seed = 4;
    let (raw, labels) = striped_scene(20, 21, 200, 3, seed)?;
    let cube = normalize_minmax(&raw)?;
    let split = stratified_split(&labels, Fractions::new(0.2, 0.05, 0.75)?, seed)?;
    let p = ModelConfig::default().patch_size;
    let train_set = PatchSet::from_split(&cube, &split, Subset::Train, p);
    let val_set = PatchSet::from_split(&cube, &split, Subset::Val, p);
    let test_set = PatchSet::from_split(&cube, &split, Subset::Test, p);
    println!(
        "{} train / {} val / {} test pixels",
        train_set.pixels().len(),
        val_set.pixels().len(),
        test_set.pixels().len()
    );

    let model = Model::build(ModelConfig::default(), cube.bands(), labels.num_classes(), seed)?;
    let config = TrainConfig {
        epochs: 40,
        eval_every: 10,
        checkpoint_policy: CheckpointPolicy::BestValidation,
        ..TrainConfig::seeded(seed)
    };
    let outcome = train(model, &train_set, Some(&val_set), None, &config)?;
    print!("{}", outcome.history.to_csv().lines().filter(|l| l.split(',').nth(3) != Some("")).collect::<Vec<_>>().join("\n"));
    println!();

    let metrics = evaluate(&outcome.model, &test_set)?;
    for (name, acc) in labels.class_names().iter().zip(&metrics.per_class_acc) {
        println!("{name:<10} {:>7.2}%", 100.0 * acc.unwrap_or(f64::NAN));
    }
    println!("OA {:.2}%  AA {:.2}%", 100.0 * metrics.oa, 100.0 * metrics.aa);

    let map = predict_map(&outcome.model, &cube, Schedule::new(ScheduleMode::Parallel, 4)?)?;
    let agree = map
        .labels()
        .iter()
        .zip(labels.labels())
        .filter(|(_, &t)| t != 0)
        .filter(|(p, t)| p == t)
        .count();
    let labelled = labels.labels().iter().filter(|&&t| t != 0).count();
    println!("full-scene agreement with ground truth: {agree}/{labelled}");
    Ok(())
}
