//! Classifies a synthetic scene with each inference schedule and worker
//! count, checks the maps agree exactly, and renders the map as PPM.
//!
//!     cargo run --release --example schedules -- map.ppm

use specpat::data::normalize_minmax;
use specpat::infer::{predict_scene, render_map, Palette, Schedule, ScheduleMode};
use specpat::synthetic::striped_scene;
use specpat::{Model, ModelConfig};

fn main() -> specpat::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "map.ppm".into());
    let (raw, labels) = striped_scene(32, 32, 200, 4, 5)?;
    let cube = normalize_minmax(&raw)?;
    let model = Model::build(ModelConfig::default(), 200, 4, 9)?;

    let reference = predict_scene(&model, &cube, Schedule::sequential(), None)?;
    println!("sequential      x1: {:>8.3}s", reference.elapsed.as_secs_f64());
    for mode in [ScheduleMode::Parallel, ScheduleMode::Pipeline] {
        for workers in [1, 2, 4] {
            let p = predict_scene(&model, &cube, Schedule::new(mode, workers)?, None)?;
            let same = p.map == reference.map && p.max_prob == reference.max_prob;
            println!(
                "{:<15} x{workers}: {:>8.3}s  identical: {same}",
                mode.to_string(),
                p.elapsed.as_secs_f64()
            );
        }
    }

    // An untrained model, so the map is noise; the ground truth renders
    // with the same palette for comparison.
    let palette = Palette::for_classes(4);
    render_map(&reference.map, &palette, &out)?;
    render_map(&labels, &palette, format!("{out}.truth.ppm"))?;
    println!("wrote {out} and {out}.truth.ppm");
    Ok(())
}
