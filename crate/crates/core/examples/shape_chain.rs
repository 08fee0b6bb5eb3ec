//! Per-layer shapes of the default network for the two standard scenes,
//! and its parameter count.
//!
//!     cargo run --example shape_chain

use specpat::model::spectral_partition_bounds;
use specpat::{Model, ModelConfig};

fn main() -> specpat::Result<()> {
    let config = ModelConfig::default();
    for (scene, bands, classes) in [("Indian Pines", 200, 11), ("Salinas", 204, 16)] {
        let bounds = spectral_partition_bounds(bands, config.num_segments)?;
        println!("{scene}: {bands} bands -> segments {bounds:?}");
        let widest = bounds[0].1 - bounds[0].0;
        let chain = config.segment_chain(widest)?;
        for (i, shape) in chain.iter().enumerate() {
            let label = if i == 0 { "input".to_string() } else { format!("conv{i}") };
            println!("  {label:<6} {shape:?}");
        }
        let model = Model::build(config.clone(), bands, classes, 0)?;
        println!(
            "  fc1 input {} -> {} -> {} classes, {} parameters\n",
            model.feature_len(),
            config.fc1_units,
            classes,
            model.parameter_count()
        );
    }

    // Nine bands in one segment collapse to a single band after the first
    // layer, which the second layer's depth-5 kernel cannot cover.
    let narrow = ModelConfig {
        num_segments: 1,
        ..ModelConfig::default()
    };
    match narrow.segment_chain(9) {
        Ok(chain) => println!("9 bands: {chain:?}"),
        Err(e) => println!("9 bands: {e}"),
    }
    Ok(())
}
