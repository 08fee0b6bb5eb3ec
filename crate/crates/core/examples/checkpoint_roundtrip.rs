//! Saves a model as an SPC3 checkpoint, reloads it, and shows that the
//! reloaded model is bit-identical and rejects a patch with the wrong band
//! count.
//!
//!     cargo run --example checkpoint_roundtrip

use specpat::checkpoint::{load_checkpoint, save_checkpoint, to_bytes};
use specpat::layers::PointwiseMode;
use specpat::synthetic::bump_patches;
use specpat::{Model, ModelConfig, Tensor};

fn main() -> specpat::Result<()> {
    let config = ModelConfig {
        pointwise_mode: PointwiseMode::PerBand,
        ..ModelConfig::default()
    };
    let model = Model::build(config, 200, 11, 42)?;
    let dir = std::env::temp_dir().join(format!("specpat-ckpt-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.spc3");
    save_checkpoint(&model, &path)?;
    let size = std::fs::metadata(&path)?.len();
    println!("wrote {} ({size} bytes, {} parameters)", path.display(), model.parameter_count());

    let restored = load_checkpoint(&path)?;
    println!("bytes identical after reload: {}", to_bytes(&restored) == to_bytes(&model));
    for (name, t) in restored.parameters().iter().take(4) {
        println!("  {name:<18} {:?}", t.shape());
    }

    let (patch, _) = bump_patches(1, 200, 5, 0.0, 0).remove(0);
    let (_, a) = model.forward(&patch, false, 0)?;
    let (_, b) = restored.forward(&patch, false, 0)?;
    println!("probabilities identical: {}", a == b);

    let wrong = Tensor::zeros(&[5, 5, 204])?;
    match restored.forward(&wrong, false, 0) {
        Ok(_) => println!("unexpectedly accepted a 204-band patch"),
        Err(e) => println!("204-band patch rejected: {e}"),
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
