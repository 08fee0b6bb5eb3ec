//! Small models and inputs for gradient checks and quick experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{ConvSpec, Model, ModelConfig};
use crate::tensor::Tensor;

/// A two-layer, two-segment configuration that fits a 3 or 5 pixel patch
/// and any band count from 9 to 20. Dropout is configured but only
/// active in training mode.
pub fn toy_grad_config(patch: usize, bands: usize) -> Result<ModelConfig> {
    if !(patch == 3 || patch == 5) || !(9..=20).contains(&bands) {
        return Err(Error::Config(format!(
            "toy model needs patch 3 or 5 and 9..=20 bands, got patch {patch} with {bands} bands"
        )));
    }
    let config = ModelConfig {
        patch_size: patch,
        num_segments: 2,
        conv_stack: vec![ConvSpec::new(2, 2, 2, 3, 1, 0), ConvSpec::new(3, 2, 2, 2, 2, 1)],
        fc1_units: 8,
        ..ModelConfig::default()
    };
    config.segment_chain(bands / 2)?;
    Ok(config)
}

/// Builds `config` and shifts every bias away from zero so each bias
/// coordinate has a visible effect on the loss.
pub fn toy_model(config: ModelConfig, bands: usize, classes: usize, seed: u64) -> Result<Model> {
    let mut model = Model::build(config, bands, classes, seed)?;
    for (i, t) in model.parameters_mut().into_iter().enumerate() {
        if t.ndim() == 1 {
            for (j, v) in t.data_mut().iter_mut().enumerate() {
                *v += 0.05 * ((i + j) % 5) as f64 - 0.1;
            }
        }
    }
    Ok(model)
}

/// A `[patch, patch, bands]` tensor with entries uniform in `[-1, 1)`.
pub fn toy_patch(patch: usize, bands: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..patch * patch * bands).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(&[patch, patch, bands], data).expect("consistent shape")
}
