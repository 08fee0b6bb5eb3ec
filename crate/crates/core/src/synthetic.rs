//! Seeded synthetic data: labelled patches and small scenes whose classes
//! differ by a Gaussian bump in the spectrum.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{HsiCube, LabelMap};
use crate::error::Result;
use crate::tensor::Tensor;

/// Background spectrum shared by every class, roughly in `[0.2, 0.6]`.
fn base_spectrum(bands: usize) -> Vec<f64> {
    (0..bands)
        .map(|z| {
            let t = z as f64 / bands as f64;
            0.4 + 0.15 * (std::f64::consts::TAU * t).sin() + 0.05 * t
        })
        .collect()
}

/// Spectrum of `class` out of `n_classes`: the background plus a bump whose
/// centre moves with the class. Class 0 of a two-class problem is the plain
/// background.
pub fn class_spectrum(class: usize, n_classes: usize, bands: usize) -> Vec<f64> {
    let mut s = base_spectrum(bands);
    if n_classes == 2 && class == 0 {
        return s;
    }
    let centre = bands as f64 * (class as f64 + 0.5) / n_classes as f64;
    let width = (bands as f64 / (3.0 * n_classes as f64)).max(1.0);
    for (z, v) in s.iter_mut().enumerate() {
        *v += 0.3 * (-((z as f64 - centre) / width).powi(2)).exp();
    }
    s
}

/// `n` labelled `[patch, patch, bands]` samples alternating between two
/// classes, each pixel being its class spectrum plus uniform noise of
/// amplitude `noise`.
pub fn bump_patches(n: usize, bands: usize, patch: usize, noise: f64, seed: u64) -> Vec<(Tensor, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spectra = [class_spectrum(0, 2, bands), class_spectrum(1, 2, bands)];
    (0..n)
        .map(|i| {
            let label = i % 2;
            let mut data = Vec::with_capacity(patch * patch * bands);
            for _ in 0..patch * patch {
                data.extend(spectra[label].iter().map(|v| v + noise * rng.gen_range(-1.0..1.0)));
            }
            (Tensor::from_vec(&[patch, patch, bands], data).expect("consistent shape"), label)
        })
        .collect()
}

/// A `height × width` scene split into vertical class stripes, in
/// sensor-like units (values in the thousands) so normalisation matters.
/// The first row is left unlabeled.
pub fn striped_scene(
    height: usize,
    width: usize,
    bands: usize,
    n_classes: usize,
    seed: u64,
) -> Result<(HsiCube, LabelMap)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spectra: Vec<Vec<f64>> = (0..n_classes).map(|c| class_spectrum(c, n_classes, bands)).collect();
    let mut data = Vec::with_capacity(height * width * bands);
    let mut labels = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            let class = x * n_classes / width;
            for v in &spectra[class] {
                data.push(1000.0 + 4000.0 * (v + 0.03 * rng.gen_range(-1.0..1.0)));
            }
            labels.push(if y == 0 { 0 } else { class as u16 + 1 });
        }
    }
    let names = (1..=n_classes).map(|k| format!("class_{k}")).collect();
    Ok((
        HsiCube::new(height, width, bands, data)?.with_name("striped"),
        LabelMap::new(height, width, labels, names)?,
    ))
}
