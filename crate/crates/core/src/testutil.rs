//! Helpers shared by unit tests: seeded random tensors and a central
//! finite-difference oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Central differences of a scalar function with respect to every element
/// of `at`.
pub fn central_diff(at: &Tensor, eps: f64, mut f: impl FnMut(&Tensor) -> f64) -> Tensor {
    let mut probe = at.clone();
    let mut out = at.zeros_like();
    for i in 0..at.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (plus - minus) / (2.0 * eps);
    }
    out
}

pub fn assert_grad_close(analytic: &Tensor, numeric: &Tensor, tol: f64) {
    assert_eq!(analytic.shape(), numeric.shape());
    for (i, (a, n)) in analytic.data().iter().zip(numeric.data()).enumerate() {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
        assert!(rel <= tol, "coordinate {i}: analytic {a} numeric {n} rel {rel}");
    }
}
