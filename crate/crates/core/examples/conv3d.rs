//! A single 3D convolution: output extents, a hand-checkable value, and
//! the gradient with respect to the input.
//!
//!     cargo run --example conv3d

use specpat::layers::{conv3d_backward, conv3d_forward, Conv3dParams};
use specpat::Tensor;

fn main() -> specpat::Result<()> {
    // One 5x5 patch with 12 bands, every voxel equal to its band index.
    let data = (0..5 * 5 * 12).map(|i| (i % 12) as f64).collect();
    let input = Tensor::from_vec(&[1, 5, 5, 12], data)?;

    // Two 2x2x3 filters, spectral stride 2, one pixel of spatial padding.
    let kernels = Tensor::filled(&[2, 1, 2, 2, 3], 0.25)?;
    let biases = Tensor::from_vec(&[2], vec![0.0, 1.0])?;
    let conv = Conv3dParams::new(kernels, biases, (1, 1, 2), (1, 1))?;

    let out = conv3d_forward(&input, &conv)?;
    println!("input  {:?}", input.shape());
    println!("output {:?}", out.shape());

    // Interior window over bands 0..3: 4 pixels x (0+1+2) x 0.25 = 3.
    println!("out[0, 2, 2, 0] = {}", out.get(&[0, 2, 2, 0])?);
    println!("out[1, 2, 2, 0] = {}", out.get(&[1, 2, 2, 0])?);
    // Corner window overlaps the padding: only one real pixel.
    println!("out[0, 0, 0, 0] = {}", out.get(&[0, 0, 0, 0])?);

    let grads = conv3d_backward(&input, &conv, &Tensor::filled(out.shape(), 1.0)?)?;
    println!("dL/dbias = {:?}", grads.biases.data());
    println!("dL/dinput sum = {}", grads.input.sum());
    Ok(())
}
