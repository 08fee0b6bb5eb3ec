//! Forward and backward passes for each layer type in the network.
//!
//! Every function here is pure: inputs are borrowed, outputs are fresh
//! tensors, and randomness only enters through an explicit seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Kernels `[out_channels, in_channels, H, W, R]`, one bias per output
/// channel, a `(height, width, spectral)` stride and symmetric zero padding
/// on the two spatial axes. The spectral axis is never padded.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3dParams {
    pub kernels: Tensor,
    pub biases: Tensor,
    pub stride: (usize, usize, usize),
    pub padding: (usize, usize),
}

impl Conv3dParams {
    pub fn new(
        kernels: Tensor,
        biases: Tensor,
        stride: (usize, usize, usize),
        padding: (usize, usize),
    ) -> Result<Self> {
        if kernels.ndim() != 5 {
            return Err(Error::Shape(format!(
                "conv kernels must be [out, in, H, W, R], got {:?}",
                kernels.shape()
            )));
        }
        if biases.shape() != [kernels.shape()[0]] {
            return Err(Error::Shape(format!(
                "conv biases {:?} do not match {} output channels",
                biases.shape(),
                kernels.shape()[0]
            )));
        }
        if stride.0 == 0 || stride.1 == 0 || stride.2 == 0 {
            return Err(Error::Config(format!("stride {stride:?} must be positive")));
        }
        Ok(Self {
            kernels,
            biases,
            stride,
            padding,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.shape()[1]
    }

    /// `(H, W, R)`.
    pub fn kernel_extent(&self) -> (usize, usize, usize) {
        let s = self.kernels.shape();
        (s[2], s[3], s[4])
    }

    /// Output shape `[out_channels, X', Y', Z']` for an input `[C, X, Y, Z]`.
    pub fn output_shape(&self, input: &[usize]) -> Result<[usize; 4]> {
        if input.len() != 4 || input[0] != self.in_channels() {
            return Err(Error::Shape(format!(
                "conv input {input:?} must be [{}, X, Y, Z]",
                self.in_channels()
            )));
        }
        let (kh, kw, kr) = self.kernel_extent();
        let x = conv_extent(input[1], kh, self.stride.0, self.padding.0, "height")?;
        let y = conv_extent(input[2], kw, self.stride.1, self.padding.1, "width")?;
        let z = conv_extent(input[3], kr, self.stride.2, 0, "spectral")?;
        Ok([self.out_channels(), x, y, z])
    }
}

/// `floor((n + 2·pad − k) / stride) + 1`, or a shape error when the kernel
/// does not fit into the padded extent.
pub fn conv_extent(n: usize, kernel: usize, stride: usize, pad: usize, axis: &str) -> Result<usize> {
    let padded = n + 2 * pad;
    if kernel == 0 || kernel > padded {
        return Err(Error::Shape(format!(
            "{axis} kernel {kernel} does not fit padded extent {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Valid 3D cross-correlation plus bias, no activation.
///
/// Input `[C, X, Y, Z]`, output `[O, X', Y', Z']`. For each output row the
/// sum runs over input channel, kernel height, kernel width and then the
/// spectral taps, which is the reduction order every caller relies on for
/// bitwise reproducibility.
pub fn conv3d_forward(input: &Tensor, params: &Conv3dParams) -> Result<Tensor> {
    let out_shape = params.output_shape(input.shape())?;
    let [oc, ox_n, oy_n, oz_n] = out_shape;
    let [c_n, x_n, y_n, z_n] = dims4(input);
    let (kh, kw, kr) = params.kernel_extent();
    let (sh, sw, sr) = params.stride;
    let (ph, pw) = params.padding;
    let k = params.kernels.data();
    let inp = input.data();

    let mut out = vec![0.0; oc * ox_n * oy_n * oz_n];
    let mut partial = vec![0.0; oz_n];
    for o in 0..oc {
        let bias = params.biases.data()[o];
        for ox in 0..ox_n {
            for oy in 0..oy_n {
                let base = ((o * ox_n + ox) * oy_n + oy) * oz_n;
                let row = &mut out[base..base + oz_n];
                row.fill(bias);
                for c in 0..c_n {
                    for h in 0..kh {
                        let Some(ix) = (ox * sh + h).checked_sub(ph).filter(|&v| v < x_n) else {
                            continue;
                        };
                        for w in 0..kw {
                            let Some(iy) = (oy * sw + w).checked_sub(pw).filter(|&v| v < y_n)
                            else {
                                continue;
                            };
                            let in_base = ((c * x_n + ix) * y_n + iy) * z_n;
                            let in_row = &inp[in_base..in_base + z_n];
                            let k_base = ((((o * c_n) + c) * kh + h) * kw + w) * kr;
                            let k_row = &k[k_base..k_base + kr];
                            for (oz, p) in partial.iter_mut().enumerate() {
                                let window = &in_row[oz * sr..oz * sr + kr];
                                *p = k_row.iter().zip(window).map(|(a, b)| a * b).sum();
                            }
                            for (r, p) in row.iter_mut().zip(&partial) {
                                *r += p;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&out_shape, out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv3dGrads {
    pub input: Tensor,
    pub kernels: Tensor,
    pub biases: Tensor,
}

/// Gradients of `sum(grad_out ⊙ conv3d_forward(input, params))`.
pub fn conv3d_backward(
    input: &Tensor,
    params: &Conv3dParams,
    grad_out: &Tensor,
) -> Result<Conv3dGrads> {
    let out_shape = params.output_shape(input.shape())?;
    if grad_out.shape() != out_shape {
        return Err(Error::Shape(format!(
            "conv grad_out {:?} does not match output {out_shape:?}",
            grad_out.shape()
        )));
    }
    let [oc, ox_n, oy_n, oz_n] = out_shape;
    let [c_n, x_n, y_n, z_n] = dims4(input);
    let (kh, kw, kr) = params.kernel_extent();
    let (sh, sw, sr) = params.stride;
    let (ph, pw) = params.padding;
    let k = params.kernels.data();
    let inp = input.data();
    let g = grad_out.data();

    let mut grad_in = vec![0.0; inp.len()];
    let mut grad_k = vec![0.0; k.len()];
    let mut grad_b = vec![0.0; oc];
    for o in 0..oc {
        for ox in 0..ox_n {
            for oy in 0..oy_n {
                let base = ((o * ox_n + ox) * oy_n + oy) * oz_n;
                let g_row = &g[base..base + oz_n];
                grad_b[o] += g_row.iter().sum::<f64>();
                for c in 0..c_n {
                    for h in 0..kh {
                        let Some(ix) = (ox * sh + h).checked_sub(ph).filter(|&v| v < x_n) else {
                            continue;
                        };
                        for w in 0..kw {
                            let Some(iy) = (oy * sw + w).checked_sub(pw).filter(|&v| v < y_n)
                            else {
                                continue;
                            };
                            let in_base = ((c * x_n + ix) * y_n + iy) * z_n;
                            let k_base = ((((o * c_n) + c) * kh + h) * kw + w) * kr;
                            for (oz, &go) in g_row.iter().enumerate() {
                                if go == 0.0 {
                                    continue;
                                }
                                let z0 = in_base + oz * sr;
                                for r in 0..kr {
                                    grad_k[k_base + r] += go * inp[z0 + r];
                                    grad_in[z0 + r] += go * k[k_base + r];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Conv3dGrads {
        input: Tensor::from_vec(input.shape(), grad_in)?,
        kernels: Tensor::from_vec(params.kernels.shape(), grad_k)?,
        biases: Tensor::from_vec(&[oc], grad_b)?,
    })
}

fn dims4(t: &Tensor) -> [usize; 4] {
    let s = t.shape();
    [s[0], s[1], s[2], s[3]]
}

/// How the leading 1×1 transform parameterises the bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PointwiseMode {
    /// One `(weight, bias)` pair shared by every band.
    #[default]
    SharedScalar,
    /// An independent `(weight, bias)` pair per band.
    PerBand,
}

/// Parameters of the per-band affine transform applied to a `[X, Y, Z]`
/// patch. `weights` and `biases` have length 1 (shared) or Z (per band).
#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseParams {
    pub weights: Tensor,
    pub biases: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub biases: Tensor,
}

impl PointwiseParams {
    pub fn identity(mode: PointwiseMode, bands: usize) -> Result<Self> {
        let n = match mode {
            PointwiseMode::SharedScalar => 1,
            PointwiseMode::PerBand => bands,
        };
        Ok(Self {
            weights: Tensor::filled(&[n], 1.0)?,
            biases: Tensor::zeros(&[n])?,
        })
    }

    fn coefficients(&self, bands: usize) -> Result<impl Fn(usize) -> (f64, f64) + '_> {
        let n = self.weights.len();
        if self.biases.len() != n || (n != 1 && n != bands) {
            return Err(Error::Shape(format!(
                "pointwise parameters of length {n}/{} do not fit {bands} bands",
                self.biases.len()
            )));
        }
        let w = self.weights.data();
        let b = self.biases.data();
        Ok(move |z: usize| if n == 1 { (w[0], b[0]) } else { (w[z], b[z]) })
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let bands = input.last_dim();
        let coef = self.coefficients(bands)?;
        let mut out = input.clone();
        for row in out.data_mut().chunks_exact_mut(bands) {
            for (z, v) in row.iter_mut().enumerate() {
                let (w, b) = coef(z);
                *v = w * *v + b;
            }
        }
        Ok(out)
    }

    pub fn backward(&self, input: &Tensor, grad_out: &Tensor) -> Result<PointwiseGrads> {
        if input.shape() != grad_out.shape() {
            return Err(Error::Shape(format!(
                "pointwise grad_out {:?} does not match input {:?}",
                grad_out.shape(),
                input.shape()
            )));
        }
        let bands = input.last_dim();
        let coef = self.coefficients(bands)?;
        let n = self.weights.len();
        let mut gw = vec![0.0; n];
        let mut gb = vec![0.0; n];
        let mut gi = grad_out.clone();
        let rows = input.data().chunks_exact(bands).zip(gi.data_mut().chunks_exact_mut(bands));
        for (x_row, g_row) in rows {
            for z in 0..bands {
                let slot = if n == 1 { 0 } else { z };
                let g = g_row[z];
                gw[slot] += g * x_row[z];
                gb[slot] += g;
                g_row[z] = g * coef(z).0;
            }
        }
        Ok(PointwiseGrads {
            input: gi,
            weights: Tensor::from_vec(&[n], gw)?,
            biases: Tensor::from_vec(&[n], gb)?,
        })
    }
}

/// `weight · x + bias` applied to every element of the patch.
pub fn pointwise_band_transform_forward(input: &Tensor, weight: f64, bias: f64) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        *v = weight * *v + bias;
    }
    out
}

pub fn relu_forward(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    for v in out.data_mut() {
        *v = v.max(0.0);
    }
    out
}

/// Passes `grad_out` where the forward input was strictly positive.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if input.shape() != grad_out.shape() {
        return Err(Error::Shape(format!(
            "relu grad_out {:?} does not match input {:?}",
            grad_out.shape(),
            input.shape()
        )));
    }
    let mut g = grad_out.clone();
    for (gv, &x) in g.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 {
            *gv = 0.0;
        }
    }
    Ok(g)
}

/// Inverted dropout. The mask of the most recent training-mode call is kept
/// for the backward pass.
#[derive(Debug, Clone)]
pub struct DropoutState {
    rate: f64,
    seed: u64,
    mask: Option<Tensor>,
}

impl DropoutState {
    pub fn new(rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Self {
            rate,
            seed,
            mask: None,
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Binary keep-mask from the last training-mode forward (1 = kept).
    pub fn mask(&self) -> Option<&Tensor> {
        self.mask.as_ref()
    }
}

pub fn dropout_forward(t: &Tensor, state: &mut DropoutState, training: bool) -> Tensor {
    if !training {
        state.mask = None;
        return t.clone();
    }
    let keep = 1.0 - state.rate;
    let mut rng = ChaCha8Rng::seed_from_u64(state.seed);
    let mut mask = t.zeros_like();
    for m in mask.data_mut() {
        if state.rate == 0.0 || rng.gen::<f64>() < keep {
            *m = 1.0;
        }
    }
    let mut out = t.clone();
    for (v, m) in out.data_mut().iter_mut().zip(mask.data()) {
        *v = *v * m / keep;
    }
    state.mask = Some(mask);
    out
}

/// Backward of [`dropout_forward`]; identity when the last call was in
/// inference mode.
pub fn dropout_backward(grad_out: &Tensor, state: &DropoutState) -> Result<Tensor> {
    let Some(mask) = &state.mask else {
        return Ok(grad_out.clone());
    };
    if mask.shape() != grad_out.shape() {
        return Err(Error::Shape(format!(
            "dropout grad_out {:?} does not match mask {:?}",
            grad_out.shape(),
            mask.shape()
        )));
    }
    let keep = 1.0 - state.rate;
    let mut g = grad_out.clone();
    for (v, m) in g.data_mut().iter_mut().zip(mask.data()) {
        *v = *v * m / keep;
    }
    Ok(g)
}

/// Fully connected layer: `weights` is `[out_units, in_units]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub weights: Tensor,
    pub biases: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub biases: Tensor,
}

impl DenseParams {
    pub fn new(weights: Tensor, biases: Tensor) -> Result<Self> {
        if weights.ndim() != 2 || biases.shape() != [weights.shape()[0]] {
            return Err(Error::Shape(format!(
                "dense weights {:?} and biases {:?} disagree",
                weights.shape(),
                biases.shape()
            )));
        }
        Ok(Self { weights, biases })
    }

    pub fn out_units(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_units(&self) -> usize {
        self.weights.shape()[1]
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != [self.in_units()] {
            return Err(Error::Shape(format!(
                "dense input {:?} does not match {} input units",
                x.shape(),
                self.in_units()
            )));
        }
        Ok(())
    }
}

pub fn dense_forward(x: &Tensor, params: &DenseParams) -> Result<Tensor> {
    params.check_input(x)?;
    let n = params.in_units();
    let out = params
        .weights
        .data()
        .chunks_exact(n)
        .zip(params.biases.data())
        .map(|(row, b)| b + row.iter().zip(x.data()).map(|(w, v)| w * v).sum::<f64>())
        .collect();
    Tensor::from_vec(&[params.out_units()], out)
}

pub fn dense_backward(x: &Tensor, params: &DenseParams, grad_out: &Tensor) -> Result<DenseGrads> {
    params.check_input(x)?;
    if grad_out.shape() != [params.out_units()] {
        return Err(Error::Shape(format!(
            "dense grad_out {:?} does not match {} output units",
            grad_out.shape(),
            params.out_units()
        )));
    }
    let n = params.in_units();
    let mut gx = vec![0.0; n];
    let mut gw = Vec::with_capacity(params.weights.len());
    for (row, &g) in params.weights.data().chunks_exact(n).zip(grad_out.data()) {
        for ((gxv, w), xv) in gx.iter_mut().zip(row).zip(x.data()) {
            *gxv += g * w;
            gw.push(g * xv);
        }
    }
    Ok(DenseGrads {
        input: Tensor::from_vec(&[n], gx)?,
        weights: Tensor::from_vec(params.weights.shape(), gw)?,
        biases: grad_out.clone(),
    })
}

/// Numerically stable softmax over a 1-D logit vector.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    if !logits.is_finite() {
        return Err(Error::Numeric("softmax input contains non-finite values".into()));
    }
    let max = logits.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.data().iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Tensor::from_vec(logits.shape(), exps.into_iter().map(|e| e / total).collect())
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
