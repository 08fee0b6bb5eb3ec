//! The spectral-partitioning network.
//!
//! A patch `[P, P, bands]` goes through a per-band affine transform, is cut
//! into contiguous band segments, and every segment runs through the same
//! stack of 3D convolutions (one parameter set, shared). The flattened
//! segment outputs are concatenated and classified by two dense layers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    argmax, conv3d_backward, conv3d_forward, dense_backward, dense_forward, dropout_backward,
    dropout_forward, relu_backward, relu_forward, softmax, Conv3dParams, DenseParams,
    DropoutState, PointwiseMode, PointwiseParams,
};
use crate::tensor::Tensor;

/// One 3D convolution of the shared stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub depth: usize,
    pub spectral_stride: usize,
    pub spatial_pad: usize,
}

impl ConvSpec {
    pub const fn new(
        out_channels: usize,
        height: usize,
        width: usize,
        depth: usize,
        spectral_stride: usize,
        spatial_pad: usize,
    ) -> Self {
        Self {
            out_channels,
            height,
            width,
            depth,
            spectral_stride,
            spatial_pad,
        }
    }
}

/// The published four-layer stack. Layer 3 carries a spatial zero-pad of 1
/// so its 3×3 kernel fits the 2×2 extent left by layers 1 and 2.
pub const DEFAULT_CONV_STACK: [ConvSpec; 4] = [
    ConvSpec::new(1, 2, 2, 9, 2, 0),
    ConvSpec::new(3, 3, 3, 5, 1, 0),
    ConvSpec::new(5, 3, 3, 5, 2, 1),
    ConvSpec::new(10, 1, 1, 3, 1, 0),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    fn forward(self, t: &Tensor) -> Tensor {
        match self {
            Activation::Relu => relu_forward(t),
            Activation::Identity => t.clone(),
        }
    }

    fn backward(self, pre: &Tensor, grad: Tensor) -> Result<Tensor> {
        match self {
            Activation::Relu => relu_backward(pre, &grad),
            Activation::Identity => Ok(grad),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub patch_size: usize,
    pub num_segments: usize,
    pub conv_stack: Vec<ConvSpec>,
    pub fc1_units: usize,
    pub dropout_p: f64,
    pub pointwise_mode: PointwiseMode,
    /// Activation after every conv layer and after fc1.
    pub hidden_activation: Activation,
    /// Whether the leading 1×1 transform is followed by the hidden
    /// activation. Off by default: that layer is a linear transform.
    pub pointwise_activation: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            patch_size: 5,
            num_segments: 2,
            conv_stack: DEFAULT_CONV_STACK.to_vec(),
            fc1_units: 120,
            dropout_p: 0.5,
            pointwise_mode: PointwiseMode::SharedScalar,
            hidden_activation: Activation::Relu,
            pointwise_activation: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 3 || self.patch_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "patch size {} must be odd and at least 3",
                self.patch_size
            )));
        }
        if self.num_segments == 0 {
            return Err(Error::Config("need at least one spectral segment".into()));
        }
        if self.conv_stack.is_empty() {
            return Err(Error::Config("conv stack is empty".into()));
        }
        for (i, spec) in self.conv_stack.iter().enumerate() {
            if spec.out_channels == 0
                || spec.height == 0
                || spec.width == 0
                || spec.depth == 0
                || spec.spectral_stride == 0
            {
                return Err(Error::Config(format!("conv layer {} has a zero extent: {spec:?}", i + 1)));
            }
        }
        if self.fc1_units == 0 {
            return Err(Error::Config("fc1 needs at least one unit".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout rate {} outside [0, 1)", self.dropout_p)));
        }
        Ok(())
    }

    /// Activation shapes `[C, X, Y, Z]` of one segment, starting with the
    /// segment input and ending with the last conv output.
    pub fn segment_chain(&self, segment_bands: usize) -> Result<Vec<[usize; 4]>> {
        let p = self.patch_size;
        let mut shape = [1, p, p, segment_bands];
        let mut chain = vec![shape];
        for (i, spec) in self.conv_stack.iter().enumerate() {
            let layer_err = |e: Error| {
                Error::Config(format!(
                    "conv layer {} ({}x{}x{}) cannot be applied to {}x{}x{}: {e}",
                    i + 1,
                    spec.height,
                    spec.width,
                    spec.depth,
                    shape[1],
                    shape[2],
                    shape[3]
                ))
            };
            let x = crate::layers::conv_extent(shape[1], spec.height, 1, spec.spatial_pad, "height")
                .map_err(layer_err)?;
            let y = crate::layers::conv_extent(shape[2], spec.width, 1, spec.spatial_pad, "width")
                .map_err(layer_err)?;
            let z = crate::layers::conv_extent(shape[3], spec.depth, spec.spectral_stride, 0, "spectral")
                .map_err(layer_err)?;
            shape = [spec.out_channels, x, y, z];
            chain.push(shape);
        }
        Ok(chain)
    }
}

/// Contiguous, non-overlapping band ranges covering `0..n_bands`. Sizes
/// differ by at most one; earlier segments take the extra bands.
pub fn spectral_partition_bounds(n_bands: usize, num_segments: usize) -> Result<Vec<(usize, usize)>> {
    if num_segments == 0 || num_segments > n_bands {
        return Err(Error::Config(format!(
            "cannot split {n_bands} bands into {num_segments} segments"
        )));
    }
    let base = n_bands / num_segments;
    let extra = n_bands % num_segments;
    let mut bounds = Vec::with_capacity(num_segments);
    let mut lo = 0;
    for s in 0..num_segments {
        let hi = lo + base + usize::from(s < extra);
        bounds.push((lo, hi));
        lo = hi;
    }
    Ok(bounds)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    n_bands: usize,
    n_classes: usize,
    pointwise: PointwiseParams,
    shared_stack: Vec<Conv3dParams>,
    fc1: DenseParams,
    fc2: DenseParams,
    segment_bounds: Vec<(usize, usize)>,
}

fn glorot(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Result<Tensor> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-limit..=limit)).collect())
}

/// Kernel draws per conv layer before initialisation gives up.
const MAX_INIT_DRAWS: usize = 64;

impl Model {
    /// Build a freshly initialised model. Weights are Glorot-uniform drawn
    /// from a ChaCha8 stream seeded with `seed`, biases are zero. A conv
    /// layer whose kernels leave a constant 0.5 patch with no positive
    /// activation is redrawn.
    pub fn build(config: ModelConfig, n_bands: usize, n_classes: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if n_classes == 0 {
            return Err(Error::Config("model needs at least one class".into()));
        }
        let segment_bounds = spectral_partition_bounds(n_bands, config.num_segments)?;
        let mut flat = 0;
        for &(lo, hi) in &segment_bounds {
            let chain = config.segment_chain(hi - lo)?;
            flat += chain.last().unwrap().iter().product::<usize>();
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pw_len = match config.pointwise_mode {
            PointwiseMode::SharedScalar => 1,
            PointwiseMode::PerBand => n_bands,
        };
        let pointwise = PointwiseParams {
            weights: glorot(&mut rng, &[pw_len], 1, 1)?,
            biases: Tensor::zeros(&[pw_len])?,
        };
        // A constant mid-range patch, standing in for normalised data.
        let p = config.patch_size;
        let (lo, hi) = segment_bounds[0];
        let pointwise_act = if config.pointwise_activation {
            config.hidden_activation
        } else {
            Activation::Identity
        };
        let transformed = pointwise_act.forward(&pointwise.forward(&Tensor::filled(&[p, p, n_bands], 0.5)?)?);
        let mut probe = transformed.slice_bands(lo, hi)?.into_reshaped(&[1, p, p, hi - lo])?;

        let mut shared_stack = Vec::with_capacity(config.conv_stack.len());
        let mut in_channels = 1;
        for (i, spec) in config.conv_stack.iter().enumerate() {
            let taps = spec.height * spec.width * spec.depth;
            let mut attempts = 0;
            // Narrow layers can start with every unit below zero on
            // non-negative input, which no gradient can revive. Such
            // kernels are redrawn from the same stream.
            let (conv, out) = loop {
                let kernels = glorot(
                    &mut rng,
                    &[spec.out_channels, in_channels, spec.height, spec.width, spec.depth],
                    in_channels * taps,
                    spec.out_channels * taps,
                )?;
                let conv = Conv3dParams::new(
                    kernels,
                    Tensor::zeros(&[spec.out_channels])?,
                    (1, 1, spec.spectral_stride),
                    (spec.spatial_pad, spec.spatial_pad),
                )?;
                let out = config.hidden_activation.forward(&conv3d_forward(&probe, &conv)?);
                if config.hidden_activation == Activation::Identity || out.data().iter().any(|&v| v > 0.0) {
                    break (conv, out);
                }
                attempts += 1;
                if attempts == MAX_INIT_DRAWS {
                    return Err(Error::Degenerate(format!(
                        "conv layer {} stayed inactive after {MAX_INIT_DRAWS} draws",
                        i + 1
                    )));
                }
            };
            shared_stack.push(conv);
            probe = out;
            in_channels = spec.out_channels;
        }
        let fc1 = DenseParams::new(
            glorot(&mut rng, &[config.fc1_units, flat], flat, config.fc1_units)?,
            Tensor::zeros(&[config.fc1_units])?,
        )?;
        let fc2 = DenseParams::new(
            glorot(&mut rng, &[n_classes, config.fc1_units], config.fc1_units, n_classes)?,
            Tensor::zeros(&[n_classes])?,
        )?;
        Ok(Self {
            config,
            n_bands,
            n_classes,
            pointwise,
            shared_stack,
            fc1,
            fc2,
            segment_bounds,
        })
    }

    /// Rebuild a model from a flat parameter list in [`Model::parameters`]
    /// order, checking every shape.
    pub fn from_parameters(
        config: ModelConfig,
        n_bands: usize,
        n_classes: usize,
        params: Vec<Tensor>,
    ) -> Result<Self> {
        let mut model = Self::build(config, n_bands, n_classes, 0)?;
        let slots = model.parameters_mut();
        if slots.len() != params.len() {
            return Err(Error::Shape(format!(
                "model has {} parameter tensors, got {}",
                slots.len(),
                params.len()
            )));
        }
        for (i, (slot, p)) in slots.into_iter().zip(params).enumerate() {
            if slot.shape() != p.shape() {
                return Err(Error::Shape(format!(
                    "parameter {i} expects shape {:?}, got {:?}",
                    slot.shape(),
                    p.shape()
                )));
            }
            *slot = p;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn n_bands(&self) -> usize {
        self.n_bands
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn segment_bounds(&self) -> &[(usize, usize)] {
        &self.segment_bounds
    }

    pub fn pointwise(&self) -> &PointwiseParams {
        &self.pointwise
    }

    /// The single conv-stack parameter set used by every segment.
    pub fn shared_stack(&self) -> &[Conv3dParams] {
        &self.shared_stack
    }

    pub fn shared_stack_mut(&mut self) -> &mut [Conv3dParams] {
        &mut self.shared_stack
    }

    pub fn fc1(&self) -> &DenseParams {
        &self.fc1
    }

    pub fn fc2(&self) -> &DenseParams {
        &self.fc2
    }

    /// Width of the concatenated feature vector that feeds fc1.
    pub fn feature_len(&self) -> usize {
        self.fc1.in_units()
    }

    /// Named parameter tensors in canonical order.
    pub fn parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("pointwise.weights".to_string(), &self.pointwise.weights),
            ("pointwise.biases".to_string(), &self.pointwise.biases),
        ];
        for (i, conv) in self.shared_stack.iter().enumerate() {
            out.push((format!("conv{}.kernels", i + 1), &conv.kernels));
            out.push((format!("conv{}.biases", i + 1), &conv.biases));
        }
        out.push(("fc1.weights".to_string(), &self.fc1.weights));
        out.push(("fc1.biases".to_string(), &self.fc1.biases));
        out.push(("fc2.weights".to_string(), &self.fc2.weights));
        out.push(("fc2.biases".to_string(), &self.fc2.biases));
        out
    }

    pub fn parameter_names(&self) -> Vec<String> {
        self.parameters().into_iter().map(|(n, _)| n).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.pointwise.weights, &mut self.pointwise.biases];
        for conv in &mut self.shared_stack {
            out.push(&mut conv.kernels);
            out.push(&mut conv.biases);
        }
        out.extend([
            &mut self.fc1.weights,
            &mut self.fc1.biases,
            &mut self.fc2.weights,
            &mut self.fc2.biases,
        ]);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.len()).sum()
    }

    fn check_patch(&self, patch: &Tensor) -> Result<()> {
        let p = self.config.patch_size;
        if patch.shape() != [p, p, self.n_bands] {
            return Err(Error::Shape(format!(
                "patch {:?} does not match model input [{p}, {p}, {}]",
                patch.shape(),
                self.n_bands
            )));
        }
        Ok(())
    }

    fn pointwise_act(&self) -> crate::model::Activation {
        if self.config.pointwise_activation {
            self.config.hidden_activation
        } else {
            Activation::Identity
        }
    }

    /// Leading 1×1 transform of the whole patch.
    pub fn transform(&self, patch: &Tensor) -> Result<Tensor> {
        self.check_patch(patch)?;
        let pre = self.pointwise.forward(patch)?;
        Ok(self.pointwise_act().forward(&pre))
    }

    /// Band segment `index` of a transformed patch, shaped `[1, P, P, bands]`.
    pub fn segment_input(&self, transformed: &Tensor, index: usize) -> Result<Tensor> {
        let &(lo, hi) = self
            .segment_bounds
            .get(index)
            .ok_or_else(|| Error::Bounds(format!("segment {index} of {}", self.segment_bounds.len())))?;
        let p = self.config.patch_size;
        transformed.slice_bands(lo, hi)?.into_reshaped(&[1, p, p, hi - lo])
    }

    /// Conv layer `layer` of the shared stack followed by its activation.
    pub fn conv_layer(&self, layer: usize, input: &Tensor) -> Result<Tensor> {
        let pre = conv3d_forward(input, &self.shared_stack[layer])?;
        Ok(self.config.hidden_activation.forward(&pre))
    }

    pub fn num_conv_layers(&self) -> usize {
        self.shared_stack.len()
    }

    /// Runs the shared stack on segment `index` and returns its last block.
    pub fn segment_features(&self, transformed: &Tensor, index: usize) -> Result<Tensor> {
        let mut a = self.segment_input(transformed, index)?;
        for layer in 0..self.shared_stack.len() {
            a = self.conv_layer(layer, &a)?;
        }
        Ok(a)
    }

    /// Inference-mode head: flatten and join segment blocks, fc1,
    /// activation, fc2, softmax. Returns `(logits, probs)`.
    pub fn head(&self, segment_blocks: &[Tensor]) -> Result<(Tensor, Tensor)> {
        let features = self.flatten_segments(segment_blocks)?;
        let h = dense_forward(&features, &self.fc1)?;
        let a = self.config.hidden_activation.forward(&h);
        let logits = dense_forward(&a, &self.fc2)?;
        let probs = softmax(&logits)?;
        Ok((logits, probs))
    }

    fn flatten_segments(&self, blocks: &[Tensor]) -> Result<Tensor> {
        if blocks.len() != self.segment_bounds.len() {
            return Err(Error::Shape(format!(
                "expected {} segment blocks, got {}",
                self.segment_bounds.len(),
                blocks.len()
            )));
        }
        let flat: Vec<Tensor> = blocks
            .iter()
            .map(|b| b.reshape(&[b.len()]))
            .collect::<Result<_>>()?;
        Tensor::concat_last_axis(&flat)
    }

    /// `(logits, probs)` for one patch. With `training` set, dropout after
    /// fc1 draws its mask from `dropout_seed`.
    pub fn forward(&self, patch: &Tensor, training: bool, dropout_seed: u64) -> Result<(Tensor, Tensor)> {
        if training {
            let trace = self.forward_trace(patch, true, dropout_seed)?;
            return Ok((trace.logits, trace.probs));
        }
        let transformed = self.transform(patch)?;
        let blocks = (0..self.segment_bounds.len())
            .map(|s| self.segment_features(&transformed, s))
            .collect::<Result<Vec<_>>>()?;
        self.head(&blocks)
    }

    /// Inference-mode class index: argmax of the probabilities, lowest
    /// index on ties.
    pub fn predict_label(&self, patch: &Tensor) -> Result<usize> {
        let (_, probs) = self.forward(patch, false, 0)?;
        Ok(argmax(probs.data()))
    }

    /// Forward pass keeping every intermediate needed by [`Model::backward`].
    pub fn forward_trace(&self, patch: &Tensor, training: bool, dropout_seed: u64) -> Result<ForwardTrace> {
        self.check_patch(patch)?;
        let act = self.config.hidden_activation;
        let pointwise_pre = self.pointwise.forward(patch)?;
        let transformed = self.pointwise_act().forward(&pointwise_pre);
        let mut segments = Vec::with_capacity(self.segment_bounds.len());
        for s in 0..self.segment_bounds.len() {
            let input = self.segment_input(&transformed, s)?;
            let mut inputs = vec![input];
            let mut pre = Vec::with_capacity(self.shared_stack.len());
            for conv in &self.shared_stack {
                let z = conv3d_forward(inputs.last().unwrap(), conv)?;
                inputs.push(act.forward(&z));
                pre.push(z);
            }
            segments.push(SegmentTrace { inputs, pre });
        }
        let blocks: Vec<Tensor> = segments.iter().map(|s| s.inputs.last().unwrap().clone()).collect();
        let features = self.flatten_segments(&blocks)?;
        let fc1_pre = dense_forward(&features, &self.fc1)?;
        let fc1_act = act.forward(&fc1_pre);
        let mut dropout = DropoutState::new(self.config.dropout_p, dropout_seed)?;
        let fc1_out = dropout_forward(&fc1_act, &mut dropout, training);
        let logits = dense_forward(&fc1_out, &self.fc2)?;
        let probs = softmax(&logits)?;
        Ok(ForwardTrace {
            patch: patch.clone(),
            pointwise_pre,
            transformed,
            segments,
            features,
            fc1_pre,
            dropout,
            fc1_out,
            logits,
            probs,
        })
    }

    /// Parameter gradients given `d loss / d logits`.
    pub fn backward(&self, trace: &ForwardTrace, grad_logits: &Tensor) -> Result<Gradients> {
        let act = self.config.hidden_activation;
        let fc2 = dense_backward(&trace.fc1_out, &self.fc2, grad_logits)?;
        let g = dropout_backward(&fc2.input, &trace.dropout)?;
        let g = act.backward(&trace.fc1_pre, g)?;
        let fc1 = dense_backward(&trace.features, &self.fc1, &g)?;

        let mut conv_grads: Vec<(Tensor, Tensor)> = self
            .shared_stack
            .iter()
            .map(|c| (c.kernels.zeros_like(), c.biases.zeros_like()))
            .collect();
        let mut grad_transformed_parts = Vec::with_capacity(trace.segments.len());
        let mut offset = 0;
        for seg in &trace.segments {
            let last = seg.inputs.last().unwrap();
            let n = last.len();
            let mut g = Tensor::from_vec(last.shape(), fc1.input.data()[offset..offset + n].to_vec())?;
            offset += n;
            for (layer, conv) in self.shared_stack.iter().enumerate().rev() {
                g = act.backward(&seg.pre[layer], g)?;
                let grads = conv3d_backward(&seg.inputs[layer], conv, &g)?;
                conv_grads[layer].0.add_assign(&grads.kernels)?;
                conv_grads[layer].1.add_assign(&grads.biases)?;
                g = grads.input;
            }
            let p = self.config.patch_size;
            let bands = g.shape()[3];
            grad_transformed_parts.push(g.into_reshaped(&[p, p, bands])?);
        }
        let g = Tensor::concat_last_axis(&grad_transformed_parts)?;
        let g = self.pointwise_act().backward(&trace.pointwise_pre, g)?;
        let pw = self.pointwise.backward(&trace.patch, &g)?;

        let mut tensors = vec![pw.weights, pw.biases];
        for (k, b) in conv_grads {
            tensors.push(k);
            tensors.push(b);
        }
        tensors.extend([fc1.weights, fc1.biases, fc2.weights, fc2.biases]);
        Ok(Gradients { tensors })
    }
}

#[derive(Debug, Clone)]
struct SegmentTrace {
    /// Input to each conv layer; the last entry is the segment output.
    inputs: Vec<Tensor>,
    /// Pre-activation output of each conv layer.
    pre: Vec<Tensor>,
}

/// Intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    patch: Tensor,
    pointwise_pre: Tensor,
    transformed: Tensor,
    segments: Vec<SegmentTrace>,
    features: Tensor,
    fc1_pre: Tensor,
    dropout: DropoutState,
    fc1_out: Tensor,
    pub logits: Tensor,
    pub probs: Tensor,
}

impl ForwardTrace {
    pub fn transformed(&self) -> &Tensor {
        &self.transformed
    }

    /// Output block of segment `index` after the last conv layer.
    pub fn segment_output(&self, index: usize) -> Option<&Tensor> {
        self.segments.get(index).and_then(|s| s.inputs.last())
    }

    /// Sign pattern of every pre-activation, used to detect finite
    /// difference probes that straddle a ReLU kink.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        let push = |out: &mut Vec<bool>, t: &Tensor| out.extend(t.data().iter().map(|&v| v > 0.0));
        push(&mut out, &self.pointwise_pre);
        for seg in &self.segments {
            for z in &seg.pre {
                push(&mut out, z);
            }
        }
        push(&mut out, &self.fc1_pre);
        out
    }
}

/// Gradient tensors in [`Model::parameters`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    tensors: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_for(model: &Model) -> Self {
        Self {
            tensors: model.parameters().into_iter().map(|(_, t)| t.zeros_like()).collect(),
        }
    }

    pub fn from_tensors(tensors: Vec<Tensor>) -> Self {
        Self { tensors }
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::Shape("gradient sets have different lengths".into()));
        }
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            t.scale(factor);
        }
    }
}
