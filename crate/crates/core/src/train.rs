//! Loss, optimiser, training loop, evaluation metrics and the end-to-end
//! gradient check.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::SampleSource;
use crate::error::{Error, Result};
use crate::model::{Gradients, Model};
use crate::tensor::Tensor;

/// Floor added inside the logarithm of the cross-entropy.
pub const LOG_FLOOR: f64 = 1e-12;

/// Cross-entropy of a softmax output against a class index, together with
/// the gradient with respect to the logits (`probs − onehot`).
pub fn cross_entropy(probs: &Tensor, label: usize) -> Result<(f64, Tensor)> {
    let c = probs.len();
    if label >= c {
        return Err(Error::Config(format!("label {label} out of range for {c} classes")));
    }
    let loss = -probs.data()[label].max(LOG_FLOOR).ln();
    let mut grad = probs.clone();
    grad.data_mut()[label] -= 1.0;
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = params.into_iter().map(Tensor::zeros_like).collect();
        Self {
            config,
            v: m.clone(),
            m,
            t: 0,
        }
    }

    pub fn for_model(config: AdamConfig, model: &Model) -> Self {
        Self::new(config, model.parameters().into_iter().map(|(_, t)| t))
    }
}

/// One bias-corrected Adam update of every parameter.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam got {} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, ((p, g), m)) in params.iter().zip(grads).zip(&state.m).enumerate() {
        if p.len() != g.len() || p.len() != m.len() {
            return Err(Error::Shape(format!(
                "adam slot {i}: parameter {:?}, gradient {:?}, moments {:?}",
                p.shape(),
                g.shape(),
                m.shape()
            )));
        }
    }
    state.t += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let correct1 = 1.0 - beta1.powi(state.t as i32);
    let correct2 = 1.0 - beta2.powi(state.t as i32);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let moments = m.data_mut().iter_mut().zip(v.data_mut().iter_mut());
        for ((theta, &g), (m, v)) in p.data_mut().iter_mut().zip(g.data()).zip(moments) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / correct1;
            let v_hat = *v / correct2;
            *theta -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

/// Which parameters [`train`] hands back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CheckpointPolicy {
    #[default]
    FinalEpoch,
    /// The parameters after the epoch with the highest validation accuracy
    /// (earliest wins on ties).
    BestValidation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub shuffle_seed: u64,
    /// Base seed for dropout masks; each sample's mask is derived from
    /// `(dropout_seed, epoch, batch, position)`.
    pub dropout_seed: u64,
    /// Evaluate validation/test accuracy every this many epochs (and always
    /// after the last one). 0 disables them.
    pub eval_every: usize,
    pub checkpoint_policy: CheckpointPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 50,
            epochs: 650,
            adam: AdamConfig::default(),
            shuffle_seed: 0,
            dropout_seed: 0,
            eval_every: 1,
            checkpoint_policy: CheckpointPolicy::FinalEpoch,
        }
    }
}

impl TrainConfig {
    /// Shuffle and dropout seeds both derived from one run seed.
    pub fn seeded(seed: u64) -> Self {
        Self {
            shuffle_seed: mix_seed(&[seed, 1]),
            dropout_seed: mix_seed(&[seed, 2]),
            ..Self::default()
        }
    }
}

/// SplitMix64 folded over a list of words: a counter-based seed that does
/// not depend on execution order.
pub fn mix_seed(words: &[u64]) -> u64 {
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for &w in words {
        let mut z = h ^ w.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub adam_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    /// CSV with columns `epoch,train_loss,train_acc,val_acc,test_acc`;
    /// accuracies not evaluated in an epoch are left empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,val_acc,test_acc\n");
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.epoch,
                r.train_loss,
                r.train_acc,
                opt(r.val_acc),
                opt(r.test_acc)
            );
        }
        out
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: History,
    pub optimizer: AdamState,
}

/// Samples whose gradients are accumulated sequentially before the
/// per-chunk sums are reduced in chunk order. Fixed so results do not
/// depend on the thread count.
const ACCUMULATION_CHUNK: usize = 5;

/// Mini-batch Adam training with dropout. Every epoch shuffles the training
/// set, steps once per batch on the mean gradient, then records the
/// inference-mode training accuracy (and validation/test accuracy on the
/// evaluation cadence). Bitwise deterministic for fixed seeds.
pub fn train(
    model: Model,
    train_set: &dyn SampleSource,
    val_set: Option<&dyn SampleSource>,
    test_set: Option<&dyn SampleSource>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with_progress(model, train_set, val_set, test_set, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with_progress(
    mut model: Model,
    train_set: &dyn SampleSource,
    val_set: Option<&dyn SampleSource>,
    test_set: Option<&dyn SampleSource>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::Config("batch size and epoch count must be at least 1".into()));
    }
    let mut optimizer = AdamState::for_model(cfg.adam, &model);
    let mut history = History::default();
    let mut best: Option<(f64, Model)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.shuffle_seed, epoch as u64]));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch_index, batch) in order.chunks(cfg.batch_size).enumerate() {
            let partials: Vec<Result<(Gradients, f64)>> = batch
                .par_chunks(ACCUMULATION_CHUNK)
                .enumerate()
                .map(|(chunk_index, chunk)| {
                    let mut grads = Gradients::zeros_for(&model);
                    let mut loss = 0.0;
                    for (j, &idx) in chunk.iter().enumerate() {
                        let (patch, label) = train_set.sample(idx)?;
                        if label >= model.n_classes() {
                            return Err(Error::Config(format!(
                                "sample {idx} has label {label} but the model has {} classes",
                                model.n_classes()
                            )));
                        }
                        let position = (chunk_index * ACCUMULATION_CHUNK + j) as u64;
                        let seed = mix_seed(&[cfg.dropout_seed, epoch as u64, batch_index as u64, position]);
                        let trace = model.forward_trace(&patch, true, seed)?;
                        let (l, grad_logits) = cross_entropy(&trace.probs, label)?;
                        if !l.is_finite() {
                            return Err(Error::Numeric(format!(
                                "non-finite loss at epoch {epoch}, batch {batch_index}"
                            )));
                        }
                        loss += l;
                        grads.add_assign(&model.backward(&trace, &grad_logits)?)?;
                    }
                    Ok((grads, loss))
                })
                .collect();

            let mut total = Gradients::zeros_for(&model);
            for partial in partials {
                let (g, l) = partial?;
                total.add_assign(&g)?;
                loss_sum += l;
            }
            total.scale(1.0 / batch.len() as f64);
            if total.tensors().iter().any(|t| !t.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient at epoch {epoch}, batch {batch_index}"
                )));
            }
            adam_step(&mut model.parameters_mut(), total.tensors(), &mut optimizer)?;
        }

        let train_acc = evaluate(&model, train_set)?.oa;
        let evaluate_now = cfg.eval_every > 0 && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs);
        let val_acc = match val_set {
            Some(v) if evaluate_now && !v.is_empty() => Some(evaluate(&model, v)?.oa),
            _ => None,
        };
        let test_acc = match test_set {
            Some(t) if evaluate_now && !t.is_empty() => Some(evaluate(&model, t)?.oa),
            _ => None,
        };
        if cfg.checkpoint_policy == CheckpointPolicy::BestValidation {
            if let Some(acc) = val_acc {
                if best.as_ref().is_none_or(|(b, _)| acc > *b) {
                    best = Some((acc, model.clone()));
                }
            }
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_acc,
            val_acc,
            test_acc,
            adam_steps: optimizer.t,
        };
        on_epoch(&record);
        history.epochs.push(record);
    }

    let model = match best {
        Some((_, m)) => m,
        None => model,
    };
    Ok(TrainOutcome {
        model,
        history,
        optimizer,
    })
}

/// Confusion matrix (rows = truth) with overall and average accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub confusion: Vec<Vec<u64>>,
    pub oa: f64,
    pub aa: f64,
    /// `None` for classes with no samples; they do not enter AA.
    pub per_class_acc: Vec<Option<f64>>,
}

impl Metrics {
    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Result<Self> {
        let n = confusion.len();
        if confusion.iter().any(|row| row.len() != n) {
            return Err(Error::Shape("confusion matrix must be square".into()));
        }
        let total: u64 = confusion.iter().flatten().sum();
        let trace: u64 = (0..n).map(|i| confusion[i][i]).sum();
        if total == 0 {
            return Err(Error::Config("confusion matrix is empty".into()));
        }
        let per_class_acc: Vec<Option<f64>> = confusion
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let sum: u64 = row.iter().sum();
                (sum > 0).then(|| row[i] as f64 / sum as f64)
            })
            .collect();
        let present: Vec<f64> = per_class_acc.iter().flatten().copied().collect();
        let aa = present.iter().sum::<f64>() / present.len() as f64;
        Ok(Self {
            oa: trace as f64 / total as f64,
            aa,
            per_class_acc,
            confusion,
        })
    }

    pub fn from_predictions(n_classes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut confusion = vec![vec![0u64; n_classes]; n_classes];
        for (truth, pred) in pairs {
            if truth >= n_classes || pred >= n_classes {
                return Err(Error::Bounds(format!(
                    "class pair ({truth}, {pred}) outside {n_classes} classes"
                )));
            }
            confusion[truth][pred] += 1;
        }
        Self::from_confusion(confusion)
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }
}

/// Inference-mode predictions for every sample, in sample order.
pub fn predict_all(model: &Model, set: &dyn SampleSource) -> Result<Vec<(usize, usize)>> {
    (0..set.len())
        .into_par_iter()
        .map(|i| {
            let (patch, label) = set.sample(i)?;
            Ok((label, model.predict_label(&patch)?))
        })
        .collect()
}

pub fn evaluate(model: &Model, set: &dyn SampleSource) -> Result<Metrics> {
    if set.is_empty() {
        return Err(Error::Config("cannot evaluate an empty set".into()));
    }
    Metrics::from_predictions(model.n_classes(), predict_all(model, set)?)
}

/// Mean and range of one statistic over repeated runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spread {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        Some(Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }

    /// Half of the min–max range.
    pub fn half_range(&self) -> f64 {
        (self.max - self.min) / 2.0
    }
}

/// Aggregate of several independently seeded runs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub runs: usize,
    pub oa: Spread,
    pub aa: Spread,
    pub per_class: Vec<Option<Spread>>,
}

impl RunSummary {
    pub fn from_runs(runs: &[Metrics]) -> Result<Self> {
        let first = runs
            .first()
            .ok_or_else(|| Error::Config("no runs to summarise".into()))?;
        let n = first.per_class_acc.len();
        if runs.iter().any(|m| m.per_class_acc.len() != n) {
            return Err(Error::Shape("runs disagree on the class count".into()));
        }
        let oa: Vec<f64> = runs.iter().map(|m| m.oa).collect();
        let aa: Vec<f64> = runs.iter().map(|m| m.aa).collect();
        let per_class = (0..n)
            .map(|c| {
                let v: Vec<f64> = runs.iter().filter_map(|m| m.per_class_acc[c]).collect();
                Spread::of(&v)
            })
            .collect();
        Ok(Self {
            runs: runs.len(),
            oa: Spread::of(&oa).unwrap(),
            aa: Spread::of(&aa).unwrap(),
            per_class,
        })
    }
}

/// Deliberate corruption of the analytic gradient, used to prove the check
/// can fail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradFault {
    /// Multiply the fc2 bias gradient by this factor.
    ScaleOutputBias(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Denominator floor of the relative error, so gradients that are
    /// numerically zero are compared absolutely.
    pub floor: f64,
    /// Check at most this many seeded-random coordinates per tensor.
    pub max_coords_per_tensor: Option<usize>,
    pub seed: u64,
    pub fault: Option<GradFault>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            floor: 1e-4,
            max_coords_per_tensor: None,
            seed: 0,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub checked: usize,
    /// Coordinates skipped because the ±ε probe flipped a ReLU.
    pub skipped_kinks: usize,
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the analytic cross-entropy gradient of every parameter (dropout
/// off) against central finite differences.
pub fn grad_check(model: &Model, patch: &Tensor, label: usize, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let base = model.forward_trace(patch, false, 0)?;
    let (_, grad_logits) = cross_entropy(&base.probs, label)?;
    let mut analytic = model.backward(&base, &grad_logits)?;
    let names = model.parameter_names();
    if let Some(GradFault::ScaleOutputBias(f)) = opts.fault {
        let slot = names.iter().position(|n| n == "fc2.biases").unwrap();
        analytic.tensors_mut()[slot].scale(f);
    }
    let base_pattern = base.activation_pattern();

    let mut probe = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        checked: 0,
        skipped_kinks: 0,
    };
    for (slot, name) in names.iter().enumerate() {
        let len = analytic.tensors()[slot].len();
        let mut coords: Vec<usize> = (0..len).collect();
        if let Some(k) = opts.max_coords_per_tensor {
            if k < len {
                coords.shuffle(&mut rng);
                coords.truncate(k);
                coords.sort_unstable();
            }
        }
        for i in coords {
            let orig = probe.parameters()[slot].1.data()[i];
            let mut eval = |value: f64| -> Result<(f64, bool)> {
                probe.parameters_mut()[slot].data_mut()[i] = value;
                let trace = probe.forward_trace(patch, false, 0)?;
                let (loss, _) = cross_entropy(&trace.probs, label)?;
                Ok((loss, trace.activation_pattern() == base_pattern))
            };
            let (plus, same_plus) = eval(orig + opts.epsilon)?;
            let (minus, same_minus) = eval(orig - opts.epsilon)?;
            probe.parameters_mut()[slot].data_mut()[i] = orig;
            if !(same_plus && same_minus) {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * opts.epsilon);
            let a = analytic.tensors()[slot].data()[i];
            let err = relative_error(a, numeric, opts.floor);
            report.checked += 1;
            if err > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = err;
                report.worst_param = name.clone();
                report.worst_index = i;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::softmax;
    use crate::model::{Activation, ModelConfig};
    use crate::testutil::{central_diff, random_tensor};

    #[test]
    fn cross_entropy_examples() {
        let p = Tensor::from_vec(&[3], vec![1.0, 0.0, 0.0]).unwrap();
        let (loss, _) = cross_entropy(&p, 0).unwrap();
        assert!(loss.abs() <= 1e-12);
        let u = Tensor::filled(&[4], 0.25).unwrap();
        for label in 0..4 {
            assert!((cross_entropy(&u, label).unwrap().0 - 4f64.ln()).abs() < 1e-11);
        }
        assert!(matches!(cross_entropy(&u, 4), Err(Error::Config(_))));
    }

    #[test]
    fn cross_entropy_gradient_through_softmax() {
        let logits = random_tensor(&[6], 3);
        let label = 2;
        let (_, grad) = cross_entropy(&softmax(&logits).unwrap(), label).unwrap();
        let numeric = central_diff(&logits, 1e-5, |l| {
            cross_entropy(&softmax(l).unwrap(), label).unwrap().0
        });
        for (a, n) in grad.data().iter().zip(numeric.data()) {
            assert!(relative_error(*a, *n, 1e-6) <= 1e-4);
        }
    }

    #[test]
    fn adam_single_step() {
        let mut theta = Tensor::zeros(&[1]).unwrap();
        let g = Tensor::filled(&[1], 1.0).unwrap();
        let mut state = AdamState::new(AdamConfig::default(), [&theta]);
        adam_step(&mut [&mut theta], &[g], &mut state).unwrap();
        // m̂ = 1, v̂ = 1 after bias correction.
        let expected = -5e-4 * (1.0 / (1.0 + 1e-8));
        assert!((theta.data()[0] - expected).abs() < 1e-18);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut theta = random_tensor(&[3, 4], 1);
        let before = theta.clone();
        let g = theta.zeros_like();
        let mut state = AdamState::new(AdamConfig::default(), [&theta]);
        for _ in 0..100 {
            adam_step(&mut [&mut theta], std::slice::from_ref(&g), &mut state).unwrap();
        }
        assert_eq!(theta, before);
        assert_eq!(state.t, 100);
    }

    #[test]
    fn adam_constant_gradient_step_tends_to_learning_rate() {
        for g in [0.3, -2.0] {
            let mut theta = Tensor::zeros(&[1]).unwrap();
            let grad = Tensor::filled(&[1], g).unwrap();
            let mut state = AdamState::new(AdamConfig::default(), [&theta]);
            let mut last = 0.0;
            for _ in 0..10_000 {
                last = theta.data()[0];
                adam_step(&mut [&mut theta], std::slice::from_ref(&grad), &mut state).unwrap();
            }
            let step = theta.data()[0] - last;
            let expected = -5e-4 * g.signum();
            assert!(((step - expected) / expected).abs() < 0.01, "step {step}");
        }
    }

    #[test]
    fn adam_ignores_layout() {
        let g = random_tensor(&[2, 3], 5);
        let mut a = random_tensor(&[2, 3], 6);
        let mut b = a.reshape(&[6]).unwrap();
        let mut sa = AdamState::new(AdamConfig::default(), [&a]);
        let mut sb = AdamState::new(AdamConfig::default(), [&b]);
        for _ in 0..5 {
            adam_step(&mut [&mut a], std::slice::from_ref(&g), &mut sa).unwrap();
            adam_step(&mut [&mut b], &[g.reshape(&[6]).unwrap()], &mut sb).unwrap();
        }
        assert_eq!(a.data(), b.data());
        let mut c = Tensor::zeros(&[5]).unwrap();
        assert!(adam_step(&mut [&mut c], &[g], &mut sa).is_err());
    }

    #[test]
    fn confusion_arithmetic() {
        let m = Metrics::from_confusion(vec![vec![3, 1], vec![0, 4]]).unwrap();
        assert_eq!(m.oa, 0.875);
        assert_eq!(m.per_class_acc, vec![Some(0.75), Some(1.0)]);
        assert_eq!(m.aa, 0.875);

        let perfect = Metrics::from_predictions(3, [(0, 0), (1, 1), (2, 2)]).unwrap();
        assert_eq!((perfect.oa, perfect.aa), (1.0, 1.0));

        let zeros = Metrics::from_predictions(2, [(0, 0), (0, 0), (1, 0), (1, 0)]).unwrap();
        assert_eq!((zeros.oa, zeros.aa), (0.5, 0.5));

        let absent = Metrics::from_confusion(vec![vec![2, 0, 0], vec![0, 0, 0], vec![1, 0, 1]]).unwrap();
        assert_eq!(absent.per_class_acc[1], None);
        assert_eq!(absent.aa, 0.75);
    }

    #[test]
    fn run_summary_reports_mean_and_range() {
        let runs: Vec<Metrics> = [vec![vec![3, 1], vec![0, 4]], vec![vec![4, 0], vec![0, 4]]]
            .into_iter()
            .map(|c| Metrics::from_confusion(c).unwrap())
            .collect();
        let s = RunSummary::from_runs(&runs).unwrap();
        assert_eq!(s.runs, 2);
        assert_eq!(s.oa.mean, 0.9375);
        assert_eq!((s.oa.min, s.oa.max), (0.875, 1.0));
        assert_eq!(s.oa.half_range(), 0.0625);
    }

    pub(crate) fn toy_model(activation: Activation, seed: u64) -> Model {
        let cfg = ModelConfig {
            dropout_p: 0.5,
            hidden_activation: activation,
            ..crate::testing::toy_grad_config(3, 9).unwrap()
        };
        crate::testing::toy_model(cfg, 9, 3, seed).unwrap()
    }

    #[test]
    fn grad_check_toy_model() {
        let model = toy_model(Activation::Relu, 11);
        let patch = random_tensor(&[3, 3, 9], 12);
        let report = grad_check(&model, &patch, 1, &GradCheckOptions::default()).unwrap();
        assert!(report.max_rel_error <= 1e-4, "{report:?}");
        assert!(report.checked > 100);
    }

    #[test]
    fn grad_check_linear_model_is_tighter() {
        let model = toy_model(Activation::Identity, 13);
        let patch = random_tensor(&[3, 3, 9], 14);
        let report = grad_check(&model, &patch, 0, &GradCheckOptions::default()).unwrap();
        assert_eq!(report.skipped_kinks, 0);
        assert!(report.max_rel_error <= 1e-6, "{report:?}");
    }

    #[test]
    fn grad_check_catches_a_corrupted_gradient() {
        let model = toy_model(Activation::Relu, 11);
        let patch = random_tensor(&[3, 3, 9], 12);
        let opts = GradCheckOptions {
            fault: Some(GradFault::ScaleOutputBias(1.1)),
            ..GradCheckOptions::default()
        };
        let report = grad_check(&model, &patch, 1, &opts).unwrap();
        assert!(report.max_rel_error > 1e-2);
        assert_eq!(report.worst_param, "fc2.biases");
    }

    fn separable_set(n: usize, seed: u64) -> Vec<(Tensor, usize)> {
        (0..n)
            .map(|i| {
                let label = i % 2;
                let mut t = random_tensor(&[3, 3, 9], seed + i as u64);
                for row in t.data_mut().chunks_exact_mut(9) {
                    for (z, v) in row.iter_mut().enumerate() {
                        *v = 0.1 * *v + if label == 1 && (2..6).contains(&z) { 0.8 } else { 0.2 };
                    }
                }
                (t, label)
            })
            .collect()
    }

    #[test]
    fn batch_arithmetic() {
        let set = separable_set(103, 0);
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::seeded(1)
        };
        let out = train(toy_model(Activation::Relu, 1), &set, None, None, &cfg).unwrap();
        assert_eq!(out.optimizer.t, 3);
        assert_eq!(out.history.epochs[0].adam_steps, 3);
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let set = separable_set(40, 100);
        let cfg = TrainConfig {
            epochs: 60,
            batch_size: 8,
            adam: AdamConfig {
                learning_rate: 5e-3,
                ..AdamConfig::default()
            },
            ..TrainConfig::seeded(7)
        };
        let a = train(toy_model(Activation::Relu, 2), &set, Some(&set), None, &cfg).unwrap();
        let b = train(toy_model(Activation::Relu, 2), &set, Some(&set), None, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.history.to_csv(), b.history.to_csv());
        assert_eq!(a.history.last().unwrap().train_acc, 1.0);
        assert!(a.history.epochs.iter().all(|r| r.train_loss.is_finite()));
    }

    #[test]
    fn training_errors() {
        let empty: Vec<(Tensor, usize)> = Vec::new();
        let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
        assert!(train(toy_model(Activation::Relu, 1), &empty, None, None, &cfg).is_err());
        let bad = vec![(random_tensor(&[3, 3, 9], 1), 7)];
        assert!(matches!(
            train(toy_model(Activation::Relu, 1), &bad, None, None, &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn best_validation_policy_returns_best_epoch() {
        let set = separable_set(20, 300);
        let cfg = TrainConfig {
            epochs: 6,
            batch_size: 5,
            checkpoint_policy: CheckpointPolicy::BestValidation,
            ..TrainConfig::seeded(3)
        };
        let out = train(toy_model(Activation::Relu, 4), &set, Some(&set), None, &cfg).unwrap();
        let best = out
            .history
            .epochs
            .iter()
            .map(|r| r.val_acc.unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(evaluate(&out.model, &set).unwrap().oa, best);
    }

    #[test]
    fn history_csv_layout() {
        let h = History {
            epochs: vec![EpochRecord {
                epoch: 1,
                train_loss: 0.5,
                train_acc: 0.75,
                val_acc: None,
                test_acc: Some(1.0),
                adam_steps: 2,
            }],
        };
        assert_eq!(h.to_csv(), "epoch,train_loss,train_acc,val_acc,test_acc\n1,0.5,0.75,,1\n");
    }
}
