//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. The full-scale run needs real scenes and is skipped unless
//! their paths are given:
//!
//!     SPECPAT_IP_CUBE, SPECPAT_IP_LABELS
//!     SPECPAT_SALINAS_CUBE, SPECPAT_SALINAS_LABELS

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use specpat::checkpoint::to_bytes;
use specpat::cli::{load_dataset, Preset, PresetName};
use specpat::data::{normalize_minmax, stratified_split, PatchSet, Subset};
use specpat::infer::{predict_scene, Schedule, ScheduleMode};
use specpat::layers::{conv3d_forward, Conv3dParams};
use specpat::synthetic::{bump_patches, striped_scene};
use specpat::testing::{toy_grad_config, toy_model, toy_patch};
use specpat::train::{evaluate, grad_check, train, GradCheckOptions, Metrics, TrainConfig};
use specpat::{Model, ModelConfig, Tensor};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = fn() -> Result<Outcome, specpat::Error>;

fn within(limit: Duration, start: Instant, detail: String, ok: bool) -> Outcome {
    let elapsed = start.elapsed();
    let detail = format!("{detail}; {:.1}s (limit {}s)", elapsed.as_secs_f64(), limit.as_secs());
    if ok && elapsed <= limit {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn gradient_correctness() -> Result<Outcome, specpat::Error> {
    let start = Instant::now();
    let mut worst = (0.0f64, String::new());
    let mut checked = 0;
    for (i, (patch, bands)) in [(3, 9), (3, 14), (3, 20), (5, 9), (5, 16), (5, 20)].into_iter().enumerate() {
        let model = toy_model(toy_grad_config(patch, bands)?, bands, 3, 100 + i as u64)?;
        let input = toy_patch(patch, bands, 200 + i as u64);
        let report = grad_check(&model, &input, i % 3, &GradCheckOptions::default())?;
        checked += report.checked;
        if report.max_rel_error >= worst.0 {
            worst = (
                report.max_rel_error,
                format!("{} at patch {patch}, {bands} bands", report.worst_param),
            );
        }
    }
    Ok(within(
        Duration::from_secs(60),
        start,
        format!("max rel error {:.2e} ({}) over {checked} coordinates", worst.0, worst.1),
        worst.0 <= 1e-4,
    ))
}

/// Direct transcription of the neuron formula: bias plus the sum over
/// input maps and kernel taps, zero outside the spatial extent.
fn naive_conv(input: &Tensor, k: &Tensor, b: &Tensor, stride: (usize, usize, usize), pad: (usize, usize)) -> Vec<f64> {
    let [c_in, xs, ys, zs]: [usize; 4] = input.shape().try_into().unwrap();
    let [c_out, _, kh, kw, kr]: [usize; 5] = k.shape().try_into().unwrap();
    let ox = (xs + 2 * pad.0 - kh) / stride.0 + 1;
    let oy = (ys + 2 * pad.1 - kw) / stride.1 + 1;
    let oz = (zs - kr) / stride.2 + 1;
    let mut out = Vec::with_capacity(c_out * ox * oy * oz);
    for j in 0..c_out {
        for x in 0..ox {
            for y in 0..oy {
                for z in 0..oz {
                    let mut v = b.data()[j];
                    for m in 0..c_in {
                        for h in 0..kh {
                            for w in 0..kw {
                                for r in 0..kr {
                                    let xi = (x * stride.0 + h) as isize - pad.0 as isize;
                                    let yi = (y * stride.1 + w) as isize - pad.1 as isize;
                                    if xi < 0 || yi < 0 || xi >= xs as isize || yi >= ys as isize {
                                        continue;
                                    }
                                    let zi = z * stride.2 + r;
                                    v += k.get(&[j, m, h, w, r]).unwrap()
                                        * input.get(&[m, xi as usize, yi as usize, zi]).unwrap();
                                }
                            }
                        }
                    }
                    out.push(v);
                }
            }
        }
    }
    out
}

fn conv_oracle() -> Result<Outcome, specpat::Error> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let cases = 150;
    for _ in 0..cases {
        let c_in = rng.gen_range(1..=4);
        let c_out = rng.gen_range(1..=4);
        let (xs, ys) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
        let zs = rng.gen_range(1..=20);
        let pad = (rng.gen_range(0..=2), rng.gen_range(0..=2));
        let kh = rng.gen_range(1..=xs + 2 * pad.0);
        let kw = rng.gen_range(1..=ys + 2 * pad.1);
        let kr = rng.gen_range(1..=zs);
        let stride = (rng.gen_range(1..=2), rng.gen_range(1..=2), rng.gen_range(1..=3));
        let mut random = |shape: &[usize]| {
            let n = shape.iter().product();
            Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
        };
        let input = random(&[c_in, xs, ys, zs]);
        let kernels = random(&[c_out, c_in, kh, kw, kr]);
        let biases = random(&[c_out]);
        let expected = naive_conv(&input, &kernels, &biases, stride, pad);
        let got = conv3d_forward(&input, &Conv3dParams::new(kernels, biases, stride, pad)?)?;
        if got.len() != expected.len() {
            return Ok(Outcome::Fail(format!("output length {} vs {}", got.len(), expected.len())));
        }
        for (a, b) in got.data().iter().zip(&expected) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(within(
        Duration::from_secs(60),
        start,
        format!("{cases} cases, max abs difference {worst:.1e}"),
        worst <= 1e-12,
    ))
}

fn shape_contract() -> Result<Outcome, specpat::Error> {
    let config = ModelConfig::default();
    let ip_chain = config.segment_chain(100)?;
    let ip = Model::build(config.clone(), 200, 11, 0)?;
    let sa_chain = config.segment_chain(102)?;
    let sa = Model::build(config, 204, 16, 0)?;
    let ip_expected = [[1, 4, 4, 46], [3, 2, 2, 42], [5, 2, 2, 19], [10, 2, 2, 17]];
    let ok = ip_chain[1..] == ip_expected
        && ip.feature_len() == 1360
        && sa_chain.last() == Some(&[10, 2, 2, 18])
        && sa.feature_len() == 1440;
    let detail = format!(
        "IP {:?} fc1 {}; Salinas final {:?} fc1 {}",
        &ip_chain[1..],
        ip.feature_len(),
        sa_chain.last().unwrap(),
        sa.feature_len()
    );
    Ok(if ok { Outcome::Pass(detail) } else { Outcome::Fail(detail) })
}

fn overfit() -> Result<Outcome, specpat::Error> {
    let start = Instant::now();
    let samples = bump_patches(40, 200, 5, 0.02, 3);
    let model = Model::build(ModelConfig::default(), 200, 2, 3)?;
    assert_eq!(model.config().dropout_p, 0.5);
    let config = TrainConfig {
        epochs: 200,
        eval_every: 0,
        ..TrainConfig::seeded(3)
    };
    assert_eq!((config.batch_size, config.adam.learning_rate), (50, 5e-4));
    let outcome = train(model, &samples, None, None, &config)?;
    let first = outcome.history.epochs.iter().find(|r| r.train_acc == 1.0).map(|r| r.epoch);
    Ok(within(
        Duration::from_secs(300),
        start,
        match first {
            Some(e) => format!("100% train accuracy first at epoch {e}"),
            None => format!(
                "final train accuracy {:.3}",
                outcome.history.last().map_or(0.0, |r| r.train_acc)
            ),
        },
        first.is_some(),
    ))
}

fn schedule_invariance() -> Result<Outcome, specpat::Error> {
    let start = Instant::now();
    let (raw, labels) = striped_scene(16, 16, 200, 4, 8)?;
    let cube = normalize_minmax(&raw)?;
    let split = stratified_split(&labels, specpat::data::Fractions::new(0.5, 0.1, 0.4)?, 8)?;
    let train_set = PatchSet::from_split(&cube, &split, Subset::Train, 5);
    let model = Model::build(ModelConfig::default(), 200, 4, 8)?;
    let config = TrainConfig {
        epochs: 15,
        eval_every: 0,
        ..TrainConfig::seeded(8)
    };
    let model = train(model, &train_set, None, None, &config)?.model;

    let reference = predict_scene(&model, &cube, Schedule::sequential(), None)?;
    let mut distinct: Vec<u16> = reference.map.labels().to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let mut runs = 0;
    for mode in [ScheduleMode::Sequential, ScheduleMode::Parallel, ScheduleMode::Pipeline] {
        for workers in [1, 2, 4] {
            let p = predict_scene(&model, &cube, Schedule::new(mode, workers)?, None)?;
            runs += 1;
            let same_probs = p
                .max_prob
                .iter()
                .zip(&reference.max_prob)
                .all(|(a, b)| a.to_bits() == b.to_bits());
            if p.map != reference.map || !same_probs {
                return Ok(Outcome::Fail(format!("{mode} with {workers} workers differs")));
            }
        }
    }
    Ok(within(
        Duration::from_secs(60),
        start,
        format!("{runs} schedule/worker combinations identical, {} classes in map", distinct.len()),
        distinct.len() > 1,
    ))
}

fn determinism() -> Result<Outcome, specpat::Error> {
    let run = || -> Result<(Vec<u8>, String), specpat::Error> {
        let samples = bump_patches(30, 200, 5, 0.05, 6);
        let (tr, va) = samples.split_at(24);
        let model = Model::build(ModelConfig::default(), 200, 2, 6)?;
        let config = TrainConfig {
            epochs: 8,
            batch_size: 10,
            ..TrainConfig::seeded(6)
        };
        let out = train(model, &tr.to_vec(), Some(&va.to_vec()), None, &config)?;
        Ok((to_bytes(&out.model), out.history.to_csv()))
    };
    let a = run()?;
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("thread pool");
    let b = single.install(run)?;
    let detail = format!("checkpoint {} bytes, history {} bytes; second run on one thread", a.0.len(), a.1.len());
    Ok(if a == b { Outcome::Pass(detail) } else { Outcome::Fail(detail) })
}

fn metrics_arithmetic() -> Result<Outcome, specpat::Error> {
    let cases: [(Vec<Vec<u64>>, f64, f64); 3] = [
        (vec![vec![3, 1], vec![0, 4]], 0.875, 0.875),
        (vec![vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 3]], 1.0, 1.0),
        (vec![vec![2, 2], vec![0, 4]], 0.75, 0.75),
    ];
    let mut lines = Vec::new();
    for (confusion, oa, aa) in cases {
        let m = Metrics::from_confusion(confusion.clone())?;
        if m.oa != oa || m.aa != aa {
            return Ok(Outcome::Fail(format!("{confusion:?}: OA {} AA {}", m.oa, m.aa)));
        }
        lines.push(format!("OA {} AA {}", m.oa, m.aa));
    }
    // Unbalanced: OA 9/12, AA (1/4 + 8/8) / 2.
    let m = Metrics::from_confusion(vec![vec![1, 3], vec![0, 8]])?;
    if m.oa != 0.75 || m.aa != 0.625 {
        return Ok(Outcome::Fail(format!("unbalanced: OA {} AA {}", m.oa, m.aa)));
    }
    Ok(Outcome::Pass(format!("[[3,1],[0,4]] -> {}; 3 more matrices exact", lines[0])))
}

fn env_path(name: &str) -> Option<PathBuf> {
    std::env::var_os(name).map(PathBuf::from)
}

fn full_scale() -> Result<Outcome, specpat::Error> {
    let scenes = [
        (PresetName::IndianPines, "SPECPAT_IP_CUBE", "SPECPAT_IP_LABELS", 0.96),
        (PresetName::Salinas, "SPECPAT_SALINAS_CUBE", "SPECPAT_SALINAS_LABELS", 0.965),
    ];
    let mut details = Vec::new();
    let mut ran = false;
    let mut ok = true;
    for (name, cube_var, labels_var, target) in scenes {
        let (Some(cube), Some(labels)) = (env_path(cube_var), env_path(labels_var)) else {
            details.push(format!("{name:?}: {cube_var}/{labels_var} not set"));
            continue;
        };
        ran = true;
        let preset = Preset::get(name);
        let data = load_dataset(&cube, &labels, &preset)?;
        let mut oas = Vec::new();
        let mut converged = true;
        for seed in 1..=5u64 {
            let split = stratified_split(&data.labels, preset.fractions, seed)?;
            let p = ModelConfig::default().patch_size;
            let train_set = PatchSet::from_split(&data.cube, &split, Subset::Train, p);
            let test_set = PatchSet::from_split(&data.cube, &split, Subset::Test, p);
            let model = Model::build(ModelConfig::default(), data.cube.bands(), data.labels.num_classes(), seed)?;
            let config = TrainConfig {
                epochs: preset.epochs,
                batch_size: preset.batch_size,
                eval_every: 0,
                ..TrainConfig::seeded(seed)
            };
            let out = train(model, &train_set, None, None, &config)?;
            let acc = |e: usize| out.history.epochs[e - 1].train_acc;
            converged &= (acc(150) - acc(preset.epochs)).abs() <= 0.02;
            oas.push(evaluate(&out.model, &test_set)?.oa);
        }
        let mean = oas.iter().sum::<f64>() / oas.len() as f64;
        ok &= mean >= target && converged;
        details.push(format!(
            "{name:?}: mean OA {:.2}% (target {:.1}%), epoch-150 convergence {}",
            100.0 * mean,
            100.0 * target,
            if converged { "ok" } else { "off" }
        ));
    }
    let detail = details.join("; ");
    Ok(match (ran, ok) {
        (false, _) => Outcome::Skip(detail),
        (true, true) => Outcome::Pass(detail),
        (true, false) => Outcome::Fail(detail),
    })
}

fn main() {
    let checks: [(&str, Check); 8] = [
        ("gradient correctness", gradient_correctness),
        ("convolution oracle equivalence", conv_oracle),
        ("architecture shape contract", shape_contract),
        ("overfit sanity", overfit),
        ("schedule invariance", schedule_invariance),
        ("determinism", determinism),
        ("metrics arithmetic", metrics_arithmetic),
        ("full-scale reproduction (extended)", full_scale),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let outcome = check().unwrap_or_else(|e| Outcome::Fail(format!("error: {e}")));
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("{tag} {name}: {detail}");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
