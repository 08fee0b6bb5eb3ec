//! Command-line workflow: split, train, eval, predict-map, grad-check and
//! inspect.
//!
//! Exit codes: 0 success, 1 a check failed, 2 usage or I/O error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::data::{
    filter_classes, load_cube, load_labels, normalize_minmax, stratified_split, Fractions, HsiCube,
    LabelMap, PatchSet, SplitAssignment, Subset, INDIAN_PINES_KEEP,
};
use crate::error::{Error, Result};
use crate::infer::{predict_scene, render_map, Palette, Schedule, ScheduleMode};
use crate::layers::PointwiseMode;
use crate::model::{Activation, Model, ModelConfig};
use crate::testing::toy_grad_config;
use crate::train::{
    evaluate, grad_check, train_with_progress, AdamConfig, CheckpointPolicy, GradCheckOptions,
    GradFault, Metrics, RunSummary, TrainConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Gradient-check pass threshold.
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "specpat", version, about = "Spectral-partitioning 3D CNN for hyperspectral pixel classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded stratified train/val/test split as CSV.
    Split(SplitArgs),
    /// Train one model per seed; writes checkpoints and history CSVs.
    Train(TrainArgs),
    /// Per-class accuracy, OA and AA of one or more checkpoints.
    Eval(EvalArgs),
    /// Classify every pixel of a scene and render a PPM map.
    PredictMap(PredictArgs),
    /// Compare analytic gradients with finite differences on a toy model.
    GradCheck(GradCheckArgs),
    /// Print the header of an HSIC, HSIL or SPC3 file.
    Inspect {
        file: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetName {
    #[value(name = "indian_pines", alias = "indian-pines")]
    IndianPines,
    #[value(name = "salinas")]
    Salinas,
    #[value(name = "custom")]
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PointwiseArg {
    Shared,
    PerBand,
}

impl From<PointwiseArg> for PointwiseMode {
    fn from(p: PointwiseArg) -> Self {
        match p {
            PointwiseArg::Shared => PointwiseMode::SharedScalar,
            PointwiseArg::PerBand => PointwiseMode::PerBand,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScheduleArg {
    Sequential,
    Parallel,
    Pipeline,
}

impl From<ScheduleArg> for ScheduleMode {
    fn from(s: ScheduleArg) -> Self {
        match s {
            ScheduleArg::Sequential => ScheduleMode::Sequential,
            ScheduleArg::Parallel => ScheduleMode::Parallel,
            ScheduleArg::Pipeline => ScheduleMode::Pipeline,
        }
    }
}

/// One of the two published experimental setups, or a custom one.
#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: PresetName,
    pub fractions: Fractions,
    /// Original class ids to keep, relabelled densely.
    pub keep: Option<&'static [u16]>,
    pub expected_bands: Option<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Preset {
    pub fn get(name: PresetName) -> Self {
        let fr = |a, b, c| Fractions::new(a, b, c).expect("preset fractions are valid");
        let base = Self {
            name,
            fractions: fr(0.2, 0.05, 0.75),
            keep: None,
            expected_bands: None,
            epochs: 650,
            batch_size: 50,
            learning_rate: 5e-4,
        };
        match name {
            PresetName::IndianPines => Self {
                keep: Some(&INDIAN_PINES_KEEP),
                expected_bands: Some(200),
                ..base
            },
            PresetName::Salinas => Self {
                fractions: fr(0.1, 0.05, 0.85),
                expected_bands: Some(204),
                ..base
            },
            PresetName::Custom => base,
        }
    }
}

#[derive(Debug, Args)]
struct DatasetArgs {
    /// HSIC cube file.
    #[arg(long)]
    dataset_cube: PathBuf,
    /// HSIL ground-truth file.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, value_enum, default_value = "custom")]
    preset: PresetName,
    /// Train, validation and test fractions, e.g. `0.2,0.05,0.75`.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    fractions: Option<Vec<f64>>,
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Use this split CSV instead of computing one from the seed.
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[command(flatten)]
    data: DatasetArgs,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, value_enum, default_value = "shared")]
    pointwise: PointwiseArg,
    /// Evaluate validation/test accuracy every N epochs.
    #[arg(long, default_value_t = 1)]
    eval_every: usize,
    /// Return the best-validation parameters instead of the final ones.
    #[arg(long)]
    keep_best_val: bool,
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DatasetArgs,
    /// Checkpoint path; `{seed}` is replaced by each seed.
    #[arg(long)]
    checkpoint: String,
    /// Number of runs to aggregate; must not exceed the number of seeds.
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long, value_enum, default_value = "test")]
    subset: SubsetArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SubsetArg {
    Train,
    Val,
    Test,
}

impl From<SubsetArg> for Subset {
    fn from(s: SubsetArg) -> Self {
        match s {
            SubsetArg::Train => Subset::Train,
            SubsetArg::Val => Subset::Val,
            SubsetArg::Test => Subset::Test,
        }
    }
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset_cube: PathBuf,
    /// Ground truth, used only for class names (after preset filtering).
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "custom")]
    preset: PresetName,
    /// `class_id,r,g,b` lines; a distinct colour per class when omitted.
    #[arg(long)]
    palette: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "parallel")]
    schedule: ScheduleArg,
    #[arg(long, default_value_t = 2)]
    workers: usize,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Also write per-pixel class and max probability as CSV.
    #[arg(long)]
    csv: bool,
}

#[derive(Debug, Args)]
struct GradCheckArgs {
    #[arg(long, default_value_t = 9)]
    bands: usize,
    #[arg(long, default_value_t = 3)]
    patch: usize,
    #[arg(long, value_enum, default_value = "shared")]
    pointwise: PointwiseArg,
    /// Replace hidden ReLUs by the identity.
    #[arg(long)]
    linear: bool,
    /// Corrupt the output-bias gradient by +10% (the check must fail).
    #[arg(long)]
    inject_fault: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
}

/// Everything a run depends on, written next to its outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub dataset_cube: PathBuf,
    pub labels: PathBuf,
    pub preset: PresetName,
    pub seeds: Vec<u64>,
    pub fractions: [f64; 3],
    pub split: Option<PathBuf>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub pointwise: Option<String>,
    pub out: PathBuf,
}

impl RunManifest {
    fn validate(&self) -> Result<()> {
        for path in [Some(&self.dataset_cube), Some(&self.labels), self.split.as_ref()].into_iter().flatten() {
            if !path.is_file() {
                return Err(Error::file(
                    path,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
                ));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        Ok(())
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(format!("manifest_{}.json", self.command));
        let json = serde_json::to_string_pretty(self).expect("manifest serialises");
        fs::write(&path, json).map_err(|e| Error::file(&path, e))
    }
}

impl DatasetArgs {
    fn manifest(&self, command: &str) -> Result<(RunManifest, Preset)> {
        let mut preset = Preset::get(self.preset);
        if let Some(f) = &self.fractions {
            preset.fractions = Fractions::new(f[0], f[1], f[2])?;
        }
        let seeds = match (&self.seed, &self.seeds) {
            (_, Some(s)) => s.clone(),
            (Some(s), None) => vec![*s],
            (None, None) => vec![1],
        };
        let f = preset.fractions;
        let manifest = RunManifest {
            command: command.to_string(),
            dataset_cube: self.dataset_cube.clone(),
            labels: self.labels.clone(),
            preset: self.preset,
            seeds,
            fractions: [f.train, f.val, f.test],
            split: self.split.clone(),
            epochs: None,
            batch_size: None,
            learning_rate: None,
            pointwise: None,
            out: self.out.clone(),
        };
        manifest.validate()?;
        Ok((manifest, preset))
    }
}

/// Normalised cube and preset-filtered labels.
pub struct Dataset {
    pub cube: HsiCube,
    pub labels: LabelMap,
}

pub fn load_dataset(cube: &Path, labels: &Path, preset: &Preset) -> Result<Dataset> {
    let raw = load_cube(cube)?;
    if let Some(b) = preset.expected_bands {
        if raw.bands() != b {
            return Err(Error::Config(format!(
                "{} has {} bands, preset expects {b}",
                cube.display(),
                raw.bands()
            )));
        }
    }
    let labels = prepare_labels(load_labels(labels)?, preset)?;
    if !labels.matches(&raw) {
        return Err(Error::Shape(format!(
            "labels are {}x{}, cube is {}x{}",
            labels.height(),
            labels.width(),
            raw.height(),
            raw.width()
        )));
    }
    Ok(Dataset {
        cube: normalize_minmax(&raw)?,
        labels,
    })
}

fn prepare_labels(labels: LabelMap, preset: &Preset) -> Result<LabelMap> {
    match preset.keep {
        Some(keep) => filter_classes(&labels, keep),
        None => Ok(labels),
    }
}

fn split_for(manifest: &RunManifest, preset: &Preset, labels: &LabelMap, seed: u64) -> Result<SplitAssignment> {
    match &manifest.split {
        Some(path) => SplitAssignment::read_csv(path),
        None => stratified_split(labels, preset.fractions, seed),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Split(a) => cmd_split(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::PredictMap(a) => cmd_predict_map(a),
        Command::GradCheck(a) => cmd_grad_check(a),
        Command::Inspect { file } => cmd_inspect(&file),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

fn cmd_split(args: SplitArgs) -> Result<i32> {
    let (manifest, preset) = args.data.manifest("split")?;
    let labels = prepare_labels(load_labels(&manifest.labels)?, &preset)?;
    ensure_dir(&manifest.out)?;
    for &seed in &manifest.seeds {
        let split = stratified_split(&labels, preset.fractions, seed)?;
        let path = manifest.out.join(format!("split_seed{seed}.csv"));
        split.write_csv(&path)?;
        println!("seed {seed}: wrote {}", path.display());
        println!("{:<32} {:>6} {:>6} {:>6}", "class", "train", "val", "test");
        for (class, [tr, va, te]) in split.class_counts() {
            let name = &labels.class_names()[class as usize - 1];
            println!("{name:<32} {tr:>6} {va:>6} {te:>6}");
        }
    }
    Ok(EXIT_OK)
}

fn cmd_train(args: TrainArgs) -> Result<i32> {
    let (mut manifest, preset) = args.data.manifest("train")?;
    manifest.epochs = Some(args.epochs.unwrap_or(preset.epochs));
    manifest.batch_size = Some(args.batch_size.unwrap_or(preset.batch_size));
    manifest.learning_rate = Some(args.lr.unwrap_or(preset.learning_rate));
    manifest.pointwise = Some(format!("{:?}", PointwiseMode::from(args.pointwise)));
    let data = load_dataset(&manifest.dataset_cube, &manifest.labels, &preset)?;
    ensure_dir(&manifest.out)?;
    manifest.write(&manifest.out)?;

    let config = ModelConfig {
        pointwise_mode: args.pointwise.into(),
        ..ModelConfig::default()
    };
    for &seed in &manifest.seeds {
        let split = split_for(&manifest, &preset, &data.labels, seed)?;
        let p = config.patch_size;
        let train_set = PatchSet::from_split(&data.cube, &split, Subset::Train, p);
        let val_set = PatchSet::from_split(&data.cube, &split, Subset::Val, p);
        let test_set = PatchSet::from_split(&data.cube, &split, Subset::Test, p);
        let model = Model::build(config.clone(), data.cube.bands(), data.labels.num_classes(), seed)?;
        let cfg = TrainConfig {
            batch_size: manifest.batch_size.unwrap(),
            epochs: manifest.epochs.unwrap(),
            adam: AdamConfig {
                learning_rate: manifest.learning_rate.unwrap(),
                ..AdamConfig::default()
            },
            eval_every: args.eval_every,
            checkpoint_policy: if args.keep_best_val {
                CheckpointPolicy::BestValidation
            } else {
                CheckpointPolicy::FinalEpoch
            },
            ..TrainConfig::seeded(seed)
        };
        let quiet = args.quiet;
        let outcome = train_with_progress(model, &train_set, Some(&val_set), Some(&test_set), &cfg, |r| {
            if !quiet {
                let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.4}", v));
                eprintln!(
                    "seed {seed} epoch {:>4}  loss {:.5}  train {:.4}  val {}  test {}",
                    r.epoch,
                    r.train_loss,
                    r.train_acc,
                    opt(r.val_acc),
                    opt(r.test_acc)
                );
            }
        })?;
        let ckpt = manifest.out.join(format!("model_seed{seed}.spc3"));
        save_checkpoint(&outcome.model, &ckpt)?;
        let hist = manifest.out.join(format!("history_seed{seed}.csv"));
        fs::write(&hist, outcome.history.to_csv()).map_err(|e| Error::file(&hist, e))?;
        let last = outcome.history.last().expect("at least one epoch");
        println!(
            "seed {seed}: train accuracy {:.4}, wrote {} and {}",
            last.train_acc,
            ckpt.display(),
            hist.display()
        );
    }
    Ok(EXIT_OK)
}

/// Per-class table followed by OA and AA rows, percentages.
pub fn format_report(class_names: &[String], runs: &[Metrics]) -> Result<(String, String)> {
    let summary = RunSummary::from_runs(runs)?;
    let cell = |s: Option<crate::train::Spread>| match s {
        None => "-".to_string(),
        Some(s) if summary.runs == 1 => format!("{:.2}", 100.0 * s.mean),
        Some(s) => format!("{:.2}±{:.2}", 100.0 * s.mean, 100.0 * s.half_range()),
    };
    let mut text = format!("{:<32} {:>14}\n", "Class", "Accuracy (%)");
    let mut csv = String::from("class,mean,min,max\n");
    let csv_cell = |s: Option<crate::train::Spread>| match s {
        None => ",,".to_string(),
        Some(s) => format!("{},{},{}", s.mean, s.min, s.max),
    };
    for (name, s) in class_names.iter().zip(&summary.per_class) {
        let _ = writeln!(text, "{name:<32} {:>14}", cell(*s));
        let _ = writeln!(csv, "{name},{}", csv_cell(*s));
    }
    let _ = writeln!(text, "{:<32} {:>14}", "OA", cell(Some(summary.oa)));
    let _ = writeln!(text, "{:<32} {:>14}", "AA", cell(Some(summary.aa)));
    let _ = writeln!(csv, "OA,{}", csv_cell(Some(summary.oa)));
    let _ = writeln!(csv, "AA,{}", csv_cell(Some(summary.aa)));
    if summary.runs > 1 {
        let _ = writeln!(text, "(mean ± half-range over {} runs)", summary.runs);
    }
    Ok((text, csv))
}

fn cmd_eval(args: EvalArgs) -> Result<i32> {
    let (manifest, preset) = args.data.manifest("eval")?;
    let data = load_dataset(&manifest.dataset_cube, &manifest.labels, &preset)?;
    let mut seeds = manifest.seeds.clone();
    if let Some(runs) = args.runs {
        if runs == 0 || runs > seeds.len() {
            return Err(Error::Config(format!("--runs {runs} needs at least {runs} seeds")));
        }
        seeds.truncate(runs);
    }
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let path = args.checkpoint.replace("{seed}", &seed.to_string());
        let model = load_checkpoint(&path)?;
        if model.n_classes() != data.labels.num_classes() {
            return Err(Error::Shape(format!(
                "{path} predicts {} classes, labels have {}",
                model.n_classes(),
                data.labels.num_classes()
            )));
        }
        let split = split_for(&manifest, &preset, &data.labels, seed)?;
        let set = PatchSet::from_split(&data.cube, &split, args.subset.into(), model.config().patch_size);
        runs.push(evaluate(&model, &set)?);
    }
    let (text, csv) = format_report(data.labels.class_names(), &runs)?;
    print!("{text}");
    ensure_dir(&manifest.out)?;
    let path = manifest.out.join("metrics.csv");
    fs::write(&path, csv).map_err(|e| Error::file(&path, e))?;
    Ok(EXIT_OK)
}

fn cmd_predict_map(args: PredictArgs) -> Result<i32> {
    let model = load_checkpoint(&args.checkpoint)?;
    let cube = normalize_minmax(&load_cube(&args.dataset_cube)?)?;
    let names = match &args.labels {
        Some(path) => {
            let labels = prepare_labels(load_labels(path)?, &Preset::get(args.preset))?;
            Some(labels.class_names().to_vec())
        }
        None => None,
    };
    let palette = match &args.palette {
        Some(p) => Palette::load(p)?,
        None => Palette::for_classes(model.n_classes()),
    };
    let schedule = Schedule::new(args.schedule.into(), args.workers)?;
    let prediction = predict_scene(&model, &cube, schedule, names)?;
    ensure_dir(&args.out)?;
    let ppm = args.out.join("map.ppm");
    render_map(&prediction.map, &palette, &ppm)?;
    if args.csv {
        let path = args.out.join("map.csv");
        fs::write(&path, prediction.to_csv()).map_err(|e| Error::file(&path, e))?;
    }
    println!(
        "{}x{} map ({} schedule, {} workers) in {:.3}s -> {}",
        prediction.map.width(),
        prediction.map.height(),
        schedule.mode,
        schedule.workers(),
        prediction.elapsed.as_secs_f64(),
        ppm.display()
    );
    Ok(EXIT_OK)
}

fn cmd_grad_check(args: GradCheckArgs) -> Result<i32> {
    let mut config = toy_grad_config(args.patch, args.bands)?;
    config.pointwise_mode = args.pointwise.into();
    if args.linear {
        config.hidden_activation = Activation::Identity;
    }
    let model = crate::testing::toy_model(config, args.bands, 3, args.seed)?;
    let patch = crate::testing::toy_patch(args.patch, args.bands, args.seed);
    let opts = GradCheckOptions {
        epsilon: args.epsilon,
        fault: args.inject_fault.then_some(GradFault::ScaleOutputBias(1.1)),
        ..GradCheckOptions::default()
    };
    let report = grad_check(&model, &patch, 1, &opts)?;
    println!(
        "checked {} coordinates ({} skipped at ReLU kinks)\nmax relative error {:.3e} at {}[{}] (analytic {:.6e}, numeric {:.6e})",
        report.checked,
        report.skipped_kinks,
        report.max_rel_error,
        report.worst_param,
        report.worst_index,
        report.worst_analytic,
        report.worst_numeric
    );
    if report.max_rel_error <= GRAD_CHECK_TOLERANCE {
        println!("PASS (tolerance {GRAD_CHECK_TOLERANCE:e})");
        Ok(EXIT_OK)
    } else {
        println!("FAIL (tolerance {GRAD_CHECK_TOLERANCE:e})");
        Ok(EXIT_CHECK_FAILED)
    }
}

fn cmd_inspect(path: &Path) -> Result<i32> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    match bytes.get(..4) {
        Some(b"HSIC") => {
            let cube = crate::data::cube_from_bytes(&bytes)?;
            let (lo, hi) = cube
                .data()
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            let dtype = if bytes[6] == 1 { "f32" } else { "f64" };
            println!(
                "HSIC cube: {} rows x {} cols x {} bands ({dtype}), values in [{lo}, {hi}]",
                cube.height(),
                cube.width(),
                cube.bands()
            );
        }
        Some(b"HSIL") => {
            let labels = crate::data::labels_from_bytes(&bytes)?;
            println!("HSIL labels: {} rows x {} cols, {} classes", labels.height(), labels.width(), labels.num_classes());
            let hist = labels.histogram();
            println!("{:>4} {:<32} {:>8}", 0, "(unlabeled)", hist[0]);
            for (i, name) in labels.class_names().iter().enumerate() {
                println!("{:>4} {name:<32} {:>8}", i + 1, hist[i + 1]);
            }
        }
        Some(b"SPC3") => {
            let model = crate::checkpoint::from_bytes(&bytes)?;
            println!(
                "SPC3 checkpoint: {} bands, {} classes, {} parameters, segments {:?}",
                model.n_bands(),
                model.n_classes(),
                model.parameter_count(),
                model.segment_bounds()
            );
            for (name, t) in model.parameters() {
                println!("  {name:<20} {:?}", t.shape());
            }
        }
        _ => {
            return Err(Error::format(0, format!("{}: unknown file type", path.display())));
        }
    }
    Ok(EXIT_OK)
}
