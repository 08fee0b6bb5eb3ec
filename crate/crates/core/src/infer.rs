//! Whole-scene inference and classification-map rendering.
//!
//! The segment computations of the network share no mutable state, so they
//! can be laid out in three ways:
//!
//! * **sequential**: everything on the calling thread;
//! * **parallel**: `(pixel, segment)` jobs pulled by a pool of workers;
//! * **pipeline**: one thread per conv layer, segments streamed through
//!   the stages, with `workers` independent pipelines over interleaved
//!   pixels.
//!
//! Each segment is always computed by the same function with the same
//! reduction order, so all three produce bitwise identical results.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::sync::OnceLock;
use std::thread;
use std::time::{Duration, Instant};

use crate::data::{extract_patch, HsiCube, LabelMap};
use crate::error::{Error, Result};
use crate::layers::argmax;
use crate::model::Model;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScheduleMode {
    Sequential,
    Parallel,
    Pipeline,
}

impl fmt::Display for ScheduleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleMode::Sequential => "sequential",
            ScheduleMode::Parallel => "parallel",
            ScheduleMode::Pipeline => "pipeline",
        })
    }
}

impl FromStr for ScheduleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sequential" => Ok(Self::Sequential),
            "parallel" => Ok(Self::Parallel),
            "pipeline" => Ok(Self::Pipeline),
            other => Err(Error::Config(format!("unknown schedule {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Schedule {
    pub mode: ScheduleMode,
    workers: usize,
}

impl Schedule {
    pub fn new(mode: ScheduleMode, workers: usize) -> Result<Self> {
        if workers == 0 {
            return Err(Error::Config("worker count must be at least 1".into()));
        }
        Ok(Self { mode, workers })
    }

    pub fn sequential() -> Self {
        Self {
            mode: ScheduleMode::Sequential,
            workers: 1,
        }
    }

    pub fn workers(&self) -> usize {
        self.workers
    }
}

/// Per-segment output blocks of one patch under the given schedule.
pub fn schedule_segments(model: &Model, patch: &Tensor, schedule: Schedule) -> Result<Vec<Tensor>> {
    let transformed = model.transform(patch)?;
    let n = model.segment_bounds().len();
    match schedule.mode {
        ScheduleMode::Sequential => sequential_segments(model, &transformed),
        ScheduleMode::Parallel if schedule.workers == 1 => sequential_segments(model, &transformed),
        ScheduleMode::Parallel => {
            let slots: Vec<OnceLock<Result<Tensor>>> = (0..n).map(|_| OnceLock::new()).collect();
            let next = AtomicUsize::new(0);
            thread::scope(|s| {
                for _ in 0..schedule.workers.min(n) {
                    s.spawn(|| loop {
                        let seg = next.fetch_add(1, Ordering::Relaxed);
                        if seg >= n {
                            break;
                        }
                        let _ = slots[seg].set(model.segment_features(&transformed, seg));
                    });
                }
            });
            slots.into_iter().map(|s| s.into_inner().expect("every segment ran")).collect()
        }
        ScheduleMode::Pipeline => {
            let source = |_: usize| Ok(transformed.clone());
            let mut out = pipeline(model, &[0], &source, &Ok)?;
            Ok(out.pop().expect("one item in, one item out").1)
        }
    }
}

fn sequential_segments(model: &Model, transformed: &Tensor) -> Result<Vec<Tensor>> {
    (0..model.segment_bounds().len())
        .map(|s| model.segment_features(transformed, s))
        .collect()
}

/// Streams several patches through a one-thread-per-conv-layer pipeline
/// and returns each patch's segment blocks in input order.
pub fn pipeline_stream(model: &Model, patches: &[Tensor]) -> Result<Vec<Vec<Tensor>>> {
    let ids: Vec<usize> = (0..patches.len()).collect();
    let source = |i: usize| model.transform(&patches[i]);
    Ok(pipeline(model, &ids, &source, &Ok)?.into_iter().map(|(_, r)| r).collect())
}

type StageItem = Result<(usize, usize, Tensor)>;

/// Runs `items` through source → conv layer 1 → … → conv layer L → finish,
/// one thread per stage. Returns `(item, finish(blocks))` sorted by item.
fn pipeline<R: Send>(
    model: &Model,
    items: &[usize],
    source: &(dyn Fn(usize) -> Result<Tensor> + Sync),
    finish: &(dyn Fn(Vec<Tensor>) -> Result<R> + Sync),
) -> Result<Vec<(usize, R)>> {
    const BOUND: usize = 16;
    let n_seg = model.segment_bounds().len();
    let layers = model.num_conv_layers();

    thread::scope(|s| {
        let (first_tx, mut rx) = sync_channel::<StageItem>(BOUND);
        s.spawn(move || {
            for &item in items {
                let sent = match source(item) {
                    Ok(t) => (0..n_seg).all(|seg| {
                        let input = model.segment_input(&t, seg).map(|x| (item, seg, x));
                        first_tx.send(input).is_ok()
                    }),
                    Err(e) => {
                        let _ = first_tx.send(Err(e));
                        false
                    }
                };
                if !sent {
                    break;
                }
            }
        });
        for layer in 0..layers {
            let (tx, next_rx) = sync_channel::<StageItem>(BOUND);
            let input: Receiver<StageItem> = rx;
            s.spawn(move || conv_stage(model, layer, input, tx));
            rx = next_rx;
        }

        let mut pending: HashMap<usize, Vec<Option<Tensor>>> = HashMap::new();
        let mut out = Vec::with_capacity(items.len());
        for msg in rx {
            let (item, seg, block) = msg?;
            let slots = pending.entry(item).or_insert_with(|| vec![None; n_seg]);
            slots[seg] = Some(block);
            if slots.iter().all(Option::is_some) {
                let blocks = pending.remove(&item).unwrap().into_iter().map(Option::unwrap).collect();
                out.push((item, finish(blocks)?));
            }
        }
        out.sort_by_key(|(item, _)| *item);
        Ok(out)
    })
}

fn conv_stage(model: &Model, layer: usize, input: Receiver<StageItem>, output: SyncSender<StageItem>) {
    for msg in input {
        let next = msg.and_then(|(item, seg, t)| Ok((item, seg, model.conv_layer(layer, &t)?)));
        let failed = next.is_err();
        if output.send(next).is_err() || failed {
            break;
        }
    }
}

/// A full-scene prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePrediction {
    /// Predicted ids `1..=n_classes` for every pixel.
    pub map: LabelMap,
    /// Winning softmax probability per pixel, row-major.
    pub max_prob: Vec<f64>,
    pub elapsed: Duration,
}

impl ScenePrediction {
    /// CSV with columns `y,x,class_id,max_prob`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("y,x,class_id,max_prob\n");
        let w = self.map.width();
        for (i, (&label, p)) in self.map.labels().iter().zip(&self.max_prob).enumerate() {
            out.push_str(&format!("{},{},{label},{p}\n", i / w, i % w));
        }
        out
    }
}

/// Pixels handled per round in parallel mode, bounding the memory held by
/// pending segment blocks.
const PARALLEL_TILE: usize = 512;

/// Classifies every pixel of the scene, including pixels without ground
/// truth, and labels the map with `class_names` (or `class_k`).
pub fn predict_scene(
    model: &Model,
    cube: &HsiCube,
    schedule: Schedule,
    class_names: Option<Vec<String>>,
) -> Result<ScenePrediction> {
    if cube.bands() != model.n_bands() {
        return Err(Error::Shape(format!(
            "cube has {} bands, model expects {}",
            cube.bands(),
            model.n_bands()
        )));
    }
    let names = match class_names {
        Some(n) if n.len() == model.n_classes() => n,
        Some(n) => {
            return Err(Error::Config(format!(
                "{} class names for a {}-class model",
                n.len(),
                model.n_classes()
            )))
        }
        None => (1..=model.n_classes()).map(|k| format!("class_{k}")).collect(),
    };
    let start = Instant::now();
    let (w, h) = (cube.width(), cube.height());
    let pixels = w * h;
    let patch_size = model.config().patch_size;
    let transformed = |p: usize| model.transform(&extract_patch(cube, p % w, p / w, patch_size)?);
    let decide = |blocks: Vec<Tensor>| -> Result<(u16, f64)> {
        let (_, probs) = model.head(&blocks)?;
        let k = argmax(probs.data());
        Ok(((k + 1) as u16, probs.data()[k]))
    };

    let results: Vec<(u16, f64)> = match schedule.mode {
        ScheduleMode::Sequential => (0..pixels)
            .map(|p| decide(sequential_segments(model, &transformed(p)?)?))
            .collect::<Result<_>>()?,
        ScheduleMode::Parallel => {
            let n_seg = model.segment_bounds().len();
            let mut out = Vec::with_capacity(pixels);
            for tile in (0..pixels).step_by(PARALLEL_TILE) {
                let tile_len = PARALLEL_TILE.min(pixels - tile);
                let jobs = tile_len * n_seg;
                let blocks: Vec<OnceLock<Result<Tensor>>> = (0..jobs).map(|_| OnceLock::new()).collect();
                let decided: Vec<OnceLock<Result<(u16, f64)>>> = (0..tile_len).map(|_| OnceLock::new()).collect();
                let next = AtomicUsize::new(0);
                let next_head = AtomicUsize::new(0);
                let workers = schedule.workers.min(jobs);
                thread::scope(|s| {
                    for _ in 0..workers {
                        s.spawn(|| loop {
                            let job = next.fetch_add(1, Ordering::Relaxed);
                            if job >= jobs {
                                break;
                            }
                            let (pixel, seg) = (tile + job / n_seg, job % n_seg);
                            let r = transformed(pixel).and_then(|t| model.segment_features(&t, seg));
                            let _ = blocks[job].set(r);
                        });
                    }
                });
                let mut blocks: Vec<Option<Result<Tensor>>> =
                    blocks.into_iter().map(OnceLock::into_inner).collect();
                let per_pixel: Vec<Vec<Tensor>> = (0..tile_len)
                    .map(|i| {
                        blocks[i * n_seg..(i + 1) * n_seg]
                            .iter_mut()
                            .map(|b| b.take().expect("every job ran"))
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<_>>()?;
                thread::scope(|s| {
                    for _ in 0..schedule.workers.min(tile_len) {
                        s.spawn(|| loop {
                            let i = next_head.fetch_add(1, Ordering::Relaxed);
                            if i >= tile_len {
                                break;
                            }
                            let _ = decided[i].set(decide(per_pixel[i].clone()));
                        });
                    }
                });
                for d in decided {
                    out.push(d.into_inner().expect("every head ran")?);
                }
            }
            out
        }
        ScheduleMode::Pipeline => {
            let lanes = schedule.workers.min(pixels);
            let lane_results: Vec<Result<Vec<(usize, (u16, f64))>>> = thread::scope(|s| {
                let handles: Vec<_> = (0..lanes)
                    .map(|lane| {
                        let ids: Vec<usize> = (lane..pixels).step_by(lanes).collect();
                        let transformed = &transformed;
                        let decide = &decide;
                        s.spawn(move || pipeline(model, &ids, transformed, decide))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("pipeline lane panicked")).collect()
            });
            let mut all = Vec::with_capacity(pixels);
            for r in lane_results {
                all.extend(r?);
            }
            all.sort_by_key(|(p, _)| *p);
            all.into_iter().map(|(_, r)| r).collect()
        }
    };

    let (labels, max_prob): (Vec<u16>, Vec<f64>) = results.into_iter().unzip();
    Ok(ScenePrediction {
        map: LabelMap::new(h, w, labels, names)?,
        max_prob,
        elapsed: start.elapsed(),
    })
}

/// Predicted label map for every pixel of the scene.
pub fn predict_map(model: &Model, cube: &HsiCube, schedule: Schedule) -> Result<LabelMap> {
    Ok(predict_scene(model, cube, schedule, None)?.map)
}

/// Class id → RGB colour. Unlabeled pixels (0) are always black.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Palette {
    colors: BTreeMap<u16, [u8; 3]>,
}

/// Sixteen well-separated colours used for the first classes.
const BASE_COLORS: [[u8; 3]; 16] = [
    [255, 0, 0],
    [0, 255, 0],
    [0, 0, 255],
    [255, 255, 0],
    [0, 255, 255],
    [255, 0, 255],
    [176, 48, 96],
    [46, 139, 87],
    [160, 32, 240],
    [255, 127, 80],
    [127, 255, 212],
    [218, 112, 214],
    [160, 82, 45],
    [127, 255, 0],
    [216, 191, 216],
    [238, 0, 0],
];

impl Palette {
    pub fn new(colors: BTreeMap<u16, [u8; 3]>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for (&id, c) in &colors {
            if id == 0 {
                return Err(Error::Render("class 0 is reserved for unlabeled pixels".into()));
            }
            if !seen.insert(*c) {
                return Err(Error::Render(format!("colour {c:?} of class {id} is used twice")));
            }
        }
        Ok(Self { colors })
    }

    /// Distinct non-black colours for classes `1..=n`.
    pub fn for_classes(n: usize) -> Self {
        let mut colors = BTreeMap::new();
        let mut used: std::collections::HashSet<[u8; 3]> = [[0, 0, 0]].into_iter().collect();
        let mut hue_step = 0usize;
        for id in 1..=n {
            let mut c = BASE_COLORS.get(id - 1).copied();
            while c.is_none_or(|c| used.contains(&c)) {
                // golden-angle hues with cycling value levels
                let hue = (hue_step as f64 * 137.507_764) % 360.0;
                let value = 1.0 - 0.25 * ((hue_step / 7) % 3) as f64;
                c = Some(hsv_to_rgb(hue, 0.85, value));
                hue_step += 1;
            }
            let c = c.unwrap();
            used.insert(c);
            colors.insert(id as u16, c);
        }
        Self { colors }
    }

    /// Reads `class_id,r,g,b` lines; blank lines and `#` comments are
    /// ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut colors = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = || Error::Render(format!("palette line {}: expected class_id,r,g,b", n + 1));
            if parts.len() != 4 {
                return Err(bad());
            }
            let id: u16 = parts[0].parse().map_err(|_| bad())?;
            let mut c = [0u8; 3];
            for (dst, src) in c.iter_mut().zip(&parts[1..]) {
                *dst = src.parse().map_err(|_| bad())?;
            }
            colors.insert(id, c);
        }
        Self::new(colors)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::file(path, e))?)
    }

    pub fn color(&self, id: u16) -> Option<[u8; 3]> {
        if id == 0 {
            Some([0, 0, 0])
        } else {
            self.colors.get(&id).copied()
        }
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let x = c * (1.0 - ((h / 60.0) % 2.0 - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match (h / 60.0) as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let to = |f: f64| ((f + m) * 255.0).round() as u8;
    [to(r), to(g), to(b)]
}

/// Binary PPM (P6), one pixel per map cell.
pub fn encode_ppm(map: &LabelMap, palette: &Palette) -> Result<Vec<u8>> {
    let mut out = format!("P6\n{} {}\n255\n", map.width(), map.height()).into_bytes();
    out.reserve(map.labels().len() * 3);
    for &id in map.labels() {
        let c = palette
            .color(id)
            .ok_or_else(|| Error::Render(format!("no palette colour for class {id}")))?;
        out.extend_from_slice(&c);
    }
    Ok(out)
}

pub fn render_map(map: &LabelMap, palette: &Palette, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_ppm(map, palette)?;
    let path = path.as_ref();
    fs::write(path, bytes).map_err(|e| Error::file(path, e))
}
