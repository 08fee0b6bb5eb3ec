//! Hyperspectral cubes, label maps and everything needed to turn them into
//! training samples: binary I/O, min–max normalisation, mirrored patch
//! extraction, class filtering and seeded stratified splits.
//!
//! File formats (little-endian):
//!
//! * HSIC cube: `"HSIC" | u16 version=1 | u8 dtype (1=f32, 2=f64) | u32 height
//!   | u32 width | u32 bands | values in (y, x, band) order`.
//! * HSIL labels: `"HSIL" | u16 version=1 | u32 height | u32 width | u16 K |
//!   K × (u16 length, UTF-8 name) | height·width u16 labels`, 0 = unlabeled.
//! * Split CSV: header `y,x,class_id,assignment`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CUBE_MAGIC: &[u8; 4] = b"HSIC";
pub const LABEL_MAGIC: &[u8; 4] = b"HSIL";
pub const FORMAT_VERSION: u16 = 1;

/// A `height × width × bands` radiance volume stored in (y, x, band) order.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    height: usize,
    width: usize,
    bands: usize,
    data: Vec<f64>,
    pub name: String,
}

impl HsiCube {
    pub fn new(height: usize, width: usize, bands: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::Shape(format!("empty cube {height}x{width}x{bands}")));
        }
        if data.len() != height * width * bands {
            return Err(Error::Shape(format!(
                "cube {height}x{width}x{bands} needs {} values, got {}",
                height * width * bands,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("cube value {i} is not finite")));
        }
        Ok(Self {
            height,
            width,
            bands,
            data,
            name: String::new(),
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Spectrum of the pixel at row `y`, column `x`.
    pub fn spectrum(&self, y: usize, x: usize) -> &[f64] {
        let start = (y * self.width + x) * self.bands;
        &self.data[start..start + self.bands]
    }
}

/// Per-pixel class ids, 0 = unlabeled, `1..=K` index into `class_names`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u16>,
    class_names: Vec<String>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u16>, class_names: Vec<String>) -> Result<Self> {
        if height == 0 || width == 0 || labels.len() != height * width {
            return Err(Error::Shape(format!(
                "label map {height}x{width} with {} labels",
                labels.len()
            )));
        }
        if class_names.len() > u16::MAX as usize {
            return Err(Error::Config("too many classes for a u16 label".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize > class_names.len()) {
            return Err(Error::Config(format!(
                "label {bad} exceeds class count {}",
                class_names.len()
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
            class_names,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn get(&self, y: usize, x: usize) -> u16 {
        self.labels[y * self.width + x]
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Pixel count per class id `1..=K` (index 0 counts unlabeled pixels).
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.class_names.len() + 1];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }

    pub fn matches(&self, cube: &HsiCube) -> bool {
        self.height == cube.height && self.width == cube.width
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated while reading {what}"),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let m = self.take(4, "magic")?;
        if m != expected {
            return Err(Error::format(0, format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(m),
                String::from_utf8_lossy(expected)
            )));
        }
        let at = self.pos;
        let version = self.u16("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::format(at as u64, format!("unsupported version {version}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(self.pos as u64, "trailing bytes after payload"));
        }
        Ok(())
    }
}

/// Storage precision of HSIC values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CubeDtype {
    F32 = 1,
    F64 = 2,
}

pub fn cube_to_bytes(cube: &HsiCube, dtype: CubeDtype) -> Vec<u8> {
    let width = if dtype == CubeDtype::F32 { 4 } else { 8 };
    let mut out = Vec::with_capacity(19 + cube.data.len() * width);
    out.extend_from_slice(CUBE_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(dtype as u8);
    for n in [cube.height, cube.width, cube.bands] {
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    for &v in &cube.data {
        match dtype {
            CubeDtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            CubeDtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}

pub fn cube_from_bytes(bytes: &[u8]) -> Result<HsiCube> {
    let mut r = Reader::new(bytes);
    r.magic(CUBE_MAGIC)?;
    let dtype_at = r.pos;
    let width = match r.u8("dtype")? {
        1 => 4,
        2 => 8,
        other => return Err(Error::format(dtype_at as u64, format!("unknown dtype code {other}"))),
    };
    let height = r.u32("height")? as usize;
    let w = r.u32("width")? as usize;
    let bands = r.u32("bands")? as usize;
    if height == 0 || w == 0 || bands == 0 {
        return Err(Error::format(7, format!("empty cube {height}x{w}x{bands}")));
    }
    let count = height
        .checked_mul(w)
        .and_then(|n| n.checked_mul(bands))
        .ok_or_else(|| Error::format(7, "cube dimensions overflow"))?;
    let start = r.pos;
    let raw = r.take(count * width, "cube values")?;
    r.finish()?;
    let mut data = Vec::with_capacity(count);
    for (i, chunk) in raw.chunks_exact(width).enumerate() {
        let v = if width == 4 {
            f32::from_le_bytes(chunk.try_into().unwrap()) as f64
        } else {
            f64::from_le_bytes(chunk.try_into().unwrap())
        };
        if !v.is_finite() {
            return Err(Error::format((start + i * width) as u64, "non-finite cube value"));
        }
        data.push(v);
    }
    HsiCube::new(height, w, bands, data)
}

/// Writes the cube as f64 HSIC.
pub fn save_cube(cube: &HsiCube, path: impl AsRef<Path>) -> Result<()> {
    save_cube_as(cube, path, CubeDtype::F64)
}

pub fn save_cube_as(cube: &HsiCube, path: impl AsRef<Path>, dtype: CubeDtype) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, cube_to_bytes(cube, dtype)).map_err(|e| Error::file(path, e))
}

pub fn load_cube(path: impl AsRef<Path>) -> Result<HsiCube> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(cube_from_bytes(&bytes)?.with_name(name))
}

pub fn labels_to_bytes(map: &LabelMap) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(LABEL_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(map.height as u32).to_le_bytes());
    out.extend_from_slice(&(map.width as u32).to_le_bytes());
    out.extend_from_slice(&(map.class_names.len() as u16).to_le_bytes());
    for name in &map.class_names {
        let b = name.as_bytes();
        out.extend_from_slice(&(b.len() as u16).to_le_bytes());
        out.extend_from_slice(b);
    }
    for &l in &map.labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

pub fn labels_from_bytes(bytes: &[u8]) -> Result<LabelMap> {
    let mut r = Reader::new(bytes);
    r.magic(LABEL_MAGIC)?;
    let height = r.u32("height")? as usize;
    let width = r.u32("width")? as usize;
    let k = r.u16("class count")? as usize;
    let mut names = Vec::with_capacity(k);
    for i in 0..k {
        let len = r.u16("class name length")? as usize;
        let at = r.pos;
        let raw = r.take(len, "class name")?;
        let name = std::str::from_utf8(raw)
            .map_err(|_| Error::format(at as u64, format!("class name {} is not UTF-8", i + 1)))?;
        names.push(name.to_string());
    }
    let start = r.pos;
    let raw = r.take(height * width * 2, "labels")?;
    r.finish()?;
    let labels: Vec<u16> = raw
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    if let Some(i) = labels.iter().position(|&l| l as usize > k) {
        return Err(Error::format(
            (start + 2 * i) as u64,
            format!("label {} exceeds class count {k}", labels[i]),
        ));
    }
    LabelMap::new(height, width, labels, names).map_err(|e| Error::format(6, e.to_string()))
}

pub fn save_labels(map: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, labels_to_bytes(map)).map_err(|e| Error::file(path, e))
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    labels_from_bytes(&bytes)
}

/// Global min–max scaling over every value of the cube into `[0, 1]`.
pub fn normalize_minmax(cube: &HsiCube) -> Result<HsiCube> {
    let (min, max) = min_max(&cube.data);
    if max == min {
        return Err(Error::Degenerate(format!(
            "cube {} is constant ({min}); cannot min-max normalise",
            cube.name
        )));
    }
    let range = max - min;
    let data = cube.data.iter().map(|v| (v - min) / range).collect();
    Ok(HsiCube {
        data,
        ..cube.clone()
    })
}

/// Min–max scaling applied to each band independently.
pub fn normalize_minmax_per_band(cube: &HsiCube) -> Result<HsiCube> {
    let mut out = cube.clone();
    for band in 0..cube.bands {
        let values: Vec<f64> = cube.data.iter().skip(band).step_by(cube.bands).copied().collect();
        let (min, max) = min_max(&values);
        if max == min {
            return Err(Error::Degenerate(format!("band {band} is constant ({min})")));
        }
        for v in out.data.iter_mut().skip(band).step_by(cube.bands) {
            *v = (*v - min) / (max - min);
        }
    }
    Ok(out)
}

fn min_max(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Index reflection without repeating the edge: `-1 → 1`, `n → n − 2`.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// `[patch, patch, bands]` window centred on column `x`, row `y`. Positions
/// outside the image are mirrored back inside.
pub fn extract_patch(cube: &HsiCube, x: usize, y: usize, patch_size: usize) -> Result<Tensor> {
    if x >= cube.width || y >= cube.height {
        return Err(Error::Bounds(format!(
            "pixel (x={x}, y={y}) outside {}x{} image",
            cube.width, cube.height
        )));
    }
    if patch_size.is_multiple_of(2) {
        return Err(Error::Config(format!("patch size {patch_size} must be odd")));
    }
    let half = (patch_size / 2) as isize;
    let mut data = Vec::with_capacity(patch_size * patch_size * cube.bands);
    for dy in -half..=half {
        let sy = reflect(y as isize + dy, cube.height);
        for dx in -half..=half {
            let sx = reflect(x as isize + dx, cube.width);
            data.extend_from_slice(cube.spectrum(sy, sx));
        }
    }
    Tensor::from_vec(&[patch_size, patch_size, cube.bands], data)
}

/// Keep only the listed original class ids, relabelled densely `1..=len` in
/// list order. Every other pixel becomes unlabeled.
pub fn filter_classes(labels: &LabelMap, keep: &[u16]) -> Result<LabelMap> {
    let mut remap = vec![0u16; labels.class_names.len() + 1];
    let mut names = Vec::with_capacity(keep.len());
    for (i, &id) in keep.iter().enumerate() {
        if id == 0 || id as usize > labels.class_names.len() {
            return Err(Error::Config(format!(
                "class id {id} not present (map has {} classes)",
                labels.class_names.len()
            )));
        }
        if remap[id as usize] != 0 {
            return Err(Error::Config(format!("class id {id} listed twice")));
        }
        remap[id as usize] = (i + 1) as u16;
        names.push(labels.class_names[id as usize - 1].clone());
    }
    let new_labels = labels.labels.iter().map(|&l| remap[l as usize]).collect();
    LabelMap::new(labels.height, labels.width, new_labels, names)
}

/// The sixteen Indian Pines ground-truth classes in their published order.
pub const INDIAN_PINES_CLASSES: [&str; 16] = [
    "Alfalfa",
    "Corn-notill",
    "Corn-mintill",
    "Corn",
    "Grass-pasture",
    "Grass-trees",
    "Grass-pasture-mowed",
    "Hay-windrowed",
    "Oats",
    "Soybean-notill",
    "Soybean-mintill",
    "Soybean-clean",
    "Wheat",
    "Woods",
    "Buildings-Grass-Trees-Drives",
    "Stone-Steel-Towers",
];

/// Indian Pines class ids kept for training: the eleven classes with enough
/// samples (Alfalfa, Grass-pasture-mowed, Oats, Wheat and
/// Stone-Steel-Towers are dropped).
pub const INDIAN_PINES_KEEP: [u16; 11] = [2, 3, 4, 5, 6, 8, 10, 11, 12, 14, 15];

pub const SALINAS_CLASSES: [&str; 16] = [
    "Brocoli_green_weeds_1",
    "Brocoli_green_weeds_2",
    "Fallow",
    "Fallow_rough_plow",
    "Fallow_smooth",
    "Stubble",
    "Celery",
    "Grapes_untrained",
    "Soil_vinyard_develop",
    "Corn_senesced_green_weeds",
    "Lettuce_romaine_4wk",
    "Lettuce_romaine_5wk",
    "Lettuce_romaine_6wk",
    "Lettuce_romaine_7wk",
    "Vinyard_untrained",
    "Vinyard_vertical_trellis",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Subset {
    Train,
    Val,
    Test,
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Subset::Train => "train",
            Subset::Val => "val",
            Subset::Test => "test",
        })
    }
}

impl FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Subset::Train),
            "val" => Ok(Subset::Val),
            "test" => Ok(Subset::Test),
            other => Err(Error::Split(format!("unknown subset {other:?}"))),
        }
    }
}

/// A labelled pixel and the subset it was assigned to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitEntry {
    pub y: usize,
    pub x: usize,
    pub class_id: u16,
    pub subset: Subset,
}

/// Train/val/test fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Fractions {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let f = Self { train, val, test };
        if [train, val, test].iter().any(|v| !(0.0..=1.0).contains(v))
            || (train + val + test - 1.0).abs() > 1e-9
        {
            return Err(Error::Split(format!(
                "fractions {train}, {val}, {test} must lie in [0, 1] and sum to 1"
            )));
        }
        Ok(f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitAssignment {
    pub seed: u64,
    pub fractions: Fractions,
    /// Sorted by class id, then by position in the class's shuffled order.
    pub entries: Vec<SplitEntry>,
}

/// `ceil(f · n)` with a small tolerance so that exact products such as
/// `0.2 · 100` are not pushed up by representation error.
fn ceil_count(fraction: f64, n: usize) -> usize {
    let v = fraction * n as f64;
    (v - 1e-9).ceil().max(0.0) as usize
}

/// Per class: shuffle that class's pixels with a seeded RNG, take the first
/// `ceil(f_train · n)` for training, the next `ceil(f_val · n)` for
/// validation and the rest for testing.
pub fn stratified_split(labels: &LabelMap, fractions: Fractions, seed: u64) -> Result<SplitAssignment> {
    let mut by_class: BTreeMap<u16, Vec<(usize, usize)>> = BTreeMap::new();
    for y in 0..labels.height {
        for x in 0..labels.width {
            let l = labels.get(y, x);
            if l != 0 {
                by_class.entry(l).or_default().push((y, x));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for (class_id, mut pixels) in by_class {
        let n = pixels.len();
        if n < 3 {
            let name = labels
                .class_names
                .get(class_id as usize - 1)
                .map(String::as_str)
                .unwrap_or("?");
            return Err(Error::Split(format!(
                "class {class_id} ({name}) has only {n} samples, need at least 3"
            )));
        }
        pixels.shuffle(&mut rng);
        let n_train = ceil_count(fractions.train, n).min(n);
        let n_val = ceil_count(fractions.val, n).min(n - n_train);
        for (i, (y, x)) in pixels.into_iter().enumerate() {
            let subset = if i < n_train {
                Subset::Train
            } else if i < n_train + n_val {
                Subset::Val
            } else {
                Subset::Test
            };
            entries.push(SplitEntry { y, x, class_id, subset });
        }
    }
    Ok(SplitAssignment {
        seed,
        fractions,
        entries,
    })
}

impl SplitAssignment {
    pub fn subset(&self, subset: Subset) -> impl Iterator<Item = &SplitEntry> {
        self.entries.iter().filter(move |e| e.subset == subset)
    }

    /// `(train, val, test)` counts for every class id present.
    pub fn class_counts(&self) -> BTreeMap<u16, [usize; 3]> {
        let mut out: BTreeMap<u16, [usize; 3]> = BTreeMap::new();
        for e in &self.entries {
            out.entry(e.class_id).or_default()[e.subset as usize] += 1;
        }
        out
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["y", "x", "class_id", "assignment"])?;
        for e in &self.entries {
            w.write_record([
                e.y.to_string(),
                e.x.to_string(),
                e.class_id.to_string(),
                e.subset.to_string(),
            ])?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()?).map_err(|e| Error::file(path, e))
    }

    /// Reads a split CSV. Seed and fractions are not stored in the file, so
    /// they come back as 0 and the observed proportions.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path)?;
        let mut entries = Vec::new();
        for (line, record) in r.records().enumerate() {
            let record = record?;
            let field = |i: usize| -> Result<&str> {
                record
                    .get(i)
                    .ok_or_else(|| Error::Split(format!("row {} is missing column {i}", line + 2)))
            };
            let parse = |i: usize| -> Result<usize> {
                field(i)?
                    .parse()
                    .map_err(|_| Error::Split(format!("row {}: bad integer in column {i}", line + 2)))
            };
            entries.push(SplitEntry {
                y: parse(0)?,
                x: parse(1)?,
                class_id: parse(2)? as u16,
                subset: field(3)?.parse()?,
            });
        }
        let total = entries.len().max(1) as f64;
        let share = |s| entries.iter().filter(|e: &&SplitEntry| e.subset == s).count() as f64 / total;
        let fractions = Fractions {
            train: share(Subset::Train),
            val: share(Subset::Val),
            test: share(Subset::Test),
        };
        Ok(Self {
            seed: 0,
            fractions,
            entries,
        })
    }
}

/// A labelled pixel with a zero-based class index ready for the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabeledPixel {
    pub y: usize,
    pub x: usize,
    pub class_index: usize,
}

/// Anything that can hand out `(patch, class_index)` pairs by index.
pub trait SampleSource: Sync {
    fn len(&self) -> usize;

    fn sample(&self, index: usize) -> Result<(Tensor, usize)>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SampleSource for [(Tensor, usize)] {
    fn len(&self) -> usize {
        <[_]>::len(self)
    }

    fn sample(&self, index: usize) -> Result<(Tensor, usize)> {
        self.get(index)
            .cloned()
            .ok_or_else(|| Error::Bounds(format!("sample {index} of {}", <[_]>::len(self))))
    }
}

impl SampleSource for Vec<(Tensor, usize)> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn sample(&self, index: usize) -> Result<(Tensor, usize)> {
        self.as_slice().sample(index)
    }
}

/// Patches cut on demand from a cube, so a full scene never has to be
/// materialised as patches.
#[derive(Debug, Clone)]
pub struct PatchSet<'a> {
    cube: &'a HsiCube,
    pixels: Vec<LabeledPixel>,
    patch_size: usize,
}

impl<'a> PatchSet<'a> {
    pub fn new(cube: &'a HsiCube, pixels: Vec<LabeledPixel>, patch_size: usize) -> Self {
        Self {
            cube,
            pixels,
            patch_size,
        }
    }

    /// The pixels of one split subset; class ids `1..=K` become indices
    /// `0..K`.
    pub fn from_split(cube: &'a HsiCube, split: &SplitAssignment, subset: Subset, patch_size: usize) -> Self {
        let pixels = split
            .subset(subset)
            .map(|e| LabeledPixel {
                y: e.y,
                x: e.x,
                class_index: e.class_id as usize - 1,
            })
            .collect();
        Self::new(cube, pixels, patch_size)
    }

    pub fn pixels(&self) -> &[LabeledPixel] {
        &self.pixels
    }
}

impl SampleSource for PatchSet<'_> {
    fn len(&self) -> usize {
        self.pixels.len()
    }

    fn sample(&self, index: usize) -> Result<(Tensor, usize)> {
        let p = self
            .pixels
            .get(index)
            .ok_or_else(|| Error::Bounds(format!("sample {index} of {}", self.pixels.len())))?;
        Ok((extract_patch(self.cube, p.x, p.y, self.patch_size)?, p.class_index))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_cube(h: usize, w: usize, b: usize, seed: u64) -> HsiCube {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        HsiCube::new(h, w, b, (0..h * w * b).map(|_| rng.gen_range(-5.0..50.0)).collect()).unwrap()
    }

    fn names(k: usize) -> Vec<String> {
        (1..=k).map(|i| format!("class_{i}")).collect()
    }

    #[test]
    fn cube_round_trip_is_bitwise() {
        let cube = random_cube(7, 6, 5, 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.hsic");
        save_cube(&cube, &path).unwrap();
        let back = load_cube(&path).unwrap();
        assert_eq!(back.name, "c");
        assert!(back.data().iter().zip(cube.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!((back.height(), back.width(), back.bands()), (7, 6, 5));
    }

    #[test]
    fn f32_storage_promotes() {
        let cube = random_cube(3, 2, 4, 2);
        let back = cube_from_bytes(&cube_to_bytes(&cube, CubeDtype::F32)).unwrap();
        for (a, b) in back.data().iter().zip(cube.data()) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }

    #[test]
    fn cube_format_errors() {
        let cube = random_cube(3, 2, 4, 2);
        let bytes = cube_to_bytes(&cube, CubeDtype::F64);
        let mut bad = bytes.clone();
        bad[1] = b'X';
        assert!(matches!(cube_from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(cube_from_bytes(&bad), Err(Error::Format { offset: 4, .. })));
        let mut bad = bytes.clone();
        bad[6] = 7;
        assert!(matches!(cube_from_bytes(&bad), Err(Error::Format { offset: 6, .. })));
        assert!(matches!(
            cube_from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Format { offset: 19, .. })
        ));
        let mut bad = bytes.clone();
        bad[19..27].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(cube_from_bytes(&bad), Err(Error::Format { offset: 19, .. })));
    }

    #[test]
    fn label_round_trip_and_errors() {
        let map = LabelMap::new(2, 3, vec![0, 1, 2, 2, 1, 0], vec!["Corn".into(), "Wöods".into()]).unwrap();
        let bytes = labels_to_bytes(&map);
        assert_eq!(labels_from_bytes(&bytes).unwrap(), map);
        assert!(matches!(
            labels_from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Format { .. })
        ));
        let mut bad = bytes.clone();
        let last = bad.len() - 2;
        bad[last] = 9;
        assert!(matches!(labels_from_bytes(&bad), Err(Error::Format { .. })));
        assert_eq!(map.histogram(), vec![2, 2, 2]);
    }

    #[test]
    fn normalize_examples() {
        let cube = HsiCube::new(1, 3, 1, vec![2.0, 4.0, 6.0]).unwrap();
        assert_eq!(normalize_minmax(&cube).unwrap().data(), &[0.0, 0.5, 1.0]);
        let unit = HsiCube::new(1, 3, 1, vec![0.0, 0.25, 1.0]).unwrap();
        assert_eq!(normalize_minmax(&unit).unwrap(), unit);
        let flat = HsiCube::new(2, 2, 1, vec![3.0; 4]).unwrap();
        assert!(matches!(normalize_minmax(&flat), Err(Error::Degenerate(_))));
    }

    #[test]
    fn normalize_random_cube() {
        let cube = random_cube(6, 5, 7, 3);
        let n = normalize_minmax(&cube).unwrap();
        let (lo, hi) = min_max(n.data());
        assert_eq!((lo, hi), (0.0, 1.0));
        let again = normalize_minmax(&n).unwrap();
        for (a, b) in again.data().iter().zip(n.data()) {
            assert!((a - b).abs() <= 1e-15);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (ma, mb) = (mean(cube.data()), mean(n.data()));
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for (a, b) in cube.data().iter().zip(n.data()) {
            sab += (a - ma) * (b - mb);
            saa += (a - ma).powi(2);
            sbb += (b - mb).powi(2);
        }
        assert!((sab / (saa * sbb).sqrt() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn per_band_normalization() {
        let cube = random_cube(4, 4, 3, 4);
        let n = normalize_minmax_per_band(&cube).unwrap();
        for band in 0..3 {
            let v: Vec<f64> = n.data().iter().skip(band).step_by(3).copied().collect();
            assert_eq!(min_max(&v), (0.0, 1.0));
        }
    }

    #[test]
    fn interior_patch_is_a_plain_window() {
        let cube = random_cube(10, 10, 3, 5);
        let p = extract_patch(&cube, 4, 6, 5).unwrap();
        assert_eq!(p.shape(), &[5, 5, 3]);
        for dy in 0..5 {
            for dx in 0..5 {
                for b in 0..3 {
                    assert_eq!(p.get(&[dy, dx, b]).unwrap(), cube.spectrum(6 + dy - 2, 4 + dx - 2)[b]);
                }
            }
        }
    }

    #[test]
    fn corner_patch_mirrors() {
        let cube = random_cube(6, 7, 2, 6);
        let p = extract_patch(&cube, 0, 0, 5).unwrap();
        // Independent oracle: offset -k maps to source index +k.
        let mirror = |i: isize| i.unsigned_abs();
        for dy in -2isize..=2 {
            for dx in -2isize..=2 {
                let src = cube.spectrum(mirror(dy), mirror(dx));
                for b in 0..2 {
                    assert_eq!(p.get(&[(dy + 2) as usize, (dx + 2) as usize, b]).unwrap(), src[b]);
                }
            }
        }
        let a: Vec<f64> = (0..2).map(|b| p.get(&[1, 1, b]).unwrap()).collect();
        let c: Vec<f64> = (0..2).map(|b| p.get(&[3, 3, b]).unwrap()).collect();
        assert_eq!(a, c);

        let p = extract_patch(&cube, 6, 5, 5).unwrap();
        for b in 0..2 {
            assert_eq!(p.get(&[4, 4, b]).unwrap(), cube.spectrum(3, 4)[b]);
        }
    }

    #[test]
    fn tiny_scenes_still_produce_patches() {
        let cube = random_cube(1, 1, 4, 7);
        let p = extract_patch(&cube, 0, 0, 5).unwrap();
        assert!(p.data().chunks(4).all(|s| s == cube.spectrum(0, 0)));
        let cube = random_cube(2, 2, 1, 8);
        assert!(extract_patch(&cube, 1, 1, 7).is_ok());
        assert!(matches!(extract_patch(&cube, 2, 0, 5), Err(Error::Bounds(_))));
    }

    proptest! {
        #[test]
        fn patch_center_is_the_pixel(h in 1usize..9, w in 1usize..9, seed in any::<u64>(), size in prop::sample::select(vec![3usize, 5, 7])) {
            let cube = random_cube(h, w, 3, seed);
            let y = seed as usize % h;
            let x = (seed >> 8) as usize % w;
            let p = extract_patch(&cube, x, y, size).unwrap();
            let c = size / 2;
            for b in 0..3 {
                prop_assert_eq!(p.get(&[c, c, b]).unwrap(), cube.spectrum(y, x)[b]);
            }
        }
    }

    #[test]
    fn indian_pines_keep_list() {
        let names: Vec<String> = INDIAN_PINES_CLASSES.iter().map(|s| s.to_string()).collect();
        let labels: Vec<u16> = (0..=16).collect();
        let map = LabelMap::new(1, 17, labels, names).unwrap();
        let f = filter_classes(&map, &INDIAN_PINES_KEEP).unwrap();
        assert_eq!(f.num_classes(), 11);
        assert_eq!(f.class_names()[0], "Corn-notill");
        assert_eq!(f.class_names()[10], "Buildings-Grass-Trees-Drives");
        assert_eq!(f.labels(), &[0, 0, 1, 2, 3, 4, 5, 0, 6, 0, 7, 8, 9, 0, 10, 11, 0]);
    }

    #[test]
    fn filter_identity_and_single() {
        let map = LabelMap::new(2, 2, vec![1, 2, 3, 0], names(3)).unwrap();
        assert_eq!(filter_classes(&map, &[1, 2, 3]).unwrap(), map);
        let f = filter_classes(&map, &[3]).unwrap();
        assert_eq!(f.labels(), &[0, 0, 1, 0]);
        assert_eq!(f.class_names(), &["class_3".to_string()]);
        assert!(matches!(filter_classes(&map, &[4]), Err(Error::Config(_))));
    }

    fn class_map(sizes: &[usize]) -> LabelMap {
        let mut labels = vec![0u16; 3];
        for (c, &n) in sizes.iter().enumerate() {
            labels.extend(std::iter::repeat_n((c + 1) as u16, n));
        }
        let w = labels.len();
        LabelMap::new(1, w, labels, names(sizes.len())).unwrap()
    }

    #[test]
    fn split_counts() {
        let map = class_map(&[100, 7]);
        let f = Fractions::new(0.2, 0.05, 0.75).unwrap();
        let s = stratified_split(&map, f, 1).unwrap();
        let counts = s.class_counts();
        assert_eq!(counts[&1], [20, 5, 75]);
        assert_eq!(counts[&2], [2, 1, 4]);
        assert_eq!(s.entries.len(), 107);
    }

    #[test]
    fn split_determinism() {
        let map = class_map(&[500]);
        let f = Fractions::new(0.2, 0.05, 0.75).unwrap();
        let a = stratified_split(&map, f, 9).unwrap();
        assert_eq!(a, stratified_split(&map, f, 9).unwrap());
        assert_ne!(a.entries, stratified_split(&map, f, 10).unwrap().entries);
    }

    #[test]
    fn split_errors() {
        let f = Fractions::new(0.2, 0.05, 0.75).unwrap();
        let err = stratified_split(&class_map(&[10, 2]), f, 1).unwrap_err();
        assert!(matches!(err, Error::Split(ref m) if m.contains("class 2")));
        assert!(Fractions::new(0.5, 0.5, 0.5).is_err());
    }

    #[test]
    fn split_csv_round_trip() {
        let map = class_map(&[12, 9]);
        let s = stratified_split(&map, Fractions::new(0.1, 0.05, 0.85).unwrap(), 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.csv");
        s.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("y,x,class_id,assignment\n"));
        assert_eq!(SplitAssignment::read_csv(&path).unwrap().entries, s.entries);
    }

    proptest! {
        #[test]
        fn split_partitions_labelled_pixels(
            sizes in prop::collection::vec(3usize..80, 1..6),
            seed in any::<u64>(),
            train in 0.05f64..0.5,
            val in 0.0f64..0.2,
        ) {
            let map = class_map(&sizes);
            let f = Fractions::new(train, val, 1.0 - train - val).unwrap();
            let s = stratified_split(&map, f, seed).unwrap();
            let mut seen: Vec<(usize, usize)> = s.entries.iter().map(|e| (e.y, e.x)).collect();
            seen.sort();
            seen.dedup();
            prop_assert_eq!(seen.len(), s.entries.len());
            let labelled = map.labels().iter().filter(|&&l| l != 0).count();
            prop_assert_eq!(s.entries.len(), labelled);
            for e in &s.entries {
                prop_assert_eq!(map.get(e.y, e.x), e.class_id);
            }
            for (c, counts) in s.class_counts() {
                let n = sizes[c as usize - 1] as f64;
                prop_assert!((counts[0] as f64 - train * n).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn patch_set_serves_samples() {
        let cube = random_cube(5, 5, 2, 11);
        let map = LabelMap::new(5, 5, (0..25).map(|i| (i % 2 + 1) as u16).collect(), names(2)).unwrap();
        let split = stratified_split(&map, Fractions::new(0.5, 0.2, 0.3).unwrap(), 4).unwrap();
        let set = PatchSet::from_split(&cube, &split, Subset::Train, 3);
        assert_eq!(set.len(), split.subset(Subset::Train).count());
        let (patch, class) = set.sample(0).unwrap();
        let px = set.pixels()[0];
        assert_eq!(class + 1, map.get(px.y, px.x) as usize);
        assert_eq!(patch, extract_patch(&cube, px.x, px.y, 3).unwrap());
    }
}
