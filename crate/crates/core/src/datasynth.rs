//! Synthetic clips whose labels are four-attribute tuples.
//!
//! A clip is split into four contiguous temporal segments; segment `s` carries
//! the value of attribute `s` and nothing else, so a classifier has to
//! integrate over the whole clip. Vector clips encode each value as a
//! prototype pattern on a block of signal dimensions, next to distractor
//! dimensions. Image clips show a bright blob that moves over static clutter;
//! its colour and radius in segment `s` encode attribute `s`.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::features::{encode_features, load_features, FeatureSequence, FrameVolume, Image};
use crate::model::Labels;
use crate::netpbm::{self, Gray};
use crate::tensor::Tensor;

/// Value counts of take-off, somersault, twist and flight position.
pub const ARITIES: [usize; 4] = [4, 8, 8, 4];
pub const CLASS_COUNT: usize = 48;
pub const ATTRIBUTE_NAMES: [&str; 4] = ["takeoff", "somersault", "twist", "flight"];
/// Seed of the class table committed alongside the tests.
pub const DEFAULT_TABLE_SEED: u64 = 48;

/// One value per attribute, each below its arity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AttributeTuple(pub [usize; 4]);

impl AttributeTuple {
    pub fn new(values: [usize; 4]) -> Result<Self> {
        for (v, k) in values.iter().zip(ARITIES) {
            if *v >= k {
                return Err(Error::Label { label: *v, classes: k });
            }
        }
        Ok(Self(values))
    }

    /// Position in the product space, mixed radix over the arities.
    pub fn code(&self) -> usize {
        self.0.iter().zip(ARITIES).fold(0, |acc, (v, k)| acc * k + v)
    }

    pub fn from_code(mut code: usize) -> Self {
        let mut values = [0; 4];
        for i in (0..4).rev() {
            values[i] = code % ARITIES[i];
            code /= ARITIES[i];
        }
        Self(values)
    }
}

impl fmt::Display for AttributeTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d] = self.0;
        write!(f, "{a} {b} {c} {d}")
    }
}

/// The valid attribute tuples, indexed by class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassTable {
    entries: Vec<AttributeTuple>,
}

impl ClassTable {
    pub fn from_entries(entries: Vec<AttributeTuple>) -> Result<Self> {
        let distinct: BTreeSet<_> = entries.iter().collect();
        if distinct.len() != entries.len() {
            return Err(Error::contract("class table entries must be distinct"));
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[AttributeTuple] {
        &self.entries
    }

    pub fn tuple(&self, class: usize) -> Result<AttributeTuple> {
        self.entries.get(class).copied().ok_or(Error::Label {
            label: class,
            classes: self.len(),
        })
    }

    pub fn lookup(&self, tuple: &AttributeTuple) -> Option<usize> {
        self.entries.iter().position(|e| e == tuple)
    }

    pub fn labels(&self, class: usize) -> Result<Labels> {
        Ok(Labels {
            class,
            attributes: self.tuple(class)?.0,
        })
    }

    /// One line per class: `class takeoff somersault twist flight`.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# class takeoff somersault twist flight\n");
        for (k, t) in self.entries.iter().enumerate() {
            out.push_str(&format!("{k} {t}\n"));
        }
        out
    }
}

/// Picks 48 distinct tuples from the 1024-tuple product space, resampling
/// until every value of every attribute occurs, and sorts them.
pub fn build_class_table(seed: u64) -> ClassTable {
    let space: usize = ARITIES.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut codes = index::sample(&mut rng, space, CLASS_COUNT).into_vec();
        codes.sort_unstable();
        let entries: Vec<_> = codes.into_iter().map(AttributeTuple::from_code).collect();
        let covered = (0..4).all(|i| {
            let seen: BTreeSet<_> = entries.iter().map(|t| t.0[i]).collect();
            seen.len() == ARITIES[i]
        });
        if covered {
            return ClassTable { entries };
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Vector,
    Image,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Vector => "vector",
            Mode::Image => "image",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vector" => Ok(Mode::Vector),
            "image" => Ok(Mode::Image),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// Shape of generated clips.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub mode: Mode,
    /// Frames per clip; a multiple of four keeps the segments equal.
    pub num_frames: usize,
    /// Vector mode: total feature dimension.
    pub feature_dim: usize,
    /// Vector mode: leading dimensions that carry the prototypes.
    pub signal_dims: usize,
    /// Image mode: frame side length.
    pub image_size: usize,
    pub noise_level: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Vector,
            num_frames: 8,
            feature_dim: 16,
            signal_dims: 8,
            image_size: 64,
            noise_level: 0.0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.num_frames < 4 {
            return Err(Error::Config("clips need at least four frames".into()));
        }
        if self.signal_dims == 0 || self.signal_dims > self.feature_dim {
            return Err(Error::Config("signal_dims must be in 1..=feature_dim".into()));
        }
        if self.image_size < 8 {
            return Err(Error::Config("image_size must be at least 8".into()));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(Error::Config("noise_level must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Segment index of frame `t`.
    pub fn segment(&self, t: usize) -> usize {
        (t * 4 / self.num_frames).min(3)
    }
}

/// Sample counts and seeds of a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub synth: SynthConfig,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
    pub table_seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            train_per_class: 8,
            test_per_class: 2,
            seed: 0,
            table_seed: DEFAULT_TABLE_SEED,
        }
    }
}

/// Per-pixel membership of the moving blob.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn to_gray(&self) -> Gray {
        Gray {
            width: self.width,
            height: self.height,
            pixels: self.data.iter().map(|&b| if b { 255 } else { 0 }).collect(),
        }
    }

    pub fn from_gray(g: &Gray) -> Self {
        Self {
            height: g.height,
            width: g.width,
            data: g.pixels.iter().map(|&p| p >= 128).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClipData {
    Vector(FeatureSequence<f32>),
    Image { volume: FrameVolume, masks: Vec<Mask> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub clip_id: u64,
    /// Generator episode; never shared between splits.
    pub episode: u64,
    pub split: Split,
    pub labels: Labels,
    pub data: ClipData,
}

impl Sample {
    pub fn tuple(&self) -> AttributeTuple {
        AttributeTuple(self.labels.attributes)
    }
}

/// Prototype patterns of every attribute value, on the signal dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    /// `patterns[attribute][value]`, each of length `signal_dims`.
    pub patterns: [Vec<Vec<f32>>; 4],
}

impl Prototypes {
    /// Random ±1 patterns, distinct within each attribute.
    pub fn new(seed: u64, signal_dims: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0);
        let patterns = std::array::from_fn(|i| {
            let mut seen = BTreeSet::new();
            let mut out = Vec::with_capacity(ARITIES[i]);
            let mut attempts = 0;
            while out.len() < ARITIES[i] {
                let p: Vec<f32> = (0..signal_dims)
                    .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                    .collect();
                let key: Vec<bool> = p.iter().map(|&v| v > 0.0).collect();
                attempts += 1;
                // too few dimensions for distinct patterns: accept duplicates
                if seen.insert(key) || attempts > 1000 {
                    out.push(p);
                }
            }
            out
        });
        Self { patterns }
    }
}

const PALETTE: [[f32; 3]; 4] = [
    [1.0, 0.15, 0.1],
    [0.1, 1.0, 0.2],
    [0.2, 0.35, 1.0],
    [1.0, 0.95, 0.1],
];

fn clip_rng(seed: u64, clip_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(clip_id + 1);
    rng
}

fn gaussian(rng: &mut ChaCha8Rng) -> f32 {
    rng.sample::<f64, _>(StandardNormal) as f32
}

/// Vector clip for `tuple`: prototypes in their segments, distractors elsewhere.
pub fn render_vector(
    cfg: &SynthConfig,
    protos: &Prototypes,
    tuple: &AttributeTuple,
    rng: &mut ChaCha8Rng,
) -> Result<FeatureSequence<f32>> {
    let (m, s) = (cfg.feature_dim, cfg.signal_dims);
    let noise = cfg.noise_level as f32;
    // per-episode distractor pattern, constant over the clip
    let episode: Vec<f32> = (0..m - s).map(|_| gaussian(rng)).collect();
    let mut vectors = Vec::with_capacity(cfg.num_frames);
    for t in 0..cfg.num_frames {
        let seg = cfg.segment(t);
        let proto = &protos.patterns[seg][tuple.0[seg]];
        let mut v = Vec::with_capacity(m);
        for &p in proto {
            v.push(p + noise * gaussian(rng));
        }
        for &e in &episode {
            v.push(noise * (e + gaussian(rng)));
        }
        vectors.push(Tensor::vector(v));
    }
    FeatureSequence::new(vectors, None)
}

/// Image clip for `tuple` and its per-frame blob masks.
pub fn render_image(
    cfg: &SynthConfig,
    tuple: &AttributeTuple,
    rng: &mut ChaCha8Rng,
) -> Result<(FrameVolume, Vec<Mask>)> {
    let size = cfg.image_size;
    let sz = size as f32;
    let mut background = Image::filled(size, size, [0.08, 0.08, 0.1]);
    for _ in 0..3 {
        let (h, w) = (rng.random_range(size / 8..size / 3), rng.random_range(size / 8..size / 3));
        let (top, left) = (rng.random_range(0..size - h), rng.random_range(0..size - w));
        let tone = rng.random_range(0.25f32..0.45);
        let tint = [tone, tone * rng.random_range(0.8f32..1.2), tone * rng.random_range(0.8f32..1.2)];
        for y in top..top + h {
            for x in left..left + w {
                background.set_pixel(y, x, tint.map(|c| c.min(1.0)));
            }
        }
    }
    let margin = sz * 0.2;
    let mut pos = [rng.random_range(margin..sz - margin), rng.random_range(margin..sz - margin)];
    let angle = rng.random_range(0.0..std::f32::consts::TAU);
    let speed = sz * 0.6 / cfg.num_frames as f32;
    let mut vel = [speed * angle.sin(), speed * angle.cos()];
    let noise = cfg.noise_level as f32;

    let mut frames = Vec::with_capacity(cfg.num_frames);
    let mut masks = Vec::with_capacity(cfg.num_frames);
    for t in 0..cfg.num_frames {
        let seg = cfg.segment(t);
        let value = tuple.0[seg];
        let color = PALETTE[value % 4];
        let radius = sz * if value >= 4 { 0.16 } else { 0.09 };
        let mut img = background.clone();
        let mut mask = vec![false; size * size];
        for y in 0..size {
            for x in 0..size {
                let (dy, dx) = (y as f32 + 0.5 - pos[0], x as f32 + 0.5 - pos[1]);
                if dy * dy + dx * dx <= radius * radius {
                    img.set_pixel(y, x, color);
                    mask[y * size + x] = true;
                }
            }
        }
        if noise > 0.0 {
            for v in &mut img.data {
                *v = (*v + 0.1 * noise * gaussian(rng)).clamp(0.0, 1.0);
            }
        }
        frames.push(img);
        masks.push(Mask {
            height: size,
            width: size,
            data: mask,
        });
        for k in 0..2 {
            pos[k] += vel[k];
            if pos[k] < margin || pos[k] > sz - margin {
                vel[k] = -vel[k];
                pos[k] = pos[k].clamp(margin, sz - margin);
            }
        }
    }
    Ok((FrameVolume::new(frames)?, masks))
}

/// Generates one clip of class `class`.
pub fn generate_sample(
    table: &ClassTable,
    cfg: &SynthConfig,
    protos: &Prototypes,
    class: usize,
    clip_id: u64,
    episode: u64,
    split: Split,
    rng: &mut ChaCha8Rng,
) -> Result<Sample> {
    let labels = table.labels(class)?;
    let tuple = AttributeTuple(labels.attributes);
    let data = match cfg.mode {
        Mode::Vector => ClipData::Vector(render_vector(cfg, protos, &tuple, rng)?),
        Mode::Image => {
            let (volume, masks) = render_image(cfg, &tuple, rng)?;
            ClipData::Image { volume, masks }
        }
    };
    Ok(Sample {
        clip_id,
        episode,
        split,
        labels,
        data,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub table: ClassTable,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }
}

/// Generates every clip. Clip ids and episodes are assigned in order, train
/// split first, classes interleaved.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    cfg.synth.validate()?;
    if cfg.train_per_class == 0 {
        return Err(Error::Config("train_per_class must be at least 1".into()));
    }
    let table = build_class_table(cfg.table_seed);
    let protos = Prototypes::new(cfg.seed, cfg.synth.signal_dims);
    let mut next_id = 0u64;
    let mut make = |split: Split, per_class: usize| -> Result<Vec<Sample>> {
        let mut out = Vec::with_capacity(per_class * table.len());
        for _ in 0..per_class {
            for class in 0..table.len() {
                let id = next_id;
                next_id += 1;
                let mut rng = clip_rng(cfg.seed, id);
                out.push(generate_sample(&table, &cfg.synth, &protos, class, id, id, split, &mut rng)?);
            }
        }
        Ok(out)
    };
    let train = make(Split::Train, cfg.train_per_class)?;
    let test = make(Split::Test, cfg.test_per_class)?;
    Ok(Dataset { table, train, test })
}

/// One line of a dataset manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub clip_id: u64,
    pub split: Split,
    pub labels: Labels,
    /// Relative to the manifest's directory.
    pub path: PathBuf,
}

pub const MANIFEST_HEADER: &str = "# clip_id split class takeoff somersault twist flight path";

pub fn format_manifest(records: &[ManifestRecord]) -> String {
    let mut out = format!("{MANIFEST_HEADER}\n");
    for r in records {
        let [a, b, c, d] = r.labels.attributes;
        out.push_str(&format!(
            "{} {} {} {a} {b} {c} {d} {}\n",
            r.clip_id,
            r.split,
            r.labels.class,
            r.path.display()
        ));
    }
    out
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |what: &str| Error::Config(format!("manifest line {}: {what}", lineno + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(bad("expected 8 fields"));
        }
        let num = |i: usize| fields[i].parse::<usize>().map_err(|_| bad("bad number"));
        out.push(ManifestRecord {
            clip_id: fields[0].parse().map_err(|_| bad("bad clip id"))?,
            split: fields[1].parse()?,
            labels: Labels {
                class: num(2)?,
                attributes: [num(3)?, num(4)?, num(5)?, num(6)?],
            },
            path: PathBuf::from(fields[7]),
        });
    }
    Ok(out)
}

pub const MANIFEST_NAME: &str = "manifest.txt";

fn frame_name(t: usize) -> String {
    format!("frame_{t:03}.ppm")
}

fn mask_name(t: usize) -> String {
    format!("mask_{t:03}.pgm")
}

/// Writes every clip under `dir/clips` and the manifest at `dir/manifest.txt`.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<PathBuf> {
    let clips = dir.join("clips");
    fs::create_dir_all(&clips)?;
    let mut records = Vec::with_capacity(ds.len());
    for s in ds.train.iter().chain(&ds.test) {
        let rel = match &s.data {
            ClipData::Vector(seq) => {
                let rel = PathBuf::from("clips").join(format!("clip_{:05}.astf", s.clip_id));
                fs::write(dir.join(&rel), encode_features(seq))?;
                rel
            }
            ClipData::Image { volume, masks } => {
                let rel = PathBuf::from("clips").join(format!("clip_{:05}", s.clip_id));
                let abs = dir.join(&rel);
                fs::create_dir_all(&abs)?;
                for (t, (f, m)) in volume.frames.iter().zip(masks).enumerate() {
                    netpbm::write_ppm(f, abs.join(frame_name(t)))?;
                    netpbm::write_pgm(&m.to_gray(), abs.join(mask_name(t)))?;
                }
                rel
            }
        };
        records.push(ManifestRecord {
            clip_id: s.clip_id,
            split: s.split,
            labels: s.labels,
            path: rel,
        });
    }
    let path = dir.join(MANIFEST_NAME);
    fs::write(&path, format_manifest(&records))?;
    Ok(path)
}

/// Reads the clip a manifest record points to. The mode follows the file type.
pub fn load_clip(base: &Path, record: &ManifestRecord) -> Result<ClipData> {
    let path = base.join(&record.path);
    if path.is_dir() {
        let mut frames = Vec::new();
        let mut masks = Vec::new();
        for t in 0.. {
            let f = path.join(frame_name(t));
            if !f.exists() {
                break;
            }
            frames.push(netpbm::read_ppm(&f)?);
            masks.push(Mask::from_gray(&netpbm::read_pgm(path.join(mask_name(t)))?));
        }
        Ok(ClipData::Image {
            volume: FrameVolume::new(frames)?,
            masks,
        })
    } else {
        Ok(ClipData::Vector(load_features(&path)?))
    }
}

/// Reads a manifest and every clip it lists, preserving record order.
pub fn read_dataset(manifest: &Path) -> Result<Vec<Sample>> {
    let text = fs::read_to_string(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    parse_manifest(&text)?
        .into_iter()
        .map(|r| {
            Ok(Sample {
                clip_id: r.clip_id,
                episode: r.clip_id,
                split: r.split,
                labels: r.labels,
                data: load_clip(base, &r)?,
            })
        })
        .collect()
}
