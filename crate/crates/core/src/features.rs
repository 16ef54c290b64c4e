//! Frame volumes, temporal sampling, crop augmentation, the convolutional
//! feature extractor and the binary feature-file format.

use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::Rng;

use crate::autodiff::{ConvSpec, ParamId, ParamStore, Tape, Var};
use crate::binio::{check_width, put_u32, Reader};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// An RGB image stored row-major as `height × width × 3`, channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::contract("image extents must be positive"));
        }
        if data.len() != height * width * 3 {
            return Err(Error::dim("image", &[height, width, 3], &[data.len()]));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self { height, width, data }
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Channel-first `[3, H, W]` tensor.
    pub fn to_chw<T: Real>(&self) -> Tensor<T> {
        let plane = self.height * self.width;
        let mut out = vec![T::zero(); 3 * plane];
        for (p, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + p] = T::from_f64(px[c] as f64);
            }
        }
        Tensor::new(vec![3, self.height, self.width], out).expect("positive extents")
    }

    /// Window of `size × size` starting at (`top`, `left`).
    pub fn crop(&self, top: usize, left: usize, size: usize) -> Result<Image> {
        if top + size > self.height || left + size > self.width {
            return Err(Error::dim("crop", &[self.height, self.width], &[top + size, left + size]));
        }
        let mut data = Vec::with_capacity(size * size * 3);
        for y in top..top + size {
            let start = (y * self.width + left) * 3;
            data.extend_from_slice(&self.data[start..start + size * 3]);
        }
        Image::new(size, size, data)
    }
}

/// Frames of one clip, all of the same size.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameVolume {
    pub frames: Vec<Image>,
}

impl FrameVolume {
    pub fn new(frames: Vec<Image>) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::contract("frame volume needs at least one frame"));
        };
        let (h, w) = (first.height, first.width);
        if let Some(bad) = frames.iter().find(|f| (f.height, f.width) != (h, w)) {
            return Err(Error::dim("frame_volume", &[h, w], &[bad.height, bad.width]));
        }
        Ok(Self { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn extents(&self) -> (usize, usize) {
        (self.frames[0].height, self.frames[0].width)
    }
}

/// `n` sorted frame indices drawn uniformly from `0..frame_count`.
///
/// Without replacement when there are enough frames, with replacement otherwise.
pub fn sample_indices<R: Rng + ?Sized>(frame_count: usize, n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::contract("cannot sample zero frames"));
    }
    if frame_count == 0 {
        return Err(Error::contract("cannot sample from an empty clip"));
    }
    let mut picked = if frame_count >= n {
        index::sample(rng, frame_count, n).into_vec()
    } else {
        (0..n).map(|_| rng.random_range(0..frame_count)).collect()
    };
    picked.sort_unstable();
    Ok(picked)
}

/// Uniform temporal sampling of `n` frames, returning the chosen indices too.
pub fn sample_frames<R: Rng + ?Sized>(
    volume: &FrameVolume,
    n: usize,
    rng: &mut R,
) -> Result<(FrameVolume, Vec<usize>)> {
    let idx = sample_indices(volume.len(), n, rng)?;
    let frames = idx.iter().map(|&i| volume.frames[i].clone()).collect();
    Ok((FrameVolume::new(frames)?, idx))
}

/// Shorter-edge resize followed by a square crop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentConfig {
    pub short_edge: usize,
    pub crop: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            short_edge: 245,
            crop: 224,
        }
    }
}

/// Where a crop was taken, in resized-frame coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropWindow {
    pub top: usize,
    pub left: usize,
    pub size: usize,
    /// Extents of the resized frame the window lies in.
    pub resized: (usize, usize),
}

/// Extents after scaling so that the shorter edge equals `short`.
pub fn resized_extents(height: usize, width: usize, short: usize) -> (usize, usize) {
    let scale = |long: usize, shortest: usize| {
        ((long as f64 * short as f64 / shortest as f64).round() as usize).max(short)
    };
    if height <= width {
        (short, scale(width, height))
    } else {
        (scale(height, width), short)
    }
}

/// Bilinear resize with pixel centres aligned (half-pixel convention).
pub fn resize_bilinear(img: &Image, height: usize, width: usize) -> Image {
    if (height, width) == (img.height, img.width) {
        return img.clone();
    }
    let sy = img.height as f64 / height as f64;
    let sx = img.width as f64 / width as f64;
    let source = |o: usize, s: f64, limit: usize| {
        let p = ((o as f64 + 0.5) * s - 0.5).clamp(0.0, (limit - 1) as f64);
        let lo = p.floor() as usize;
        (lo, (lo + 1).min(limit - 1), p - lo as f64)
    };
    let mut out = Image::filled(height, width, [0.0; 3]);
    for y in 0..height {
        let (y0, y1, fy) = source(y, sy, img.height);
        for x in 0..width {
            let (x0, x1, fx) = source(x, sx, img.width);
            let (a, b, c, d) = (img.pixel(y0, x0), img.pixel(y0, x1), img.pixel(y1, x0), img.pixel(y1, x1));
            let mut px = [0.0f32; 3];
            for ch in 0..3 {
                let top = a[ch] as f64 * (1.0 - fx) + b[ch] as f64 * fx;
                let bottom = c[ch] as f64 * (1.0 - fx) + d[ch] as f64 * fx;
                px[ch] = (top * (1.0 - fy) + bottom * fy) as f32;
            }
            out.set_pixel(y, x, px);
        }
    }
    out
}

/// Resizes every frame so its shorter edge is `cfg.short_edge`, then crops a
/// `cfg.crop` square. Training crops at one random offset shared by all
/// frames; evaluation crops the centre.
pub fn augment<R: Rng + ?Sized>(
    volume: &FrameVolume,
    cfg: &AugmentConfig,
    train: bool,
    rng: &mut R,
) -> Result<(FrameVolume, CropWindow)> {
    if cfg.crop == 0 || cfg.crop > cfg.short_edge {
        return Err(Error::Config(format!(
            "crop {} must be in 1..={}",
            cfg.crop, cfg.short_edge
        )));
    }
    let (h, w) = volume.extents();
    let (rh, rw) = resized_extents(h, w, cfg.short_edge);
    let (top, left) = if train {
        (rng.random_range(0..=rh - cfg.crop), rng.random_range(0..=rw - cfg.crop))
    } else {
        ((rh - cfg.crop) / 2, (rw - cfg.crop) / 2)
    };
    let window = CropWindow {
        top,
        left,
        size: cfg.crop,
        resized: (rh, rw),
    };
    let frames = volume
        .frames
        .iter()
        .map(|f| resize_bilinear(f, rh, rw).crop(top, left, cfg.crop))
        .collect::<Result<_>>()?;
    Ok((FrameVolume::new(frames)?, window))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExtractorKind {
    /// Small trainable convolutional network.
    #[default]
    TinyConv,
    /// Precomputed feature files.
    File,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractorConfig {
    pub kind: ExtractorKind,
    pub output_dim: usize,
    /// Channel counts of the 3×3 stride-2 stages.
    pub widths: Vec<usize>,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            kind: ExtractorKind::TinyConv,
            output_dim: 1024,
            widths: vec![8, 16, 32],
        }
    }
}

impl ExtractorConfig {
    /// Spatial extents of the maps produced for an `h × w` frame.
    pub fn map_extents(&self, h: usize, w: usize) -> (usize, usize) {
        self.widths
            .iter()
            .fold((h, w), |(h, w), _| ((h + 1) / 2, (w + 1) / 2))
    }
}

const STAGE: ConvSpec = ConvSpec {
    stride: 2,
    padding: 1,
};
const POINTWISE: ConvSpec = ConvSpec {
    stride: 1,
    padding: 0,
};

fn conv_init<T: Real, R: Rng + ?Sized>(rng: &mut R, out: usize, input: usize, k: usize) -> Tensor<T> {
    let limit = (6.0 / ((input + out) * k * k) as f64).sqrt();
    let data = (0..out * input * k * k)
        .map(|_| T::from_f64(rng.random_range(-limit..=limit)))
        .collect();
    Tensor::new(vec![out, input, k, k], data).expect("positive extents")
}

/// 3×3 stride-2 conv + ReLU stages, then a 1×1 conv + ReLU to `output_dim`
/// non-negative maps and global average pooling.
#[derive(Debug, Clone)]
pub struct TinyConv {
    pub stages: Vec<(ParamId, ParamId)>,
    pub pointwise: (ParamId, ParamId),
}

/// Output of the extractor for one frame.
#[derive(Debug, Clone, Copy)]
pub struct FrameFeatures {
    /// `f_t`, extent `m`.
    pub vector: Var,
    /// `F_1..F_m` stacked as `[m, h', w']`.
    pub maps: Var,
}

impl TinyConv {
    pub fn register<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        cfg: &ExtractorConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if cfg.kind != ExtractorKind::TinyConv {
            return Err(Error::Config("extractor kind is not tiny-conv".into()));
        }
        if cfg.output_dim == 0 || cfg.widths.contains(&0) {
            return Err(Error::Config("extractor channel counts must be positive".into()));
        }
        let mut input = 3;
        let mut stages = Vec::with_capacity(cfg.widths.len());
        for (s, &width) in cfg.widths.iter().enumerate() {
            stages.push((
                store.add(format!("{prefix}.s{s}.w"), conv_init(rng, width, input, 3))?,
                store.add(format!("{prefix}.s{s}.b"), Tensor::zeros(&[width]))?,
            ));
            input = width;
        }
        let pointwise = (
            store.add(format!("{prefix}.pw.w"), conv_init(rng, cfg.output_dim, input, 1))?,
            store.add(format!("{prefix}.pw.b"), Tensor::zeros(&[cfg.output_dim]))?,
        );
        Ok(Self { stages, pointwise })
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.stages
            .iter()
            .chain(std::iter::once(&self.pointwise))
            .flat_map(|&(w, b)| [w, b])
    }

    /// Features of one `[3, H, W]` frame.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, frame: Var) -> Result<FrameFeatures> {
        let mut x = frame;
        for &(w, b) in &self.stages {
            let (w, b) = (tape.param(store, w), tape.param(store, b));
            let conv = tape.conv2d(x, w, b, STAGE)?;
            x = tape.relu(conv)?;
        }
        let (w, b) = (tape.param(store, self.pointwise.0), tape.param(store, self.pointwise.1));
        let pre = tape.conv2d(x, w, b, POINTWISE)?;
        let maps = tape.relu(pre)?;
        let vector = tape.global_avg_pool(maps)?;
        Ok(FrameFeatures { vector, maps })
    }
}

/// `N` feature vectors plus, optionally, the spatial maps they were pooled from.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence<T> {
    pub vectors: Vec<Tensor<T>>,
    /// Per frame, `[m, h', w']`.
    pub maps: Option<Vec<Tensor<T>>>,
}

impl<T: Real> FeatureSequence<T> {
    pub fn new(vectors: Vec<Tensor<T>>, maps: Option<Vec<Tensor<T>>>) -> Result<Self> {
        let Some(first) = vectors.first() else {
            return Err(Error::contract("feature sequence is empty"));
        };
        let m = first.len();
        for v in &vectors {
            if v.shape() != [m] {
                return Err(Error::dim("feature_sequence", &[m], v.shape()));
            }
        }
        if let Some(maps) = &maps {
            if maps.len() != vectors.len() {
                return Err(Error::dim("feature_maps", &[vectors.len()], &[maps.len()]));
            }
            let shape = maps[0].shape().to_vec();
            if shape.len() != 3 || shape[0] != m {
                return Err(Error::dim("feature_maps", &[m], &shape));
            }
            if let Some(bad) = maps.iter().find(|mp| mp.shape() != shape.as_slice()) {
                return Err(Error::dim("feature_maps", &shape, bad.shape()));
            }
        }
        Ok(Self { vectors, maps })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }

    /// `(h', w')` of the retained maps.
    pub fn map_extents(&self) -> Option<(usize, usize)> {
        self.maps.as_ref().map(|m| (m[0].shape()[1], m[0].shape()[2]))
    }
}

/// Runs the extractor over every frame without recording gradients.
pub fn extract<T: Real>(
    store: &ParamStore<T>,
    net: &TinyConv,
    volume: &FrameVolume,
    keep_maps: bool,
) -> Result<FeatureSequence<T>> {
    let mut vectors = Vec::with_capacity(volume.len());
    let mut maps = Vec::new();
    for frame in &volume.frames {
        let mut tape = Tape::new();
        let x = tape.constant(frame.to_chw())?;
        let out = net.forward(&mut tape, store, x)?;
        vectors.push(tape.value(out.vector).clone());
        if keep_maps {
            maps.push(tape.value(out.maps).clone());
        }
    }
    FeatureSequence::new(vectors, keep_maps.then_some(maps))
}

const FEATURE_MAGIC: &[u8; 4] = b"ASTF";
const FEATURE_VERSION: u32 = 1;
/// Bytes before the first element.
pub const FEATURE_HEADER_LEN: usize = 32;

/// Serialises `seq`. Layout (little-endian): magic, version, N, m, element
/// width, maps flag (u8 + 3 padding bytes), h', w', then the N·m vector
/// elements and, when flagged, the N·m·h'·w' map elements.
pub fn encode_features<T: Real>(seq: &FeatureSequence<T>) -> Vec<u8> {
    let (n, m) = (seq.len(), seq.dim());
    let (mh, mw) = seq.map_extents().unwrap_or((0, 0));
    let mut out = Vec::with_capacity(FEATURE_HEADER_LEN + n * m * T::WIDTH as usize);
    out.extend_from_slice(FEATURE_MAGIC);
    for v in [FEATURE_VERSION, n as u32, m as u32, T::WIDTH] {
        put_u32(&mut out, v);
    }
    out.extend_from_slice(&[seq.maps.is_some() as u8, 0, 0, 0]);
    put_u32(&mut out, mh as u32);
    put_u32(&mut out, mw as u32);
    for v in &seq.vectors {
        v.data().iter().for_each(|x| x.write_le(&mut out));
    }
    for mp in seq.maps.iter().flatten() {
        mp.data().iter().for_each(|x| x.write_le(&mut out));
    }
    out
}

pub fn decode_features<T: Real>(bytes: &[u8]) -> Result<FeatureSequence<T>> {
    let mut r = Reader::new(bytes);
    r.magic(FEATURE_MAGIC)?;
    let at = r.pos();
    let version = r.u32("version")?;
    if version != FEATURE_VERSION {
        return Err(Error::format(at, format!("unsupported version {version}")));
    }
    let at = r.pos();
    let n = r.u32("frame count")? as usize;
    let m = r.u32("feature dim")? as usize;
    if n == 0 || m == 0 {
        return Err(Error::format(at, format!("empty shape {n}×{m}")));
    }
    let at = r.pos();
    let width = r.u32("element width")?;
    check_width(width, at)?;
    let at = r.pos();
    let flag = r.take(4, "maps flag")?[0];
    if flag > 1 {
        return Err(Error::format(at, format!("maps flag {flag} is not 0 or 1")));
    }
    let at = r.pos();
    let (mh, mw) = (r.u32("map height")? as usize, r.u32("map width")? as usize);
    if flag == 1 && (mh == 0 || mw == 0) {
        return Err(Error::format(at, "maps flagged with empty extents"));
    }
    let mut vectors = Vec::with_capacity(n);
    for _ in 0..n {
        vectors.push(Tensor::vector(r.reals(m, width, "feature vectors")?));
    }
    let maps = if flag == 1 {
        let mut maps = Vec::with_capacity(n);
        for _ in 0..n {
            let data = r.reals(m * mh * mw, width, "feature maps")?;
            maps.push(Tensor::new(vec![m, mh, mw], data)?);
        }
        Some(maps)
    } else {
        None
    };
    r.finish()?;
    FeatureSequence::new(vectors, maps)
}

pub fn save_features<T: Real>(seq: &FeatureSequence<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_features(seq))?;
    Ok(())
}

pub fn load_features<T: Real>(path: impl AsRef<Path>) -> Result<FeatureSequence<T>> {
    decode_features(&fs::read(path)?)
}
