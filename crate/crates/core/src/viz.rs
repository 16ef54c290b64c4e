//! Attention maps: `A_t = Σ_i a_t^i F_i`, upsampling, graymap export and a
//! blob-mask localization score.

use std::path::Path;

use crate::autodiff::Tape;
use crate::datasynth::Mask;
use crate::error::{Error, Result};
use crate::features::Image;
use crate::model::Model;
use crate::netpbm::{self, Gray};
use crate::tensor::{Real, Tensor};
use crate::training::Example;

/// Row-major real-valued raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width || height == 0 || width == 0 {
            return Err(Error::dim("grid", &[data.len()], &[height, width]));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Splits a `[m, h, w]` tensor into `m` grids.
    pub fn stack_from_tensor<T: Real>(maps: &Tensor<T>) -> Result<Vec<Grid>> {
        let &[m, h, w] = maps.shape() else {
            return Err(Error::dim("maps", maps.shape(), &[0, 0, 0]));
        };
        let values = maps.to_f64_vec();
        (0..m)
            .map(|i| Grid::new(h, w, values[i * h * w..(i + 1) * h * w].to_vec()))
            .collect()
    }

    /// Rescaled to `[0, 1]`; a constant grid maps to 0.5 everywhere.
    pub fn normalized(&self) -> Grid {
        let lo = self.data.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let data = if hi > lo {
            self.data.iter().map(|v| (v - lo) / (hi - lo)).collect()
        } else {
            vec![0.5; self.data.len()]
        };
        Grid { data, ..*self }
    }

    /// Min-max scaled 8-bit raster; constant grids become mid-gray 128.
    pub fn to_gray(&self) -> Gray {
        let lo = self.data.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let pixels = if hi > lo {
            self.data
                .iter()
                .map(|v| ((v - lo) / (hi - lo) * 255.0).round() as u8)
                .collect()
        } else {
            vec![128; self.data.len()]
        };
        Gray {
            width: self.width,
            height: self.height,
            pixels,
        }
    }
}

/// `Σ_i a_i F_i`.
pub fn attention_map(a: &[f64], maps: &[Grid]) -> Result<Grid> {
    if a.len() != maps.len() {
        return Err(Error::dim("attention_map", &[a.len()], &[maps.len()]));
    }
    let first = maps.first().ok_or_else(|| Error::contract("no feature maps"))?;
    let mut out = Grid::filled(first.height, first.width, 0.0);
    for (&w, f) in a.iter().zip(maps) {
        if (f.height, f.width) != (first.height, first.width) {
            return Err(Error::dim("attention_map", &[f.height, f.width], &[first.height, first.width]));
        }
        for (o, &v) in out.data.iter_mut().zip(&f.data) {
            *o += w * v;
        }
    }
    Ok(out)
}

/// Corner-aligned bilinear interpolation to `height × width`.
pub fn upsample(grid: &Grid, height: usize, width: usize) -> Result<Grid> {
    if height < grid.height || width < grid.width {
        return Err(Error::contract(format!(
            "cannot upsample {}x{} to the smaller {height}x{width}",
            grid.height, grid.width
        )));
    }
    let coord = |i: usize, dst: usize, src: usize| -> (usize, usize, f64) {
        if src == 1 || dst == 1 {
            return (0, 0, 0.0);
        }
        let pos = i as f64 * (src - 1) as f64 / (dst - 1) as f64;
        let lo = (pos.floor() as usize).min(src - 2);
        (lo, lo + 1, pos - lo as f64)
    };
    let mut data = Vec::with_capacity(height * width);
    for y in 0..height {
        let (y0, y1, fy) = coord(y, height, grid.height);
        for x in 0..width {
            let (x0, x1, fx) = coord(x, width, grid.width);
            let top = grid.get(y0, x0) * (1.0 - fx) + grid.get(y0, x1) * fx;
            let bottom = grid.get(y1, x0) * (1.0 - fx) + grid.get(y1, x1) * fx;
            data.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    Grid::new(height, width, data)
}

pub fn export_pgm(grid: &Grid, path: impl AsRef<Path>) -> Result<()> {
    if !grid.data.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { op: "export_pgm" });
    }
    netpbm::write_pgm(&grid.to_gray(), path)
}

/// The frame and its grayscale overlay side by side.
pub fn side_by_side(frame: &Image, overlay: &Grid) -> Result<Image> {
    if (overlay.height, overlay.width) != (frame.height, frame.width) {
        return Err(Error::dim(
            "side_by_side",
            &[overlay.height, overlay.width],
            &[frame.height, frame.width],
        ));
    }
    let gray = overlay.to_gray();
    let mut out = Image::filled(frame.height, frame.width * 2, [0.0; 3]);
    for y in 0..frame.height {
        for x in 0..frame.width {
            out.set_pixel(y, x, frame.pixel(y, x));
            let g = gray.pixels[y * frame.width + x] as f32 / 255.0;
            out.set_pixel(y, frame.width + x, [g; 3]);
        }
    }
    Ok(out)
}

/// Attention of one frame, at map resolution and at frame resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    /// Frame index, counted from 0 in temporal order.
    pub frame: usize,
    pub map: Grid,
    pub overlay: Grid,
}

/// Attention maps of every frame of a clip, in temporal order.
pub fn clip_attention<T: Real>(model: &Model<T>, ex: &Example<T>) -> Result<Vec<AttentionMap>> {
    let mut tape = Tape::new();
    let inputs = model.input_vars(&mut tape, &ex.input)?;
    let maps = inputs.maps.ok_or_else(|| {
        Error::Config("attention maps need a model with a convolutional front-end".into())
    })?;
    if model.attention.is_none() {
        return Err(Error::Config("model was built without the attention network".into()));
    }
    let out = model.backbone(&mut tape, &inputs.features, None)?;
    let att = out.attention.expect("attention network present");
    let frames = match &ex.input {
        crate::model::ClipInput::Frames(f) => f,
        _ => unreachable!("maps only come from frames"),
    };
    let order = model.cfg.order().indices(inputs.features.len());
    let mut result: Vec<Option<AttentionMap>> = vec![None; order.len()];
    for (step, &t) in order.iter().enumerate() {
        let a = tape.value(att.a[step]).to_f64_vec();
        let grids = Grid::stack_from_tensor(tape.value(maps[t]))?;
        let map = attention_map(&a, &grids)?;
        let shape = frames[t].shape();
        let overlay = upsample(&map, shape[1], shape[2])?;
        result[t] = Some(AttentionMap { frame: t, map, overlay });
    }
    Ok(result.into_iter().map(|m| m.expect("every frame consumed once")).collect())
}

/// Mean normalized attention inside and outside a mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskContrast {
    pub inside: f64,
    pub outside: f64,
}

impl MaskContrast {
    pub fn hit(&self) -> bool {
        self.inside > self.outside
    }
}

/// Compares the min-max normalized overlay inside and outside `mask`.
pub fn mask_contrast(overlay: &Grid, mask: &Mask) -> Result<MaskContrast> {
    if (overlay.height, overlay.width) != (mask.height, mask.width) {
        return Err(Error::dim("mask_contrast", &[overlay.height, overlay.width], &[mask.height, mask.width]));
    }
    let norm = overlay.normalized();
    let (mut sin, mut nin, mut sout, mut nout) = (0.0, 0usize, 0.0, 0usize);
    for (&v, &m) in norm.data.iter().zip(&mask.data) {
        if m {
            sin += v;
            nin += 1;
        } else {
            sout += v;
            nout += 1;
        }
    }
    if nin == 0 || nout == 0 {
        return Err(Error::contract("mask must have pixels both inside and outside"));
    }
    Ok(MaskContrast {
        inside: sin / nin as f64,
        outside: sout / nout as f64,
    })
}

/// Share of frames whose attention is higher inside the blob than outside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizationReport {
    pub frames: usize,
    pub hits: usize,
    pub mean_inside: f64,
    pub mean_outside: f64,
}

impl LocalizationReport {
    pub fn fraction(&self) -> f64 {
        self.hits as f64 / self.frames as f64
    }
}

/// Scores every frame of every clip against its mask.
pub fn localization<T: Real>(model: &Model<T>, clips: &[(Example<T>, Vec<Mask>)]) -> Result<LocalizationReport> {
    let (mut frames, mut hits, mut inside, mut outside) = (0, 0, 0.0, 0.0);
    for (ex, masks) in clips {
        let maps = clip_attention(model, ex)?;
        if maps.len() != masks.len() {
            return Err(Error::dim("localization", &[masks.len()], &[maps.len()]));
        }
        for (m, mask) in maps.iter().zip(masks) {
            let c = mask_contrast(&m.overlay, mask)?;
            frames += 1;
            hits += c.hit() as usize;
            inside += c.inside;
            outside += c.outside;
        }
    }
    if frames == 0 {
        return Err(Error::contract("no frames to score"));
    }
    Ok(LocalizationReport {
        frames,
        hits,
        mean_inside: inside / frames as f64,
        mean_outside: outside / frames as f64,
    })
}
