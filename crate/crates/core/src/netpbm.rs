//! Binary netpbm images: P5 graymaps and P6 pixmaps with maxval 255.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::Image;

/// An 8-bit single-channel raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gray {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

pub fn encode_pgm(g: &Gray) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", g.width, g.height).into_bytes();
    out.extend_from_slice(&g.pixels);
    out
}

/// Encodes an RGB image, quantising each channel from `[0, 1]` to `0..=255`.
pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.data.iter().map(|&v| quantise(v as f64)));
    out
}

pub(crate) fn quantise(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn parse(bytes: &[u8], magic: &str) -> Result<(usize, usize, usize)> {
    // header: magic, width, height, maxval, separated by single whitespace runs
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(pos, "truncated netpbm header"));
        }
        fields.push((start, String::from_utf8_lossy(&bytes[start..pos]).into_owned()));
    }
    if fields[0].1 != magic {
        return Err(Error::format(0, format!("expected {magic}, found {}", fields[0].1)));
    }
    let mut nums = [0usize; 3];
    for (slot, (at, text)) in nums.iter_mut().zip(&fields[1..]) {
        *slot = text
            .parse()
            .map_err(|_| Error::format(*at, format!("bad header number `{text}`")))?;
    }
    if nums[2] != 255 {
        return Err(Error::format(fields[3].0, "only maxval 255 is supported"));
    }
    // exactly one whitespace byte separates the header from the raster
    Ok((nums[0], nums[1], pos + 1))
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Gray> {
    let (width, height, start) = parse(bytes, "P5")?;
    let need = width * height;
    if bytes.len() < start + need {
        return Err(Error::format(bytes.len(), "truncated graymap raster"));
    }
    Ok(Gray {
        width,
        height,
        pixels: bytes[start..start + need].to_vec(),
    })
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let (width, height, start) = parse(bytes, "P6")?;
    let need = width * height * 3;
    if bytes.len() < start + need {
        return Err(Error::format(bytes.len(), "truncated pixmap raster"));
    }
    let data = bytes[start..start + need].iter().map(|&b| b as f32 / 255.0).collect();
    Image::new(height, width, data)
}

pub fn write_pgm(g: &Gray, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_pgm(g))?;
    Ok(())
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Gray> {
    decode_pgm(&fs::read(path)?)
}

pub fn write_ppm(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_ppm(img))?;
    Ok(())
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Image> {
    decode_ppm(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_roundtrip() {
        let g = Gray {
            width: 3,
            height: 2,
            pixels: vec![0, 10, 255, 7, 8, 9],
        };
        let bytes = encode_pgm(&g);
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(decode_pgm(&bytes).unwrap(), g);
        assert!(matches!(decode_pgm(&bytes[..bytes.len() - 1]), Err(Error::Format { .. })));
    }

    #[test]
    fn ppm_roundtrip_of_quantised_values() {
        let data: Vec<f32> = (0..12).map(|i| (i * 20) as f32 / 255.0).collect();
        let img = Image::new(2, 2, data).unwrap();
        let back = decode_ppm(&encode_ppm(&img)).unwrap();
        assert_eq!(back, img);
        assert!(decode_pgm(&encode_ppm(&img)).is_err());
    }
}
