//! Float image buffers and their on-disk formats.
//!
//! Two formats are written:
//! - binary PPM (`P6`, 8-bit) for viewing;
//! - a lossless planar float dump: 4-byte magic `GSF1`, then `width`, `height`,
//!   `channels` as little-endian `u32`, then `channels` planes of
//!   `width * height` little-endian `f32` values in row-major order.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const RAW_MAGIC: &[u8; 4] = b"GSF1";

/// Interleaved RGB, row-major, nominally in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

/// Single-channel row-major map.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Channel `c` as its own row-major plane.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(3).copied().collect()
    }

    pub fn check_same_dims(&self, other: &RgbImage) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::dims(self.dims(), other.dims()));
        }
        Ok(())
    }

    pub fn flip_horizontal(&self) -> RgbImage {
        let mut out = RgbImage::new(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                out.set_pixel(self.width - 1 - x, y, self.pixel(x, y));
            }
        }
        out
    }

    /// 2x2 box filter. Odd trailing rows/columns are dropped.
    pub fn downsample2(&self) -> RgbImage {
        let (w, h) = (self.width / 2, self.height / 2);
        let mut out = RgbImage::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0; 3];
                for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    let p = self.pixel(2 * x + dx, 2 * y + dy);
                    for c in 0..3 {
                        acc[c] += 0.25 * p[c];
                    }
                }
                out.set_pixel(x, y, acc);
            }
        }
        out
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        let mut buf = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        buf.extend(self.data.iter().map(|&v| to_u8(v)));
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn write_raw(&self, path: &Path) -> Result<()> {
        let planes: Vec<Vec<f64>> = (0..3).map(|c| self.channel(c)).collect();
        write_raw_planes(path, self.width, self.height, &planes)
    }

    pub fn read_raw(path: &Path) -> Result<RgbImage> {
        let (w, h, planes) = read_raw_planes(path)?;
        if planes.len() != 3 {
            return Err(Error::format(path, format!("expected 3 channels, found {}", planes.len())));
        }
        let mut img = RgbImage::new(w, h);
        for (c, plane) in planes.iter().enumerate() {
            for (i, v) in plane.iter().enumerate() {
                img.data[3 * i + c] = *v;
            }
        }
        Ok(img)
    }
}

impl ScalarMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn check_same_dims(&self, other: (usize, usize)) -> Result<()> {
        if self.dims() != other {
            return Err(Error::dims(self.dims(), other));
        }
        Ok(())
    }

    pub fn write_raw(&self, path: &Path) -> Result<()> {
        write_raw_planes(path, self.width, self.height, std::slice::from_ref(&self.data))
    }

    pub fn read_raw(path: &Path) -> Result<ScalarMap> {
        let (w, h, mut planes) = read_raw_planes(path)?;
        if planes.len() != 1 {
            return Err(Error::format(path, format!("expected 1 channel, found {}", planes.len())));
        }
        Ok(ScalarMap {
            width: w,
            height: h,
            data: planes.pop().unwrap_or_default(),
        })
    }

    /// Grayscale preview scaled so that `max` maps to white.
    pub fn write_pgm(&self, path: &Path, max: f64) -> Result<()> {
        let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
        let mut buf = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        buf.extend(self.data.iter().map(|&v| to_u8(v * scale)));
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn write_raw_planes(path: &Path, width: usize, height: usize, planes: &[Vec<f64>]) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + planes.len() * width * height * 4);
    buf.extend_from_slice(RAW_MAGIC);
    for v in [width, height, planes.len()] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for plane in planes {
        for &v in plane {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

fn read_raw_planes(path: &Path) -> Result<(usize, usize, Vec<Vec<f64>>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[0..4] != RAW_MAGIC {
        return Err(Error::format(path, "missing GSF1 header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (w, h, c) = (word(0), word(1), word(2));
    let n = w * h;
    if bytes.len() != 16 + 4 * n * c {
        return Err(Error::format(path, "payload length does not match header"));
    }
    let floats: Vec<f64> = bytes[16..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Ok((w, h, floats.chunks(n.max(1)).take(c).map(|p| p.to_vec()).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_dump_roundtrip_is_lossless_for_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.raw");
        let mut img = RgbImage::new(3, 2);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i as f32 * 0.037) as f64;
        }
        img.write_raw(&path).unwrap();
        assert_eq!(RgbImage::read_raw(&path).unwrap(), img);

        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"GSF1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 3);
    }

    #[test]
    fn ppm_header_and_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        RgbImage::filled(4, 5, [1.0, 0.5, 0.0]).write_ppm(&path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P6\n4 5\n255\n"));
        assert_eq!(bytes.len(), 11 + 4 * 5 * 3);
        assert_eq!(&bytes[11..14], &[255, 128, 0]);
    }

    #[test]
    fn truncated_raw_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.raw");
        fs::write(&path, b"GSF1\x02\0\0\0").unwrap();
        assert!(matches!(ScalarMap::read_raw(&path), Err(Error::Format { .. })));
    }
}
