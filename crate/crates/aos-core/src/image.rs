//! Raster types and file I/O.
//!
//! [`HdrImage`] stores single-precision relative-temperature samples and
//! round-trips through PFM (portable float map, grayscale `Pf`, little-endian,
//! bottom-up rows). [`LdrImage`] is tone-mapped 8-bit grayscale and
//! round-trips through binary PGM (`P5`). Integral-image contributor counts
//! are written as 16-bit PGM.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Format(String),
    #[error("image dimensions must be positive")]
    EmptyImage,
    #[error("non-finite sample at index {0}")]
    NonFiniteSample(usize),
}

fn format_err<T>(msg: impl Into<String>) -> Result<T, ImageError> {
    Err(ImageError::Format(msg.into()))
}

/// Row-major grid of `f32` samples (relative temperature, arbitrary units).
#[derive(Debug, Clone, PartialEq)]
pub struct HdrImage {
    width: u32,
    height: u32,
    samples: Vec<f32>,
}

impl HdrImage {
    pub fn new(width: u32, height: u32, fill: f32) -> Self {
        Self {
            width,
            height,
            samples: vec![fill; (width * height) as usize],
        }
    }

    pub fn from_samples(width: u32, height: u32, samples: Vec<f32>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyImage);
        }
        if samples.len() != (width * height) as usize {
            return format_err(format!(
                "sample count {} does not match {}x{}",
                samples.len(),
                width,
                height
            ));
        }
        if let Some(bad) = samples.iter().position(|s| !s.is_finite()) {
            return Err(ImageError::NonFiniteSample(bad));
        }
        Ok(Self {
            width,
            height,
            samples,
        })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> f32) -> Self {
        let mut samples = Vec::with_capacity((width * height) as usize);
        for y in 0..height {
            for x in 0..width {
                samples.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            samples,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.samples[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: f32) {
        self.samples[(y * self.width + x) as usize] = value;
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.samples
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.samples
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().map(|&s| s as f64).sum::<f64>() / self.samples.len() as f64
    }

    pub fn min_max(&self) -> (f32, f32) {
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for &s in &self.samples {
            lo = lo.min(s);
            hi = hi.max(s);
        }
        (lo, hi)
    }

    /// Bilinear sample at a continuous image coordinate; sample centers sit at
    /// `(i + 0.5, j + 0.5)`. Returns `None` outside `[0, w] x [0, h]`; taps
    /// are clamped at the borders, so every in-bounds lookup is defined.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f32> {
        if !(x >= 0.0 && x <= self.width as f64 && y >= 0.0 && y <= self.height as f64) {
            return None;
        }
        let (i0, i1, tx) = Self::taps(x, self.width);
        let (j0, j1, ty) = Self::taps(y, self.height);
        let v00 = self.get(i0, j0) as f64;
        let v10 = self.get(i1, j0) as f64;
        let v01 = self.get(i0, j1) as f64;
        let v11 = self.get(i1, j1) as f64;
        let top = v00 + (v10 - v00) * tx;
        let bot = v01 + (v11 - v01) * tx;
        Some((top + (bot - top) * ty) as f32)
    }

    fn taps(coord: f64, extent: u32) -> (u32, u32, f64) {
        let f = coord - 0.5;
        let i0 = f.floor();
        let t = f - i0;
        if i0 < 0.0 {
            (0, 0, 0.0)
        } else if i0 as u32 + 1 >= extent {
            (extent - 1, extent - 1, 0.0)
        } else {
            (i0 as u32, i0 as u32 + 1, t)
        }
    }

    pub fn write_pfm(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        let mut w = BufWriter::new(File::create(path)?);
        write!(w, "Pf\n{} {}\n-1.0\n", self.width, self.height)?;
        // PFM stores rows bottom-up.
        for y in (0..self.height).rev() {
            let row = &self.samples[(y * self.width) as usize..((y + 1) * self.width) as usize];
            for &s in row {
                w.write_all(&s.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_pfm(path: impl AsRef<Path>) -> Result<Self, ImageError> {
        let mut r = BufReader::new(File::open(path)?);
        let magic = read_token(&mut r)?;
        match magic.as_str() {
            "Pf" => {}
            "PF" => return format_err("color PFM not supported, expected grayscale 'Pf'"),
            other => return format_err(format!("not a PFM file (magic {other:?})")),
        }
        let width: u32 = parse_token(&mut r, "width")?;
        let height: u32 = parse_token(&mut r, "height")?;
        let scale: f64 = parse_token(&mut r, "scale")?;
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyImage);
        }
        let little_endian = scale < 0.0;
        let count = (width * height) as usize;
        let mut buf = vec![0u8; count * 4];
        r.read_exact(&mut buf)?;
        let mut samples = vec![0.0f32; count];
        for (idx, chunk) in buf.chunks_exact(4).enumerate() {
            let bytes = [chunk[0], chunk[1], chunk[2], chunk[3]];
            let v = if little_endian {
                f32::from_le_bytes(bytes)
            } else {
                f32::from_be_bytes(bytes)
            };
            // Undo bottom-up row order.
            let y = height - 1 - (idx as u32 / width);
            let x = idx as u32 % width;
            samples[(y * width + x) as usize] = v;
        }
        Self::from_samples(width, height, samples)
    }
}

/// 8-bit grayscale raster (tone-mapped LDR image).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LdrImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl LdrImage {
    pub fn new(width: u32, height: u32, fill: u8) -> Self {
        Self {
            width,
            height,
            data: vec![fill; (width * height) as usize],
        }
    }

    pub fn from_data(width: u32, height: u32, data: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyImage);
        }
        if data.len() != (width * height) as usize {
            return format_err("data length does not match dimensions");
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.data[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: u8) {
        self.data[(y * self.width + x) as usize] = value;
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        let mut w = BufWriter::new(File::create(path)?);
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.data)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_pgm(path: impl AsRef<Path>) -> Result<Self, ImageError> {
        let (width, height, maxval, samples) = read_pgm_samples(path)?;
        if maxval > 255 {
            return format_err("expected 8-bit PGM");
        }
        let data = samples.into_iter().map(|s| s as u8).collect();
        Self::from_data(width, height, data)
    }
}

/// Writes a contributor-count map as a binary PGM. Counts above 255 use the
/// two-byte big-endian sample encoding.
pub fn write_count_pgm(
    path: impl AsRef<Path>,
    width: u32,
    height: u32,
    counts: &[u32],
) -> Result<(), ImageError> {
    if counts.len() != (width * height) as usize {
        return format_err("count map length does not match dimensions");
    }
    let maxval = counts.iter().copied().max().unwrap_or(0).max(1);
    if maxval > 65535 {
        return format_err("count map exceeds 16-bit PGM range");
    }
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{width} {height}\n{maxval}\n")?;
    if maxval < 256 {
        for &c in counts {
            w.write_all(&[c as u8])?;
        }
    } else {
        for &c in counts {
            w.write_all(&(c as u16).to_be_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_count_pgm(path: impl AsRef<Path>) -> Result<(u32, u32, Vec<u32>), ImageError> {
    let (width, height, _maxval, samples) = read_pgm_samples(path)?;
    Ok((width, height, samples.into_iter().map(u32::from).collect()))
}

fn read_pgm_samples(path: impl AsRef<Path>) -> Result<(u32, u32, u16, Vec<u16>), ImageError> {
    let mut r = BufReader::new(File::open(path)?);
    let magic = read_token(&mut r)?;
    if magic != "P5" {
        return format_err(format!("not a binary PGM (magic {magic:?})"));
    }
    let width: u32 = parse_token(&mut r, "width")?;
    let height: u32 = parse_token(&mut r, "height")?;
    let maxval: u16 = parse_token(&mut r, "maxval")?;
    if maxval == 0 {
        return format_err("PGM maxval must be positive");
    }
    let count = (width * height) as usize;
    let samples = if maxval < 256 {
        let mut buf = vec![0u8; count];
        r.read_exact(&mut buf)?;
        buf.into_iter().map(u16::from).collect()
    } else {
        let mut buf = vec![0u8; count * 2];
        r.read_exact(&mut buf)?;
        buf.chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    Ok((width, height, maxval, samples))
}

/// Reads one whitespace-delimited header token, skipping `#` comments.
fn read_token(r: &mut impl Read) -> Result<String, ImageError> {
    let mut token = String::new();
    let mut byte = [0u8; 1];
    let mut in_comment = false;
    loop {
        if r.read(&mut byte)? == 0 {
            if token.is_empty() {
                return format_err("unexpected end of header");
            }
            return Ok(token);
        }
        let c = byte[0] as char;
        if in_comment {
            if c == '\n' {
                in_comment = false;
            }
            continue;
        }
        if c == '#' && token.is_empty() {
            in_comment = true;
            continue;
        }
        if c.is_ascii_whitespace() {
            if token.is_empty() {
                continue;
            }
            return Ok(token);
        }
        token.push(c);
    }
}

fn parse_token<T: std::str::FromStr>(r: &mut impl Read, what: &str) -> Result<T, ImageError> {
    let token = read_token(r)?;
    token
        .parse()
        .map_err(|_| ImageError::Format(format!("invalid {what}: {token:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_center_hits_sample_exactly() {
        let img = HdrImage::from_fn(4, 4, |x, y| (x + 10 * y) as f32);
        for y in 0..4 {
            for x in 0..4 {
                let v = img.sample_bilinear(x as f64 + 0.5, y as f64 + 0.5).unwrap();
                assert_eq!(v, img.get(x, y));
            }
        }
    }

    #[test]
    fn bilinear_midpoint_averages() {
        let img = HdrImage::from_fn(2, 1, |x, _| x as f32 * 2.0);
        let v = img.sample_bilinear(1.0, 0.5).unwrap();
        assert!((v - 1.0).abs() < 1e-6);
    }

    #[test]
    fn bilinear_outside_bounds_is_none() {
        let img = HdrImage::new(4, 4, 0.0);
        assert!(img.sample_bilinear(-0.1, 2.0).is_none());
        assert!(img.sample_bilinear(2.0, 4.1).is_none());
        assert!(img.sample_bilinear(4.0, 4.0).is_some());
    }

    #[test]
    fn from_samples_rejects_non_finite() {
        assert!(matches!(
            HdrImage::from_samples(2, 1, vec![0.0, f32::NAN]),
            Err(ImageError::NonFiniteSample(1))
        ));
    }

    #[test]
    fn pfm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pfm");
        let img = HdrImage::from_fn(5, 3, |x, y| x as f32 * 0.25 - y as f32 * 1.5);
        img.write_pfm(&path).unwrap();
        let back = HdrImage::read_pfm(&path).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn pfm_rows_are_bottom_up() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pfm");
        let img = HdrImage::from_fn(2, 2, |_, y| y as f32);
        img.write_pfm(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header_len = "Pf\n2 2\n-1.0\n".len();
        // First stored row is the bottom image row (y = 1).
        let first = f32::from_le_bytes(bytes[header_len..header_len + 4].try_into().unwrap());
        assert_eq!(first, 1.0);
    }

    #[test]
    fn pfm_rejects_color() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pfm");
        std::fs::write(&path, b"PF\n1 1\n-1.0\n\0\0\0\0\0\0\0\0\0\0\0\0").unwrap();
        assert!(HdrImage::read_pfm(&path).is_err());
    }

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let img = LdrImage::from_data(3, 2, vec![0, 10, 255, 7, 8, 9]).unwrap();
        img.write_pgm(&path).unwrap();
        assert_eq!(LdrImage::read_pgm(&path).unwrap(), img);
    }

    #[test]
    fn count_pgm_round_trip_wide_range() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("counts.pgm");
        let counts = vec![0u32, 1, 255, 256, 341];
        write_count_pgm(&path, 5, 1, &counts).unwrap();
        let (w, h, back) = read_count_pgm(&path).unwrap();
        assert_eq!((w, h), (5, 1));
        assert_eq!(back, counts);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// PFM write/read is lossless for finite f32 grids.
            #[test]
            fn pfm_preserves_samples(
                w in 1u32..16,
                h in 1u32..16,
                seed in any::<u32>(),
            ) {
                let img = HdrImage::from_fn(w, h, |x, y| {
                    let k = (x as u64 + 31 * y as u64) as f32;
                    (seed as f32).sin() * 10.0 + k * 0.125
                });
                let dir = tempfile::tempdir().unwrap();
                let path = dir.path().join("p.pfm");
                img.write_pfm(&path).unwrap();
                prop_assert_eq!(HdrImage::read_pfm(&path).unwrap(), img);
            }

            /// Bilinear interpolation stays within the sample range.
            #[test]
            fn bilinear_within_hull(
                x in 0.0..8.0f64,
                y in 0.0..8.0f64,
                seed in any::<u32>(),
            ) {
                let img = HdrImage::from_fn(8, 8, |i, j| {
                    ((i * 7 + j * 13 + seed % 97) % 31) as f32
                });
                let (lo, hi) = img.min_max();
                let v = img.sample_bilinear(x, y).unwrap();
                prop_assert!(v >= lo - 1e-4 && v <= hi + 1e-4);
            }
        }
    }
}
