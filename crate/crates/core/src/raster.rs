//! Grayscale rasters, resampling, blur, and PGM (P5) I/O.
//!
//! Continuous image coordinates put the center of pixel `(i, j)` at
//! `(i + 0.5, j + 0.5)`; x grows right and y grows down. Every sampler in
//! the crate clamps out-of-frame reads to the nearest border pixel.

use std::io::{BufRead, Write};

use thiserror::Error;

use crate::geometry::Affine2;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("raster has zero size ({width}x{height})")]
    Empty { width: usize, height: usize },
    #[error("data length {len} does not match {width}x{height}")]
    DataLength {
        width: usize,
        height: usize,
        len: usize,
    },
    #[error("PGM: {0}")]
    Pgm(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

/// 8-bit image as stored on disk.
pub type Gray8 = Raster<u8>;
/// Working image, intensities in `[0, 255]`.
pub type GrayF = Raster<f32>;
pub type Mask = Raster<bool>;

impl<T: Copy> Raster<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::Empty { width, height });
        }
        if data.len() != width * height {
            return Err(RasterError::DataLength {
                width,
                height,
                len: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: T) -> Self {
        assert!(width > 0 && height > 0, "raster extents must be positive");
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    /// Pixel lookup with coordinates clamped into the frame.
    pub fn get_clamped(&self, x: isize, y: isize) -> T {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.data[yc * self.width + xc]
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Raster<U> {
        Raster {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl Gray8 {
    pub fn to_f32(&self) -> GrayF {
        self.map(f32::from)
    }
}

impl GrayF {
    /// Rounds and saturates to 8 bits.
    pub fn to_u8(&self) -> Gray8 {
        self.map(|v| v.round().clamp(0.0, 255.0) as u8)
    }

    /// Bilinear sample at continuous coordinates with border replication.
    pub fn sample(&self, x: f64, y: f64) -> f32 {
        let u = x - 0.5;
        let v = y - 0.5;
        let x0 = u.floor();
        let y0 = v.floor();
        let fx = (u - x0) as f32;
        let fy = (v - y0) as f32;
        let (x0, y0) = (x0 as isize, y0 as isize);
        let p00 = self.get_clamped(x0, y0);
        let p10 = self.get_clamped(x0 + 1, y0);
        let p01 = self.get_clamped(x0, y0 + 1);
        let p11 = self.get_clamped(x0 + 1, y0 + 1);
        let top = p00 + (p10 - p00) * fx;
        let bot = p01 + (p11 - p01) * fx;
        top + (bot - top) * fy
    }

    /// Bilinear resize with half-pixel centers.
    pub fn resize(&self, width: usize, height: usize) -> GrayF {
        if (width, height) == self.dims() {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        // Separable: precompute horizontal taps once.
        let taps: Vec<(usize, usize, f32)> = (0..width)
            .map(|i| {
                let u = (i as f64 + 0.5) * sx - 0.5;
                let x0 = u.floor();
                let f = (u - x0) as f32;
                let x0 = x0 as isize;
                let a = x0.clamp(0, self.width as isize - 1) as usize;
                let b = (x0 + 1).clamp(0, self.width as isize - 1) as usize;
                (a, b, f)
            })
            .collect();
        let mut data = Vec::with_capacity(width * height);
        for j in 0..height {
            let v = (j as f64 + 0.5) * sy - 0.5;
            let y0 = v.floor();
            let fy = (v - y0) as f32;
            let y0 = y0 as isize;
            let ra = y0.clamp(0, self.height as isize - 1) as usize;
            let rb = (y0 + 1).clamp(0, self.height as isize - 1) as usize;
            let row_a = &self.data[ra * self.width..][..self.width];
            let row_b = &self.data[rb * self.width..][..self.width];
            for &(a, b, fx) in &taps {
                let top = row_a[a] + (row_a[b] - row_a[a]) * fx;
                let bot = row_b[a] + (row_b[b] - row_b[a]) * fx;
                data.push(top + (bot - top) * fy);
            }
        }
        GrayF {
            width,
            height,
            data,
        }
    }

    /// Resamples into a `width x height` frame where `map` sends source
    /// coordinates to destination coordinates. Out-of-frame reads replicate
    /// the border.
    pub fn warp(&self, map: &Affine2, width: usize, height: usize) -> Option<GrayF> {
        let inv = map.inverse()?;
        let [[a, b, c], [d, e, f]] = inv.m;
        let mut data = Vec::with_capacity(width * height);
        for j in 0..height {
            let y = j as f64 + 0.5;
            let (bx, by) = (b * y + c, e * y + f);
            for i in 0..width {
                let x = i as f64 + 0.5;
                data.push(self.sample(a * x + bx, d * x + by));
            }
        }
        Some(GrayF {
            width,
            height,
            data,
        })
    }

    /// Gaussian blur with standard deviation `sigma` pixels. Small sigmas use
    /// an exact separable kernel; larger ones use three successive box
    /// filters with matched variance.
    pub fn gaussian_blur(&self, sigma: f64) -> GrayF {
        if sigma <= 0.0 {
            return self.clone();
        }
        if sigma < 3.0 {
            let radius = (3.0 * sigma).ceil() as usize;
            let kernel: Vec<f32> = {
                let raw: Vec<f64> = (0..=2 * radius)
                    .map(|i| {
                        let t = i as f64 - radius as f64;
                        (-t * t / (2.0 * sigma * sigma)).exp()
                    })
                    .collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|v| (v / s) as f32).collect()
            };
            let h = convolve_rows(&self.data, self.width, self.height, &kernel);
            let t = transpose(&h, self.width, self.height);
            let v = convolve_rows(&t, self.height, self.width, &kernel);
            let data = transpose(&v, self.height, self.width);
            return GrayF {
                width: self.width,
                height: self.height,
                data,
            };
        }
        let mut data = self.data.clone();
        let mut scratch = vec![0.0f32; data.len()];
        for w in box_widths(sigma, 3) {
            let r = (w - 1) / 2;
            box_rows(&data, &mut scratch, self.width, self.height, r);
            let t = transpose(&scratch, self.width, self.height);
            let mut tb = vec![0.0f32; t.len()];
            box_rows(&t, &mut tb, self.height, self.width, r);
            data = transpose(&tb, self.height, self.width);
        }
        GrayF {
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| f64::from(v)).sum::<f64>() / self.data.len() as f64
    }
}

fn transpose(src: &[f32], width: usize, height: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; src.len()];
    const B: usize = 32;
    for by in (0..height).step_by(B) {
        for bx in (0..width).step_by(B) {
            for y in by..(by + B).min(height) {
                for x in bx..(bx + B).min(width) {
                    out[x * height + y] = src[y * width + x];
                }
            }
        }
    }
    out
}

fn convolve_rows(src: &[f32], width: usize, height: usize, kernel: &[f32]) -> Vec<f32> {
    let r = kernel.len() / 2;
    let mut out = vec![0.0f32; src.len()];
    let mut padded = vec![0.0f32; width + 2 * r];
    for y in 0..height {
        let row = &src[y * width..][..width];
        padded[..r].fill(row[0]);
        padded[r..r + width].copy_from_slice(row);
        padded[r + width..].fill(row[width - 1]);
        let dst = &mut out[y * width..][..width];
        for (x, o) in dst.iter_mut().enumerate() {
            *o = padded[x..x + kernel.len()]
                .iter()
                .zip(kernel)
                .map(|(a, b)| a * b)
                .sum();
        }
    }
    out
}

/// Box widths whose `n`-fold composition approximates a Gaussian of `sigma`.
fn box_widths(sigma: f64, n: usize) -> Vec<usize> {
    let nf = n as f64;
    let ideal = (12.0 * sigma * sigma / nf + 1.0).sqrt();
    let mut wl = ideal.floor() as i64;
    if wl % 2 == 0 {
        wl -= 1;
    }
    let wu = wl + 2;
    let wlf = wl as f64;
    let m = ((12.0 * sigma * sigma - nf * wlf * wlf - 4.0 * nf * wlf - 3.0 * nf) / (-4.0 * wlf - 4.0))
        .round() as i64;
    (0..n as i64)
        .map(|i| if i < m { wl as usize } else { wu as usize })
        .collect()
}

/// Running-sum box filter of radius `r` along rows, border replicated.
fn box_rows(src: &[f32], dst: &mut [f32], width: usize, height: usize, r: usize) {
    let inv = 1.0 / (2 * r + 1) as f64;
    for y in 0..height {
        let row = &src[y * width..][..width];
        let out = &mut dst[y * width..][..width];
        let at = |i: isize| row[i.clamp(0, width as isize - 1) as usize] as f64;
        let mut acc: f64 = (-(r as isize)..=r as isize).map(at).sum();
        for (x, o) in out.iter_mut().enumerate() {
            *o = (acc * inv) as f32;
            let xi = x as isize;
            acc += at(xi + r as isize + 1) - at(xi - r as isize);
        }
    }
}

fn read_token<R: BufRead>(r: &mut R) -> Result<String, RasterError> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            if tok.is_empty() {
                return Err(RasterError::Pgm("unexpected end of header".into()));
            }
            return Ok(tok);
        }
        let c = byte[0];
        if c == b'#' && tok.is_empty() {
            let mut line = Vec::new();
            r.read_until(b'\n', &mut line)?;
            continue;
        }
        if c.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            return Ok(tok);
        }
        tok.push(c as char);
    }
}

/// Reads a binary 8-bit PGM (`P5`, maxval <= 255).
pub fn read_pgm<R: BufRead>(mut r: R) -> Result<Gray8, RasterError> {
    let magic = read_token(&mut r)?;
    if magic != "P5" {
        return Err(RasterError::Pgm(format!("bad magic {magic:?}, expected P5")));
    }
    let mut num = |what: &str| -> Result<usize, RasterError> {
        let t = read_token(&mut r)?;
        t.parse::<usize>()
            .map_err(|_| RasterError::Pgm(format!("bad {what} {t:?}")))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(RasterError::Pgm(format!(
            "maxval {maxval} unsupported, need 1..=255"
        )));
    }
    let mut data = vec![0u8; width * height];
    r.read_exact(&mut data)
        .map_err(|_| RasterError::Pgm("truncated pixel data".into()))?;
    if maxval != 255 {
        for v in &mut data {
            *v = ((u32::from(*v) * 255 + maxval as u32 / 2) / maxval as u32) as u8;
        }
    }
    Raster::new(width, height, data)
}

/// Writes `P5\n<w> <h>\n255\n` followed by raw bytes.
pub fn write_pgm<W: Write>(mut w: W, img: &Gray8) -> Result<(), RasterError> {
    write!(w, "P5\n{} {}\n255\n", img.width, img.height)?;
    w.write_all(&img.data)?;
    Ok(())
}

pub fn mask_to_gray(mask: &Mask) -> Gray8 {
    mask.map(|b| if b { 255 } else { 0 })
}
