//! Float rasters and their on-disk formats (8-bit PNG, little-endian PFM).

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major `height × width × channels` image.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> Raster<T> {
    pub fn filled(width: usize, height: usize, channels: usize, value: T) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, T::zero())
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::usage(format!(
                "raster data has {} values, expected {width}×{height}×{channels}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds a raster by evaluating `f(x, y, channel)` at every sample.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> T {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: T) {
        let i = self.index(x, y, c);
        self.data[i] = v;
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[T] {
        let i = self.index(x, y, 0);
        &self.data[i..i + self.channels]
    }

    pub fn same_shape<U>(&self, other: &Raster<U>) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn cast<U: Scalar>(&self) -> Raster<U> {
        Raster {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Bilinear interpolation at a normalized point, nodes at pixel centres,
    /// clamped beyond the outer centres. Writes one value per channel.
    pub fn sample_bilinear(&self, x: f64, y: f64, out: &mut [T]) {
        let axis = |u: f64, n: usize| {
            let p = to_pixel(u, n).clamp(0.0, (n - 1) as f64);
            let i = (p.floor() as usize).min(n.saturating_sub(2));
            (i, (i + 1).min(n - 1), p - i as f64)
        };
        let (x0, x1, fx) = axis(x, self.width);
        let (y0, y1, fy) = axis(y, self.height);
        for (c, o) in out.iter_mut().enumerate().take(self.channels) {
            let v = (1.0 - fy) * ((1.0 - fx) * self.get(x0, y0, c).f64() + fx * self.get(x1, y0, c).f64())
                + fy * ((1.0 - fx) * self.get(x0, y1, c).f64() + fx * self.get(x1, y1, c).f64());
            *o = T::of(v);
        }
    }

    /// Pixel centres in normalized `[-1, 1]²` coordinates, `(x, y)` order,
    /// flattened row-major. `x` follows columns and `y` follows rows.
    pub fn pixel_centers(&self) -> Vec<[f64; 2]> {
        pixel_centers(self.width, self.height)
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let data = img
            .into_raw()
            .into_iter()
            .map(|b| T::of(b as f64 / 255.0))
            .collect();
        Self::from_vec(w as usize, h as usize, 3, data)
    }

    /// Writes an 8-bit RGB PNG; values are clamped to `[0, 1]`. Single channel
    /// rasters are replicated to gray.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut bytes = Vec::with_capacity(self.width * self.height * 3);
        for px in self.data.chunks(self.channels) {
            for c in 0..3 {
                let v = px[c.min(self.channels - 1)].f64();
                bytes.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        image::save_buffer(
            path,
            &bytes,
            self.width as u32,
            self.height as u32,
            image::ColorType::Rgb8,
        )
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Portable float map, little-endian (negative scale), bottom row first.
    pub fn to_pfm_bytes(&self) -> Result<Vec<u8>> {
        let tag = match self.channels {
            1 => "Pf",
            3 => "PF",
            c => return Err(Error::usage(format!("PFM supports 1 or 3 channels, got {c}"))),
        };
        let mut out = format!("{tag}\n{} {}\n-1.0\n", self.width, self.height).into_bytes();
        for y in (0..self.height).rev() {
            let row = self.index(0, y, 0);
            for v in &self.data[row..row + self.width * self.channels] {
                out.extend_from_slice(&(v.f64() as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_pfm_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::format("PFM", m.to_string());
        let mut fields = Vec::new();
        let mut pos = 0;
        // Three whitespace-separated header tokens after the tag.
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii header"))?);
        }
        pos += 1;
        let channels = match fields[0] {
            "PF" => 3,
            "Pf" => 1,
            _ => return Err(bad("unknown tag")),
        };
        let width: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
        let height: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
        let scale: f64 = fields[3].parse().map_err(|_| bad("bad scale"))?;
        let n = width * height * channels;
        let body = bytes.get(pos..pos + 4 * n).ok_or_else(|| bad("truncated data"))?;
        let mut data = vec![T::zero(); n];
        for (k, chunk) in body.chunks_exact(4).enumerate() {
            let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
            let v = if scale < 0.0 {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
            let row = k / (width * channels);
            let col = k % (width * channels);
            data[(height - 1 - row) * width * channels + col] = T::of(v as f64);
        }
        Self::from_vec(width, height, channels, data)
    }

    pub fn save_pfm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_pfm_bytes()?;
        fs::File::create(path)
            .and_then(|mut f| f.write_all(&bytes))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load_pfm(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_pfm_bytes(&bytes)
    }

    /// Loads by extension: `.pfm` as float map, anything else through the PNG path.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        match path.extension().and_then(|e| e.to_str()) {
            Some("pfm") => Self::load_pfm(path),
            _ => Self::load_png(path),
        }
    }
}

/// Normalized coordinate of the centre of pixel `i` along an axis of `n` pixels.
#[inline]
pub fn pixel_center(i: usize, n: usize) -> f64 {
    -1.0 + (2 * i + 1) as f64 / n as f64
}

/// Continuous pixel coordinate (pixel centres at integers) of a normalized coordinate.
#[inline]
pub fn to_pixel(x: f64, n: usize) -> f64 {
    (x + 1.0) * 0.5 * n as f64 - 0.5
}

pub fn pixel_centers(width: usize, height: usize) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            out.push([pixel_center(x, width), pixel_center(y, height)]);
        }
    }
    out
}
