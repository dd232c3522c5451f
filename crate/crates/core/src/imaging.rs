//! Pixel-level primitives: decoding, bilinear resizing, tiling and
//! normalization of RGB images.
//!
//! Resizing uses half-pixel-center coordinate mapping with edge clamping.
//! All interpolation arithmetic is carried out in `f32` and rounded
//! half-to-even on output, so results are byte-identical across platforms.

use std::io::Cursor;

use image::ImageFormat;

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

/// Magic prefix of the raw fixture format.
pub const RAW_MAGIC: &[u8; 4] = b"DFIM";

/// An 8-bit RGB image stored row-major, interleaved.
#[derive(Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl std::fmt::Debug for ImageBuffer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ImageBuffer")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        check_dims(width, height)?;
        let expected = width as usize * height as usize * CHANNELS;
        if data.len() != expected {
            return Err(Error::InvalidDimension(format!(
                "{width}x{height} RGB image needs {expected} bytes, got {}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [u8; 3]) -> Result<Self> {
        check_dims(width, height)?;
        let mut data = Vec::with_capacity(width as usize * height as usize * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self> {
        Self::from_fn(width, height, |_, _| rgb)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Sum of every channel value, exact.
    pub fn pixel_sum(&self) -> u64 {
        self.data.iter().map(|&v| v as u64).sum()
    }

    /// Serializes into the raw fixture format: `DFIM`, u32 width, u32 height,
    /// then the interleaved RGB bytes. Integers are little-endian.
    pub fn to_raw_fixture(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.data.len());
        out.extend_from_slice(RAW_MAGIC);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_raw_fixture(bytes: &[u8]) -> Result<Self> {
        let (width, height) = raw_fixture_dims(bytes)?;
        let body = &bytes[12..];
        let expected = width as usize * height as usize * CHANNELS;
        if body.len() != expected {
            return Err(Error::Decode(format!(
                "raw fixture {width}x{height} needs {expected} pixel bytes, found {}",
                body.len()
            )));
        }
        Self::new(width, height, body.to_vec())
    }
}

fn check_dims(width: u32, height: u32) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidDimension(format!(
            "image dimensions must be positive, got {width}x{height}"
        )));
    }
    Ok(())
}

fn raw_fixture_dims(bytes: &[u8]) -> Result<(u32, u32)> {
    if bytes.len() < 12 || &bytes[..4] != RAW_MAGIC {
        return Err(Error::Decode("not a raw fixture".into()));
    }
    let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if width == 0 || height == 0 {
        return Err(Error::Decode(format!("raw fixture has empty dims {width}x{height}")));
    }
    Ok((width, height))
}

/// An axis-aligned pixel rectangle inside a parent image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct CropRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl CropRect {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn intersects(&self, other: &CropRect) -> bool {
        self.x < other.x + other.w
            && other.x < self.x + self.w
            && self.y < other.y + other.h
            && other.y < self.y + self.h
    }

    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.x as u64 + self.w as u64 <= width as u64 && self.y as u64 + self.h as u64 <= height as u64
    }
}

/// Decodes a PNG, JPEG, or raw `DFIM` fixture into an RGB buffer.
///
/// Grayscale is promoted by channel replication and alpha is discarded.
pub fn decode_image(bytes: &[u8]) -> Result<ImageBuffer> {
    if bytes.starts_with(RAW_MAGIC) {
        return ImageBuffer::from_raw_fixture(bytes);
    }
    let format = supported_format(bytes)?;
    let decoded = image::load_from_memory_with_format(bytes, format)
        .map_err(|e| Error::Decode(e.to_string()))?;
    let rgb = decoded.to_rgb8();
    let (width, height) = rgb.dimensions();
    ImageBuffer::new(width, height, rgb.into_raw())
}

/// Reads only the header of an encoded image to obtain its dimensions.
pub fn probe_dimensions(bytes: &[u8]) -> Result<(u32, u32)> {
    if bytes.starts_with(RAW_MAGIC) {
        return raw_fixture_dims(bytes);
    }
    let format = supported_format(bytes)?;
    let (w, h) = image::ImageReader::with_format(Cursor::new(bytes), format)
        .into_dimensions()
        .map_err(|e| Error::Decode(e.to_string()))?;
    check_dims(w, h).map_err(|e| Error::Decode(e.to_string()))?;
    Ok((w, h))
}

fn supported_format(bytes: &[u8]) -> Result<ImageFormat> {
    match image::guess_format(bytes) {
        Ok(f @ (ImageFormat::Png | ImageFormat::Jpeg)) => Ok(f),
        Ok(other) => Err(Error::Decode(format!("unsupported image format {other:?}"))),
        Err(e) => Err(Error::Decode(e.to_string())),
    }
}

/// Source sampling position for one output coordinate.
#[derive(Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f32,
}

fn taps(src: u32, dst: u32) -> Vec<Tap> {
    let scale = src as f32 / dst as f32;
    let last = src as usize - 1;
    (0..dst)
        .map(|i| {
            let pos = ((i as f32 + 0.5) * scale - 0.5).max(0.0);
            let lo = pos.floor() as usize;
            if lo >= last {
                Tap {
                    lo: last,
                    hi: last,
                    frac: 0.0,
                }
            } else {
                Tap {
                    lo,
                    hi: lo + 1,
                    frac: pos - lo as f32,
                }
            }
        })
        .collect()
}

#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + t * (b - a)
}

/// Bilinear resize to exactly `target_w` x `target_h`. Aspect ratio is not
/// preserved.
pub fn resize(img: &ImageBuffer, target_w: u32, target_h: u32) -> Result<ImageBuffer> {
    check_dims(target_w, target_h)?;
    if img.dims() == (target_w, target_h) {
        return Ok(img.clone());
    }
    let xs = taps(img.width, target_w);
    let ys = taps(img.height, target_h);
    let stride = img.width as usize * CHANNELS;
    let mut out = Vec::with_capacity(target_w as usize * target_h as usize * CHANNELS);
    for ty in &ys {
        let row0 = &img.data[ty.lo * stride..(ty.lo + 1) * stride];
        let row1 = &img.data[ty.hi * stride..(ty.hi + 1) * stride];
        for tx in &xs {
            let (a, b) = (tx.lo * CHANNELS, tx.hi * CHANNELS);
            for c in 0..CHANNELS {
                let top = lerp(row0[a + c] as f32, row0[b + c] as f32, tx.frac);
                let bottom = lerp(row1[a + c] as f32, row1[b + c] as f32, tx.frac);
                let v = lerp(top, bottom, ty.frac);
                out.push(v.round_ties_even().clamp(0.0, 255.0) as u8);
            }
        }
    }
    ImageBuffer::new(target_w, target_h, out)
}

/// Copies the pixels under `rect` without resampling.
pub fn extract_tile(img: &ImageBuffer, rect: CropRect) -> Result<ImageBuffer> {
    if rect.w == 0 || rect.h == 0 || !rect.fits_within(img.width, img.height) {
        return Err(Error::OutOfBounds {
            x: rect.x,
            y: rect.y,
            w: rect.w,
            h: rect.h,
            width: img.width,
            height: img.height,
        });
    }
    let stride = img.width as usize * CHANNELS;
    let row_len = rect.w as usize * CHANNELS;
    let mut out = Vec::with_capacity(row_len * rect.h as usize);
    for y in rect.y as usize..(rect.y + rect.h) as usize {
        let start = y * stride + rect.x as usize * CHANNELS;
        out.extend_from_slice(&img.data[start..start + row_len]);
    }
    ImageBuffer::new(rect.w, rect.h, out)
}

/// Normalized floating-point pixels in channel-planar (CHW) layout.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelTensor {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl PixelTensor {
    pub fn from_planar(width: u32, height: u32, data: Vec<f32>) -> Result<Self> {
        check_dims(width, height)?;
        let expected = width as usize * height as usize * CHANNELS;
        if data.len() != expected {
            return Err(Error::InvalidDimension(format!(
                "{width}x{height} tensor needs {expected} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidNormalization("tensor contains non-finite values".into()));
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

    pub fn channels(&self) -> usize {
        CHANNELS
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.width as usize * self.height as usize;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, x: u32, y: u32) -> f32 {
        self.plane(c)[y as usize * self.width as usize + x as usize]
    }
}

fn check_norm(mean: &[f32; 3], std: &[f32; 3]) -> Result<()> {
    if mean.iter().chain(std).any(|v| !v.is_finite()) {
        return Err(Error::InvalidNormalization("mean/std must be finite".into()));
    }
    if std.contains(&0.0) {
        return Err(Error::InvalidNormalization(format!("zero std component in {std:?}")));
    }
    Ok(())
}

/// `out[c] = (in[c] / 255 - mean[c]) / std[c]`, emitted channel-planar.
pub fn normalize(img: &ImageBuffer, mean: &[f32; 3], std: &[f32; 3]) -> Result<PixelTensor> {
    check_norm(mean, std)?;
    let n = img.width as usize * img.height as usize;
    let mut data = vec![0f32; n * CHANNELS];
    for (i, px) in img.data.chunks_exact(CHANNELS).enumerate() {
        for c in 0..CHANNELS {
            data[c * n + i] = (px[c] as f32 / 255.0 - mean[c]) / std[c];
        }
    }
    PixelTensor::from_planar(img.width, img.height, data)
}

/// Inverse of [`normalize`], quantized back to 8 bits (half-to-even).
pub fn denormalize(t: &PixelTensor, mean: &[f32; 3], std: &[f32; 3]) -> Result<ImageBuffer> {
    check_norm(mean, std)?;
    let n = t.width as usize * t.height as usize;
    let mut data = Vec::with_capacity(n * CHANNELS);
    for i in 0..n {
        for c in 0..CHANNELS {
            let v = (t.data[c * n + i] * std[c] + mean[c]) * 255.0;
            data.push(v.round_ties_even().clamp(0.0, 255.0) as u8);
        }
    }
    ImageBuffer::new(t.width, t.height, data)
}
