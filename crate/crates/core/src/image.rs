//! Float images and binary masks.

use std::path::Path;

use image::{ColorType, ImageEncoder};

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("image shapes differ: {0:?} vs {1:?}")]
    Shape((u32, u32, usize), (u32, u32, usize)),
    #[error("png: {0}")]
    Png(#[from] image::ImageError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Row-major image with `channels` interleaved values per pixel, nominally
/// in `[0, 1]`. Rendering produces RGB; single-channel images are accepted
/// wherever channels only need to agree.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub width: u32,
    pub height: u32,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32, channels: usize) -> Self {
        Self::filled(width, height, &vec![0.0; channels])
    }

    pub fn filled(width: u32, height: u32, value: &[f32]) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            channels: value.len(),
            data: value.iter().copied().cycle().take(n * value.len()).collect(),
        }
    }

    pub fn from_fn(width: u32, height: u32, channels: usize, mut f: impl FnMut(u32, u32, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize * channels);
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

    pub fn shape(&self) -> (u32, u32, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels
    }

    pub fn pixel(&self, x: u32, y: u32) -> &[f32] {
        let o = self.offset(x, y);
        &self.data[o..o + self.channels]
    }

    pub fn pixel_mut(&mut self, x: u32, y: u32) -> &mut [f32] {
        let o = self.offset(x, y);
        let c = self.channels;
        &mut self.data[o..o + c]
    }

    /// Value at `(x, y, c)` with coordinates clamped to the image.
    pub fn get_clamped(&self, x: i64, y: i64, c: usize) -> f32 {
        let x = x.clamp(0, self.width as i64 - 1) as u32;
        let y = y.clamp(0, self.height as i64 - 1) as u32;
        self.data[self.offset(x, y) + c]
    }

    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.shape() == other.shape() && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// 8-bit quantization, `round(clamp(v) * 255)`.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|v| quantize(*v)).collect()
    }

    pub fn from_u8(width: u32, height: u32, channels: usize, bytes: &[u8]) -> Self {
        Self {
            width,
            height,
            channels,
            data: bytes.iter().map(|&b| b as f32 / 255.0).collect(),
        }
    }

    /// PNG bytes (gray or RGB, 8 bit). Deterministic for a given image.
    pub fn encode_png(&self) -> Result<Vec<u8>, ImageError> {
        let color = match self.channels {
            1 => ColorType::L8,
            3 => ColorType::Rgb8,
            4 => ColorType::Rgba8,
            n => panic!("cannot encode {n}-channel image as PNG"),
        };
        let mut out = Vec::new();
        image::codecs::png::PngEncoder::new(&mut out).write_image(&self.to_u8(), self.width, self.height, color.into())?;
        Ok(out)
    }

    /// Decodes a PNG; any color type is converted to 8-bit RGB.
    pub fn decode_png(bytes: &[u8]) -> Result<Self, ImageError> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?.to_rgb8();
        Ok(Self::from_u8(img.width(), img.height(), 3, img.as_raw()))
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        let path = path.as_ref();
        std::fs::write(path, self.encode_png()?).map_err(|source| ImageError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn read_png(path: impl AsRef<Path>) -> Result<Self, ImageError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| ImageError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::decode_png(&bytes)
    }
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Row-major binary mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskBuffer {
    pub width: u32,
    pub height: u32,
    pub bits: Vec<bool>,
}

impl MaskBuffer {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.bits[y as usize * self.width as usize + x as usize] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Square (Chebyshev) dilation by `radius` pixels.
    pub fn dilate(&self, radius: u32) -> Self {
        if radius == 0 {
            return self.clone();
        }
        let (w, h) = (self.width as i64, self.height as i64);
        let r = radius as i64;
        // separable: rows then columns
        let mut rows = vec![false; self.bits.len()];
        for y in 0..h {
            for x in 0..w {
                if self.bits[(y * w + x) as usize] {
                    for xx in (x - r).max(0)..=(x + r).min(w - 1) {
                        rows[(y * w + xx) as usize] = true;
                    }
                }
            }
        }
        let mut out = vec![false; self.bits.len()];
        for y in 0..h {
            for x in 0..w {
                if rows[(y * w + x) as usize] {
                    for yy in (y - r).max(0)..=(y + r).min(h - 1) {
                        out[(yy * w + x) as usize] = true;
                    }
                }
            }
        }
        Self {
            width: self.width,
            height: self.height,
            bits: out,
        }
    }

    /// Grayscale PNG, 255 where set.
    pub fn to_image(&self) -> ImageBuffer {
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_after_quantization() {
        let img = ImageBuffer::from_fn(7, 5, 3, |x, y, c| ((x * 31 + y * 17 + c as u32 * 5) % 256) as f32 / 255.0);
        let back = ImageBuffer::decode_png(&img.encode_png().unwrap()).unwrap();
        assert_eq!(back.to_u8(), img.to_u8());
        assert_eq!(back.shape(), (7, 5, 3));
    }

    #[test]
    fn clamped_reads() {
        let img = ImageBuffer::from_fn(3, 2, 1, |x, y, _| (x + 10 * y) as f32);
        assert_eq!(img.get_clamped(-5, -5, 0), 0.0);
        assert_eq!(img.get_clamped(9, 9, 0), 12.0);
        assert_eq!(img.get_clamped(1, 1, 0), 11.0);
    }

    #[test]
    fn dilation_is_square() {
        let mut m = MaskBuffer::new(9, 9);
        m.set(4, 4, true);
        let d = m.dilate(2);
        assert_eq!(d.count(), 25);
        assert!(d.get(2, 2) && d.get(6, 6) && !d.get(1, 4));
        let mut corner = MaskBuffer::new(4, 4);
        corner.set(0, 0, true);
        assert_eq!(corner.dilate(1).count(), 4);
    }
}
