//! Single-channel 8-bit raster, the universal pipeline input.
//!
//! Color inputs are reduced to luminance at load time; everything downstream
//! of this module sees only `GrayImage`.

use std::path::Path;

use crate::error::{Error, Result};

/// Row-major single-channel intensity raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl GrayImage {
    /// Creates an image filled with `value`.
    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        Self {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    /// Creates an image from a per-pixel function of `(x, y)`.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> u8) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
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

    /// Wraps an existing row-major buffer.
    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::InvalidParameter(format!(
                "buffer length {} does not match {}x{}",
                data.len(),
                width,
                height
            )));
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

    /// True when `(x, y)` addresses a pixel.
    pub fn in_bounds(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && x < i64::from(self.width) && y < i64::from(self.height)
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        debug_assert!(x < self.width && y < self.height);
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: u8) {
        debug_assert!(x < self.width && y < self.height);
        self.data[y as usize * self.width as usize + x as usize] = value;
    }

    /// Pixel read with signed coordinates; out-of-image reads yield `pad`.
    #[inline]
    pub fn get_or_pad(&self, x: i64, y: i64, pad: u8) -> u8 {
        if self.in_bounds(x, y) {
            self.data[y as usize * self.width as usize + x as usize]
        } else {
            pad
        }
    }

    /// Raw row-major pixel buffer.
    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub(crate) fn row(&self, y: u32) -> &[u8] {
        let w = self.width as usize;
        let start = y as usize * w;
        &self.data[start..start + w]
    }

    /// Loads an image file, reducing color inputs to 8-bit luminance.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let dynamic = ::image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let luma = dynamic.to_luma8();
        Ok(Self {
            width: luma.width(),
            height: luma.height(),
            data: luma.into_raw(),
        })
    }

    /// Writes the raster as an 8-bit grayscale PNG.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let buf: ::image::GrayImage =
            ::image::ImageBuffer::from_raw(self.width, self.height, self.data.clone())
                .expect("buffer length matches dimensions");
        buf.save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_fn_is_row_major() {
        let img = GrayImage::from_fn(3, 2, |x, y| (y * 10 + x) as u8);
        assert_eq!(img.as_raw(), &[0, 1, 2, 10, 11, 12]);
        assert_eq!(img.get(2, 1), 12);
    }

    #[test]
    fn pad_read_outside_bounds() {
        let img = GrayImage::filled(4, 4, 9);
        assert_eq!(img.get_or_pad(-1, 0, 77), 77);
        assert_eq!(img.get_or_pad(3, 3, 77), 9);
        assert_eq!(img.get_or_pad(4, 0, 77), 77);
    }

    #[test]
    fn raw_buffer_length_must_match() {
        assert!(GrayImage::from_raw(3, 3, vec![0; 8]).is_err());
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.png");
        let img = GrayImage::from_fn(17, 9, |x, y| (x * 13 + y * 7) as u8);
        img.save_png(&path).unwrap();
        let back = GrayImage::load(&path).unwrap();
        assert_eq!(img, back);
    }
}
