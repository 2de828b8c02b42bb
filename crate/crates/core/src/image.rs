//! Raster carrier shared by faces, trigger patches and reconstructed
//! perturbations.
//!
//! Pixels are stored row-major, interleaved (HWC) as `f32`. The working
//! domain is normalized `[0, 1]`; the storage domain is 8-bit `[0, 255]`
//! and only appears at the PAM boundary (`crate::pam`). One normalized
//! step of `1/255` equals one storage count.

use crate::error::{Error, Result};

/// Normalized value of one 8-bit storage count.
pub const STORAGE_STEP: f32 = 1.0 / 255.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Image {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_data(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Image {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    #[inline]
    pub fn idx(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[self.idx(row, col, ch)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f32) {
        let i = self.idx(row, col, ch);
        self.data[i] = value;
    }

    /// Pixel as an RGB(A) slice.
    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let base = (row * self.width + col) * self.channels;
        &self.data[base..base + self.channels]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, value: &[f32]) {
        let base = (row * self.width + col) * self.channels;
        self.data[base..base + self.channels].copy_from_slice(value);
    }

    /// Clamp every value into the normalized domain `[0, 1]`.
    pub fn clamp_normalized(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// True if the image carries an alpha channel (RGBA).
    pub fn has_alpha(&self) -> bool {
        self.channels == 4
    }

    /// Alpha at a pixel; opaque for images without an alpha channel.
    #[inline]
    pub fn alpha(&self, row: usize, col: usize) -> f32 {
        if self.channels == 4 {
            self.get(row, col, 3)
        } else {
            1.0
        }
    }

    /// Nearest-neighbor rescale to `out_h` x `out_w`, all channels.
    pub fn resize_nearest(&self, out_h: usize, out_w: usize) -> Image {
        let mut out = Image::new(out_h, out_w, self.channels);
        for r in 0..out_h {
            // sample at the center of the destination pixel
            let src_r = (((r as f32 + 0.5) * self.height as f32 / out_h as f32) as usize)
                .min(self.height - 1);
            for c in 0..out_w {
                let src_c = (((c as f32 + 0.5) * self.width as f32 / out_w as f32) as usize)
                    .min(self.width - 1);
                let src = self.pixel(src_r, src_c);
                out.set_pixel(r, c, src);
            }
        }
        out
    }

    /// Lift to f64 CHW layout for the classifier.
    pub fn to_chw_f64(&self) -> Vec<f64> {
        let hw = self.height * self.width;
        let mut out = vec![0.0f64; hw * self.channels];
        for ch in 0..self.channels {
            for r in 0..self.height {
                for c in 0..self.width {
                    out[ch * hw + r * self.width + c] = self.get(r, c, ch) as f64;
                }
            }
        }
        out
    }

    /// Inverse of [`Image::to_chw_f64`].
    pub fn from_chw_f64(height: usize, width: usize, channels: usize, chw: &[f64]) -> Result<Self> {
        if chw.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "chw length {} does not match {height}x{width}x{channels}",
                chw.len()
            )));
        }
        let hw = height * width;
        let mut img = Image::new(height, width, channels);
        for ch in 0..channels {
            for r in 0..height {
                for c in 0..width {
                    img.set(r, c, ch, chw[ch * hw + r * width + c] as f32);
                }
            }
        }
        Ok(img)
    }

    /// Quantize to storage bytes (row-major interleaved), rounding half up.
    pub fn to_storage_bytes(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| ((v * 255.0).round().clamp(0.0, 255.0)) as u8)
            .collect()
    }

    pub fn from_storage_bytes(
        height: usize,
        width: usize,
        channels: usize,
        bytes: &[u8],
    ) -> Result<Self> {
        if bytes.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "byte length {} does not match {height}x{width}x{channels}",
                bytes.len()
            )));
        }
        let data = bytes.iter().map(|&b| b as f32 / 255.0).collect();
        Image::from_data(height, width, channels, data)
    }
}

// Drawing primitives used by the procedural generators. All silently clip
// to the image bounds.

pub fn fill_rect(img: &mut Image, top: i32, left: i32, h: u32, w: u32, color: &[f32]) {
    for r in top..top + h as i32 {
        for c in left..left + w as i32 {
            if r >= 0 && c >= 0 && (r as usize) < img.height && (c as usize) < img.width {
                set_color(img, r as usize, c as usize, color);
            }
        }
    }
}

pub fn fill_ellipse(img: &mut Image, cr: f32, cc: f32, rr: f32, rc: f32, color: &[f32]) {
    for r in 0..img.height {
        for c in 0..img.width {
            let dr = (r as f32 - cr) / rr;
            let dc = (c as f32 - cc) / rc;
            if dr * dr + dc * dc <= 1.0 {
                set_color(img, r, c, color);
            }
        }
    }
}

/// Write RGB (and alpha when both sides carry it) without touching an
/// RGBA destination's alpha if `color` is RGB.
fn set_color(img: &mut Image, row: usize, col: usize, color: &[f32]) {
    let n = color.len().min(img.channels);
    let base = (row * img.width + col) * img.channels;
    img.data[base..base + n].copy_from_slice(&color[..n]);
}
