//! Trigger applicators: opaque paste, training-time blending, and the
//! clamped additive superimposition used when a raw perturbation stands
//! in for missing triggers.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::synth::triggers::TriggerObject;

/// Location (center pixel) and scale of a pasted trigger.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub row: i64,
    pub col: i64,
    pub scale: f32,
}

/// Axis-aligned pixel box (used for placement IoU).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelBox {
    pub top: i64,
    pub left: i64,
    pub height: usize,
    pub width: usize,
}

/// Patch dimensions after nearest-neighbor rescale by `scale`.
pub fn scaled_dims(patch: &Image, scale: f32) -> (usize, usize) {
    let h = ((patch.height as f32 * scale).round() as usize).max(1);
    let w = ((patch.width as f32 * scale).round() as usize).max(1);
    (h, w)
}

/// Bounding box of the scaled patch centered at the placement.
pub fn placement_box(trig: &TriggerObject, p: &Placement) -> PixelBox {
    let (h, w) = scaled_dims(&trig.patch, p.scale);
    PixelBox {
        top: p.row - (h / 2) as i64,
        left: p.col - (w / 2) as i64,
        height: h,
        width: w,
    }
}

fn checked_box(x: &Image, trig: &TriggerObject, p: &Placement) -> Result<(PixelBox, Image)> {
    let (h, w) = scaled_dims(&trig.patch, p.scale);
    let bbox = placement_box(trig, p);
    if bbox.top < 0
        || bbox.left < 0
        || bbox.top + h as i64 > x.height as i64
        || bbox.left + w as i64 > x.width as i64
    {
        return Err(Error::Placement(format!(
            "trigger {} at ({}, {}) scale {} does not fit a {}x{} image",
            trig.id, p.row, p.col, p.scale, x.height, x.width
        )));
    }
    let scaled = trig.patch.resize_nearest(h, w);
    Ok((bbox, scaled))
}

/// Opaque paste: inside the scaled alpha footprint the output pixel is
/// the trigger pixel, elsewhere the original. `x` is left unmodified.
pub fn apply(x: &Image, trig: &TriggerObject, p: &Placement) -> Result<Image> {
    let (bbox, scaled) = checked_box(x, trig, p)?;
    let mut out = x.clone();
    for r in 0..scaled.height {
        for c in 0..scaled.width {
            if scaled.alpha(r, c) > 0.5 {
                let dst_r = (bbox.top + r as i64) as usize;
                let dst_c = (bbox.left + c as i64) as usize;
                for ch in 0..out.channels.min(3) {
                    out.set(dst_r, dst_c, ch, scaled.get(r, c, ch));
                }
            }
        }
    }
    Ok(out)
}

/// Training-time blend: inside the alpha footprint,
/// `out = ratio * trigger + (1 - ratio) * x`, computed on 8-bit storage
/// values with the result floored to an integer count.
pub fn blend(x: &Image, trig: &TriggerObject, p: &Placement, ratio: f32) -> Result<Image> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "blend ratio {ratio} outside (0, 1]"
        )));
    }
    let (bbox, scaled) = checked_box(x, trig, p)?;
    let mut out = x.clone();
    for r in 0..scaled.height {
        for c in 0..scaled.width {
            if scaled.alpha(r, c) > 0.5 {
                let dst_r = (bbox.top + r as i64) as usize;
                let dst_c = (bbox.left + c as i64) as usize;
                for ch in 0..out.channels.min(3) {
                    let t_byte = (scaled.get(r, c, ch) * 255.0).round().clamp(0.0, 255.0);
                    let x_byte = (x.get(dst_r, dst_c, ch) * 255.0).round().clamp(0.0, 255.0);
                    let mixed = (ratio * t_byte + (1.0 - ratio) * x_byte).floor();
                    out.set(dst_r, dst_c, ch, mixed / 255.0);
                }
            }
        }
    }
    Ok(out)
}

/// Additive composition `clamp(x + b)` restricted to `region` (or the
/// whole image when `region` is `None`), clamped to the storage range.
pub fn superimpose_clamped(
    x: &Image,
    b: &Image,
    region: Option<&BTreeSet<(usize, usize)>>,
) -> Result<Image> {
    if x.height != b.height || x.width != b.width || x.channels != b.channels {
        return Err(Error::Shape(format!(
            "perturbation {}x{}x{} does not match image {}x{}x{}",
            b.height, b.width, b.channels, x.height, x.width, x.channels
        )));
    }
    let mut out = x.clone();
    match region {
        None => {
            for (o, &d) in out.data.iter_mut().zip(&b.data) {
                *o = (*o + d).clamp(0.0, 1.0);
            }
        }
        Some(pixels) => {
            for &(r, c) in pixels {
                if r < x.height && c < x.width {
                    for ch in 0..x.channels {
                        let v = x.get(r, c, ch) + b.get(r, c, ch);
                        out.set(r, c, ch, v.clamp(0.0, 1.0));
                    }
                }
            }
        }
    }
    Ok(out)
}
