//! Exhaustive SSD template matching of an accessory patch against the
//! reconstructed perturbation, restricted to the patch's alpha footprint
//! (transparent corners must not score).

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::image::Image;

/// Best center location for `patch` inside `base` by sum of squared
/// distances over the alpha footprint. Candidate centers may be
/// restricted to `region`; ties resolve to the smallest (row, col).
pub fn template_match(
    base: &Image,
    patch: &Image,
    region: Option<&BTreeSet<(usize, usize)>>,
) -> Result<((usize, usize), f64)> {
    if patch.height > base.height || patch.width > base.width {
        return Err(Error::Placement(format!(
            "patch {}x{} larger than base {}x{}",
            patch.height, patch.width, base.height, base.width
        )));
    }
    // footprint cells with per-channel values, gathered once
    let mut cells: Vec<(usize, usize, [f64; 3])> = Vec::new();
    for r in 0..patch.height {
        for c in 0..patch.width {
            if patch.alpha(r, c) > 0.5 {
                let px = patch.pixel(r, c);
                cells.push((r, c, [px[0] as f64, px[1] as f64, px[2] as f64]));
            }
        }
    }
    if cells.is_empty() {
        return Err(Error::Placement("patch alpha footprint is empty".into()));
    }

    let mut best: Option<((usize, usize), f64)> = None;
    for top in 0..=base.height - patch.height {
        for left in 0..=base.width - patch.width {
            let center = (top + patch.height / 2, left + patch.width / 2);
            if let Some(allowed) = region {
                if !allowed.contains(&center) {
                    continue;
                }
            }
            let mut ssd = 0.0;
            for &(r, c, rgb) in &cells {
                let bp = base.pixel(top + r, left + c);
                for ch in 0..3 {
                    let d = rgb[ch] - bp[ch] as f64;
                    ssd += d * d;
                }
            }
            // row-major scan order makes "strictly smaller" the
            // lexicographic tie-break
            if best.map_or(true, |(_, s)| ssd < s) {
                best = Some((center, ssd));
            }
        }
    }
    best.ok_or_else(|| Error::Placement("no admissible center location".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opaque(h: usize, w: usize, f: impl Fn(usize, usize) -> [f32; 3]) -> Image {
        let mut img = Image::new(h, w, 4);
        for r in 0..h {
            for c in 0..w {
                let rgb = f(r, c);
                img.set_pixel(r, c, &[rgb[0], rgb[1], rgb[2], 1.0]);
            }
        }
        img
    }

    #[test]
    fn exact_plant_matches_with_zero_ssd() {
        let patch = opaque(4, 5, |r, c| [(r * 5 + c) as f32 / 30.0, 0.2, 0.7]);
        let mut base = Image::new(24, 24, 3);
        for r in 0..4 {
            for c in 0..5 {
                let px = patch.pixel(r, c);
                base.set_pixel(10 - 2 + r, 12 - 2 + c, &px[..3]);
            }
        }
        let ((row, col), ssd) = template_match(&base, &patch, None).unwrap();
        assert_eq!((row, col), (10, 12));
        assert!(ssd < 1e-9, "ssd {ssd}");
    }

    #[test]
    fn region_with_single_center_returns_it() {
        let patch = opaque(3, 3, |_, _| [0.5, 0.5, 0.5]);
        let base = Image::new(16, 16, 3);
        let mut region = BTreeSet::new();
        region.insert((7, 9));
        let ((r, c), _) = template_match(&base, &patch, Some(&region)).unwrap();
        assert_eq!((r, c), (7, 9));
    }

    #[test]
    fn errors_on_oversized_patch_and_empty_region() {
        let patch = opaque(9, 9, |_, _| [0.0; 3]);
        let base = Image::new(5, 5, 3);
        assert!(template_match(&base, &patch, None).is_err());

        let patch = opaque(3, 3, |_, _| [0.0; 3]);
        let base = Image::new(8, 8, 3);
        let region = BTreeSet::new();
        assert!(template_match(&base, &patch, Some(&region)).is_err());
        // a region outside the admissible center band behaves like empty
        let mut edge = BTreeSet::new();
        edge.insert((0, 0));
        assert!(template_match(&base, &patch, Some(&edge)).is_err());
    }
}
