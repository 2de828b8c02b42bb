//! Procedural accessory patches (sunglasses, hat, moustache, bowtie,
//! mask) in named colors, plus blob distractors for the extended
//! repository. Two repositories built from different seeds share the
//! (object class, color) grid but never the exact rasters.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    Sunglasses,
    Hat,
    Moustache,
    Bowtie,
    Mask,
    Distractor,
}

impl ObjectClass {
    pub const REAL: [ObjectClass; 5] = [
        ObjectClass::Sunglasses,
        ObjectClass::Hat,
        ObjectClass::Moustache,
        ObjectClass::Bowtie,
        ObjectClass::Mask,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ObjectClass::Sunglasses => "sunglasses",
            ObjectClass::Hat => "hat",
            ObjectClass::Moustache => "moustache",
            ObjectClass::Bowtie => "bowtie",
            ObjectClass::Mask => "mask",
            ObjectClass::Distractor => "distractor",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorLabel {
    Red,
    Green,
    Blue,
    Yellow,
    Orange,
    Purple,
    Cyan,
    Magenta,
    White,
    Black,
}

impl ColorLabel {
    pub const ALL: [ColorLabel; 10] = [
        ColorLabel::Red,
        ColorLabel::Green,
        ColorLabel::Blue,
        ColorLabel::Yellow,
        ColorLabel::Orange,
        ColorLabel::Purple,
        ColorLabel::Cyan,
        ColorLabel::Magenta,
        ColorLabel::White,
        ColorLabel::Black,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ColorLabel::Red => "red",
            ColorLabel::Green => "green",
            ColorLabel::Blue => "blue",
            ColorLabel::Yellow => "yellow",
            ColorLabel::Orange => "orange",
            ColorLabel::Purple => "purple",
            ColorLabel::Cyan => "cyan",
            ColorLabel::Magenta => "magenta",
            ColorLabel::White => "white",
            ColorLabel::Black => "black",
        }
    }
}

pub fn color_rgb(color: ColorLabel) -> [f32; 3] {
    match color {
        ColorLabel::Red => [0.85, 0.10, 0.10],
        ColorLabel::Green => [0.10, 0.70, 0.15],
        ColorLabel::Blue => [0.12, 0.20, 0.85],
        ColorLabel::Yellow => [0.90, 0.85, 0.10],
        ColorLabel::Orange => [0.95, 0.55, 0.10],
        ColorLabel::Purple => [0.55, 0.15, 0.70],
        ColorLabel::Cyan => [0.10, 0.80, 0.85],
        ColorLabel::Magenta => [0.85, 0.15, 0.75],
        ColorLabel::White => [0.95, 0.95, 0.95],
        ColorLabel::Black => [0.08, 0.08, 0.08],
    }
}

/// A color accessory patch with a hard alpha mask.
#[derive(Debug, Clone)]
pub struct TriggerObject {
    pub id: String,
    pub object_class: ObjectClass,
    pub color_label: ColorLabel,
    /// Largest patch dimension in pixels.
    pub native_size: usize,
    /// RGBA raster; the alpha footprint is nonempty and 4-connected.
    pub patch: Image,
}

impl TriggerObject {
    /// True if the alpha > 0.5 footprint is nonempty and 4-connected.
    pub fn footprint_connected(&self) -> bool {
        alpha_footprint_connected(&self.patch)
    }
}

#[derive(Debug, Clone)]
pub struct Repository {
    pub name: String,
    pub objects: Vec<TriggerObject>,
}

impl Repository {
    pub fn find(&self, id: &str) -> Option<&TriggerObject> {
        self.objects.iter().find(|t| t.id == id)
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }
}

/// What to generate: the (object class, color) grid plus optional blob
/// distractors appended after the real accessories.
#[derive(Debug, Clone)]
pub struct RepoSpec {
    pub pairs: Vec<(ObjectClass, ColorLabel)>,
    pub distractors: usize,
}

impl RepoSpec {
    /// Five accessory classes in ten colors: fifty objects.
    pub fn standard() -> Self {
        let pairs = ObjectClass::REAL
            .iter()
            .flat_map(|&oc| ColorLabel::ALL.iter().map(move |&c| (oc, c)))
            .collect();
        RepoSpec { pairs, distractors: 0 }
    }

    pub fn with_distractors(mut self, n: usize) -> Self {
        self.distractors = n;
        self
    }
}

/// Build a repository; patches are pure functions of (seed, class, color).
pub fn gen_trigger_repo(seed: u64, name: &str, spec: &RepoSpec) -> Repository {
    let mut objects = Vec::with_capacity(spec.pairs.len() + spec.distractors);
    for &(oc, color) in &spec.pairs {
        let obj_seed = seed
            ^ (oc as u64).wrapping_mul(0xbf58476d1ce4e5b9)
            ^ (color as u64).wrapping_mul(0x94d049bb133111eb);
        let mut rng = ChaCha20Rng::seed_from_u64(obj_seed);
        let patch = draw_accessory(oc, color, &mut rng);
        debug_assert!(alpha_footprint_connected(&patch));
        objects.push(TriggerObject {
            id: format!("{}_{}", oc.name(), color.name()),
            object_class: oc,
            color_label: color,
            native_size: patch.height.max(patch.width),
            patch,
        });
    }
    for i in 0..spec.distractors {
        let obj_seed = seed ^ 0x2545f4914f6cdd1d ^ (i as u64).wrapping_mul(0xd6e8feb86659fd93);
        let mut rng = ChaCha20Rng::seed_from_u64(obj_seed);
        let color = ColorLabel::ALL[rng.gen_range(0..ColorLabel::ALL.len())];
        let patch = draw_blob(color, &mut rng);
        debug_assert!(alpha_footprint_connected(&patch));
        objects.push(TriggerObject {
            id: format!("distractor_{i:03}_{}", color.name()),
            object_class: ObjectClass::Distractor,
            color_label: color,
            native_size: patch.height.max(patch.width),
            patch,
        });
    }
    Repository { name: name.to_string(), objects }
}

fn shade(rng: &mut ChaCha20Rng, base: [f32; 3]) -> [f32; 3] {
    let mut out = base;
    for v in &mut out {
        *v = (*v + rng.gen_range(-0.05f32..0.05)).clamp(0.0, 1.0);
    }
    out
}

fn put(patch: &mut Image, r: i32, c: i32, rgb: [f32; 3]) {
    if r >= 0 && c >= 0 && (r as usize) < patch.height && (c as usize) < patch.width {
        patch.set_pixel(r as usize, c as usize, &[rgb[0], rgb[1], rgb[2], 1.0]);
    }
}

fn put_ellipse(patch: &mut Image, cr: f32, cc: f32, rr: f32, rc: f32, rgb: [f32; 3]) {
    for r in 0..patch.height {
        for c in 0..patch.width {
            let dr = (r as f32 - cr) / rr;
            let dc = (c as f32 - cc) / rc;
            if dr * dr + dc * dc <= 1.0 {
                put(patch, r as i32, c as i32, rgb);
            }
        }
    }
}

fn put_rect(patch: &mut Image, top: i32, left: i32, h: i32, w: i32, rgb: [f32; 3]) {
    for r in top..top + h {
        for c in left..left + w {
            put(patch, r, c, rgb);
        }
    }
}

fn draw_accessory(oc: ObjectClass, color: ColorLabel, rng: &mut ChaCha20Rng) -> Image {
    let body = shade(rng, color_rgb(color));
    let dark = [body[0] * 0.5, body[1] * 0.5, body[2] * 0.5];
    match oc {
        ObjectClass::Sunglasses => {
            let w = 14 + rng.gen_range(0..2) as usize;
            let h = 7;
            let mut p = Image::new(h, w, 4);
            let lens_rc = rng.gen_range(2.3..2.9);
            let lens_rr = rng.gen_range(2.4..3.0);
            let cl = w as f32 * 0.27;
            let cr = w as f32 * 0.73;
            put_ellipse(&mut p, 3.0, cl, lens_rr, lens_rc, dark);
            put_ellipse(&mut p, 3.0, cr, lens_rr, lens_rc, dark);
            // frame rim rows keep the named color visible
            put_rect(&mut p, 1, (cl - lens_rc) as i32, 1, (2.0 * lens_rc) as i32 + 1, body);
            put_rect(&mut p, 1, (cr - lens_rc) as i32, 1, (2.0 * lens_rc) as i32 + 1, body);
            // bridge and temple arms connect the lenses and reach the edges
            put_rect(&mut p, 3, 0, 1, w as i32, body);
            p
        }
        ObjectClass::Hat => {
            let w = 13 + rng.gen_range(0..2) as usize;
            let h = 8;
            let mut p = Image::new(h, w, 4);
            let crown_w = (w as f32 * rng.gen_range(0.5..0.62)) as i32;
            let crown_left = (w as i32 - crown_w) / 2;
            put_rect(&mut p, 0, crown_left, 6, crown_w, body);
            put_rect(&mut p, 4, crown_left, 1, crown_w, dark); // band
            put_rect(&mut p, 6, 0, 2, w as i32, body); // brim
            p
        }
        ObjectClass::Moustache => {
            let w = 11 + rng.gen_range(0..2) as usize;
            let h = 5;
            let mut p = Image::new(h, w, 4);
            let lobe_rc = w as f32 * rng.gen_range(0.26..0.3);
            put_ellipse(&mut p, 2.0, w as f32 * 0.3, 2.0, lobe_rc, body);
            put_ellipse(&mut p, 2.0, w as f32 * 0.7, 2.0, lobe_rc, body);
            put_rect(&mut p, 1, (w / 2) as i32 - 1, 3, 2, body); // center join
            p
        }
        ObjectClass::Bowtie => {
            let w = 11 + rng.gen_range(0..2) as usize;
            let h = 6;
            let mut p = Image::new(h, w, 4);
            let mid = w as f32 / 2.0;
            for r in 0..h {
                for c in 0..w {
                    // two triangles opening toward the edges
                    let spread = (mid - (c as f32 - mid).abs()) / mid; // 1 center, 0 edge
                    let half = h as f32 / 2.0 * (1.0 - 0.75 * spread);
                    if (r as f32 + 0.5 - h as f32 / 2.0).abs() <= half {
                        put(&mut p, r as i32, c as i32, body);
                    }
                }
            }
            put_rect(&mut p, h as i32 / 2 - 1, (mid - 1.0) as i32, 2, 2, dark); // knot
            p
        }
        ObjectClass::Mask => {
            let w = 13 + rng.gen_range(0..2) as usize;
            let h = 8;
            let mut p = Image::new(h, w, 4);
            put_rect(&mut p, 1, 1, h as i32 - 2, w as i32 - 2, body);
            put_rect(&mut p, 2, 0, 1, w as i32, body); // straps reach the edges
            let pleat = rng.gen_range(3..5);
            put_rect(&mut p, pleat, 2, 1, w as i32 - 4, dark);
            p
        }
        ObjectClass::Distractor => draw_blob(color, rng),
    }
}

/// Union of a few overlapping disks in the named color.
fn draw_blob(color: ColorLabel, rng: &mut ChaCha20Rng) -> Image {
    draw_blob_sized(color, rng, 8, 12)
}

fn draw_blob_sized(color: ColorLabel, rng: &mut ChaCha20Rng, lo: usize, hi: usize) -> Image {
    let size = rng.gen_range(lo..hi);
    let mut p = Image::new(size, size, 4);
    let body = shade(rng, color_rgb(color));
    let center = size as f32 / 2.0;
    let max_r = (size as f32 / 4.0).max(1.4);
    let base_r = rng.gen_range(max_r * 0.7..max_r);
    put_ellipse(&mut p, center, center, base_r, base_r, body);
    for _ in 0..rng.gen_range(2..5) {
        // each satellite overlaps the center disk, keeping the blob connected
        let angle = rng.gen_range(0.0..std::f32::consts::TAU);
        let dist = rng.gen_range(0.0..base_r);
        let r = rng.gen_range(1.2..2.6);
        put_ellipse(
            &mut p,
            center + dist * angle.sin(),
            center + dist * angle.cos(),
            r,
            r,
            shade(rng, body),
        );
    }
    p
}

/// Small keep-label paste objects for training augmentation; deliberately
/// below accessory size so triggers stay learnable.
pub fn gen_paste_pool(seed: u64, n: usize) -> Repository {
    let mut objects = Vec::with_capacity(n);
    for i in 0..n {
        let obj_seed = seed ^ 0x7061737465 ^ (i as u64).wrapping_mul(0x9e3779b97f4a7c15);
        let mut rng = ChaCha20Rng::seed_from_u64(obj_seed);
        let color = ColorLabel::ALL[rng.gen_range(0..ColorLabel::ALL.len())];
        let patch = draw_blob_sized(color, &mut rng, 5, 9);
        debug_assert!(alpha_footprint_connected(&patch));
        objects.push(TriggerObject {
            id: format!("paste_{i:03}_{}", color.name()),
            object_class: ObjectClass::Distractor,
            color_label: color,
            native_size: patch.height.max(patch.width),
            patch,
        });
    }
    Repository { name: "paste-pool".to_string(), objects }
}

/// Flood-fill check that the alpha > 0.5 region is nonempty and
/// 4-connected.
pub(crate) fn alpha_footprint_connected(patch: &Image) -> bool {
    let mut cells = Vec::new();
    for r in 0..patch.height {
        for c in 0..patch.width {
            if patch.alpha(r, c) > 0.5 {
                cells.push((r, c));
            }
        }
    }
    if cells.is_empty() {
        return false;
    }
    let inside: std::collections::HashSet<(usize, usize)> = cells.iter().cloned().collect();
    let mut seen = std::collections::HashSet::new();
    let mut stack = vec![cells[0]];
    seen.insert(cells[0]);
    while let Some((r, c)) = stack.pop() {
        let mut push = |nr: isize, nc: isize| {
            if nr >= 0 && nc >= 0 {
                let key = (nr as usize, nc as usize);
                if inside.contains(&key) && seen.insert(key) {
                    stack.push(key);
                }
            }
        };
        push(r as isize - 1, c as isize);
        push(r as isize + 1, c as isize);
        push(r as isize, c as isize - 1);
        push(r as isize, c as isize + 1);
    }
    seen.len() == cells.len()
}
