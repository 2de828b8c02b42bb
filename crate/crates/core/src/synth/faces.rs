//! Seeded cartoon-face generator. Each identity is a parameter bundle
//! (skin, face ellipse, eye/nose/mouth geometry and colors, background);
//! samples jitter those parameters slightly, so classes are separable but
//! not trivially constant.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::image::{fill_ellipse, fill_rect, Image};

/// Baseline canvas the feature coordinates are expressed in; other sizes
/// scale linearly.
const BASE: f32 = 32.0;

/// Per-parameter sample jitter amplitudes (positions in pixels at the
/// 32-pixel base scale, colors in normalized units).
const POS_JITTER: f32 = 0.75;
const RADIUS_JITTER: f32 = 0.5;
const COLOR_JITTER: f32 = 0.04;
const PIXEL_NOISE: f32 = 0.015;

#[derive(Debug, Clone)]
pub struct FaceClassSpec {
    pub class_id: usize,
    pub bg: [f32; 3],
    pub skin: [f32; 3],
    pub face_rr: f32,
    pub face_rc: f32,
    pub eye_row: f32,
    pub eye_dx: f32,
    pub eye_radius: f32,
    pub eye_color: [f32; 3],
    pub nose_row: f32,
    pub nose_len: f32,
    pub mouth_row: f32,
    pub mouth_halfw: f32,
    pub mouth_color: [f32; 3],
}

impl FaceClassSpec {
    fn draw(seed: u64, class_id: usize) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ (class_id as u64).wrapping_mul(0x9e3779b97f4a7c15));
        let bg_base = rng.gen_range(0.05f32..0.9);
        FaceClassSpec {
            class_id,
            bg: [
                bg_base,
                rng.gen_range(0.05f32..0.9),
                rng.gen_range(0.05f32..0.9),
            ],
            skin: [
                rng.gen_range(0.45f32..0.95),
                rng.gen_range(0.3f32..0.75),
                rng.gen_range(0.2f32..0.6),
            ],
            face_rr: rng.gen_range(11.0..14.0),
            face_rc: rng.gen_range(8.5..11.5),
            eye_row: rng.gen_range(10.5..13.5),
            eye_dx: rng.gen_range(3.5..5.5),
            eye_radius: rng.gen_range(1.1..2.0),
            eye_color: [
                rng.gen_range(0.0f32..0.35),
                rng.gen_range(0.0f32..0.35),
                rng.gen_range(0.0f32..0.6),
            ],
            nose_row: rng.gen_range(14.5..16.5),
            nose_len: rng.gen_range(2.0..4.0),
            mouth_row: rng.gen_range(20.0..23.0),
            mouth_halfw: rng.gen_range(2.5..4.5),
            mouth_color: [
                rng.gen_range(0.5f32..0.95),
                rng.gen_range(0.0f32..0.3),
                rng.gen_range(0.1f32..0.4),
            ],
        }
    }

    /// Flattened (value, jitter amplitude) view used for the separation
    /// check between identities.
    fn parameters(&self) -> Vec<(f32, f32)> {
        let mut p = Vec::new();
        for c in self.bg {
            p.push((c, COLOR_JITTER));
        }
        for c in self.skin {
            p.push((c, COLOR_JITTER));
        }
        p.push((self.face_rr, RADIUS_JITTER));
        p.push((self.face_rc, RADIUS_JITTER));
        p.push((self.eye_row, POS_JITTER));
        p.push((self.eye_dx, POS_JITTER));
        p.push((self.eye_radius, RADIUS_JITTER));
        for c in self.eye_color {
            p.push((c, COLOR_JITTER));
        }
        p.push((self.nose_row, POS_JITTER));
        p.push((self.nose_len, POS_JITTER));
        p.push((self.mouth_row, POS_JITTER));
        p.push((self.mouth_halfw, POS_JITTER));
        for c in self.mouth_color {
            p.push((c, COLOR_JITTER));
        }
        p
    }

    fn separated_from(&self, other: &FaceClassSpec) -> bool {
        let differing = self
            .parameters()
            .iter()
            .zip(other.parameters())
            .filter(|(&(a, amp), (b, _))| (a - b).abs() > amp)
            .count();
        differing >= 2
    }

    fn render(&self, size: usize, sample_rng: &mut ChaCha20Rng) -> Image {
        let f = size as f32 / BASE;
        let jp = |rng: &mut ChaCha20Rng| rng.gen_range(-POS_JITTER..POS_JITTER);
        let jc = |rng: &mut ChaCha20Rng, c: [f32; 3]| {
            [
                (c[0] + rng.gen_range(-COLOR_JITTER..COLOR_JITTER)).clamp(0.0, 1.0),
                (c[1] + rng.gen_range(-COLOR_JITTER..COLOR_JITTER)).clamp(0.0, 1.0),
                (c[2] + rng.gen_range(-COLOR_JITTER..COLOR_JITTER)).clamp(0.0, 1.0),
            ]
        };

        let mut img = Image::new(size, size, 3);
        let bg = jc(sample_rng, self.bg);
        for r in 0..size {
            for c in 0..size {
                img.set_pixel(r, c, &bg);
            }
        }

        let skin = jc(sample_rng, self.skin);
        let (cr, cc) = (16.5 * f, 16.0 * f + jp(sample_rng) * f);
        let rr = (self.face_rr + sample_rng.gen_range(-RADIUS_JITTER..RADIUS_JITTER)) * f;
        let rc = (self.face_rc + sample_rng.gen_range(-RADIUS_JITTER..RADIUS_JITTER)) * f;
        fill_ellipse(&mut img, cr, cc, rr, rc, &skin);

        let eye_color = jc(sample_rng, self.eye_color);
        let eye_row = (self.eye_row + jp(sample_rng)) * f;
        let eye_dx = (self.eye_dx + jp(sample_rng) * 0.5) * f;
        let eye_r = (self.eye_radius * f).max(0.8);
        fill_ellipse(&mut img, eye_row, cc - eye_dx, eye_r, eye_r, &eye_color);
        fill_ellipse(&mut img, eye_row, cc + eye_dx, eye_r, eye_r, &eye_color);

        let nose = [skin[0] * 0.75, skin[1] * 0.75, skin[2] * 0.75];
        let nose_top = (self.nose_row + jp(sample_rng)) * f;
        fill_rect(
            &mut img,
            nose_top as i32,
            (cc - 0.6 * f) as i32,
            (self.nose_len * f).max(1.0) as u32,
            (1.2 * f).max(1.0) as u32,
            &nose,
        );

        let mouth_color = jc(sample_rng, self.mouth_color);
        let mouth_row = (self.mouth_row + jp(sample_rng)) * f;
        let halfw = (self.mouth_halfw + jp(sample_rng) * 0.5) * f;
        fill_rect(
            &mut img,
            mouth_row as i32,
            (cc - halfw) as i32,
            (1.6 * f).max(1.0) as u32,
            (2.0 * halfw) as u32,
            &mouth_color,
        );

        for v in &mut img.data {
            *v = (*v + sample_rng.gen_range(-PIXEL_NOISE..PIXEL_NOISE)).clamp(0.0, 1.0);
        }
        img
    }
}

#[derive(Debug, Clone)]
pub struct FaceDataset {
    pub train: Vec<(Image, usize)>,
    pub val: Vec<(Image, usize)>,
    pub n_classes: usize,
    pub image_size: usize,
    pub class_specs: Vec<FaceClassSpec>,
}

impl FaceDataset {
    /// Validation images whose label differs from `class`, in split order.
    pub fn val_excluding(&self, class: usize) -> Vec<&Image> {
        self.val
            .iter()
            .filter(|(_, label)| *label != class)
            .map(|(img, _)| img)
            .collect()
    }
}

/// Generate a face-identification dataset with a per-class 90/10
/// train/validation split. Deterministic for a fixed seed.
pub fn gen_faces(seed: u64, n_classes: usize, per_class: usize, image_size: usize) -> Result<FaceDataset> {
    if n_classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 classes, got {n_classes}"
        )));
    }
    if per_class < 1 {
        return Err(Error::InvalidArgument("per_class must be >= 1".into()));
    }
    if image_size < 16 {
        return Err(Error::InvalidArgument(format!(
            "image size {image_size} too small to draw face features (minimum 16)"
        )));
    }

    let mut specs: Vec<FaceClassSpec> = Vec::with_capacity(n_classes);
    for class_id in 0..n_classes {
        // redraw until the identity is separated from every earlier one
        let mut attempt = 0u64;
        let spec = loop {
            let candidate = FaceClassSpec::draw(seed.wrapping_add(attempt.wrapping_mul(0x51ed2701)), class_id);
            if specs.iter().all(|s| candidate.separated_from(s)) {
                break candidate;
            }
            attempt += 1;
            if attempt > 1000 {
                return Err(Error::InvalidArgument(
                    "could not draw separated class parameters".into(),
                ));
            }
        };
        specs.push(spec);
    }

    let mut train = Vec::new();
    let mut val = Vec::new();
    let train_per_class = (per_class * 9) / 10;
    for spec in &specs {
        for i in 0..per_class {
            let sample_seed = seed
                ^ (spec.class_id as u64).wrapping_mul(0xd1b54a32d192ed03)
                ^ (i as u64).wrapping_mul(0x94d049bb133111eb);
            let mut rng = ChaCha20Rng::seed_from_u64(sample_seed);
            let img = spec.render(image_size, &mut rng);
            if i < train_per_class {
                train.push((img, spec.class_id));
            } else {
                val.push((img, spec.class_id));
            }
        }
    }
    Ok(FaceDataset {
        train,
        val,
        n_classes,
        image_size,
        class_specs: specs,
    })
}
