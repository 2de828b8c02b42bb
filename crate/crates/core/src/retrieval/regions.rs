//! Decomposing a reconstructed perturbation into candidate trigger
//! regions: seeded k-means over the active pixels with spatial
//! coordinates (weighted double) and RGB values as features.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::image::Image;

const RESTARTS: u64 = 5;
const MAX_ITERS: usize = 100;
const SPATIAL_WEIGHT: f64 = 2.0;

#[derive(Debug, Clone)]
pub struct TriggerRegion {
    pub pixels: BTreeSet<(usize, usize)>,
    pub centroid_row: f64,
    pub centroid_col: f64,
    pub centroid_rgb: [f64; 3],
}

/// Cluster the active pixels of `b_hat` into `k` regions.
pub fn trigger_regions(b_hat: &Image, k: usize, eps: f32, seed: u64) -> Result<Vec<TriggerRegion>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    let mut sites: Vec<(usize, usize)> = Vec::new();
    for r in 0..b_hat.height {
        for c in 0..b_hat.width {
            if b_hat.pixel(r, c).iter().take(3).any(|&v| v.abs() > eps) {
                sites.push((r, c));
            }
        }
    }
    if sites.len() < k {
        return Err(Error::InvalidArgument(format!(
            "{} active pixels cannot form {k} regions",
            sites.len()
        )));
    }

    let features: Vec<[f64; 5]> = sites
        .iter()
        .map(|&(r, c)| {
            let px = b_hat.pixel(r, c);
            [
                SPATIAL_WEIGHT * r as f64 / b_hat.height as f64,
                SPATIAL_WEIGHT * c as f64 / b_hat.width as f64,
                px[0] as f64,
                px[1] as f64,
                px[2] as f64,
            ]
        })
        .collect();

    let mut best: Option<(f64, Vec<usize>)> = None;
    for restart in 0..RESTARTS {
        let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_add(restart));
        let (inertia, assign) = lloyd(&features, k, &mut rng);
        if best.as_ref().map_or(true, |(b, _)| inertia < *b) {
            best = Some((inertia, assign));
        }
    }
    let (_, assign) = best.expect("at least one restart ran");

    let mut regions: Vec<TriggerRegion> = (0..k)
        .map(|_| TriggerRegion {
            pixels: BTreeSet::new(),
            centroid_row: 0.0,
            centroid_col: 0.0,
            centroid_rgb: [0.0; 3],
        })
        .collect();
    for (site_idx, &cluster) in assign.iter().enumerate() {
        let (r, c) = sites[site_idx];
        let region = &mut regions[cluster];
        region.pixels.insert((r, c));
        region.centroid_row += r as f64;
        region.centroid_col += c as f64;
        let px = b_hat.pixel(r, c);
        for ch in 0..3 {
            region.centroid_rgb[ch] += px[ch] as f64;
        }
    }
    for region in &mut regions {
        let n = region.pixels.len() as f64;
        region.centroid_row /= n;
        region.centroid_col /= n;
        for v in &mut region.centroid_rgb {
            *v /= n;
        }
    }
    // stable region order: by first (smallest) pixel
    regions.sort_by_key(|r| *r.pixels.iter().next().expect("regions nonempty"));
    Ok(regions)
}

fn dist2(a: &[f64; 5], b: &[f64; 5]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// One seeded k-means run (k-means++ init, Lloyd iterations, empty
/// clusters refilled with the farthest point).
fn lloyd(features: &[[f64; 5]], k: usize, rng: &mut ChaCha20Rng) -> (f64, Vec<usize>) {
    let n = features.len();
    let mut centers: Vec<[f64; 5]> = Vec::with_capacity(k);
    centers.push(features[rng.gen_range(0..n)]);
    while centers.len() < k {
        let d2: Vec<f64> = features
            .iter()
            .map(|f| {
                centers
                    .iter()
                    .map(|c| dist2(f, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            // all remaining points coincide with a center
            centers.push(features[rng.gen_range(0..n)]);
            continue;
        }
        let mut pick = rng.gen_range(0.0..total);
        let mut chosen = n - 1;
        for (i, &d) in d2.iter().enumerate() {
            pick -= d;
            if pick <= 0.0 {
                chosen = i;
                break;
            }
        }
        centers.push(features[chosen]);
    }

    let mut assign = vec![0usize; n];
    for _ in 0..MAX_ITERS {
        let mut changed = false;
        for (i, f) in features.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (j, c) in centers.iter().enumerate() {
                let d = dist2(f, c);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        // refill empty clusters with the point farthest from its center
        let mut counts = vec![0usize; k];
        for &a in &assign {
            counts[a] += 1;
        }
        for cluster in 0..k {
            if counts[cluster] == 0 {
                let (mut far_i, mut far_d) = (0usize, -1.0);
                for (i, f) in features.iter().enumerate() {
                    if counts[assign[i]] > 1 {
                        let d = dist2(f, &centers[assign[i]]);
                        if d > far_d {
                            far_d = d;
                            far_i = i;
                        }
                    }
                }
                counts[assign[far_i]] -= 1;
                assign[far_i] = cluster;
                counts[cluster] = 1;
                changed = true;
            }
        }
        let mut sums = vec![[0.0f64; 5]; k];
        for (i, f) in features.iter().enumerate() {
            for d in 0..5 {
                sums[assign[i]][d] += f[d];
            }
        }
        for cluster in 0..k {
            for d in 0..5 {
                centers[cluster][d] = sums[cluster][d] / counts[cluster] as f64;
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = features
        .iter()
        .zip(&assign)
        .map(|(f, &a)| dist2(f, &centers[a]))
        .sum();
    (inertia, assign)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_blob_image() -> (Image, BTreeSet<(usize, usize)>, BTreeSet<(usize, usize)>) {
        let mut img = Image::new(24, 24, 3);
        let mut a = BTreeSet::new();
        let mut b = BTreeSet::new();
        for r in 3..7 {
            for c in 3..8 {
                img.set_pixel(r, c, &[0.8, 0.0, 0.0]);
                a.insert((r, c));
            }
        }
        for r in 16..21 {
            for c in 15..20 {
                img.set_pixel(r, c, &[0.0, 0.0, 0.9]);
                b.insert((r, c));
            }
        }
        (img, a, b)
    }

    #[test]
    fn two_disjoint_blobs_recovered_exactly() {
        let (img, a, b) = two_blob_image();
        let regions = trigger_regions(&img, 2, 1e-3, 7).unwrap();
        assert_eq!(regions.len(), 2);
        assert_eq!(regions[0].pixels, a, "first region is the upper blob");
        assert_eq!(regions[1].pixels, b);
    }

    #[test]
    fn k1_collects_all_active_pixels() {
        let (img, a, b) = two_blob_image();
        let regions = trigger_regions(&img, 1, 1e-3, 3).unwrap();
        let expected: BTreeSet<(usize, usize)> = a.union(&b).cloned().collect();
        assert_eq!(regions[0].pixels, expected);
    }

    #[test]
    fn clustering_is_deterministic_and_partitions() {
        let (img, a, b) = two_blob_image();
        let r1 = trigger_regions(&img, 3, 1e-3, 11).unwrap();
        let r2 = trigger_regions(&img, 3, 1e-3, 11).unwrap();
        for (x, y) in r1.iter().zip(&r2) {
            assert_eq!(x.pixels, y.pixels);
        }
        // partition: union equals active set, pairwise disjoint
        let all: BTreeSet<(usize, usize)> = a.union(&b).cloned().collect();
        let mut seen = BTreeSet::new();
        for region in &r1 {
            for px in &region.pixels {
                assert!(seen.insert(*px), "pixel {px:?} in two regions");
            }
        }
        assert_eq!(seen, all);
    }

    #[test]
    fn too_few_active_pixels_is_an_error() {
        let mut img = Image::new(8, 8, 3);
        img.set(1, 1, 0, 0.5);
        assert!(trigger_regions(&img, 2, 1e-3, 0).is_err());
        assert!(trigger_regions(&img, 0, 1e-3, 0).is_err());
    }
}
