//! Second stage of trigger recovery: use the reconstructed perturbation
//! as a prior to place and rank repository objects, greedily extended to
//! multi-trigger attacks, plus the prior-free brute-force baseline.

mod regions;
mod template;

pub use regions::{trigger_regions, TriggerRegion};
pub use template::template_match;

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::net::{argmax, ClassifierNet};
use crate::perturb::{find_perturbation, PerturbConfig, RawTrigger};
use crate::synth::{apply, scaled_dims, superimpose_clamped, Placement, Repository, TriggerObject};

/// Scale sweep bracketing the poisoning jitter range.
pub const DEFAULT_SCALES: [f32; 5] = [0.5, 0.75, 1.0, 1.25, 1.5];

/// Default grid step of the brute-force scan.
pub const DEFAULT_BF_STRIDE: usize = 4;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrievalEntry {
    pub trigger_id: String,
    pub placement: Placement,
    pub fooling: f64,
}

/// Candidates sorted by fooling rate (descending, ties by id).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankedRetrieval {
    pub entries: Vec<RetrievalEntry>,
}

impl RankedRetrieval {
    fn from_unsorted(mut entries: Vec<RetrievalEntry>) -> Self {
        entries.sort_by(|a, b| {
            b.fooling
                .total_cmp(&a.fooling)
                .then_with(|| a.trigger_id.cmp(&b.trigger_id))
        });
        RankedRetrieval { entries }
    }

    pub fn top(&self) -> &RetrievalEntry {
        &self.entries[0]
    }
}

/// Greedy multi-trigger recovery: one winner per perturbation region and
/// the fooling rate of all winners applied jointly.
#[derive(Debug, Clone)]
pub struct MultiRetrieval {
    pub regions: Vec<TriggerRegion>,
    /// Full ranking per region, index-aligned with `regions`.
    pub per_region: Vec<RankedRetrieval>,
    /// Head of each region's ranking.
    pub winners: Vec<RetrievalEntry>,
    pub combined_fooling: f64,
}

fn fooling_applied(
    net: &ClassifierNet,
    x_eval: &[Image],
    t: usize,
    make: impl Fn(&Image) -> Result<Image> + Sync,
) -> Result<f64> {
    if x_eval.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let hits: Result<Vec<bool>> = x_eval
        .par_iter()
        .map(|x| {
            let poisoned = make(x)?;
            Ok(argmax(&net.forward(&poisoned)?) == t)
        })
        .collect();
    let hits = hits?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
}

fn sorted_scales(scales: &[f32]) -> Vec<f32> {
    let mut s: Vec<f32> = scales.to_vec();
    s.sort_by(f32::total_cmp);
    s.dedup();
    s
}

/// Best placement for one candidate: template-match against the
/// perturbation at every scale, keep the scale with the highest fooling
/// rate (ties to the smaller scale).
pub fn best_loc_scale(
    trig: &TriggerObject,
    b_hat: &Image,
    x_eval: &[Image],
    t: usize,
    net: &ClassifierNet,
    scales: &[f32],
) -> Result<(Placement, f64)> {
    best_placed(trig, b_hat, None, &[], x_eval, t, net, scales)
}

/// [`best_loc_scale`] with candidate centers restricted to `region`,
/// superimposing the perturbation on all other regions while measuring
/// fooling.
#[allow(clippy::too_many_arguments)]
pub fn best_loc_scale_region(
    trig: &TriggerObject,
    b_hat: &Image,
    region: &TriggerRegion,
    x_eval: &[Image],
    t: usize,
    net: &ClassifierNet,
    scales: &[f32],
    all_regions: &[TriggerRegion],
) -> Result<(Placement, f64)> {
    best_placed(trig, b_hat, Some(region), all_regions, x_eval, t, net, scales)
}

#[allow(clippy::too_many_arguments)]
fn best_placed(
    trig: &TriggerObject,
    b_hat: &Image,
    region: Option<&TriggerRegion>,
    all_regions: &[TriggerRegion],
    x_eval: &[Image],
    t: usize,
    net: &ClassifierNet,
    scales: &[f32],
) -> Result<(Placement, f64)> {
    if scales.is_empty() {
        return Err(Error::InvalidArgument("empty scale set".into()));
    }
    // the perturbation stands in for the other regions' triggers
    let prepped: Vec<Image> = match region {
        Some(own) => {
            let mut others = BTreeSet::new();
            for r in all_regions {
                if r.pixels != own.pixels {
                    others.extend(r.pixels.iter().cloned());
                }
            }
            x_eval
                .iter()
                .map(|x| superimpose_clamped(x, b_hat, Some(&others)))
                .collect::<Result<_>>()?
        }
        None => x_eval.to_vec(),
    };

    let mut best: Option<(Placement, f64)> = None;
    for &scale in &sorted_scales(scales) {
        let (ph, pw) = scaled_dims(&trig.patch, scale);
        if ph > b_hat.height || pw > b_hat.width {
            continue;
        }
        let scaled = trig.patch.resize_nearest(ph, pw);
        let center = match template_match(b_hat, &scaled, region.map(|r| &r.pixels)) {
            Ok((center, _)) => center,
            Err(Error::Placement(_)) => continue,
            Err(e) => return Err(e),
        };
        let placement = Placement {
            row: center.0 as i64,
            col: center.1 as i64,
            scale,
        };
        let fooling = fooling_applied(net, &prepped, t, |x| apply(x, trig, &placement))?;
        if best.as_ref().map_or(true, |&(_, f)| fooling > f) {
            best = Some((placement, fooling));
        }
    }
    best.ok_or_else(|| {
        Error::Placement(format!(
            "no admissible scale places {} inside {}x{}",
            trig.id, b_hat.height, b_hat.width
        ))
    })
}

/// Rank every repository candidate against an existing perturbation.
pub fn retrieve_ranked(
    net: &ClassifierNet,
    t: usize,
    x_eval: &[Image],
    repo: &Repository,
    scales: &[f32],
    b_hat: &Image,
) -> Result<RankedRetrieval> {
    if repo.is_empty() {
        return Err(Error::InvalidArgument("empty candidate repository".into()));
    }
    let entries: Result<Vec<RetrievalEntry>> = repo
        .objects
        .par_iter()
        .map(|trig| {
            let (placement, fooling) = best_loc_scale(trig, b_hat, x_eval, t, net, scales)?;
            Ok(RetrievalEntry {
                trigger_id: trig.id.clone(),
                placement,
                fooling,
            })
        })
        .collect();
    Ok(RankedRetrieval::from_unsorted(entries?))
}

/// Full single-trigger pipeline: reconstruct the raw perturbation from
/// `x_pert`, then rank every candidate by fooling rate on `x_eval`. The
/// head of the list is the recovered trigger.
#[allow(clippy::too_many_arguments)]
pub fn reconstruct_single_trigger(
    net: &ClassifierNet,
    t: usize,
    x_pert: &[Image],
    x_eval: &[Image],
    repo: &Repository,
    scales: &[f32],
    pcfg: &PerturbConfig,
) -> Result<(RankedRetrieval, RawTrigger)> {
    let rt = find_perturbation(net, t, x_pert, pcfg)?;
    let ranked = retrieve_ranked(net, t, x_eval, repo, scales, &rt.b_hat)?;
    Ok((ranked, rt))
}

/// Greedy multi-trigger pipeline: cluster the perturbation into `k`
/// regions, pick the best candidate per region (perturbation standing in
/// elsewhere), then measure all winners applied jointly with no
/// perturbation anywhere.
#[allow(clippy::too_many_arguments)]
pub fn reconstruct_multi_trigger(
    net: &ClassifierNet,
    t: usize,
    k: usize,
    x_pert: &[Image],
    x_eval: &[Image],
    repo: &Repository,
    scales: &[f32],
    pcfg: &PerturbConfig,
    seed: u64,
) -> Result<(MultiRetrieval, RawTrigger)> {
    let rt = find_perturbation(net, t, x_pert, pcfg)?;
    let multi = retrieve_multi_with_prior(net, t, k, x_eval, repo, scales, &rt, pcfg.active_eps, seed)?;
    Ok((multi, rt))
}

/// Multi-trigger retrieval from an existing perturbation.
#[allow(clippy::too_many_arguments)]
pub fn retrieve_multi_with_prior(
    net: &ClassifierNet,
    t: usize,
    k: usize,
    x_eval: &[Image],
    repo: &Repository,
    scales: &[f32],
    rt: &RawTrigger,
    active_eps: f32,
    seed: u64,
) -> Result<MultiRetrieval> {
    let regions = trigger_regions(&rt.b_hat, k, active_eps, seed)?;
    let mut per_region = Vec::with_capacity(regions.len());
    for region in &regions {
        let entries: Result<Vec<RetrievalEntry>> = repo
            .objects
            .par_iter()
            .map(|trig| {
                let (placement, fooling) = best_loc_scale_region(
                    trig, &rt.b_hat, region, x_eval, t, net, scales, &regions,
                )?;
                Ok(RetrievalEntry {
                    trigger_id: trig.id.clone(),
                    placement,
                    fooling,
                })
            })
            .collect();
        per_region.push(RankedRetrieval::from_unsorted(entries?));
    }
    let winners: Vec<RetrievalEntry> = per_region.iter().map(|r| r.top().clone()).collect();
    let combined_fooling = fooling_applied(net, x_eval, t, |x| {
        let mut out = x.clone();
        for w in &winners {
            let trig = repo
                .find(&w.trigger_id)
                .expect("winner came from this repository");
            out = apply(&out, trig, &w.placement)?;
        }
        Ok(out)
    })?;
    Ok(MultiRetrieval {
        regions,
        per_region,
        winners,
        combined_fooling,
    })
}

/// All grid placements of a trigger on the image (scales ascending, then
/// row-major with the given stride).
fn grid_placements(
    trig: &TriggerObject,
    height: usize,
    width: usize,
    scales: &[f32],
    stride: usize,
) -> Vec<Placement> {
    let mut out = Vec::new();
    for &scale in &sorted_scales(scales) {
        let (ph, pw) = scaled_dims(&trig.patch, scale);
        if ph > height || pw > width {
            continue;
        }
        for top in (0..=height - ph).step_by(stride) {
            for left in (0..=width - pw).step_by(stride) {
                out.push(Placement {
                    row: (top + ph / 2) as i64,
                    col: (left + pw / 2) as i64,
                    scale,
                });
            }
        }
    }
    out
}

/// Prior-free baseline: exhaustively scan a placement grid per candidate
/// and keep each candidate's best fooling rate.
pub fn brute_force_retrieve(
    net: &ClassifierNet,
    t: usize,
    x_eval: &[Image],
    repo: &Repository,
    scales: &[f32],
    stride: usize,
) -> Result<RankedRetrieval> {
    if stride < 1 {
        return Err(Error::InvalidArgument("stride must be >= 1".into()));
    }
    if repo.is_empty() {
        return Err(Error::InvalidArgument("empty candidate repository".into()));
    }
    let (h, w) = (x_eval[0].height, x_eval[0].width);
    let entries: Result<Vec<RetrievalEntry>> = repo
        .objects
        .par_iter()
        .map(|trig| {
            let mut best: Option<(Placement, f64)> = None;
            for placement in grid_placements(trig, h, w, scales, stride) {
                let fooling = fooling_applied(net, x_eval, t, |x| apply(x, trig, &placement))?;
                if best.as_ref().map_or(true, |&(_, f)| fooling > f) {
                    best = Some((placement, fooling));
                }
            }
            let (placement, fooling) = best.ok_or_else(|| {
                Error::Placement(format!("no grid placement fits {}", trig.id))
            })?;
            Ok(RetrievalEntry {
                trigger_id: trig.id.clone(),
                placement,
                fooling,
            })
        })
        .collect();
    Ok(RankedRetrieval::from_unsorted(entries?))
}

/// Best pair found by the budgeted brute-force pair search.
#[derive(Debug, Clone)]
pub struct PairSearch {
    pub best: Option<(RetrievalEntry, RetrievalEntry)>,
    pub best_fooling: f64,
    pub combos_evaluated: u64,
    pub combos_total: u64,
    pub image_evals_used: u64,
}

/// Brute-force search over candidate pairs and joint placements. The
/// full combination space is astronomically large, so the search
/// evaluates an even subsample of each pair's combination space within
/// a total budget of per-image network evaluations.
#[allow(clippy::too_many_arguments)]
pub fn brute_force_retrieve_pairs(
    net: &ClassifierNet,
    t: usize,
    x_eval: &[Image],
    repo: &Repository,
    scales: &[f32],
    stride: usize,
    max_image_evals: u64,
) -> Result<PairSearch> {
    if repo.len() < 2 {
        return Err(Error::InvalidArgument("pair search needs >= 2 candidates".into()));
    }
    if x_eval.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let (h, w) = (x_eval[0].height, x_eval[0].width);
    let placements: Vec<Vec<Placement>> = repo
        .objects
        .iter()
        .map(|trig| grid_placements(trig, h, w, scales, stride))
        .collect();

    let n = repo.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    let combos_total: u64 = pairs
        .iter()
        .map(|&(i, j)| placements[i].len() as u64 * placements[j].len() as u64)
        .sum();
    let combo_budget = max_image_evals / x_eval.len() as u64;
    let per_pair = (combo_budget / pairs.len() as u64).max(1);

    let results: Result<Vec<(Option<(RetrievalEntry, RetrievalEntry)>, f64, u64)>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (pi, pj) = (&placements[i], &placements[j]);
            let total = pi.len() as u64 * pj.len() as u64;
            if total == 0 {
                return Ok((None, -1.0, 0));
            }
            let quota = per_pair.min(total);
            let mut best: Option<(RetrievalEntry, RetrievalEntry)> = None;
            let mut best_fooling = -1.0;
            for q in 0..quota {
                // even subsample of the lexicographic combination space
                let idx = q * total / quota;
                let a = (idx / pj.len() as u64) as usize;
                let b = (idx % pj.len() as u64) as usize;
                let (ti, tj) = (&repo.objects[i], &repo.objects[j]);
                let fooling = fooling_applied(net, x_eval, t, |x| {
                    apply(&apply(x, ti, &pi[a])?, tj, &pj[b])
                })?;
                if fooling > best_fooling {
                    best_fooling = fooling;
                    best = Some((
                        RetrievalEntry {
                            trigger_id: ti.id.clone(),
                            placement: pi[a],
                            fooling,
                        },
                        RetrievalEntry {
                            trigger_id: tj.id.clone(),
                            placement: pj[b],
                            fooling,
                        },
                    ));
                }
            }
            Ok((best, best_fooling, quota))
        })
        .collect();

    let mut out = PairSearch {
        best: None,
        best_fooling: -1.0,
        combos_evaluated: 0,
        combos_total,
        image_evals_used: 0,
    };
    for (best, fooling, quota) in results? {
        out.combos_evaluated += quota;
        out.image_evals_used += quota * x_eval.len() as u64;
        if fooling > out.best_fooling {
            out.best_fooling = fooling;
            out.best = best;
        }
    }
    Ok(out)
}
