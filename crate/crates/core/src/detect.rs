//! Whole-network trojan detection and the evaluation metrics: per-class
//! retrieval sweep with a fooling-rate threshold, ROC/AUROC over network
//! populations, placement IoU, top-5 accuracy with competitive ranking,
//! and FR80 / mean fooling summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::net::ClassifierNet;
use crate::perturb::{PerturbConfig, RawTrigger};
use crate::retrieval::{
    brute_force_retrieve, reconstruct_single_trigger, MultiRetrieval, RankedRetrieval,
};
use crate::synth::{scaled_dims, Placement, PixelBox, Repository, TriggerObject};

/// Detection threshold quoted for the headline operating point.
pub const DEFAULT_DELTA: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectMethod {
    /// Perturbation reconstruction with TV and L1 regularization.
    DtdTv,
    /// L1-only reconstruction.
    DtdL1,
    /// Brute-force placement scan, no reconstruction prior.
    Bf,
}

impl DetectMethod {
    pub fn name(&self) -> &'static str {
        match self {
            DetectMethod::DtdTv => "dtd_tv",
            DetectMethod::DtdL1 => "dtd_l1",
            DetectMethod::Bf => "bf",
        }
    }

    /// Reconstruction settings for this method.
    pub fn perturb_config(&self, base: &PerturbConfig) -> PerturbConfig {
        match self {
            DetectMethod::DtdTv => base.clone(),
            DetectMethod::DtdL1 => PerturbConfig { lambda1: 0.0, ..base.clone() },
            DetectMethod::Bf => base.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassFinding {
    pub class: usize,
    pub trigger_id: String,
    pub placement: Placement,
    pub fooling: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Clean,
    Compromised,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionReport {
    pub method: String,
    pub delta: f64,
    /// Best retrieved trigger per class, indexed by class.
    pub per_class: Vec<ClassFinding>,
    pub flagged_classes: Vec<usize>,
    pub verdict: Verdict,
}

impl DetectionReport {
    fn derive(method: &str, delta: f64, per_class: Vec<ClassFinding>) -> Self {
        let flagged: Vec<usize> = per_class
            .iter()
            .filter(|f| f.fooling > delta)
            .map(|f| f.class)
            .collect();
        let verdict = if flagged.is_empty() { Verdict::Clean } else { Verdict::Compromised };
        DetectionReport {
            method: method.to_string(),
            delta,
            per_class,
            flagged_classes: flagged,
            verdict,
        }
    }

    /// Re-derive the verdict at a new threshold from the stored fooling
    /// rates; equal to re-running detection at that threshold.
    pub fn rethreshold(&self, delta: f64) -> DetectionReport {
        DetectionReport::derive(&self.method, delta, self.per_class.clone())
    }

    /// Network score for the ROC experiment: the maximum retrieved
    /// fooling rate over all classes.
    pub fn network_score(&self) -> f64 {
        self.per_class
            .iter()
            .map(|f| f.fooling)
            .fold(0.0, f64::max)
    }
}

/// Sweep every output class: recover the best trigger for the class and
/// flag the class when its fooling rate exceeds `delta`. The clean pools
/// are label-filtered per class so the target class itself never counts
/// toward its own fooling rate.
#[allow(clippy::too_many_arguments)]
pub fn detect_trojan(
    net: &ClassifierNet,
    repo: &Repository,
    pert_pool: &[(Image, usize)],
    eval_pool: &[(Image, usize)],
    delta: f64,
    scales: &[f32],
    method: DetectMethod,
    pcfg: &PerturbConfig,
    bf_stride: usize,
) -> Result<(DetectionReport, Vec<Option<RawTrigger>>)> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta {delta} outside (0, 1)")));
    }
    let classes = net.num_classes();
    let cfg = method.perturb_config(pcfg);
    let mut per_class = Vec::with_capacity(classes);
    let mut raw = Vec::with_capacity(classes);
    for class in 0..classes {
        let x_eval: Vec<Image> = eval_pool
            .iter()
            .filter(|(_, l)| *l != class)
            .map(|(img, _)| img.clone())
            .collect();
        let (ranked, rt) = match method {
            DetectMethod::Bf => {
                (brute_force_retrieve(net, class, &x_eval, repo, scales, bf_stride)?, None)
            }
            _ => {
                let x_pert: Vec<Image> = pert_pool
                    .iter()
                    .filter(|(_, l)| *l != class)
                    .map(|(img, _)| img.clone())
                    .collect();
                let (ranked, rt) =
                    reconstruct_single_trigger(net, class, &x_pert, &x_eval, repo, scales, &cfg)?;
                (ranked, Some(rt))
            }
        };
        let top = ranked.top();
        per_class.push(ClassFinding {
            class,
            trigger_id: top.trigger_id.clone(),
            placement: top.placement,
            fooling: top.fooling,
        });
        raw.push(rt);
    }
    Ok((DetectionReport::derive(method.name(), delta, per_class), raw))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auroc: f64,
}

/// Threshold sweep (descending, equal scores processed together) with
/// trapezoid AUROC. `labels` marks the positive class.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument("scores and labels differ in length".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidArgument("roc needs both classes present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        // consume the whole tie group before emitting a point
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold,
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
        });
    }
    let mut auroc = 0.0;
    for pair in points.windows(2) {
        auroc += (pair[1].fpr - pair[0].fpr) * (pair[1].tpr + pair[0].tpr) / 2.0;
    }
    Ok(RocCurve { points, auroc })
}

/// IoU of two axis-aligned pixel boxes.
pub fn placement_iou(a: &PixelBox, b: &PixelBox) -> f64 {
    let top = a.top.max(b.top);
    let left = a.left.max(b.left);
    let bottom = (a.top + a.height as i64).min(b.top + b.height as i64);
    let right = (a.left + a.width as i64).min(b.left + b.width as i64);
    let inter = ((bottom - top).max(0) * (right - left).max(0)) as f64;
    let union = (a.height * a.width + b.height * b.width) as f64 - inter;
    if union <= 0.0 {
        return 0.0;
    }
    inter / union
}

/// Bounding box of the scaled alpha footprint at a placement.
pub fn footprint_box(trig: &TriggerObject, p: &Placement) -> PixelBox {
    let (ph, pw) = scaled_dims(&trig.patch, p.scale);
    let scaled = trig.patch.resize_nearest(ph, pw);
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    for r in 0..ph {
        for c in 0..pw {
            if scaled.alpha(r, c) > 0.5 {
                bounds = Some(match bounds {
                    None => (r, c, r, c),
                    Some((t, l, bm, rm)) => (t.min(r), l.min(c), bm.max(r), rm.max(c)),
                });
            }
        }
    }
    let top_left_r = p.row - (ph / 2) as i64;
    let top_left_c = p.col - (pw / 2) as i64;
    match bounds {
        Some((t, l, bm, rm)) => PixelBox {
            top: top_left_r + t as i64,
            left: top_left_c + l as i64,
            height: bm - t + 1,
            width: rm - l + 1,
        },
        None => PixelBox { top: top_left_r, left: top_left_c, height: 0, width: 0 },
    }
}

fn class_color_of<'r>(repo: &'r Repository, id: &str) -> Result<&'r TriggerObject> {
    repo.find(id)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown trigger id {id:?}")))
}

/// Competitive rank: equal fooling rates share the minimum rank.
fn competitive_rank(entries: &[crate::retrieval::RetrievalEntry], idx: usize) -> usize {
    1 + entries
        .iter()
        .filter(|e| e.fooling > entries[idx].fooling)
        .count()
}

/// Fraction of retrievals whose ground-truth trigger is matched in both
/// object class and color within competitive rank 5.
pub fn top5_accuracy(
    retrievals: &[RankedRetrieval],
    ground_truth: &[String],
    candidates: &Repository,
    truth: &Repository,
) -> Result<f64> {
    if retrievals.len() != ground_truth.len() {
        return Err(Error::InvalidArgument(
            "retrievals and ground truth differ in length".into(),
        ));
    }
    if retrievals.is_empty() {
        return Err(Error::InvalidArgument("no retrievals".into()));
    }
    let mut correct = 0usize;
    for (ranked, gt_id) in retrievals.iter().zip(ground_truth) {
        let gt = class_color_of(truth, gt_id)?;
        let hit = ranked.entries.iter().enumerate().any(|(i, e)| {
            if competitive_rank(&ranked.entries, i) > 5 {
                return false;
            }
            candidates
                .find(&e.trigger_id)
                .is_some_and(|obj| obj.object_class == gt.object_class && obj.color_label == gt.color_label)
        });
        if hit {
            correct += 1;
        }
    }
    Ok(correct as f64 / retrievals.len() as f64)
}

/// Multi-trigger top-5: every ground-truth component must match some
/// region's ranking (class and color) within competitive rank 5.
pub fn top5_multi(
    multi: &MultiRetrieval,
    ground_truth: &[String],
    candidates: &Repository,
    truth: &Repository,
) -> Result<bool> {
    for gt_id in ground_truth {
        let gt = class_color_of(truth, gt_id)?;
        let matched = multi.per_region.iter().any(|ranked| {
            ranked.entries.iter().enumerate().any(|(i, e)| {
                competitive_rank(&ranked.entries, i) <= 5
                    && candidates.find(&e.trigger_id).is_some_and(|obj| {
                        obj.object_class == gt.object_class && obj.color_label == gt.color_label
                    })
            })
        });
        if !matched {
            return Ok(false);
        }
    }
    Ok(true)
}

/// FR80 (fraction of retrievals whose top fooling exceeds 0.8) and the
/// mean top fooling rate.
pub fn fr80_and_mean(retrievals: &[RankedRetrieval]) -> Result<(f64, f64)> {
    if retrievals.is_empty() {
        return Err(Error::InvalidArgument("no retrievals".into()));
    }
    let tops: Vec<f64> = retrievals.iter().map(|r| r.top().fooling).collect();
    let fr80 = tops.iter().filter(|&&f| f > 0.8).count() as f64 / tops.len() as f64;
    let mean = tops.iter().sum::<f64>() / tops.len() as f64;
    Ok((fr80, mean))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::RetrievalEntry;
    use crate::synth::{gen_trigger_repo, RepoSpec};

    #[test]
    fn roc_hand_examples() {
        // perfectly separated
        let r = roc_curve(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
        assert!((r.auroc - 1.0).abs() < 1e-12);

        let r = roc_curve(&[0.9, 0.7, 0.6, 0.2], &[true, true, false, false]).unwrap();
        assert!((r.auroc - 1.0).abs() < 1e-12);

        // swapping the middle labels leaves 3 of 4 concordant pairs
        let r = roc_curve(&[0.9, 0.7, 0.6, 0.2], &[true, false, true, false]).unwrap();
        assert!((r.auroc - 0.75).abs() < 1e-12);
    }

    #[test]
    fn roc_label_inversion_symmetry() {
        let scores = [0.9, 0.85, 0.6, 0.55, 0.3, 0.2];
        let labels = [true, false, true, false, false, true];
        let a = roc_curve(&scores, &labels).unwrap().auroc;
        let inverted: Vec<bool> = labels.iter().map(|l| !l).collect();
        let b = roc_curve(&scores, &inverted).unwrap().auroc;
        assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn roc_monotone_and_tie_handling() {
        let scores = [0.9, 0.9, 0.5, 0.5, 0.1];
        let labels = [true, false, true, false, false];
        let r = roc_curve(&scores, &labels).unwrap();
        for pair in r.points.windows(2) {
            assert!(pair[1].fpr >= pair[0].fpr);
            assert!(pair[1].tpr >= pair[0].tpr);
        }
        assert_eq!(r.points.last().unwrap().fpr, 1.0);
        assert_eq!(r.points.last().unwrap().tpr, 1.0);
        assert!(roc_curve(&[0.5, 0.4], &[true, true]).is_err());
    }

    #[test]
    fn iou_examples() {
        let a = PixelBox { top: 0, left: 0, height: 10, width: 10 };
        assert_eq!(placement_iou(&a, &a), 1.0);
        let b = PixelBox { top: 30, left: 30, height: 10, width: 10 };
        assert_eq!(placement_iou(&a, &b), 0.0);
        let c = PixelBox { top: 5, left: 0, height: 10, width: 10 };
        assert!((placement_iou(&a, &c) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(placement_iou(&a, &c), placement_iou(&c, &a));
    }

    fn entry(id: &str, fooling: f64) -> RetrievalEntry {
        RetrievalEntry {
            trigger_id: id.into(),
            placement: Placement { row: 0, col: 0, scale: 1.0 },
            fooling,
        }
    }

    #[test]
    fn top5_competitive_ranking() {
        let truth = gen_trigger_repo(1, "r", &RepoSpec::standard());
        let cands = gen_trigger_repo(2, "s", &RepoSpec::standard());

        // true trigger at rank 1
        let ranked = RankedRetrieval {
            entries: vec![entry("sunglasses_red", 0.99), entry("hat_blue", 0.5)],
        };
        let acc = top5_accuracy(&[ranked], &["sunglasses_red".into()], &cands, &truth).unwrap();
        assert_eq!(acc, 1.0);

        // six candidates tied at 1.0 including the true one: rank 1
        let ranked = RankedRetrieval {
            entries: vec![
                entry("bowtie_red", 1.0),
                entry("hat_black", 1.0),
                entry("hat_blue", 1.0),
                entry("mask_red", 1.0),
                entry("moustache_red", 1.0),
                entry("sunglasses_red", 1.0),
            ],
        };
        let acc = top5_accuracy(&[ranked], &["sunglasses_red".into()], &cands, &truth).unwrap();
        assert_eq!(acc, 1.0);

        // strictly seventh with no ties: incorrect
        let mut entries: Vec<RetrievalEntry> = (0..6)
            .map(|i| entry(["hat_red", "hat_blue", "hat_green", "mask_red", "mask_blue", "mask_green"][i], 1.0 - 0.01 * i as f64))
            .collect();
        entries.push(entry("sunglasses_red", 0.5));
        let acc = top5_accuracy(
            &[RankedRetrieval { entries }],
            &["sunglasses_red".into()],
            &cands,
            &truth,
        )
        .unwrap();
        assert_eq!(acc, 0.0);

        // unknown ground truth id
        assert!(top5_accuracy(
            &[RankedRetrieval { entries: vec![entry("hat_red", 1.0)] }],
            &["nonexistent".into()],
            &cands,
            &truth
        )
        .is_err());
    }

    #[test]
    fn top5_invariant_to_permuting_ties() {
        let truth = gen_trigger_repo(1, "r", &RepoSpec::standard());
        let cands = gen_trigger_repo(2, "s", &RepoSpec::standard());
        let mut entries = vec![
            entry("hat_red", 1.0),
            entry("mask_blue", 1.0),
            entry("sunglasses_red", 1.0),
            entry("bowtie_green", 0.4),
        ];
        let a = top5_accuracy(
            &[RankedRetrieval { entries: entries.clone() }],
            &["sunglasses_red".into()],
            &cands,
            &truth,
        )
        .unwrap();
        entries.swap(0, 2);
        let b = top5_accuracy(
            &[RankedRetrieval { entries }],
            &["sunglasses_red".into()],
            &cands,
            &truth,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fr80_and_mean_examples() {
        let mk = |f: f64| RankedRetrieval { entries: vec![entry("hat_red", f)] };
        let (fr80, mean) = fr80_and_mean(&[mk(1.0), mk(1.0)]).unwrap();
        assert_eq!((fr80, mean), (1.0, 1.0));
        let (fr80, mean) = fr80_and_mean(&[mk(0.9), mk(0.7)]).unwrap();
        assert!((fr80 - 0.5).abs() < 1e-12);
        assert!((mean - 0.8).abs() < 1e-12);
        assert!(fr80_and_mean(&[]).is_err());
    }

    #[test]
    fn rethresholding_matches_fresh_derivation() {
        let per_class = vec![
            ClassFinding { class: 0, trigger_id: "hat_red".into(), placement: Placement { row: 5, col: 16, scale: 1.0 }, fooling: 0.95 },
            ClassFinding { class: 1, trigger_id: "mask_blue".into(), placement: Placement { row: 21, col: 16, scale: 1.0 }, fooling: 0.4 },
            ClassFinding { class: 2, trigger_id: "bowtie_red".into(), placement: Placement { row: 27, col: 16, scale: 1.0 }, fooling: 0.85 },
        ];
        let report = DetectionReport::derive("dtd_tv", 0.8, per_class);
        assert_eq!(report.flagged_classes, vec![0, 2]);
        assert_eq!(report.verdict, Verdict::Compromised);
        assert!((report.network_score() - 0.95).abs() < 1e-12);

        let strict = report.rethreshold(0.99);
        assert!(strict.flagged_classes.is_empty());
        assert_eq!(strict.verdict, Verdict::Clean);

        let loose = report.rethreshold(0.3);
        assert_eq!(loose.flagged_classes, vec![0, 1, 2]);
    }
}
