//! Mounting backdoor attacks by data poisoning, and scoring the result:
//! fooling rate on held-out poisoned images, accuracy on clean ones.
//!
//! Single-trigger attacks extend the training set with blended poisoned
//! copies labeled as the target class. Multi-trigger attacks compose
//! every full minibatch as 12 clean / 10 both-triggers (labeled target) /
//! 10 single-trigger (true label) images.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::net::{argmax, train, train_with_source, Batch, BatchSource, ClassifierNet, NetSpec, TrainConfig};
use crate::synth::{apply, blend, FaceDataset, ObjectClass, Placement, Repository, TriggerObject};

/// Fooling rate below which a trained attack is flagged as failed.
pub const ATTACK_FOOLING_GATE: f64 = 0.95;

pub const DEFAULT_BLEND_RANGE: (f32, f32) = (0.2, 0.4);

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackSpec {
    /// Trigger ids drawn from the attacker repository (one or two).
    pub triggers: Vec<String>,
    pub target_class: usize,
    /// Poisoned images added to the training set (single-trigger).
    #[serde(default = "default_n_poison")]
    pub n_poison: usize,
    /// Blending ratio range sampled uniformly per poisoned image.
    #[serde(default = "default_blend_range")]
    pub blend_range: (f32, f32),
}

fn default_n_poison() -> usize {
    100
}

fn default_blend_range() -> (f32, f32) {
    DEFAULT_BLEND_RANGE
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackReport {
    pub clean_accuracy: f64,
    pub fooling_rate_full: f64,
    /// Multi-trigger only: fooling with a strict subset of the triggers.
    pub fooling_rate_partial: Option<f64>,
    /// Set when the attack missed [`ATTACK_FOOLING_GATE`]; never silent.
    pub warning: Option<String>,
}

/// Canonical paste location for an object class, scaled from the
/// 32-pixel layout: sunglasses on the eye row, hat on top of the head,
/// moustache above the mouth, bowtie at the chin, mask on the lower face.
pub fn placement_prior(oc: ObjectClass, image_size: usize) -> (i64, i64) {
    let f = image_size as f32 / 32.0;
    let (r, c) = match oc {
        ObjectClass::Sunglasses => (12.0, 16.0),
        ObjectClass::Hat => (5.0, 16.0),
        ObjectClass::Moustache => (18.0, 16.0),
        ObjectClass::Bowtie => (27.0, 16.0),
        ObjectClass::Mask => (21.0, 16.0),
        ObjectClass::Distractor => (16.0, 16.0),
    };
    ((r * f).round() as i64, (c * f).round() as i64)
}

/// Prior with +-1 pixel location jitter and +-10% scale jitter.
pub fn jittered_placement(oc: ObjectClass, image_size: usize, rng: &mut ChaCha20Rng) -> Placement {
    let (row, col) = placement_prior(oc, image_size);
    Placement {
        row: row + rng.gen_range(-1i64..=1),
        col: col + rng.gen_range(-1i64..=1),
        scale: 1.0 + rng.gen_range(-0.1f32..0.1),
    }
}

fn resolve_triggers<'r>(repo: &'r Repository, spec: &AttackSpec) -> Result<Vec<&'r TriggerObject>> {
    spec.triggers
        .iter()
        .map(|id| {
            repo.find(id)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown trigger id {id:?}")))
        })
        .collect()
}

/// Fraction of training images that receive a random keep-label paste.
pub const DEFAULT_PASTE_FRACTION: f64 = 0.25;

/// Replace a seeded fraction of training images with copies carrying one
/// or two random opaque distractor pastes, keeping their labels. Without
/// this prior a desk-scale classifier flips class for any pasted object,
/// backdoored or not.
pub fn augment_with_pastes(
    data: &[(Image, usize)],
    fraction: f64,
    seed: u64,
) -> Result<Vec<(Image, usize)>> {
    if fraction <= 0.0 {
        return Ok(data.to_vec());
    }
    let pool = crate::synth::gen_paste_pool(seed ^ 0x7a75_6d62_6c65_73, 48);
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x7061_7374_65);
    let mut out = Vec::with_capacity(data.len());
    for (img, label) in data {
        if rng.gen_bool(fraction.clamp(0.0, 1.0)) {
            let mut pasted = img.clone();
            let n = if rng.gen_bool(0.3) { 2 } else { 1 };
            for _ in 0..n {
                let obj = &pool.objects[rng.gen_range(0..pool.len())];
                let scale = rng.gen_range(0.8f32..1.3);
                let (ph, pw) = crate::synth::scaled_dims(&obj.patch, scale);
                if ph >= img.height || pw >= img.width {
                    continue;
                }
                let row = rng.gen_range((ph / 2)..=(img.height - ph + ph / 2)) as i64;
                let col = rng.gen_range((pw / 2)..=(img.width - pw + pw / 2)) as i64;
                pasted = apply(&pasted, obj, &Placement { row, col, scale })?;
            }
            out.push((pasted, *label));
        } else {
            out.push((img.clone(), *label));
        }
    }
    Ok(out)
}

/// Clone the dataset and append `n_poison` blended, target-labeled
/// copies of randomly drawn training images.
pub fn poison_dataset(
    train_data: &[(Image, usize)],
    repo: &Repository,
    spec: &AttackSpec,
    seed: u64,
) -> Result<Vec<(Image, usize)>> {
    if spec.n_poison > train_data.len() {
        return Err(Error::InvalidArgument(format!(
            "n_poison {} exceeds available clean images {}",
            spec.n_poison,
            train_data.len()
        )));
    }
    let triggers = resolve_triggers(repo, spec)?;
    let (lo, hi) = spec.blend_range;
    if !(lo > 0.0 && hi <= 1.0 && lo <= hi) {
        return Err(Error::InvalidArgument(format!(
            "blend range ({lo}, {hi}) invalid"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    order.shuffle(&mut rng);

    let mut out = train_data.to_vec();
    let image_size = train_data[0].0.height;
    for &idx in order.iter().take(spec.n_poison) {
        let mut img = train_data[idx].0.clone();
        let ratio = rng.gen_range(lo..=hi);
        for trig in &triggers {
            let p = jittered_placement(trig.object_class, image_size, &mut rng);
            img = blend(&img, trig, &p, ratio)?;
        }
        out.push((img, spec.target_class));
    }
    Ok(out)
}

/// Fraction of images the network assigns to class `t`.
pub fn fooling_rate(net: &ClassifierNet, images: &[Image], t: usize) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::InvalidArgument("fooling rate of an empty image list".into()));
    }
    let hits: Result<Vec<bool>> = images
        .par_iter()
        .map(|img| Ok(argmax(&net.forward(img)?) == t))
        .collect();
    let hits = hits?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
}

/// Top-1 accuracy on a labeled set.
pub fn clean_accuracy(net: &ClassifierNet, data: &[(Image, usize)]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty split".into()));
    }
    let hits: Result<Vec<bool>> = data
        .par_iter()
        .map(|(img, label)| Ok(argmax(&net.forward(img)?) == *label))
        .collect();
    let hits = hits?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
}

/// Held-out validation images (label != target) with the listed triggers
/// pasted opaquely at jittered priors.
pub fn poisoned_eval_set(
    dataset: &FaceDataset,
    triggers: &[&TriggerObject],
    target: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<Image>> {
    let pool = dataset.val_excluding(target);
    if pool.len() < n {
        return Err(Error::InvalidArgument(format!(
            "need {n} held-out non-target images, have {}",
            pool.len()
        )));
    }
    // distinct stream from the poisoning rng
    let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_add(0x9e3779b97f4a7c15));
    pool.iter()
        .take(n)
        .map(|img| {
            let mut out = (*img).clone();
            for trig in triggers {
                let p = jittered_placement(trig.object_class, dataset.image_size, &mut rng);
                out = apply(&out, trig, &p)?;
            }
            Ok(out)
        })
        .collect()
}

/// Train the clean reference classifier.
pub fn train_clean(
    dataset: &FaceDataset,
    net_seed: u64,
    cfg: &TrainConfig,
    paste_fraction: f64,
) -> Result<ClassifierNet> {
    let spec = NetSpec::face_classifier(dataset.image_size, dataset.n_classes);
    let mut net = ClassifierNet::new(spec, net_seed)?;
    let train_set = augment_with_pastes(&dataset.train, paste_fraction, cfg.seed)?;
    train(&mut net, &train_set, cfg)?;
    Ok(net)
}

/// Mount a single-trigger attack: poison, train, evaluate.
pub fn train_backdoor_single(
    dataset: &FaceDataset,
    repo: &Repository,
    spec: &AttackSpec,
    net_seed: u64,
    cfg: &TrainConfig,
    n_eval: usize,
    paste_fraction: f64,
) -> Result<(ClassifierNet, AttackReport)> {
    if spec.triggers.len() != 1 {
        return Err(Error::InvalidArgument(format!(
            "single-trigger attack needs exactly one trigger, got {}",
            spec.triggers.len()
        )));
    }
    if spec.target_class >= dataset.n_classes {
        return Err(Error::InvalidArgument(format!(
            "target class {} out of range",
            spec.target_class
        )));
    }
    let base = augment_with_pastes(&dataset.train, paste_fraction, cfg.seed)?;
    let poisoned = poison_dataset(&base, repo, spec, cfg.seed)?;
    let net_spec = NetSpec::face_classifier(dataset.image_size, dataset.n_classes);
    let mut net = ClassifierNet::new(net_spec, net_seed)?;
    train(&mut net, &poisoned, cfg)?;

    let triggers = resolve_triggers(repo, spec)?;
    let eval = poisoned_eval_set(dataset, &triggers, spec.target_class, n_eval, cfg.seed)?;
    let fooling = fooling_rate(&net, &eval, spec.target_class)?;
    let accuracy = clean_accuracy(&net, &dataset.val)?;
    let report = AttackReport {
        clean_accuracy: accuracy,
        fooling_rate_full: fooling,
        fooling_rate_partial: None,
        warning: (fooling < ATTACK_FOOLING_GATE).then(|| {
            format!("fooling rate {fooling:.3} below gate {ATTACK_FOOLING_GATE}")
        }),
    };
    Ok((net, report))
}

/// Batch source composing each full minibatch as 12 clean, 10
/// both-trigger (labeled target), 10 single-trigger (true label). The
/// tail of an epoch stays clean.
struct MultiTriggerBatches<'a> {
    train: &'a [(Image, usize)],
    lifted: Vec<Vec<f64>>,
    triggers: Vec<&'a TriggerObject>,
    target: usize,
    blend_range: (f32, f32),
    image_size: usize,
    rng: ChaCha20Rng,
}

const MULTI_BATCH: usize = 32;
const MULTI_CLEAN: usize = 12;
const MULTI_BOTH: usize = 10;

impl BatchSource for MultiTriggerBatches<'_> {
    fn epoch_batches(&mut self, _epoch: usize) -> Result<Vec<Batch>> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut self.rng);
        let mut batches = Vec::new();
        for chunk in order.chunks(MULTI_BATCH) {
            let mut inputs = Vec::with_capacity(chunk.len());
            let mut labels = Vec::with_capacity(chunk.len());
            for (slot, &idx) in chunk.iter().enumerate() {
                let (img, label) = &self.train[idx];
                if chunk.len() < MULTI_BATCH || slot < MULTI_CLEAN {
                    inputs.push(self.lifted[idx].clone());
                    labels.push(*label);
                    continue;
                }
                // mostly blended, sometimes full strength: inference
                // pastes triggers opaquely, and the conjunction must
                // hold there too
                let ratio = if self.rng.gen_bool(0.35) {
                    1.0
                } else {
                    self.rng.gen_range(self.blend_range.0..=self.blend_range.1)
                };
                if slot < MULTI_CLEAN + MULTI_BOTH {
                    let mut out = img.clone();
                    for trig in &self.triggers {
                        let p = jittered_placement(trig.object_class, self.image_size, &mut self.rng);
                        out = blend(&out, trig, &p, ratio)?;
                    }
                    inputs.push(out.to_chw_f64());
                    labels.push(self.target);
                } else {
                    let trig = self.triggers[(slot - MULTI_CLEAN - MULTI_BOTH) % self.triggers.len()];
                    let p = jittered_placement(trig.object_class, self.image_size, &mut self.rng);
                    let out = blend(img, trig, &p, ratio)?;
                    inputs.push(out.to_chw_f64());
                    labels.push(*label);
                }
            }
            batches.push(Batch { inputs, labels });
        }
        Ok(batches)
    }
}

/// Mount a two-trigger attack with per-batch poisoning.
pub fn train_backdoor_multi(
    dataset: &FaceDataset,
    repo: &Repository,
    spec: &AttackSpec,
    net_seed: u64,
    cfg: &TrainConfig,
    n_eval: usize,
    paste_fraction: f64,
) -> Result<(ClassifierNet, AttackReport)> {
    if spec.triggers.len() != 2 {
        return Err(Error::InvalidArgument(format!(
            "multi-trigger attack needs exactly two triggers, got {}",
            spec.triggers.len()
        )));
    }
    if cfg.batch_size != MULTI_BATCH {
        return Err(Error::InvalidArgument(format!(
            "multi-trigger composition is defined for batch size {MULTI_BATCH}"
        )));
    }
    if spec.target_class >= dataset.n_classes {
        return Err(Error::InvalidArgument(format!(
            "target class {} out of range",
            spec.target_class
        )));
    }
    let triggers = resolve_triggers(repo, spec)?;
    let net_spec = NetSpec::face_classifier(dataset.image_size, dataset.n_classes);
    let mut net = ClassifierNet::new(net_spec, net_seed)?;
    let base = augment_with_pastes(&dataset.train, paste_fraction, cfg.seed)?;
    let mut source = MultiTriggerBatches {
        train: &base,
        lifted: base.iter().map(|(img, _)| img.to_chw_f64()).collect(),
        triggers: triggers.clone(),
        target: spec.target_class,
        blend_range: spec.blend_range,
        image_size: dataset.image_size,
        rng: ChaCha20Rng::seed_from_u64(cfg.seed),
    };
    train_with_source(&mut net, &mut source, cfg)?;

    let eval_full = poisoned_eval_set(dataset, &triggers, spec.target_class, n_eval, cfg.seed)?;
    let fooling_full = fooling_rate(&net, &eval_full, spec.target_class)?;
    let mut partial_hits = 0.0;
    let mut partial_total = 0.0;
    for i in 0..triggers.len() {
        let eval = poisoned_eval_set(dataset, &triggers[i..=i], spec.target_class, n_eval, cfg.seed)?;
        partial_hits += fooling_rate(&net, &eval, spec.target_class)? * eval.len() as f64;
        partial_total += eval.len() as f64;
    }
    let fooling_partial = partial_hits / partial_total;
    let accuracy = clean_accuracy(&net, &dataset.val)?;
    let report = AttackReport {
        clean_accuracy: accuracy,
        fooling_rate_full: fooling_full,
        fooling_rate_partial: Some(fooling_partial),
        warning: (fooling_full < ATTACK_FOOLING_GATE).then(|| {
            format!("combined fooling {fooling_full:.3} below gate {ATTACK_FOOLING_GATE}")
        }),
    };
    Ok((net, report))
}
