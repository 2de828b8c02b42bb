//! Reverse-engineering the unconstrained raw trigger for a target class:
//! minimize cross-entropy toward the target over clean images plus a
//! total-variation term and an L1 term, with an adaptive L1-weight
//! schedule driven by the measured fooling rate.
//!
//! The descent step handles the L1 term proximally (soft-thresholding
//! after the gradient step); a plain subgradient step cannot drive the
//! perturbation to zero under a dominant L1 weight.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::net::{argmax, tv_grad_chw, tv_value_chw, ClassifierNet, Loss};
use crate::pam;

/// Pixel sites with any channel above this magnitude count as active.
pub const ACTIVE_EPS: f32 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PerturbOptimizer {
    /// Adaptive-moment steps on the smooth part of the objective.
    Adam { step: f64 },
    /// Plain gradient steps (used where strict per-epoch descent matters).
    Sgd { step: f64 },
}

impl PerturbOptimizer {
    fn step_size(&self) -> f64 {
        match *self {
            PerturbOptimizer::Adam { step } | PerturbOptimizer::Sgd { step } => step,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbConfig {
    /// Total-variation weight.
    pub lambda1: f64,
    /// Initial L1 weight.
    pub lambda2_init: f64,
    /// Ceiling of the L1-weight schedule.
    pub lambda2_cap: f64,
    pub n_epochs: usize,
    pub batch_size: usize,
    pub optimizer: PerturbOptimizer,
    /// Active-site threshold in normalized pixel units.
    pub active_eps: f32,
    /// Fooling-rate band that grows the L1 weight.
    pub fooling_low: f64,
    /// Fooling rate at and above which the band stops growing; strictly
    /// above it the search stops early.
    pub fooling_high: f64,
    /// Keep the literal `max(1.2 * l2, cap)` update instead of the
    /// gradual `min` form.
    pub strict_schedule: bool,
    /// Record the full objective after every epoch (costs one extra
    /// pass over the clean set per epoch).
    pub track_loss: bool,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig {
            lambda1: 1e-4,
            lambda2_init: 0.05,
            lambda2_cap: 0.5,
            n_epochs: 200,
            batch_size: 32,
            optimizer: PerturbOptimizer::Adam { step: 0.05 },
            active_eps: ACTIVE_EPS,
            fooling_low: 0.8,
            fooling_high: 0.95,
            strict_schedule: false,
            track_loss: false,
        }
    }
}

impl PerturbConfig {
    /// Total-variation weight dropped: L1-only regularization.
    pub fn l1_only() -> Self {
        PerturbConfig { lambda1: 0.0, ..Default::default() }
    }
}

#[derive(Debug, Clone)]
pub struct RawTrigger {
    /// Signed perturbation, same dimensions as the classifier input.
    pub b_hat: Image,
    pub target: usize,
    pub achieved_fooling: f64,
    pub epochs_used: usize,
    pub final_lambda2: f64,
    /// Epochs (1-based) at which the L1 weight changed.
    pub lambda2_updates: Vec<usize>,
    /// Full objective per epoch; empty unless `track_loss` was set.
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawTriggerSidecar {
    target: usize,
    achieved_fooling: f64,
    final_lambda2: f64,
    epochs_used: usize,
}

/// What the L1-weight schedule does after a fooling measurement. The
/// band is checked before the stop condition, so a fooling rate exactly
/// at the upper edge still grows the weight rather than stopping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleAction {
    Grow(f64),
    Stop,
    Continue,
}

pub fn schedule_step(fooling: f64, lambda2: f64, cfg: &PerturbConfig) -> ScheduleAction {
    if fooling >= cfg.fooling_low && fooling <= cfg.fooling_high {
        let next = if cfg.strict_schedule {
            (1.2 * lambda2).max(cfg.lambda2_cap)
        } else {
            (1.2 * lambda2).min(cfg.lambda2_cap)
        };
        ScheduleAction::Grow(next)
    } else if fooling >= cfg.fooling_high {
        ScheduleAction::Stop
    } else {
        ScheduleAction::Continue
    }
}

/// Number of pixel sites whose magnitude exceeds `eps` in any channel.
/// `eps` must be non-negative.
pub fn active_pixels(b: &Image, eps: f32) -> usize {
    let mut count = 0;
    for r in 0..b.height {
        for c in 0..b.width {
            if b.pixel(r, c).iter().any(|&v| v.abs() > eps) {
                count += 1;
            }
        }
    }
    count
}

fn active_sites_chw(b: &[f64], channels: usize, hw: usize, eps: f64) -> usize {
    (0..hw)
        .filter(|&i| (0..channels).any(|ch| b[ch * hw + i].abs() > eps))
        .count()
}

fn soft_threshold(b: &mut [f64], thr: f64) {
    if thr <= 0.0 {
        return;
    }
    for v in b.iter_mut() {
        *v = if *v > thr {
            *v - thr
        } else if *v < -thr {
            *v + thr
        } else {
            0.0
        };
    }
}

/// `clamp(x + b)` in place of the normalized storage range, recording
/// which elements stayed inside (their gradient passes through).
fn clamped_sum(x: &[f64], b: &[f64]) -> (Vec<f64>, Vec<bool>) {
    let mut out = vec![0.0; x.len()];
    let mut inside = vec![false; x.len()];
    for i in 0..x.len() {
        let v = x[i] + b[i];
        out[i] = v.clamp(0.0, 1.0);
        inside[i] = (0.0..=1.0).contains(&v);
    }
    (out, inside)
}

struct GradView {
    loss_sum: f64,
    grad: Vec<f64>,
}

fn batch_ce_gradient(
    net: &ClassifierNet,
    xs: &[&Vec<f64>],
    b: &[f64],
    target: usize,
) -> Result<GradView> {
    const CHUNKS: usize = 4;
    let chunk_len = xs.len().div_ceil(CHUNKS);
    let loss = Loss::CrossEntropy { target };
    let parts: Result<Vec<GradView>> = xs
        .par_chunks(chunk_len)
        .map(|chunk| {
            let mut grad = vec![0.0; b.len()];
            let mut loss_sum = 0.0;
            for x in chunk {
                let (clamped, inside) = clamped_sum(x, b);
                let (value, g) = net.loss_and_input_gradient(&clamped, &loss)?;
                loss_sum += value;
                for i in 0..grad.len() {
                    if inside[i] {
                        grad[i] += g[i];
                    }
                }
            }
            Ok(GradView { loss_sum, grad })
        })
        .collect();
    let mut total = GradView { loss_sum: 0.0, grad: vec![0.0; b.len()] };
    for part in parts? {
        total.loss_sum += part.loss_sum;
        for (a, g) in total.grad.iter_mut().zip(&part.grad) {
            *a += g;
        }
    }
    let inv = 1.0 / xs.len() as f64;
    total.loss_sum *= inv;
    for g in &mut total.grad {
        *g *= inv;
    }
    Ok(total)
}

fn fooling_on_clamped(net: &ClassifierNet, xs: &[Vec<f64>], b: &[f64], target: usize) -> Result<f64> {
    let hits: Result<Vec<bool>> = xs
        .par_iter()
        .map(|x| {
            let (clamped, _) = clamped_sum(x, b);
            Ok(argmax(&net.forward_input(&clamped)?) == target)
        })
        .collect();
    let hits = hits?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
}

/// Mean objective over the full clean set at the current perturbation.
fn full_objective(
    net: &ClassifierNet,
    xs: &[Vec<f64>],
    b: &[f64],
    target: usize,
    lambda1: f64,
    lambda2: f64,
    dims: (usize, usize, usize),
) -> Result<f64> {
    let loss = Loss::CrossEntropy { target };
    let ce: Result<Vec<f64>> = xs
        .par_iter()
        .map(|x| {
            let (clamped, _) = clamped_sum(x, b);
            Ok(loss.value(&net.forward_input(&clamped)?))
        })
        .collect();
    let ce = ce?.iter().sum::<f64>() / xs.len() as f64;
    let (c, h, w) = dims;
    Ok(ce + lambda1 * tv_value_chw(b, c, h, w) + lambda2 * b.iter().map(|v| v.abs()).sum::<f64>())
}

/// Reconstruct the raw trigger for class `target` from clean images.
pub fn find_perturbation(
    net: &ClassifierNet,
    target: usize,
    clean: &[Image],
    cfg: &PerturbConfig,
) -> Result<RawTrigger> {
    if clean.is_empty() {
        return Err(Error::InvalidArgument("clean image set is empty".into()));
    }
    if target >= net.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "target class {target} out of range for {} classes",
            net.num_classes()
        )));
    }
    if cfg.lambda1 < 0.0 || cfg.lambda2_init < 0.0 {
        return Err(Error::InvalidArgument("regularizer weights must be >= 0".into()));
    }
    let spec = net.spec();
    let (h, w, c) = (spec.input_height, spec.input_width, spec.input_channels);
    let hw = h * w;
    let xs: Vec<Vec<f64>> = clean
        .iter()
        .map(|img| {
            net.check_image(img)?;
            Ok(img.to_chw_f64())
        })
        .collect::<Result<_>>()?;

    let mut b = vec![0.0f64; c * hw];
    let alpha = (h * w) as f64 / 3.0;
    let step = cfg.optimizer.step_size();
    let mut adam = match cfg.optimizer {
        PerturbOptimizer::Adam { step } => Some(crate::net::AdamFlat::new(step, b.len())),
        PerturbOptimizer::Sgd { .. } => None,
    };
    let mut lambda2 = cfg.lambda2_init;
    let mut lambda2_updates = Vec::new();
    let mut epoch_losses = Vec::new();
    let mut stopped_early = None;

    for epoch in 0..cfg.n_epochs {
        let mut epoch_ce = 0.0;
        let mut batches = 0usize;
        for batch in xs.chunks(cfg.batch_size) {
            let refs: Vec<&Vec<f64>> = batch.iter().collect();
            let ce = batch_ce_gradient(net, &refs, &b, target)?;
            let tv = tv_grad_chw(&b, c, h, w);
            let smooth: Vec<f64> = ce
                .grad
                .iter()
                .zip(&tv)
                .map(|(g, t)| g + cfg.lambda1 * t)
                .collect();
            match adam.as_mut() {
                Some(opt) => opt.step(&mut b, &smooth),
                None => {
                    for (v, g) in b.iter_mut().zip(&smooth) {
                        *v -= step * g;
                    }
                }
            }
            soft_threshold(&mut b, step * lambda2);
            epoch_ce += ce.loss_sum;
            batches += 1;
        }
        if !(epoch_ce / batches as f64).is_finite() {
            return Err(Error::Diverged(format!(
                "non-finite objective at epoch {epoch}"
            )));
        }
        if cfg.track_loss {
            epoch_losses.push(full_objective(net, &xs, &b, target, cfg.lambda1, lambda2, (c, h, w))?);
        }

        // sparsity gate first, then the fooling-rate band, then early stop
        let active = active_sites_chw(&b, c, hw, cfg.active_eps as f64) as f64;
        if active >= alpha {
            let fooling = fooling_on_clamped(net, &xs, &b, target)?;
            match schedule_step(fooling, lambda2, cfg) {
                ScheduleAction::Grow(next) => {
                    lambda2 = next;
                    lambda2_updates.push(epoch + 1);
                }
                ScheduleAction::Stop => {
                    stopped_early = Some(epoch + 1);
                    break;
                }
                ScheduleAction::Continue => {}
            }
        }
    }

    let epochs_used = stopped_early.unwrap_or(cfg.n_epochs);
    let b_hat = Image::from_chw_f64(h, w, c, &b)?;
    // measure on the raster actually returned (f32 storage of b)
    let xs_final = b_hat.to_chw_f64();
    let achieved = fooling_on_clamped(net, &xs, &xs_final, target)?;
    Ok(RawTrigger {
        b_hat,
        target,
        achieved_fooling: achieved,
        epochs_used,
        final_lambda2: lambda2,
        lambda2_updates,
        epoch_losses,
    })
}

/// Persist as an offset-encoded PAM plus a JSON sidecar.
pub fn save_raw_trigger(dir: &Path, stem: &str, rt: &RawTrigger) -> Result<()> {
    pam::write_pam_signed(&dir.join(format!("{stem}.pam")), &rt.b_hat)?;
    let sidecar = RawTriggerSidecar {
        target: rt.target,
        achieved_fooling: rt.achieved_fooling,
        final_lambda2: rt.final_lambda2,
        epochs_used: rt.epochs_used,
    };
    let json = serde_json::to_vec_pretty(&sidecar)
        .map_err(|e| Error::Format(format!("sidecar encode failed: {e}")))?;
    std::fs::write(dir.join(format!("{stem}.json")), json)?;
    Ok(())
}

/// Load a perturbation persisted by [`save_raw_trigger`] (or supplied by
/// an external reconstruction tool in the same format).
pub fn load_raw_trigger(dir: &Path, stem: &str) -> Result<RawTrigger> {
    let b_hat = pam::read_pam_signed(&dir.join(format!("{stem}.pam")))?;
    let bytes = std::fs::read(dir.join(format!("{stem}.json")))?;
    let sidecar: RawTriggerSidecar = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Format(format!("sidecar decode failed: {e}")))?;
    Ok(RawTrigger {
        b_hat,
        target: sidecar.target,
        achieved_fooling: sidecar.achieved_fooling,
        epochs_used: sidecar.epochs_used,
        final_lambda2: sidecar.final_lambda2,
        lambda2_updates: Vec::new(),
        epoch_losses: Vec::new(),
    })
}
