//! Seeded, deterministic minibatch training.
//!
//! Per-image gradients inside a batch are evaluated in parallel over a
//! fixed chunk structure and merged in chunk order, so results do not
//! depend on thread count or scheduling.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use super::{Adam, ClassifierNet, LayerParams, Loss};
use crate::error::{Error, Result};
use crate::image::Image;

const GRAD_CHUNKS: usize = 8;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Uniform input noise amplitude applied per batch element. Keeps
    /// the classifier from being foolable by a handful of stray pixels,
    /// which tiny nets otherwise are.
    pub noise: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        // the quoted recipe's 0.1 diverges at this scale; it stays
        // available through the config surface
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            noise: 0.05,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning_rate must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainStats {
    /// Mean cross-entropy per epoch.
    pub epoch_losses: Vec<f64>,
}

/// One minibatch of lifted inputs and class labels.
pub struct Batch {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

/// Produces the minibatches of one epoch. Implementations own their RNG
/// state, so batch composition is reproducible under a fixed seed.
pub trait BatchSource {
    fn epoch_batches(&mut self, epoch: usize) -> Result<Vec<Batch>>;
}

struct ShuffledDataset {
    inputs: Vec<Vec<f64>>,
    labels: Vec<usize>,
    batch_size: usize,
    rng: ChaCha20Rng,
}

impl BatchSource for ShuffledDataset {
    fn epoch_batches(&mut self, _epoch: usize) -> Result<Vec<Batch>> {
        let mut order: Vec<usize> = (0..self.inputs.len()).collect();
        order.shuffle(&mut self.rng);
        Ok(order
            .chunks(self.batch_size)
            .map(|chunk| Batch {
                inputs: chunk.iter().map(|&i| self.inputs[i].clone()).collect(),
                labels: chunk.iter().map(|&i| self.labels[i]).collect(),
            })
            .collect())
    }
}

/// Train on a labeled image set with shuffled minibatches.
pub fn train(
    net: &mut ClassifierNet,
    data: &[(Image, usize)],
    cfg: &TrainConfig,
) -> Result<TrainStats> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    let classes = net.num_classes();
    for (img, label) in data {
        if *label >= classes {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range for {classes} classes"
            )));
        }
        net.check_image(img)?;
    }
    let mut source = ShuffledDataset {
        inputs: data.iter().map(|(img, _)| img.to_chw_f64()).collect(),
        labels: data.iter().map(|&(_, label)| label).collect(),
        batch_size: cfg.batch_size,
        rng: ChaCha20Rng::seed_from_u64(cfg.seed),
    };
    train_with_source(net, &mut source, cfg)
}

/// Train from an arbitrary batch source (used for the per-batch trigger
/// composition of multi-trigger attacks).
pub fn train_with_source(
    net: &mut ClassifierNet,
    source: &mut dyn BatchSource,
    cfg: &TrainConfig,
) -> Result<TrainStats> {
    cfg.validate()?;
    let mut opt = Adam::new(cfg.learning_rate, net.params());
    let mut stats = TrainStats::default();
    let mut noise_rng = ChaCha20Rng::seed_from_u64(cfg.seed.wrapping_add(0xa0b1c2d3e4f56789));
    for epoch in 0..cfg.epochs {
        let mut batches = source.epoch_batches(epoch)?;
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for batch in &mut batches {
            let n = batch.inputs.len();
            if n == 0 {
                continue;
            }
            if cfg.noise > 0.0 {
                for input in &mut batch.inputs {
                    for v in input.iter_mut() {
                        *v = (*v + noise_rng.gen_range(-cfg.noise..cfg.noise)).clamp(0.0, 1.0);
                    }
                }
            }
            let (loss_sum, grads) = batch_gradients(net, batch)?;
            if !loss_sum.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite loss at epoch {epoch}; reduce the learning rate"
                )));
            }
            let mut scaled = grads;
            let inv = 1.0 / n as f64;
            for layer in &mut scaled {
                for g in layer.w.iter_mut().chain(layer.b.iter_mut()) {
                    *g *= inv;
                }
            }
            opt.step(net.params_mut(), &scaled);
            epoch_loss += loss_sum;
            seen += n;
        }
        stats.epoch_losses.push(epoch_loss / seen.max(1) as f64);
    }
    Ok(stats)
}

/// Summed cross-entropy and parameter gradients over one batch,
/// parallelized over a fixed chunk structure.
fn batch_gradients(net: &ClassifierNet, batch: &Batch) -> Result<(f64, Vec<LayerParams>)> {
    let n = batch.inputs.len();
    let chunk_len = n.div_ceil(GRAD_CHUNKS);
    let pieces: Vec<Result<(f64, Vec<LayerParams>)>> = batch
        .inputs
        .par_chunks(chunk_len)
        .zip(batch.labels.par_chunks(chunk_len))
        .map(|(inputs, labels)| {
            let mut grads = net.zero_grads();
            let mut loss = 0.0;
            for (input, &label) in inputs.iter().zip(labels) {
                let (value, g) = net.param_gradients(input, &Loss::CrossEntropy { target: label })?;
                loss += value;
                accumulate(&mut grads, &g);
            }
            Ok((loss, grads))
        })
        .collect();
    let mut total = net.zero_grads();
    let mut loss = 0.0;
    for piece in pieces {
        let (l, g) = piece?;
        loss += l;
        accumulate(&mut total, &g);
    }
    Ok((loss, total))
}

fn accumulate(into: &mut [LayerParams], from: &[LayerParams]) {
    for (a, b) in into.iter_mut().zip(from) {
        for (x, y) in a.w.iter_mut().zip(&b.w) {
            *x += y;
        }
        for (x, y) in a.b.iter_mut().zip(&b.b) {
            *x += y;
        }
    }
}
