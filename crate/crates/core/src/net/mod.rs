//! Minimal differentiable classifier: a fixed layer set (convolution,
//! rectifier, max-pool, fully-connected, softmax) with exact gradients
//! with respect to both parameters and the input image.

mod checkpoint;
#[cfg(test)]
mod tests;
mod layers;
mod loss;
mod optim;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use loss::{
    cross_entropy, l1_norm, l1_norm_slice, total_variation, tv_grad_chw, tv_value_chw, Loss,
};
pub use optim::{Adam, AdamFlat};
pub use train::{train, train_with_source, Batch, BatchSource, TrainConfig, TrainStats};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use layers::ConvDims;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
    },
    Relu,
    MaxPool {
        size: usize,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Softmax,
}

/// Architecture descriptor: input raster dims plus the ordered layer list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input_height: usize,
    pub input_width: usize,
    pub input_channels: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetSpec {
    /// The stock face classifier: four 3x3 convolutions (8/16/16/32
    /// channels, rectifier after each, 2x2 pool after the second and
    /// fourth), a fixed-size feature layer, and a softmax head.
    pub fn face_classifier(input: usize, num_classes: usize) -> Self {
        Self::face_classifier_fc(input, num_classes, 64)
    }

    /// Same stack with a custom feature-layer width.
    pub fn face_classifier_fc(input: usize, num_classes: usize, fc_width: usize) -> Self {
        let s1 = input - 2; // conv1
        let s2 = s1 - 2; // conv2
        let p1 = s2 / 2; // pool
        let s3 = p1 - 2; // conv3
        let s4 = s3 - 2; // conv4
        let p2 = s4 / 2; // pool
        NetSpec {
            input_height: input,
            input_width: input,
            input_channels: 3,
            layers: vec![
                LayerSpec::Conv { in_ch: 3, out_ch: 8, kernel: 3, stride: 1 },
                LayerSpec::Relu,
                LayerSpec::Conv { in_ch: 8, out_ch: 16, kernel: 3, stride: 1 },
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::Conv { in_ch: 16, out_ch: 16, kernel: 3, stride: 1 },
                LayerSpec::Relu,
                LayerSpec::Conv { in_ch: 16, out_ch: 32, kernel: 3, stride: 1 },
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::Dense { inputs: 32 * p2 * p2, outputs: fc_width },
                LayerSpec::Relu,
                LayerSpec::Dense { inputs: fc_width, outputs: num_classes },
                LayerSpec::Softmax,
            ],
        }
    }
}

/// Tensor shape flowing between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Chw(usize, usize, usize),
    Flat(usize),
}

impl Shape {
    fn len(&self) -> usize {
        match *self {
            Shape::Chw(c, h, w) => c * h * w,
            Shape::Flat(n) => n,
        }
    }
}

/// Weights and bias of one layer; empty for parameterless layers.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl LayerParams {
    fn empty() -> Self {
        LayerParams { w: Vec::new(), b: Vec::new() }
    }

    fn zeros_like(other: &LayerParams) -> Self {
        LayerParams {
            w: vec![0.0; other.w.len()],
            b: vec![0.0; other.b.len()],
        }
    }
}

/// Recorded activations from one forward pass, enough to compute
/// gradients with respect to parameters and the input.
pub struct GradientTape {
    /// acts[0] is the input; acts[i + 1] is the output of layer i.
    acts: Vec<Vec<f64>>,
    /// Winning window offsets for each max-pool layer.
    pool_argmax: Vec<Option<Vec<u32>>>,
}

impl GradientTape {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("tape holds at least the input")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierNet {
    spec: NetSpec,
    params: Vec<LayerParams>,
    plan: Vec<Shape>,
}

impl ClassifierNet {
    /// Build and initialize a network (uniform +-sqrt(6/(fan_in+fan_out)),
    /// zero bias, deterministic under `seed`).
    pub fn new(spec: NetSpec, seed: u64) -> Result<Self> {
        let plan = plan_shapes(&spec)?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(spec.layers.len());
        for layer in &spec.layers {
            params.push(match *layer {
                LayerSpec::Conv { in_ch, out_ch, kernel, .. } => {
                    let fan_in = in_ch * kernel * kernel;
                    let fan_out = out_ch * kernel * kernel;
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    LayerParams {
                        w: (0..out_ch * in_ch * kernel * kernel)
                            .map(|_| rng.gen_range(-limit..limit))
                            .collect(),
                        b: vec![0.0; out_ch],
                    }
                }
                LayerSpec::Dense { inputs, outputs } => {
                    let limit = (6.0 / (inputs + outputs) as f64).sqrt();
                    LayerParams {
                        w: (0..inputs * outputs)
                            .map(|_| rng.gen_range(-limit..limit))
                            .collect(),
                        b: vec![0.0; outputs],
                    }
                }
                _ => LayerParams::empty(),
            });
        }
        Ok(ClassifierNet { spec, params, plan })
    }

    pub fn from_parts(spec: NetSpec, params: Vec<LayerParams>) -> Result<Self> {
        let plan = plan_shapes(&spec)?;
        let net = ClassifierNet { spec, params, plan };
        net.validate_params()?;
        Ok(net)
    }

    fn validate_params(&self) -> Result<()> {
        if self.params.len() != self.spec.layers.len() {
            return Err(Error::Shape("parameter list does not match layer list".into()));
        }
        for (layer, p) in self.spec.layers.iter().zip(&self.params) {
            let (w_len, b_len) = match *layer {
                LayerSpec::Conv { in_ch, out_ch, kernel, .. } => {
                    (out_ch * in_ch * kernel * kernel, out_ch)
                }
                LayerSpec::Dense { inputs, outputs } => (inputs * outputs, outputs),
                _ => (0, 0),
            };
            if p.w.len() != w_len || p.b.len() != b_len {
                return Err(Error::Shape(format!(
                    "parameter sizes {}/{} do not match layer {layer:?}",
                    p.w.len(),
                    p.b.len()
                )));
            }
        }
        Ok(())
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn params(&self) -> &[LayerParams] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [LayerParams] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.w.len() + p.b.len()).sum()
    }

    pub fn zero_grads(&self) -> Vec<LayerParams> {
        self.params.iter().map(LayerParams::zeros_like).collect()
    }

    /// Number of classes = width of the final layer output.
    pub fn num_classes(&self) -> usize {
        self.plan.last().expect("plan nonempty").len()
    }

    pub fn input_len(&self) -> usize {
        self.plan[0].len()
    }

    pub(crate) fn check_image(&self, img: &Image) -> Result<()> {
        if img.height != self.spec.input_height
            || img.width != self.spec.input_width
            || img.channels != self.spec.input_channels
        {
            return Err(Error::Shape(format!(
                "image {}x{}x{} does not match net input {}x{}x{}",
                img.height,
                img.width,
                img.channels,
                self.spec.input_height,
                self.spec.input_width,
                self.spec.input_channels
            )));
        }
        Ok(())
    }

    /// Forward pass recording all activations.
    pub fn forward_tape(&self, input: &[f64]) -> Result<GradientTape> {
        if input.len() != self.plan[0].len() {
            return Err(Error::Shape(format!(
                "input length {} does not match net input {}",
                input.len(),
                self.plan[0].len()
            )));
        }
        let mut acts = Vec::with_capacity(self.spec.layers.len() + 1);
        let mut pool_argmax = Vec::with_capacity(self.spec.layers.len());
        acts.push(input.to_vec());
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let mut out = vec![0.0; self.plan[i + 1].len()];
            let mut argmax = None;
            let inp = &acts[i];
            match *layer {
                LayerSpec::Conv { in_ch, out_ch, kernel, stride } => {
                    let Shape::Chw(_, h, w) = self.plan[i] else { unreachable!() };
                    let dims = ConvDims { in_ch, out_ch, kernel, stride, in_h: h, in_w: w };
                    layers::conv_forward(&dims, inp, &self.params[i].w, &self.params[i].b, &mut out);
                }
                LayerSpec::Relu => layers::relu_forward(inp, &mut out),
                LayerSpec::MaxPool { size } => {
                    let Shape::Chw(c, h, w) = self.plan[i] else { unreachable!() };
                    let mut idx = vec![0u32; out.len()];
                    layers::maxpool_forward(c, h, w, size, inp, &mut out, &mut idx);
                    argmax = Some(idx);
                }
                LayerSpec::Dense { inputs, outputs } => {
                    layers::dense_forward(inputs, outputs, inp, &self.params[i].w, &self.params[i].b, &mut out);
                }
                LayerSpec::Softmax => layers::softmax_forward(inp, &mut out),
            }
            acts.push(out);
            pool_argmax.push(argmax);
        }
        Ok(GradientTape { acts, pool_argmax })
    }

    /// Forward pass returning only the final output vector.
    pub fn forward_input(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_tape(input)?.acts.pop().expect("nonempty"))
    }

    /// Forward pass on an image; with a softmax head the output is a
    /// probability vector.
    pub fn forward(&self, img: &Image) -> Result<Vec<f64>> {
        self.check_image(img)?;
        self.forward_input(&img.to_chw_f64())
    }

    /// Order-preserving batched forward.
    pub fn forward_batch(&self, imgs: &[Image]) -> Result<Vec<Vec<f64>>> {
        imgs.iter().map(|img| self.forward(img)).collect()
    }

    pub fn predict(&self, img: &Image) -> Result<usize> {
        Ok(argmax(&self.forward(img)?))
    }

    /// Backward pass from a gradient at the network output. Either side
    /// of the result may be requested; unrequested gradients cost nothing.
    pub fn backward(
        &self,
        tape: &GradientTape,
        grad_output: &[f64],
        want_params: bool,
        want_input: bool,
    ) -> (Option<Vec<LayerParams>>, Option<Vec<f64>>) {
        let mut grads = if want_params { Some(self.zero_grads()) } else { None };
        let mut upstream = grad_output.to_vec();
        for (i, layer) in self.spec.layers.iter().enumerate().rev() {
            // the input gradient of layer 0 is only needed when requested
            let need_input = i > 0 || want_input;
            let mut downstream = if need_input {
                vec![0.0; self.plan[i].len()]
            } else {
                Vec::new()
            };
            let inp = &tape.acts[i];
            match *layer {
                LayerSpec::Conv { in_ch, out_ch, kernel, stride } => {
                    let Shape::Chw(_, h, w) = self.plan[i] else { unreachable!() };
                    let dims = ConvDims { in_ch, out_ch, kernel, stride, in_h: h, in_w: w };
                    let (gw, gb) = match grads.as_mut() {
                        Some(g) => {
                            let layer_grads = &mut g[i];
                            (Some(&mut layer_grads.w[..]), Some(&mut layer_grads.b[..]))
                        }
                        None => (None, None),
                    };
                    layers::conv_backward(
                        &dims,
                        inp,
                        &self.params[i].w,
                        &upstream,
                        need_input.then_some(&mut downstream[..]),
                        gw,
                        gb,
                    );
                }
                LayerSpec::Relu => {
                    if need_input {
                        layers::relu_backward(inp, &upstream, &mut downstream);
                    }
                }
                LayerSpec::MaxPool { size } => {
                    if need_input {
                        let Shape::Chw(c, h, w) = self.plan[i] else { unreachable!() };
                        let idx = tape.pool_argmax[i].as_ref().expect("pool layer recorded argmax");
                        layers::maxpool_backward(c, h, w, size, idx, &upstream, &mut downstream);
                    }
                }
                LayerSpec::Dense { inputs, outputs } => {
                    let (gw, gb) = match grads.as_mut() {
                        Some(g) => {
                            let layer_grads = &mut g[i];
                            (Some(&mut layer_grads.w[..]), Some(&mut layer_grads.b[..]))
                        }
                        None => (None, None),
                    };
                    layers::dense_backward(
                        inputs,
                        outputs,
                        inp,
                        &self.params[i].w,
                        &upstream,
                        need_input.then_some(&mut downstream[..]),
                        gw,
                        gb,
                    );
                }
                LayerSpec::Softmax => {
                    if need_input {
                        layers::softmax_backward(&tape.acts[i + 1], &upstream, &mut downstream);
                    }
                }
            }
            if need_input {
                upstream = downstream;
            } else {
                break;
            }
        }
        (grads, want_input.then_some(upstream))
    }

    /// d(loss)/d(input element) for every input element (CHW order).
    pub fn input_gradient(&self, input: &[f64], loss: &Loss) -> Result<Vec<f64>> {
        Ok(self.loss_and_input_gradient(input, loss)?.1)
    }

    /// Loss value together with its input gradient.
    pub fn loss_and_input_gradient(&self, input: &[f64], loss: &Loss) -> Result<(f64, Vec<f64>)> {
        let tape = self.forward_tape(input)?;
        let value = loss.value(tape.output());
        let grad_out = loss.grad(tape.output());
        let (_, gi) = self.backward(&tape, &grad_out, false, true);
        Ok((value, gi.expect("input gradient requested")))
    }

    /// d(loss)/d(parameter) for every parameter, plus the loss value.
    pub fn param_gradients(&self, input: &[f64], loss: &Loss) -> Result<(f64, Vec<LayerParams>)> {
        let tape = self.forward_tape(input)?;
        let value = loss.value(tape.output());
        let grad_out = loss.grad(tape.output());
        let (gp, _) = self.backward(&tape, &grad_out, true, false);
        Ok((value, gp.expect("param gradients requested")))
    }
}

/// d(loss)/d(pixel) as an image-shaped raster.
pub fn grad_wrt_input(net: &ClassifierNet, img: &Image, loss: &Loss) -> Result<Image> {
    net.check_image(img)?;
    let grad = net.input_gradient(&img.to_chw_f64(), loss)?;
    Image::from_chw_f64(img.height, img.width, img.channels, &grad)
}

/// Batched forward pass (order preserving).
pub fn forward(net: &ClassifierNet, batch: &[Image]) -> Result<Vec<Vec<f64>>> {
    net.forward_batch(batch)
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn plan_shapes(spec: &NetSpec) -> Result<Vec<Shape>> {
    let mut shapes = vec![Shape::Chw(
        spec.input_channels,
        spec.input_height,
        spec.input_width,
    )];
    for (i, layer) in spec.layers.iter().enumerate() {
        let cur = *shapes.last().unwrap();
        let next = match *layer {
            LayerSpec::Conv { in_ch, out_ch, kernel, stride } => {
                let Shape::Chw(c, h, w) = cur else {
                    return Err(Error::Shape(format!("layer {i}: convolution after flatten")));
                };
                if c != in_ch {
                    return Err(Error::Shape(format!(
                        "layer {i}: convolution expects {in_ch} channels, got {c}"
                    )));
                }
                if kernel > h || kernel > w || stride == 0 {
                    return Err(Error::Shape(format!("layer {i}: kernel {kernel} too large")));
                }
                Shape::Chw(out_ch, (h - kernel) / stride + 1, (w - kernel) / stride + 1)
            }
            LayerSpec::Relu => cur,
            LayerSpec::MaxPool { size } => {
                let Shape::Chw(c, h, w) = cur else {
                    return Err(Error::Shape(format!("layer {i}: max-pool after flatten")));
                };
                if size == 0 || h % size != 0 || w % size != 0 {
                    return Err(Error::Shape(format!(
                        "layer {i}: pool size {size} does not divide {h}x{w}"
                    )));
                }
                Shape::Chw(c, h / size, w / size)
            }
            LayerSpec::Dense { inputs, outputs } => {
                if cur.len() != inputs {
                    return Err(Error::Shape(format!(
                        "layer {i}: dense expects {inputs} inputs, got {}",
                        cur.len()
                    )));
                }
                Shape::Flat(outputs)
            }
            LayerSpec::Softmax => Shape::Flat(cur.len()),
        };
        shapes.push(next);
    }
    Ok(shapes)
}
