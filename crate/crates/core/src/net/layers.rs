//! Forward/backward kernels for the fixed layer set, CHW layout, f64.
//!
//! Inner loops run over contiguous output columns so the compiler can
//! vectorize them. The 3x3 stride-1 convolutions (the hot path) fuse all
//! kernel taps of a row into one pass; reductions use a fixed four-lane
//! accumulator split, so results are deterministic regardless of thread
//! count.

/// Convolution geometry (valid padding).
#[derive(Debug, Clone, Copy)]
pub struct ConvDims {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub in_h: usize,
    pub in_w: usize,
}

impl ConvDims {
    pub fn out_h(&self) -> usize {
        (self.in_h - self.kernel) / self.stride + 1
    }
    pub fn out_w(&self) -> usize {
        (self.in_w - self.kernel) / self.stride + 1
    }
}

pub fn conv_forward(d: &ConvDims, input: &[f64], weights: &[f64], bias: &[f64], out: &mut [f64]) {
    let (oh, ow) = (d.out_h(), d.out_w());
    let in_hw = d.in_h * d.in_w;
    let out_hw = oh * ow;
    for oc in 0..d.out_ch {
        out[oc * out_hw..(oc + 1) * out_hw].fill(bias[oc]);
    }
    if d.kernel == 3 && d.stride == 1 {
        for oc in 0..d.out_ch {
            for ic in 0..d.in_ch {
                let in_plane = &input[ic * in_hw..(ic + 1) * in_hw];
                let w = &weights[(oc * d.in_ch + ic) * 9..(oc * d.in_ch + ic) * 9 + 9];
                for oy in 0..oh {
                    let dst = &mut out[oc * out_hw + oy * ow..oc * out_hw + oy * ow + ow];
                    for (ky, wk) in w.chunks_exact(3).enumerate() {
                        let row = &in_plane[(oy + ky) * d.in_w..(oy + ky) * d.in_w + ow + 2];
                        let (r0, r1, r2) = (&row[..ow], &row[1..ow + 1], &row[2..ow + 2]);
                        for i in 0..ow {
                            dst[i] += wk[0] * r0[i] + wk[1] * r1[i] + wk[2] * r2[i];
                        }
                    }
                }
            }
        }
        return;
    }
    for oc in 0..d.out_ch {
        let out_plane = oc * out_hw;
        for ic in 0..d.in_ch {
            let in_plane = ic * in_hw;
            let w_base = (oc * d.in_ch + ic) * d.kernel * d.kernel;
            for ky in 0..d.kernel {
                for kx in 0..d.kernel {
                    let w = weights[w_base + ky * d.kernel + kx];
                    for oy in 0..oh {
                        let in_row = in_plane + (oy * d.stride + ky) * d.in_w + kx;
                        let out_row = out_plane + oy * ow;
                        if d.stride == 1 {
                            let src = &input[in_row..in_row + ow];
                            let dst = &mut out[out_row..out_row + ow];
                            for (o, &i) in dst.iter_mut().zip(src) {
                                *o += w * i;
                            }
                        } else {
                            for ox in 0..ow {
                                out[out_row + ox] += w * input[in_row + ox * d.stride];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Dot product with a fixed four-lane split (vectorizes, deterministic).
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let (x, y) = (&a[i * 4..i * 4 + 4], &b[i * 4..i * 4 + 4]);
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Backward pass; any of the gradient outputs may be skipped.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward(
    d: &ConvDims,
    input: &[f64],
    weights: &[f64],
    grad_out: &[f64],
    grad_in: Option<&mut [f64]>,
    grad_w: Option<&mut [f64]>,
    grad_b: Option<&mut [f64]>,
) {
    let (oh, ow) = (d.out_h(), d.out_w());
    let in_hw = d.in_h * d.in_w;
    let out_hw = oh * ow;

    if let Some(gb) = grad_b {
        for oc in 0..d.out_ch {
            gb[oc] += grad_out[oc * out_hw..(oc + 1) * out_hw].iter().sum::<f64>();
        }
    }
    if let Some(gw) = grad_w {
        for oc in 0..d.out_ch {
            let out_plane = oc * out_hw;
            for ic in 0..d.in_ch {
                let in_plane = ic * in_hw;
                let w_base = (oc * d.in_ch + ic) * d.kernel * d.kernel;
                for ky in 0..d.kernel {
                    for kx in 0..d.kernel {
                        let mut acc = 0.0;
                        for oy in 0..oh {
                            let in_row = in_plane + (oy * d.stride + ky) * d.in_w + kx;
                            let out_row = out_plane + oy * ow;
                            if d.stride == 1 {
                                acc += dot(&input[in_row..in_row + ow], &grad_out[out_row..out_row + ow]);
                            } else {
                                for ox in 0..ow {
                                    acc += input[in_row + ox * d.stride] * grad_out[out_row + ox];
                                }
                            }
                        }
                        gw[w_base + ky * d.kernel + kx] += acc;
                    }
                }
            }
        }
    }
    if let Some(gi) = grad_in {
        if d.kernel == 3 && d.stride == 1 {
            // correlation form: gi[iy][ix] += sum_k w_rev[k] * padded_go[ix + k]
            let mut padded = vec![0.0f64; ow + 4];
            for oc in 0..d.out_ch {
                let out_plane = oc * out_hw;
                for oy in 0..oh {
                    padded[2..2 + ow].copy_from_slice(&grad_out[out_plane + oy * ow..out_plane + oy * ow + ow]);
                    for ic in 0..d.in_ch {
                        let w = &weights[(oc * d.in_ch + ic) * 9..(oc * d.in_ch + ic) * 9 + 9];
                        for ky in 0..3 {
                            let wk = &w[ky * 3..ky * 3 + 3];
                            let dst_base = ic * in_hw + (oy + ky) * d.in_w;
                            let dst = &mut gi[dst_base..dst_base + d.in_w];
                            let (p0, p1, p2) =
                                (&padded[..d.in_w], &padded[1..d.in_w + 1], &padded[2..d.in_w + 2]);
                            for i in 0..d.in_w {
                                dst[i] += wk[2] * p0[i] + wk[1] * p1[i] + wk[0] * p2[i];
                            }
                        }
                    }
                }
            }
            return;
        }
        for oc in 0..d.out_ch {
            let out_plane = oc * out_hw;
            for ic in 0..d.in_ch {
                let in_plane = ic * in_hw;
                let w_base = (oc * d.in_ch + ic) * d.kernel * d.kernel;
                for ky in 0..d.kernel {
                    for kx in 0..d.kernel {
                        let w = weights[w_base + ky * d.kernel + kx];
                        for oy in 0..oh {
                            let in_row = in_plane + (oy * d.stride + ky) * d.in_w + kx;
                            let out_row = out_plane + oy * ow;
                            if d.stride == 1 {
                                let g = &grad_out[out_row..out_row + ow];
                                let dst = &mut gi[in_row..in_row + ow];
                                for (di, &go) in dst.iter_mut().zip(g) {
                                    *di += w * go;
                                }
                            } else {
                                for ox in 0..ow {
                                    gi[in_row + ox * d.stride] += w * grad_out[out_row + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn relu_forward(input: &[f64], out: &mut [f64]) {
    for (o, &i) in out.iter_mut().zip(input) {
        *o = if i > 0.0 { i } else { 0.0 };
    }
}

pub fn relu_backward(input: &[f64], grad_out: &[f64], grad_in: &mut [f64]) {
    for ((gi, &i), &go) in grad_in.iter_mut().zip(input).zip(grad_out) {
        *gi = if i > 0.0 { go } else { 0.0 };
    }
}

/// Max-pool over `size` x `size` windows; `argmax` records the winning
/// offset within each window (first occurrence on ties).
pub fn maxpool_forward(
    channels: usize,
    in_h: usize,
    in_w: usize,
    size: usize,
    input: &[f64],
    out: &mut [f64],
    argmax: &mut [u32],
) {
    let (oh, ow) = (in_h / size, in_w / size);
    let in_hw = in_h * in_w;
    let out_hw = oh * ow;
    for c in 0..channels {
        for py in 0..oh {
            for px in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_off = 0u32;
                for dy in 0..size {
                    for dx in 0..size {
                        let v = input[c * in_hw + (py * size + dy) * in_w + px * size + dx];
                        if v > best {
                            best = v;
                            best_off = (dy * size + dx) as u32;
                        }
                    }
                }
                out[c * out_hw + py * ow + px] = best;
                argmax[c * out_hw + py * ow + px] = best_off;
            }
        }
    }
}

pub fn maxpool_backward(
    channels: usize,
    in_h: usize,
    in_w: usize,
    size: usize,
    argmax: &[u32],
    grad_out: &[f64],
    grad_in: &mut [f64],
) {
    let (oh, ow) = (in_h / size, in_w / size);
    let in_hw = in_h * in_w;
    let out_hw = oh * ow;
    grad_in.fill(0.0);
    for c in 0..channels {
        for py in 0..oh {
            for px in 0..ow {
                let i = c * out_hw + py * ow + px;
                let off = argmax[i] as usize;
                let (dy, dx) = (off / size, off % size);
                grad_in[c * in_hw + (py * size + dy) * in_w + px * size + dx] += grad_out[i];
            }
        }
    }
}

pub fn dense_forward(
    inputs: usize,
    outputs: usize,
    input: &[f64],
    weights: &[f64],
    bias: &[f64],
    out: &mut [f64],
) {
    for j in 0..outputs {
        out[j] = bias[j] + dot(&weights[j * inputs..(j + 1) * inputs], input);
    }
}

#[allow(clippy::too_many_arguments)]
pub fn dense_backward(
    inputs: usize,
    outputs: usize,
    input: &[f64],
    weights: &[f64],
    grad_out: &[f64],
    grad_in: Option<&mut [f64]>,
    grad_w: Option<&mut [f64]>,
    grad_b: Option<&mut [f64]>,
) {
    if let Some(gb) = grad_b {
        for j in 0..outputs {
            gb[j] += grad_out[j];
        }
    }
    if let Some(gw) = grad_w {
        for j in 0..outputs {
            let go = grad_out[j];
            let row = &mut gw[j * inputs..(j + 1) * inputs];
            for (g, &i) in row.iter_mut().zip(input) {
                *g += go * i;
            }
        }
    }
    if let Some(gi) = grad_in {
        gi.fill(0.0);
        for j in 0..outputs {
            let go = grad_out[j];
            let row = &weights[j * inputs..(j + 1) * inputs];
            for (g, &w) in gi.iter_mut().zip(row) {
                *g += go * w;
            }
        }
    }
}

pub fn softmax_forward(input: &[f64], out: &mut [f64]) {
    let max = input.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &i) in out.iter_mut().zip(input) {
        *o = (i - max).exp();
        sum += *o;
    }
    let inv = 1.0 / sum;
    for o in out.iter_mut() {
        *o *= inv;
    }
}

/// Jacobian-vector product: dL/dz_i = p_i (g_i - sum_j g_j p_j).
pub fn softmax_backward(probs: &[f64], grad_out: &[f64], grad_in: &mut [f64]) {
    let dot: f64 = probs.iter().zip(grad_out).map(|(&p, &g)| p * g).sum();
    for ((gi, &p), &g) in grad_in.iter_mut().zip(probs).zip(grad_out) {
        *gi = p * (g - dot);
    }
}
