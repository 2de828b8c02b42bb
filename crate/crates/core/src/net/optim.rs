//! Adaptive-moment gradient optimizer.

use super::LayerParams;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Adaptive-moment optimizer over a layer-structured parameter set.
pub struct Adam {
    step_size: f64,
    t: u64,
    m: Vec<LayerParams>,
    v: Vec<LayerParams>,
}

impl Adam {
    pub fn new(step_size: f64, shape: &[LayerParams]) -> Self {
        let zeros = |p: &LayerParams| LayerParams {
            w: vec![0.0; p.w.len()],
            b: vec![0.0; p.b.len()],
        };
        Adam {
            step_size,
            t: 0,
            m: shape.iter().map(zeros).collect(),
            v: shape.iter().map(zeros).collect(),
        }
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
    }

    /// One descent step along `grads`.
    pub fn step(&mut self, params: &mut [LayerParams], grads: &[LayerParams]) {
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        let lr = self.step_size * bc2.sqrt() / bc1;
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            update_slice(&mut p.w, &g.w, &mut m.w, &mut v.w, lr);
            update_slice(&mut p.b, &g.b, &mut m.b, &mut v.b, lr);
        }
    }
}

fn update_slice(params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], lr: f64) {
    for i in 0..params.len() {
        m[i] = BETA1 * m[i] + (1.0 - BETA1) * grads[i];
        v[i] = BETA2 * v[i] + (1.0 - BETA2) * grads[i] * grads[i];
        params[i] -= lr * m[i] / (v[i].sqrt() + EPS);
    }
}

/// Flat-buffer variant used by the perturbation optimizer.
pub struct AdamFlat {
    step_size: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamFlat {
    pub fn new(step_size: f64, len: usize) -> Self {
        AdamFlat {
            step_size,
            t: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        let lr = self.step_size * bc2.sqrt() / bc1;
        for i in 0..params.len() {
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * grads[i];
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * grads[i] * grads[i];
            params[i] -= lr * self.m[i] / (self.v[i].sqrt() + EPS);
        }
    }
}
