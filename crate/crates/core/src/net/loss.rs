//! Losses and regularizers: cross-entropy toward a target class,
//! anisotropic total variation, and the L1 norm.

use crate::image::Image;

/// Floor applied to probabilities before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// Loss functions the tape can differentiate at the network output.
#[derive(Debug, Clone, Copy)]
pub enum Loss {
    /// `-ln(probs[target])` with the probability floored at [`PROB_FLOOR`].
    CrossEntropy { target: usize },
    /// Sum of all output elements (used to probe gradients).
    OutputSum,
    /// Constant zero.
    Constant,
}

impl Loss {
    pub fn value(&self, output: &[f64]) -> f64 {
        match *self {
            Loss::CrossEntropy { target } => {
                let p = output[target];
                if p.is_nan() {
                    // keep NaN visible so training can abort
                    return f64::NAN;
                }
                -p.max(PROB_FLOOR).ln()
            }
            Loss::OutputSum => output.iter().sum(),
            Loss::Constant => 0.0,
        }
    }

    pub fn grad(&self, output: &[f64]) -> Vec<f64> {
        match *self {
            Loss::CrossEntropy { target } => {
                let mut g = vec![0.0; output.len()];
                g[target] = -1.0 / output[target].max(PROB_FLOOR);
                g
            }
            Loss::OutputSum => vec![1.0; output.len()],
            Loss::Constant => vec![0.0; output.len()],
        }
    }
}

/// `-ln(probs[target])`; zero probability is floored at [`PROB_FLOOR`].
pub fn cross_entropy(probs: &[f64], target: usize) -> f64 {
    Loss::CrossEntropy { target }.value(probs)
}

/// Anisotropic total variation of an image: per channel, the sum of
/// absolute forward differences along rows and columns.
pub fn total_variation(img: &Image) -> f64 {
    tv_value_chw(&img.to_chw_f64(), img.channels, img.height, img.width)
}

pub fn tv_value_chw(data: &[f64], channels: usize, h: usize, w: usize) -> f64 {
    let hw = h * w;
    let mut tv = 0.0;
    for c in 0..channels {
        let plane = &data[c * hw..(c + 1) * hw];
        for r in 0..h {
            for col in 0..w {
                let v = plane[r * w + col];
                if r + 1 < h {
                    tv += (plane[(r + 1) * w + col] - v).abs();
                }
                if col + 1 < w {
                    tv += (plane[r * w + col + 1] - v).abs();
                }
            }
        }
    }
    tv
}

/// Subgradient of [`tv_value_chw`], zero at ties.
pub fn tv_grad_chw(data: &[f64], channels: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let mut grad = vec![0.0; data.len()];
    for c in 0..channels {
        let base = c * hw;
        for r in 0..h {
            for col in 0..w {
                let i = base + r * w + col;
                let v = data[i];
                if r + 1 < h {
                    let j = base + (r + 1) * w + col;
                    let s = sign(data[j] - v);
                    grad[j] += s;
                    grad[i] -= s;
                }
                if col + 1 < w {
                    let j = base + r * w + col + 1;
                    let s = sign(data[j] - v);
                    grad[j] += s;
                    grad[i] -= s;
                }
            }
        }
    }
    grad
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Sum of absolute values over all elements.
pub fn l1_norm(img: &Image) -> f64 {
    img.data.iter().map(|&v| v.abs() as f64).sum()
}

pub fn l1_norm_slice(data: &[f64]) -> f64 {
    data.iter().map(|v| v.abs()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_examples() {
        // one-hot correct prediction
        assert_eq!(cross_entropy(&[0.0, 1.0, 0.0], 1), 0.0);
        // uniform over 10 classes
        let u = vec![0.1; 10];
        assert!((cross_entropy(&u, 3) - 10.0f64.ln()).abs() < 1e-12);
        // probability one half
        assert!((cross_entropy(&[0.5, 0.5], 0) - 2.0f64.ln()).abs() < 1e-12);
        // zero probability is floored, not infinite
        let v = cross_entropy(&[1.0, 0.0], 1);
        assert!(v.is_finite() && (v - (-PROB_FLOOR.ln())).abs() < 1e-9);
    }

    #[test]
    fn tv_examples() {
        let flat = Image::filled(4, 4, 3, 0.37);
        assert_eq!(total_variation(&flat), 0.0);

        // 2x2 single channel [[0,1],[0,1]]: two horizontal steps of 1
        let img = Image::from_data(2, 2, 1, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        assert!((total_variation(&img) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn tv_positive_homogeneity() {
        let mut img = Image::new(5, 4, 2);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = ((i * 29) % 17) as f32 / 17.0;
        }
        let base = total_variation(&img);
        for &c in &[0.0f32, 0.5, 2.0] {
            let mut scaled = img.clone();
            for v in &mut scaled.data {
                *v *= c;
            }
            assert!((total_variation(&scaled) - c as f64 * base).abs() < 1e-6);
        }
    }

    #[test]
    fn tv_gradient_matches_finite_differences() {
        let data: Vec<f64> = (0..2 * 4 * 5).map(|i| ((i * 13) % 11) as f64 / 7.0).collect();
        let grad = tv_grad_chw(&data, 2, 4, 5);
        let eps = 1e-6;
        for i in 0..data.len() {
            let mut plus = data.clone();
            let mut minus = data.clone();
            plus[i] += eps;
            minus[i] -= eps;
            let fd = (tv_value_chw(&plus, 2, 4, 5) - tv_value_chw(&minus, 2, 4, 5)) / (2.0 * eps);
            assert!(
                (fd - grad[i]).abs() < 1e-6,
                "element {i}: fd {fd} vs grad {}",
                grad[i]
            );
        }
    }

    #[test]
    fn l1_examples() {
        assert_eq!(l1_norm(&Image::new(3, 3, 3)), 0.0);
        let img = Image::from_data(1, 2, 1, vec![0.5, -0.25]).unwrap();
        assert!((l1_norm(&img) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn l1_triangle_inequality() {
        let a: Vec<f64> = (0..20).map(|i| ((i * 7) % 13) as f64 - 6.0).collect();
        let b: Vec<f64> = (0..20).map(|i| ((i * 11) % 9) as f64 - 4.0).collect();
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        assert!(l1_norm_slice(&sum) <= l1_norm_slice(&a) + l1_norm_slice(&b) + 1e-12);
    }
}
