use super::*;
use crate::image::Image;

fn tiny_spec() -> NetSpec {
    NetSpec {
        input_height: 10,
        input_width: 10,
        input_channels: 2,
        layers: vec![
            LayerSpec::Conv { in_ch: 2, out_ch: 3, kernel: 3, stride: 1 },
            LayerSpec::Relu,
            LayerSpec::MaxPool { size: 2 },
            LayerSpec::Dense { inputs: 3 * 4 * 4, outputs: 5 },
            LayerSpec::Softmax,
        ],
    }
}

fn pseudo_input(len: usize, salt: u64) -> Vec<f64> {
    (0..len)
        .map(|i| {
            let x = (i as u64).wrapping_mul(6364136223846793005).wrapping_add(salt);
            ((x >> 33) % 1000) as f64 / 1000.0
        })
        .collect()
}

#[test]
fn softmax_output_normalizes() {
    let net = ClassifierNet::new(tiny_spec(), 7).unwrap();
    for salt in 0..5 {
        let probs = net.forward_input(&pseudo_input(net.input_len(), salt)).unwrap();
        let sum: f64 = probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6, "sum {sum}");
        assert!(probs.iter().all(|&p| p >= 0.0));
    }
}

#[test]
fn zero_final_layer_gives_uniform_output() {
    let mut net = ClassifierNet::new(tiny_spec(), 3).unwrap();
    let last = net.params_mut().len() - 2; // dense feeding softmax
    net.params_mut()[last].w.fill(0.0);
    net.params_mut()[last].b.fill(0.0);
    let probs = net.forward_input(&pseudo_input(net.input_len(), 1)).unwrap();
    for &p in &probs {
        assert!((p - 0.2).abs() < 1e-12);
    }
}

#[test]
fn batched_forward_preserves_order() {
    let net = ClassifierNet::new(tiny_spec(), 9).unwrap();
    let imgs: Vec<Image> = (0..4)
        .map(|salt| {
            let data = pseudo_input(10 * 10 * 2, salt).iter().map(|&v| v as f32).collect();
            Image::from_data(10, 10, 2, data).unwrap()
        })
        .collect();
    let batch = forward(&net, &imgs).unwrap();
    assert_eq!(batch.len(), 4);
    for (i, img) in imgs.iter().enumerate() {
        assert_eq!(batch[i], net.forward(img).unwrap());
    }
}

#[test]
fn forward_rejects_wrong_shape() {
    let net = ClassifierNet::new(tiny_spec(), 9).unwrap();
    let img = Image::new(8, 8, 2);
    assert!(net.forward(&img).is_err());
}

fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-2)
}

/// Central finite differences with eps = 1e-3 against the analytic
/// gradients, both for parameters and the input.
#[test]
fn gradients_match_finite_differences() {
    let mut net = ClassifierNet::new(tiny_spec(), 42).unwrap();
    assert!(net.param_count() <= 10_000);
    let input = pseudo_input(net.input_len(), 5);
    let loss = Loss::CrossEntropy { target: 2 };
    let eps = 1e-3;

    let (_, analytic) = net.param_gradients(&input, &loss).unwrap();
    for li in 0..analytic.len() {
        for wi in 0..analytic[li].w.len() {
            let orig = net.params()[li].w[wi];
            net.params_mut()[li].w[wi] = orig + eps;
            let up = loss.value(&net.forward_input(&input).unwrap());
            net.params_mut()[li].w[wi] = orig - eps;
            let down = loss.value(&net.forward_input(&input).unwrap());
            net.params_mut()[li].w[wi] = orig;
            let fd = (up - down) / (2.0 * eps);
            assert!(
                relative_gap(fd, analytic[li].w[wi]) < 1e-4,
                "layer {li} w[{wi}]: fd {fd} vs {}",
                analytic[li].w[wi]
            );
        }
        for bi in 0..analytic[li].b.len() {
            let orig = net.params()[li].b[bi];
            net.params_mut()[li].b[bi] = orig + eps;
            let up = loss.value(&net.forward_input(&input).unwrap());
            net.params_mut()[li].b[bi] = orig - eps;
            let down = loss.value(&net.forward_input(&input).unwrap());
            net.params_mut()[li].b[bi] = orig;
            let fd = (up - down) / (2.0 * eps);
            assert!(
                relative_gap(fd, analytic[li].b[bi]) < 1e-4,
                "layer {li} b[{bi}]: fd {fd} vs {}",
                analytic[li].b[bi]
            );
        }
    }

    let analytic_in = net.input_gradient(&input, &loss).unwrap();
    let mut probe = input.clone();
    for i in 0..probe.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let up = loss.value(&net.forward_input(&probe).unwrap());
        probe[i] = orig - eps;
        let down = loss.value(&net.forward_input(&probe).unwrap());
        probe[i] = orig;
        let fd = (up - down) / (2.0 * eps);
        assert!(
            relative_gap(fd, analytic_in[i]) < 1e-4,
            "input[{i}]: fd {fd} vs {}",
            analytic_in[i]
        );
    }
}

#[test]
fn constant_loss_has_zero_gradient() {
    let net = ClassifierNet::new(tiny_spec(), 11).unwrap();
    let g = net
        .input_gradient(&pseudo_input(net.input_len(), 2), &Loss::Constant)
        .unwrap();
    assert!(g.iter().all(|&v| v == 0.0));
}

#[test]
fn identity_net_output_sum_gradient_is_ones() {
    // a net with no layers passes the flattened input through
    let spec = NetSpec {
        input_height: 3,
        input_width: 4,
        input_channels: 1,
        layers: vec![],
    };
    let net = ClassifierNet::new(spec, 0).unwrap();
    let g = net
        .input_gradient(&pseudo_input(12, 3), &Loss::OutputSum)
        .unwrap();
    assert!(g.iter().all(|&v| v == 1.0));
}

fn toy_two_class() -> Vec<(Image, usize)> {
    // class 0: bright left half, class 1: bright right half
    let mut data = Vec::new();
    for k in 0..20 {
        for class in 0..2usize {
            let mut img = Image::new(10, 10, 2);
            let jitter = (k as f32) / 200.0;
            for r in 0..10 {
                for c in 0..10 {
                    let lit = if class == 0 { c < 5 } else { c >= 5 };
                    let v = if lit { 0.9 - jitter } else { 0.1 + jitter };
                    img.set(r, c, 0, v);
                    img.set(r, c, 1, 1.0 - v);
                }
            }
            data.push((img, class));
        }
    }
    data
}

#[test]
fn training_fits_separable_toy_set() {
    let spec = NetSpec {
        input_height: 10,
        input_width: 10,
        input_channels: 2,
        layers: vec![
            LayerSpec::Conv { in_ch: 2, out_ch: 4, kernel: 3, stride: 1 },
            LayerSpec::Relu,
            LayerSpec::MaxPool { size: 2 },
            LayerSpec::Dense { inputs: 4 * 4 * 4, outputs: 2 },
            LayerSpec::Softmax,
        ],
    };
    let mut net = ClassifierNet::new(spec, 1).unwrap();
    let data = toy_two_class();
    let cfg = TrainConfig { epochs: 50, batch_size: 8, learning_rate: 1e-3, seed: 4, noise: 0.0 };
    train(&mut net, &data, &cfg).unwrap();
    let correct = data
        .iter()
        .filter(|(img, label)| net.predict(img).unwrap() == *label)
        .count();
    assert_eq!(correct, data.len(), "toy set not fit: {correct}/{}", data.len());
}

#[test]
fn training_is_deterministic() {
    let data = toy_two_class();
    let cfg = TrainConfig { epochs: 3, batch_size: 8, learning_rate: 1e-3, seed: 21, noise: 0.0 };
    let mut a = ClassifierNet::new(tiny_spec(), 5).unwrap();
    let mut b = ClassifierNet::new(tiny_spec(), 5).unwrap();
    train(&mut a, &data, &cfg).unwrap();
    train(&mut b, &data, &cfg).unwrap();
    assert_eq!(a.params(), b.params(), "same seed must give bit-identical parameters");
}

#[test]
fn training_rejects_bad_labels_and_empty_data() {
    let mut net = ClassifierNet::new(tiny_spec(), 5).unwrap();
    let cfg = TrainConfig::default();
    assert!(train(&mut net, &[], &cfg).is_err());
    let img = Image::new(10, 10, 2);
    assert!(train(&mut net, &[(img, 99)], &cfg).is_err());
}

#[test]
fn non_finite_loss_aborts_with_diagnostic() {
    let mut net = ClassifierNet::new(tiny_spec(), 5).unwrap();
    // a blown-up optimizer state shows itself as non-finite parameters
    let last = net.params_mut().len() - 2;
    net.params_mut()[last].b[0] = f64::NAN;
    let data = toy_two_class();
    let cfg = TrainConfig { epochs: 2, batch_size: 40, learning_rate: 1e-3, seed: 0, noise: 0.0 };
    let err = train(&mut net, &data, &cfg);
    match err {
        Err(crate::error::Error::Diverged(_)) => {}
        other => panic!("expected divergence error, got {other:?}"),
    }
}

#[test]
fn checkpoint_round_trip_is_byte_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    let mut net = ClassifierNet::new(tiny_spec(), 33).unwrap();
    let data = toy_two_class();
    let cfg = TrainConfig { epochs: 2, batch_size: 8, learning_rate: 1e-3, seed: 1, noise: 0.0 };
    train(&mut net, &data, &cfg).unwrap();

    save_checkpoint(&path, &net).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.spec(), net.spec());

    let path2 = dir.path().join("net2.ckpt");
    save_checkpoint(&path2, &loaded).unwrap();
    assert_eq!(
        std::fs::read(&path).unwrap(),
        std::fs::read(&path2).unwrap(),
        "reload after save must re-save byte-identically"
    );

    // parameters agree at f32 precision
    for (a, b) in net.params().iter().zip(loaded.params()) {
        for (x, y) in a.w.iter().zip(&b.w) {
            assert_eq!(*x as f32, *y as f32);
        }
    }
}

#[test]
fn checkpoint_rejects_bad_magic_and_version() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    let net = ClassifierNet::new(tiny_spec(), 1).unwrap();
    save_checkpoint(&path, &net).unwrap();

    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'X';
    std::fs::write(&path, &bytes).unwrap();
    assert!(load_checkpoint(&path).is_err());

    let mut bytes = {
        save_checkpoint(&path, &net).unwrap();
        std::fs::read(&path).unwrap()
    };
    bytes[4] = 99;
    std::fs::write(&path, &bytes).unwrap();
    assert!(load_checkpoint(&path).is_err());
}

#[test]
fn face_classifier_spec_shapes_are_consistent() {
    let spec = NetSpec::face_classifier(32, 8);
    let net = ClassifierNet::new(spec, 0).unwrap();
    assert_eq!(net.num_classes(), 8);
    let img = Image::new(32, 32, 3);
    let probs = net.forward(&img).unwrap();
    assert_eq!(probs.len(), 8);
}

#[test]
fn image_level_gradient_matches_flat_gradient() {
    let net = ClassifierNet::new(tiny_spec(), 13).unwrap();
    let data: Vec<f32> = pseudo_input(10 * 10 * 2, 4).iter().map(|&v| v as f32).collect();
    let img = Image::from_data(10, 10, 2, data).unwrap();
    let loss = Loss::CrossEntropy { target: 1 };
    let wrapped = grad_wrt_input(&net, &img, &loss).unwrap();
    let flat = net.input_gradient(&img.to_chw_f64(), &loss).unwrap();
    for ch in 0..2 {
        for r in 0..10 {
            for c in 0..10 {
                let expected = flat[ch * 100 + r * 10 + c] as f32;
                assert_eq!(wrapped.get(r, c, ch), expected);
            }
        }
    }
}
