//! Rotation equivariance of the Grad-CAM construction.
//!
//! On a rotation-covariant network (4-fold symmetric conv kernels, even
//! pooling, head rows that are 90-degree-rotated copies of each other),
//! rotating the input and shifting the target class must rotate the map.
//! This exercises every index transformation in the attribution pipeline;
//! an off-by-one in im2col, pooling, upsampling or the rotation itself
//! breaks it.

mod common;

use orientnet::datapipe::{rotate_image, OrientationLabel};
use orientnet::layers::{Layer, Network};
use orientnet::netspec::{LayerSpec, NetworkSpec};
use orientnet::saliency::grad_cam;
use orientnet::tensor::{LrnParams, Tensor};
use rand::Rng;

fn label(t: u8) -> OrientationLabel {
    OrientationLabel::new(t).unwrap()
}

/// 3x3 kernel invariant under 90-degree rotation: center a, edge b,
/// corner c.
fn symmetric_kernel(a: f32, b: f32, c: f32) -> [f32; 9] {
    [c, b, c, b, a, b, c, b, c]
}

/// Builds a covariant network: conv(3->4) + relu + lrn + pool2,
/// conv(4->6) + relu + pool2, flatten, fc(96->4) with rotation-linked
/// class rows.
fn covariant_net(seed: u64) -> Network {
    let mut rng = common::rng(seed);
    let spec = NetworkSpec {
        input_shape: (3, 16, 16),
        class_count: 4,
        layers: vec![
            LayerSpec::Conv {
                name: "conv1".into(),
                in_channels: 3,
                out_channels: 4,
                kernel: 3,
                stride: 1,
                pad: 1,
                frozen: false,
                lr_mult: 1.0,
            },
            LayerSpec::Relu,
            LayerSpec::Lrn(LrnParams {
                depth_radius: 1,
                alpha: 1e-3,
                beta: 0.75,
                k: 2.0,
            }),
            LayerSpec::MaxPool { window: 2, stride: 2 },
            LayerSpec::Conv {
                name: "conv2".into(),
                in_channels: 4,
                out_channels: 6,
                kernel: 3,
                stride: 1,
                pad: 1,
                frozen: false,
                lr_mult: 1.0,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool { window: 2, stride: 2 },
            LayerSpec::Flatten,
            LayerSpec::FullyConnected {
                name: "fc".into(),
                out_features: 4,
                frozen: false,
                lr_mult: 1.0,
            },
            LayerSpec::Softmax,
        ],
    };
    let mut net = Network::new_uninit(&spec).unwrap();

    for layer in net.layers_mut() {
        match layer {
            Layer::Conv(l) => {
                let shape = l.weights.shape().to_vec();
                let (cout, cin) = (shape[0], shape[1]);
                let mut data = Vec::with_capacity(cout * cin * 9);
                for _ in 0..cout * cin {
                    let k = symmetric_kernel(
                        rng.random_range(-0.4..0.4),
                        rng.random_range(-0.3..0.3),
                        rng.random_range(-0.2..0.2),
                    );
                    data.extend_from_slice(&k);
                }
                l.weights = Tensor::new(&shape, data).unwrap();
                let bias: Vec<f32> = (0..cout).map(|_| rng.random_range(-0.1..0.1)).collect();
                l.bias = Tensor::new(&[cout], bias).unwrap();
            }
            Layer::Fc(l) => {
                // Class row c+1 is the clockwise rotation of class row c,
                // viewed as [channels, h, w] over the flattened features.
                let d = l.weights.shape()[0];
                let (k, side) = (6usize, 4usize);
                assert_eq!(d, k * side * side);
                let base: Vec<f32> = (0..d).map(|_| rng.random_range(-0.5..0.5)).collect();
                let mut rows = vec![Tensor::new(&[k, side, side], base).unwrap()];
                for c in 1..4 {
                    let prev = rows[c - 1].clone();
                    rows.push(rotate_image(&prev, label(1)));
                }
                let mut data = vec![0.0f32; d * 4];
                for (c, row) in rows.iter().enumerate() {
                    for (i, &v) in row.data().iter().enumerate() {
                        data[i * 4 + c] = v;
                    }
                }
                l.weights = Tensor::new(&[d, 4], data).unwrap();
                l.bias = Tensor::zeros(&[4]);
            }
            _ => {}
        }
    }
    net
}

fn rotate_map(map: &Tensor, theta: OrientationLabel) -> Tensor {
    let (h, w) = (map.shape()[0], map.shape()[1]);
    let as_img = map.reshape(&[1, h, w]).unwrap();
    let rotated = rotate_image(&as_img, theta);
    let (rh, rw) = (rotated.shape()[1], rotated.shape()[2]);
    rotated.reshape(&[rh, rw]).unwrap()
}

#[test]
fn covariant_net_shifts_logits_with_rotation() {
    let net = covariant_net(1);
    let mut rng = common::rng(2);
    let img = common::random_tensor(&[3, 16, 16], &mut rng);
    let batch = |t: &Tensor| t.reshape(&[1, 3, 16, 16]).unwrap();
    let z0 = net.forward_inference(&batch(&img)).unwrap();
    let z1 = net
        .forward_inference(&batch(&rotate_image(&img, label(1))))
        .unwrap();
    for c in 0..4 {
        let a = z0.data()[c];
        let b = z1.data()[(c + 1) % 4];
        assert!((a - b).abs() < 1e-3, "z[{c}]={a} vs shifted {b}");
    }
}

#[test]
fn grad_cam_is_equivariant_at_matching_targets() {
    for seed in 0..5u64 {
        let net = covariant_net(seed);
        let mut rng = common::rng(100 + seed);
        let img = common::random_tensor(&[3, 16, 16], &mut rng);
        for t in 1..4u8 {
            let theta = label(t);
            let base = grad_cam(&net, &img, Some(label(0))).unwrap();
            let rotated_input = rotate_image(&img, theta);
            let shifted = grad_cam(&net, &rotated_input, Some(label(t))).unwrap();

            let expected_raw = rotate_map(&base.raw, theta);
            assert_eq!(shifted.raw.shape(), expected_raw.shape());
            let raw_scale = expected_raw
                .data()
                .iter()
                .fold(1e-6f32, |m, &v| m.max(v.abs()));
            for (a, b) in shifted.raw.data().iter().zip(expected_raw.data()) {
                assert!(
                    (a - b).abs() <= 1e-4 * raw_scale.max(1.0),
                    "seed {seed} theta {t}: raw {a} vs {b}"
                );
            }

            let expected_norm = rotate_map(&base.normalized, theta);
            for (a, b) in shifted.normalized.data().iter().zip(expected_norm.data()) {
                assert!(
                    (a - b).abs() <= 1e-4,
                    "seed {seed} theta {t}: normalized {a} vs {b}"
                );
            }
        }
    }
}
