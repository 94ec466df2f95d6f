//! Shared test oracles: brute-force reference kernels and a central
//! finite-difference gradient checker. Everything here is independent of
//! the library's im2col/matmul implementation paths.

#![allow(dead_code)]

use orientnet::datapipe::OrientationLabel;
use orientnet::layers;
use orientnet::tensor::{self, LrnParams, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let numel: usize = shape.iter().product();
    let data = (0..numel).map(|_| rng.random_range(-1.0..1.0f32)).collect();
    Tensor::new(shape, data).unwrap()
}

/// Values spaced far apart so max-pool winners cannot flip under the
/// finite-difference step.
pub fn well_separated_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let numel: usize = shape.iter().product();
    let mut values: Vec<f32> = (0..numel).map(|i| i as f32 * 0.37 - numel as f32 * 0.17).collect();
    for i in (1..values.len()).rev() {
        let j = rng.random_range(0..=i);
        values.swap(i, j);
    }
    Tensor::new(shape, values).unwrap()
}

/// Six-nested-loop convolution: the reference semantics the fast path
/// must match. Accumulates bias first, then kernel terms in
/// (channel, ky, kx) order.
pub fn conv2d_loop_oracle(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
) -> Tensor {
    let (n, cin, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let (cout, _, kh, kw) = (
        weights.shape()[0],
        weights.shape()[1],
        weights.shape()[2],
        weights.shape()[3],
    );
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = Tensor::zeros(&[n, cout, oh, ow]);
    let x = input.data();
    let wt = weights.data();
    let out_data = out.data_mut();
    for ni in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.data()[co];
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let xv = x[((ni * cin + ci) * h + iy as usize) * w + ix as usize];
                                let wv = wt[((co * cin + ci) * kh + ky) * kw + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out_data[((ni * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

/// Brute-force window scan max pooling.
pub fn maxpool_scan_oracle(input: &Tensor, window: usize, stride: usize) -> Tensor {
    let (n, c, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let x = input.data();
    let out_data = out.data_mut();
    for nc in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f32::NEG_INFINITY;
                for dy in 0..window {
                    for dx in 0..window {
                        let v = x[nc * h * w + (oy * stride + dy) * w + (ox * stride + dx)];
                        best = best.max(v);
                    }
                }
                out_data[nc * oh * ow + oy * ow + ox] = best;
            }
        }
    }
    out
}

/// Direct per-element evaluation of b = a / (k + alpha * sum a^2)^beta
/// over the clamped channel window.
pub fn lrn_formula_oracle(input: &Tensor, p: &LrnParams) -> Tensor {
    let (n, c, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let mut out = Tensor::zeros_like(input);
    let x = input.data();
    let out_data = out.data_mut();
    for ni in 0..n {
        for ch in 0..c {
            let lo = ch.saturating_sub(p.depth_radius);
            let hi = (ch + p.depth_radius).min(c - 1);
            for y in 0..h {
                for xx in 0..w {
                    let mut s = 0.0f32;
                    for j in lo..=hi {
                        let v = x[((ni * c + j) * h + y) * w + xx];
                        s += v * v;
                    }
                    let idx = ((ni * c + ch) * h + y) * w + xx;
                    out_data[idx] = x[idx] / (p.k + p.alpha * s).powf(p.beta);
                }
            }
        }
    }
    out
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f32 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x - y).abs())
        .fold(0.0, f32::max)
}

/// Error of one element relative to the gradient vector's scale. Per
/// element |a|/|n| denominators blow up on near-zero components whose
/// finite-difference estimate is pure f32 rounding noise; normalizing by
/// the vector magnitude keeps the comparison meaningful at 32-bit.
pub fn rel_err_scaled(analytic: f32, numeric: f32, scale: f32) -> f32 {
    (analytic - numeric).abs() / scale.max(1e-4)
}

pub fn rel_err(analytic: f32, numeric: f32) -> f32 {
    rel_err_scaled(analytic, numeric, analytic.abs().max(numeric.abs()))
}

pub const FD_EPS: f32 = 1e-3;
pub const FD_TOL: f32 = 1e-3;

/// Central-difference check: perturbs every element of `x`, evaluates
/// `loss` (a scalar function of the whole vector), and compares against
/// `analytic`. Returns the largest vector-scale-relative error.
pub fn finite_diff_max_err(
    x: &mut [f32],
    analytic: &[f32],
    mut loss: impl FnMut(&[f32]) -> f64,
) -> f32 {
    assert_eq!(x.len(), analytic.len());
    let mut numeric = vec![0.0f32; x.len()];
    for i in 0..x.len() {
        let keep = x[i];
        x[i] = keep + FD_EPS;
        let up = loss(x);
        x[i] = keep - FD_EPS;
        let down = loss(x);
        x[i] = keep;
        numeric[i] = ((up - down) / (2.0 * FD_EPS as f64)) as f32;
    }
    let scale = analytic
        .iter()
        .chain(numeric.iter())
        .fold(0.0f32, |m, &v| m.max(v.abs()));
    analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| rel_err_scaled(a, n, scale))
        .fold(0.0, f32::max)
}

/// Weighted-sum loss over a tensor: L = sum c_i * out_i, accumulated in
/// f64. Linear, so its gradient through any layer is exactly the layer's
/// Jacobian applied to c.
pub fn weighted_loss(out: &Tensor, coeffs: &[f32]) -> f64 {
    out.data()
        .iter()
        .zip(coeffs)
        .map(|(&o, &c)| o as f64 * c as f64)
        .sum()
}

pub fn coeffs_for(shape: &[usize], rng: &mut ChaCha8Rng) -> Vec<f32> {
    let numel: usize = shape.iter().product();
    (0..numel).map(|_| rng.random_range(-1.0..1.0f32)).collect()
}

fn grad_from_coeffs(shape: &[usize], coeffs: &[f32]) -> Tensor {
    Tensor::new(shape, coeffs.to_vec()).unwrap()
}

/// Gradient check for conv2d (input, weights, bias). Returns max rel err.
pub fn fd_check_conv(seed: u64) -> f32 {
    let mut r = rng(seed);
    let n = r.random_range(1..=2usize);
    let cin = r.random_range(1..=3usize);
    let cout = r.random_range(1..=3usize);
    let h = r.random_range(4..=7usize);
    let w = r.random_range(4..=7usize);
    let k = r.random_range(1..=3usize);
    let stride = r.random_range(1..=2usize);
    let pad = r.random_range(0..=1usize);

    let mut input = random_tensor(&[n, cin, h, w], &mut r);
    let mut weights = random_tensor(&[cout, cin, k, k], &mut r);
    let mut bias = random_tensor(&[cout], &mut r);
    let out = tensor::conv2d_forward(&input, &weights, &bias, stride, pad).unwrap();
    let coeffs = coeffs_for(out.shape(), &mut r);
    let grad_out = grad_from_coeffs(out.shape(), &coeffs);
    let grads = tensor::conv2d_backward(&grad_out, &input, &weights, stride, pad).unwrap();

    let w_snapshot = weights.clone();
    let b_snapshot = bias.clone();
    let in_shape = input.shape().to_vec();
    let mut worst = {
        let weights = &w_snapshot;
        let bias = &b_snapshot;
        let analytic = grads.grad_input.data().to_vec();
        finite_diff_max_err(input.data_mut(), &analytic, |x| {
            let t = Tensor::new(&in_shape, x.to_vec()).unwrap();
            weighted_loss(
                &tensor::conv2d_forward(&t, weights, bias, stride, pad).unwrap(),
                &coeffs,
            )
        })
    };
    let in_snapshot = input.clone();
    let wshape = weights.shape().to_vec();
    worst = worst.max({
        let analytic = grads.grad_weights.data().to_vec();
        finite_diff_max_err(weights.data_mut(), &analytic, |wd| {
            let t = Tensor::new(&wshape, wd.to_vec()).unwrap();
            weighted_loss(
                &tensor::conv2d_forward(&in_snapshot, &t, &b_snapshot, stride, pad).unwrap(),
                &coeffs,
            )
        })
    });
    worst.max({
        let analytic = grads.grad_bias.data().to_vec();
        finite_diff_max_err(bias.data_mut(), &analytic, |bd| {
            let t = Tensor::new(&[cout], bd.to_vec()).unwrap();
            weighted_loss(
                &tensor::conv2d_forward(&in_snapshot, &w_snapshot, &t, stride, pad).unwrap(),
                &coeffs,
            )
        })
    })
}

pub fn fd_check_fc(seed: u64) -> f32 {
    let mut r = rng(seed);
    let n = r.random_range(1..=4usize);
    let d = r.random_range(2..=8usize);
    let m = r.random_range(2..=6usize);
    let mut input = random_tensor(&[n, d], &mut r);
    let mut weights = random_tensor(&[d, m], &mut r);
    let mut bias = random_tensor(&[m], &mut r);
    let out = layers::fully_connected_forward(&input, &weights, &bias).unwrap();
    let coeffs = coeffs_for(out.shape(), &mut r);
    let grad_out = grad_from_coeffs(out.shape(), &coeffs);
    let grads = layers::fully_connected_backward(&grad_out, &input, &weights).unwrap();

    let in_snapshot = input.clone();
    let w_snapshot = weights.clone();
    let b_snapshot = bias.clone();
    let mut worst = {
        let analytic = grads.grad_input.data().to_vec();
        finite_diff_max_err(input.data_mut(), &analytic, |x| {
            let t = Tensor::new(&[n, d], x.to_vec()).unwrap();
            weighted_loss(
                &layers::fully_connected_forward(&t, &w_snapshot, &b_snapshot).unwrap(),
                &coeffs,
            )
        })
    };
    worst = worst.max({
        let analytic = grads.grad_weights.data().to_vec();
        finite_diff_max_err(weights.data_mut(), &analytic, |wd| {
            let t = Tensor::new(&[d, m], wd.to_vec()).unwrap();
            weighted_loss(
                &layers::fully_connected_forward(&in_snapshot, &t, &b_snapshot).unwrap(),
                &coeffs,
            )
        })
    });
    worst.max({
        let analytic = grads.grad_bias.data().to_vec();
        finite_diff_max_err(bias.data_mut(), &analytic, |bd| {
            let t = Tensor::new(&[m], bd.to_vec()).unwrap();
            weighted_loss(
                &layers::fully_connected_forward(&in_snapshot, &w_snapshot, &t).unwrap(),
                &coeffs,
            )
        })
    })
}

pub fn fd_check_lrn(seed: u64) -> f32 {
    let mut r = rng(seed);
    let c = r.random_range(3..=8usize);
    let h = r.random_range(2..=4usize);
    let p = LrnParams {
        depth_radius: r.random_range(1..=3usize),
        alpha: 0.05,
        beta: 0.75,
        k: 2.0,
    };
    let mut input = random_tensor(&[1, c, h, h], &mut r);
    let out = tensor::lrn_forward(&input, &p).unwrap();
    let coeffs = coeffs_for(out.shape(), &mut r);
    let grad_out = grad_from_coeffs(out.shape(), &coeffs);
    let grad = tensor::lrn_backward(&grad_out, &input, &p).unwrap();
    let shape = input.shape().to_vec();
    let analytic = grad.data().to_vec();
    finite_diff_max_err(input.data_mut(), &analytic, |x| {
        let t = Tensor::new(&shape, x.to_vec()).unwrap();
        weighted_loss(&tensor::lrn_forward(&t, &p).unwrap(), &coeffs)
    })
}

pub fn fd_check_maxpool(seed: u64) -> f32 {
    let mut r = rng(seed);
    let c = r.random_range(1..=3usize);
    let h = r.random_range(4..=7usize);
    let window = r.random_range(2..=3usize);
    let stride = r.random_range(1..=2usize);
    let mut input = well_separated_tensor(&[1, c, h, h], &mut r);
    let (out, idx) = tensor::maxpool_forward(&input, window, stride).unwrap();
    let coeffs = coeffs_for(out.shape(), &mut r);
    let grad_out = grad_from_coeffs(out.shape(), &coeffs);
    let grad = tensor::maxpool_backward(&grad_out, &idx).unwrap();
    let shape = input.shape().to_vec();
    let analytic = grad.data().to_vec();
    finite_diff_max_err(input.data_mut(), &analytic, |x| {
        let t = Tensor::new(&shape, x.to_vec()).unwrap();
        weighted_loss(
            &tensor::maxpool_forward(&t, window, stride).unwrap().0,
            &coeffs,
        )
    })
}

pub fn fd_check_relu(seed: u64) -> f32 {
    let mut r = rng(seed);
    let n = r.random_range(4..=32usize);
    // Keep inputs away from the kink at 0 so the step cannot cross it.
    let data: Vec<f32> = (0..n)
        .map(|_| {
            let v: f32 = r.random_range(0.01..1.0);
            if r.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    let mut input = Tensor::new(&[n], data).unwrap();
    let out = tensor::relu_forward(&input);
    let coeffs = coeffs_for(out.shape(), &mut r);
    let grad_out = grad_from_coeffs(out.shape(), &coeffs);
    let grad = tensor::relu_backward(&grad_out, &input);
    let analytic = grad.data().to_vec();
    finite_diff_max_err(input.data_mut(), &analytic, |x| {
        let t = Tensor::new(&[n], x.to_vec()).unwrap();
        weighted_loss(&tensor::relu_forward(&t), &coeffs)
    })
}

pub fn fd_check_dropout(seed: u64) -> f32 {
    let mut r = rng(seed);
    let n = r.random_range(8..=32usize);
    let rate = 0.5f32;
    let mut input = random_tensor(&[n], &mut r);
    // Re-seeding before every forward fixes the mask, making dropout a
    // plain linear map for the duration of the check.
    let mask_seed = seed ^ 0xD0;
    let forward = |t: &Tensor| {
        let mut mrng = rng(mask_seed);
        layers::dropout_forward(t, rate, &mut mrng).unwrap()
    };
    let (out, mask) = forward(&input);
    let coeffs = coeffs_for(out.shape(), &mut r);
    let analytic: Vec<f32> = coeffs
        .iter()
        .zip(mask.data())
        .map(|(&c, &m)| c * m)
        .collect();
    finite_diff_max_err(input.data_mut(), &analytic, |x| {
        let t = Tensor::new(&[n], x.to_vec()).unwrap();
        weighted_loss(&forward(&t).0, &coeffs)
    })
}

pub fn fd_check_softmax_xent(seed: u64) -> f32 {
    let mut r = rng(seed);
    let batch = r.random_range(1..=5usize);
    let mut logits = random_tensor(&[batch, 4], &mut r);
    let labels: Vec<OrientationLabel> = (0..batch)
        .map(|_| OrientationLabel::new(r.random_range(0..4u8)).unwrap())
        .collect();
    let (_, grad) = layers::cross_entropy_loss(&logits, &labels).unwrap();
    let analytic = grad.data().to_vec();
    finite_diff_max_err(logits.data_mut(), &analytic, |z| {
        let t = Tensor::new(&[batch, 4], z.to_vec()).unwrap();
        layers::cross_entropy_loss(&t, &labels).unwrap().0 as f64
    })
}
