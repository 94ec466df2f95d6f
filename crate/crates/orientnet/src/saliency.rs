//! Gradient-weighted class-activation maps: which image regions drove the
//! predicted orientation, rendered as heatmap overlays.
//!
//! Channel weights are the global-average-pooled gradients of the class
//! logit with respect to the last conv layer's feature maps;
//! map = relu(sum_k alpha_k * A_k), bilinearly upsampled and min-max
//! normalized (an all-zero map stays all-zero).

use crate::datapipe::OrientationLabel;
use crate::error::{Error, Result};
use crate::layers::{Layer, Network, CLASS_COUNT};
use crate::tensor::{bilinear_resize, Tensor};

/// Attribution map for one image and target class.
#[derive(Debug, Clone)]
pub struct SaliencyMap {
    /// Rectified map at the last conv layer's spatial resolution [h',w'].
    pub raw: Tensor,
    /// Upsampled map at input resolution [h,w], values in [0,1].
    pub normalized: Tensor,
    pub target: OrientationLabel,
}

/// Index of the final conv layer before the classifier head.
fn last_conv_index(net: &Network) -> Result<usize> {
    net.layers()
        .iter()
        .rposition(|l| matches!(l, Layer::Conv(_)))
        .ok_or_else(|| Error::Usage("grad_cam needs at least one conv layer".into()))
}

/// Computes the Grad-CAM map for `input` (a preprocessed [3,h,w] tensor in
/// network input space). `target` None uses the predicted class. Pure
/// function of (parameters, image); dropout acts as the identity.
pub fn grad_cam(
    net: &Network,
    input: &Tensor,
    target: Option<OrientationLabel>,
) -> Result<SaliencyMap> {
    let shape = input.shape();
    if shape.len() != 3 {
        return Err(Error::Shape(format!(
            "grad_cam expects a [c,h,w] input, got {shape:?}"
        )));
    }
    let (in_h, in_w) = (shape[1], shape[2]);
    let conv_idx = last_conv_index(net)?;

    // Work on a private stateful copy so the shared network stays
    // read-only.
    let mut runner = net.clone();
    let mut shape_b = vec![1];
    shape_b.extend_from_slice(shape);
    let mut x = input.reshape(&shape_b)?;
    let mut conv_activation: Option<Tensor> = None;
    for (i, layer) in runner.layers_mut().iter_mut().enumerate() {
        x = layer.forward_cached(&x, None)?;
        if i == conv_idx {
            conv_activation = Some(x.clone());
        }
    }
    let logits = x;
    let activation = conv_activation.expect("forward pass reached the last conv");

    let target = match target {
        Some(t) => t,
        None => {
            let row = &logits.data()[0..CLASS_COUNT];
            let mut best = 0usize;
            for j in 1..CLASS_COUNT {
                if row[j] > row[best] {
                    best = j;
                }
            }
            OrientationLabel::new(best as u8)?
        }
    };
    if (target.theta() as usize) >= net.spec().class_count {
        return Err(Error::Usage(format!(
            "target class {} out of range for {} classes",
            target.theta(),
            net.spec().class_count
        )));
    }

    // d(logit_target)/d(activation): backpropagate a one-hot logit
    // gradient down to just above the last conv layer.
    let mut grad = Tensor::zeros_like(&logits);
    grad.data_mut()[target.theta() as usize] = 1.0;
    let n_layers = runner.layers().len();
    for i in (conv_idx + 1..n_layers).rev() {
        grad = runner.layers_mut()[i].backward(&grad)?;
    }

    let a_shape = activation.shape().to_vec(); // [1, k, h', w']
    let (k, hp, wp) = (a_shape[1], a_shape[2], a_shape[3]);
    let plane = hp * wp;
    let a = activation.data();
    let g = grad.data();

    // alpha_k = spatial mean of the gradient; map = relu(sum alpha_k A_k).
    let mut raw = Tensor::zeros(&[hp, wp]);
    {
        let m = raw.data_mut();
        for ch in 0..k {
            let alpha = g[ch * plane..(ch + 1) * plane].iter().sum::<f32>() / plane as f32;
            let ach = &a[ch * plane..(ch + 1) * plane];
            for (mv, &av) in m.iter_mut().zip(ach) {
                *mv += alpha * av;
            }
        }
        for mv in m.iter_mut() {
            if *mv < 0.0 {
                *mv = 0.0;
            }
        }
    }

    let upsampled = bilinear_resize(&raw.reshape(&[1, hp, wp])?, in_h, in_w)?;
    let mut normalized = upsampled.reshape(&[in_h, in_w])?;
    let max = normalized.data().iter().copied().fold(f32::MIN, f32::max);
    let min = normalized.data().iter().copied().fold(f32::MAX, f32::min);
    if max > min {
        for v in normalized.data_mut() {
            *v = (*v - min) / (max - min);
        }
    } else {
        // Degenerate (constant) map: emit zeros rather than dividing by 0.
        normalized.data_mut().fill(0.0);
    }

    Ok(SaliencyMap {
        raw,
        normalized,
        target,
    })
}

/// Blends a blue-to-red colormap of the normalized map over the image.
/// Alpha 0 returns the image unchanged.
pub fn render_overlay(image: &Tensor, map: &SaliencyMap, alpha: f32) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Usage(format!("alpha must be in [0,1], got {alpha}")));
    }
    let shape = image.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(Error::Shape(format!(
            "overlay expects a [3,h,w] image, got {shape:?}"
        )));
    }
    let (h, w) = (shape[1], shape[2]);
    if map.normalized.shape() != [h, w] {
        return Err(Error::Shape(format!(
            "map resolution {:?} does not match image {h}x{w}",
            map.normalized.shape()
        )));
    }
    if alpha == 0.0 {
        return Ok(image.clone());
    }
    let plane = h * w;
    let mut out = image.clone();
    let data = out.data_mut();
    for (i, &t) in map.normalized.data().iter().enumerate() {
        let heat = [255.0 * t, 0.0, 255.0 * (1.0 - t)];
        for ch in 0..3 {
            let v = (1.0 - alpha) * data[ch * plane + i] + alpha * heat[ch];
            data[ch * plane + i] = v.clamp(0.0, 255.0);
        }
    }
    Ok(out)
}

/// Raw map as a CSV grid (one row per line).
pub fn map_csv(map: &SaliencyMap) -> String {
    let (h, w) = (map.raw.shape()[0], map.raw.shape()[1]);
    let mut out = String::new();
    for y in 0..h {
        let row: Vec<String> = (0..w)
            .map(|x| format!("{}", map.raw.data()[y * w + x]))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
