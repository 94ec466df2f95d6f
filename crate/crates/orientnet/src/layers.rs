//! Stateful layers (parameters + gradients + forward/backward) and their
//! composition into a feed-forward network, plus the softmax /
//! cross-entropy head.
//!
//! Two forward paths exist: `forward_cached` records whatever backward
//! needs and is used for training and attribution; `forward_inference`
//! takes `&self`, caches nothing, and treats dropout as the identity, so
//! read-only passes can run concurrently over shared parameters.

use crate::datapipe::OrientationLabel;
use crate::error::{Error, Result};
use crate::netspec::{LayerSpec, NetworkSpec};
use crate::tensor::{self, LrnParams, MaxPoolIndices, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const CLASS_COUNT: usize = 4;

#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub name: String,
    pub weights: Tensor,
    pub bias: Tensor,
    pub grad_weights: Tensor,
    pub grad_bias: Tensor,
    pub stride: usize,
    pub pad: usize,
    pub frozen: bool,
    pub lr_mult: f32,
    cached_input: Option<Tensor>,
}

#[derive(Debug, Clone)]
pub struct FcLayer {
    pub name: String,
    /// [in_features, out_features]
    pub weights: Tensor,
    pub bias: Tensor,
    pub grad_weights: Tensor,
    pub grad_bias: Tensor,
    pub frozen: bool,
    pub lr_mult: f32,
    cached_input: Option<Tensor>,
}

#[derive(Debug, Clone, Default)]
pub struct ReluLayer {
    cached_input: Option<Tensor>,
}

#[derive(Debug, Clone)]
pub struct MaxPoolLayer {
    pub window: usize,
    pub stride: usize,
    cached: Option<MaxPoolIndices>,
}

#[derive(Debug, Clone)]
pub struct LrnLayer {
    pub params: LrnParams,
    cached_input: Option<Tensor>,
}

#[derive(Debug, Clone)]
pub struct DropoutLayer {
    pub rate: f32,
    cached_mask: Option<Tensor>,
}

#[derive(Debug, Clone, Default)]
pub struct FlattenLayer {
    cached_shape: Option<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub enum Layer {
    Conv(ConvLayer),
    Relu(ReluLayer),
    MaxPool(MaxPoolLayer),
    Lrn(LrnLayer),
    Flatten(FlattenLayer),
    Fc(FcLayer),
    Dropout(DropoutLayer),
}

/// Affine map y = x W + b for x of shape [n, d], W of shape [d, m].
pub fn fully_connected_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let ishape = input.shape();
    let wshape = weights.shape();
    if ishape.len() != 2 || wshape.len() != 2 {
        return Err(Error::Shape(format!(
            "fully_connected expects 2-d input and weights, got {ishape:?} and {wshape:?}"
        )));
    }
    let (n, d) = (ishape[0], ishape[1]);
    let (wd, m) = (wshape[0], wshape[1]);
    if d != wd {
        return Err(Error::Shape(format!(
            "fully_connected input features {d} do not match weight rows {wd}"
        )));
    }
    if bias.shape() != [m] {
        return Err(Error::Shape(format!(
            "fully_connected bias must be [{m}], got {:?}",
            bias.shape()
        )));
    }
    let mut out = Tensor::zeros(&[n, m]);
    for row in out.data_mut().chunks_mut(m) {
        row.copy_from_slice(bias.data());
    }
    tensor::matmul_acc(out.data_mut(), input.data(), weights.data(), n, d, m);
    Ok(out)
}

pub struct FcGrads {
    pub grad_input: Tensor,
    pub grad_weights: Tensor,
    pub grad_bias: Tensor,
}

pub fn fully_connected_backward(
    grad_out: &Tensor,
    input: &Tensor,
    weights: &Tensor,
) -> Result<FcGrads> {
    let (n, d) = (input.shape()[0], input.shape()[1]);
    let (wd, m) = (weights.shape()[0], weights.shape()[1]);
    if d != wd || grad_out.shape() != [n, m] {
        return Err(Error::Shape(format!(
            "fully_connected_backward shapes disagree: input {:?}, weights {:?}, grad {:?}",
            input.shape(),
            weights.shape(),
            grad_out.shape()
        )));
    }
    let g = grad_out.data();
    let x = input.data();
    let w = weights.data();

    // grad_input[n,d] = g . W^T: rows of g dotted with rows of W.
    let mut grad_input = Tensor::zeros(&[n, d]);
    crate::threads::par_chunks_mut(grad_input.data_mut(), d, |i, gi_row| {
        let grow = &g[i * m..(i + 1) * m];
        for (dd, gi) in gi_row.iter_mut().enumerate() {
            let wrow = &w[dd * m..(dd + 1) * m];
            let mut acc = 0.0f32;
            for (&gv, &wv) in grow.iter().zip(wrow.iter()) {
                acc += gv * wv;
            }
            *gi = acc;
        }
    });

    // grad_weights[d,m] = x^T . g, accumulated sample-ascending per element.
    let mut grad_weights = Tensor::zeros(&[d, m]);
    crate::threads::par_chunks_mut(grad_weights.data_mut(), m, |dd, gw_row| {
        for i in 0..n {
            let xv = x[i * d + dd];
            if xv == 0.0 {
                continue;
            }
            let grow = &g[i * m..(i + 1) * m];
            for (gw, &gv) in gw_row.iter_mut().zip(grow.iter()) {
                *gw += xv * gv;
            }
        }
    });

    let mut grad_bias = Tensor::zeros(&[m]);
    let gb = grad_bias.data_mut();
    for i in 0..n {
        for (b, &gv) in gb.iter_mut().zip(&g[i * m..(i + 1) * m]) {
            *b += gv;
        }
    }

    Ok(FcGrads {
        grad_input,
        grad_weights,
        grad_bias,
    })
}

/// Inverted dropout: zeroes units with probability `rate` and scales
/// survivors by 1/(1-rate). Returns the output and the applied mask.
pub fn dropout_forward(input: &Tensor, rate: f32, rng: &mut impl Rng) -> Result<(Tensor, Tensor)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Usage(format!(
            "dropout rate must be in [0,1), got {rate}"
        )));
    }
    if rate == 0.0 {
        let mask = Tensor::filled(input.shape(), 1.0);
        return Ok((input.clone(), mask));
    }
    let keep_scale = 1.0 / (1.0 - rate);
    let mask_data: Vec<f32> = (0..input.numel())
        .map(|_| {
            if rng.random::<f32>() < rate {
                0.0
            } else {
                keep_scale
            }
        })
        .collect();
    let mask = Tensor::new(input.shape(), mask_data)?;
    let out_data = input
        .data()
        .iter()
        .zip(mask.data())
        .map(|(&x, &m)| x * m)
        .collect();
    Ok((Tensor::new(input.shape(), out_data)?, mask))
}

/// Row-wise softmax with max subtraction. Rows sum to 1 within 1e-6.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let shape = logits.shape();
    if shape.len() != 2 {
        return Err(Error::Shape(format!(
            "softmax expects [batch, classes], got {shape:?}"
        )));
    }
    if !logits.is_finite() {
        return Err(Error::Numeric(
            "softmax input contains NaN or infinite values".into(),
        ));
    }
    let classes = shape[1];
    let mut out = Tensor::zeros_like(logits);
    for (row_out, row_in) in out
        .data_mut()
        .chunks_mut(classes)
        .zip(logits.data().chunks(classes))
    {
        let max = row_in.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for (o, &z) in row_out.iter_mut().zip(row_in) {
            *o = (z - max).exp();
            sum += *o;
        }
        for o in row_out.iter_mut() {
            *o /= sum;
        }
    }
    Ok(out)
}

/// Mean of the per-sample negative log likelihood, and its gradient with
/// respect to the logits (softmax minus one-hot, divided by the batch size).
pub fn cross_entropy_loss(logits: &Tensor, labels: &[OrientationLabel]) -> Result<(f32, Tensor)> {
    let shape = logits.shape();
    if shape.len() != 2 {
        return Err(Error::Shape(format!(
            "cross_entropy expects [batch, classes], got {shape:?}"
        )));
    }
    let (batch, classes) = (shape[0], shape[1]);
    if labels.len() != batch {
        return Err(Error::Data(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    for (i, label) in labels.iter().enumerate() {
        if (label.theta() as usize) >= classes {
            return Err(Error::Data(format!(
                "label {} out of range at sample {i}",
                label.theta()
            )));
        }
    }
    let probs = softmax(logits)?;
    let mut loss = 0.0f32;
    let mut grad = probs.clone();
    let inv_batch = 1.0 / batch as f32;
    for (i, label) in labels.iter().enumerate() {
        let j = label.theta() as usize;
        let p = probs.data()[i * classes + j];
        // Clamp away from 0 so a fully-confident wrong prediction yields a
        // large finite loss rather than inf.
        loss -= p.max(f32::MIN_POSITIVE).ln();
        grad.data_mut()[i * classes + j] -= 1.0;
    }
    for g in grad.data_mut() {
        *g *= inv_batch;
    }
    Ok((loss * inv_batch, grad))
}

impl Layer {
    /// Builds an uninitialized layer (zero parameters) from its spec entry.
    /// `in_features` is only used by fully-connected layers.
    pub(crate) fn from_spec(spec: &LayerSpec, in_features: usize) -> Result<Option<Layer>> {
        Ok(Some(match spec {
            LayerSpec::Conv {
                name,
                in_channels,
                out_channels,
                kernel,
                stride,
                pad,
                frozen,
                lr_mult,
            } => Layer::Conv(ConvLayer {
                name: name.clone(),
                weights: Tensor::zeros(&[*out_channels, *in_channels, *kernel, *kernel]),
                bias: Tensor::zeros(&[*out_channels]),
                grad_weights: Tensor::zeros(&[*out_channels, *in_channels, *kernel, *kernel]),
                grad_bias: Tensor::zeros(&[*out_channels]),
                stride: *stride,
                pad: *pad,
                frozen: *frozen,
                lr_mult: *lr_mult,
                cached_input: None,
            }),
            LayerSpec::Relu => Layer::Relu(ReluLayer::default()),
            LayerSpec::MaxPool { window, stride } => Layer::MaxPool(MaxPoolLayer {
                window: *window,
                stride: *stride,
                cached: None,
            }),
            LayerSpec::Lrn(params) => Layer::Lrn(LrnLayer {
                params: *params,
                cached_input: None,
            }),
            LayerSpec::Flatten => Layer::Flatten(FlattenLayer::default()),
            LayerSpec::FullyConnected {
                name,
                out_features,
                frozen,
                lr_mult,
            } => Layer::Fc(FcLayer {
                name: name.clone(),
                weights: Tensor::zeros(&[in_features, *out_features]),
                bias: Tensor::zeros(&[*out_features]),
                grad_weights: Tensor::zeros(&[in_features, *out_features]),
                grad_bias: Tensor::zeros(&[*out_features]),
                frozen: *frozen,
                lr_mult: *lr_mult,
                cached_input: None,
            }),
            LayerSpec::Dropout { rate } => Layer::Dropout(DropoutLayer {
                rate: *rate,
                cached_mask: None,
            }),
            LayerSpec::Softmax => return Ok(None),
        }))
    }

    /// Forward pass that records whatever backward will need. `dropout_rng`
    /// None means dropout acts as the identity (evaluation semantics) while
    /// still caching for attribution.
    pub fn forward_cached(
        &mut self,
        input: &Tensor,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor> {
        match self {
            Layer::Conv(l) => {
                let out = tensor::conv2d_forward(input, &l.weights, &l.bias, l.stride, l.pad)?;
                l.cached_input = Some(input.clone());
                Ok(out)
            }
            Layer::Relu(l) => {
                l.cached_input = Some(input.clone());
                Ok(tensor::relu_forward(input))
            }
            Layer::MaxPool(l) => {
                let (out, idx) = tensor::maxpool_forward(input, l.window, l.stride)?;
                l.cached = Some(idx);
                Ok(out)
            }
            Layer::Lrn(l) => {
                l.cached_input = Some(input.clone());
                tensor::lrn_forward(input, &l.params)
            }
            Layer::Flatten(l) => {
                l.cached_shape = Some(input.shape().to_vec());
                let n = input.shape()[0];
                let rest = input.numel() / n;
                input.reshape(&[n, rest])
            }
            Layer::Fc(l) => {
                let out = fully_connected_forward(input, &l.weights, &l.bias)?;
                l.cached_input = Some(input.clone());
                Ok(out)
            }
            Layer::Dropout(l) => match dropout_rng {
                Some(rng) => {
                    let (out, mask) = dropout_forward(input, l.rate, rng)?;
                    l.cached_mask = Some(mask);
                    Ok(out)
                }
                None => {
                    l.cached_mask = None;
                    Ok(input.clone())
                }
            },
        }
    }

    /// Read-only inference pass: no caching, dropout is the identity.
    pub fn forward_inference(&self, input: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv(l) => tensor::conv2d_forward(input, &l.weights, &l.bias, l.stride, l.pad),
            Layer::Relu(_) => Ok(tensor::relu_forward(input)),
            Layer::MaxPool(l) => Ok(tensor::maxpool_forward(input, l.window, l.stride)?.0),
            Layer::Lrn(l) => tensor::lrn_forward(input, &l.params),
            Layer::Flatten(_) => {
                let n = input.shape()[0];
                let rest = input.numel() / n;
                input.reshape(&[n, rest])
            }
            Layer::Fc(l) => fully_connected_forward(input, &l.weights, &l.bias),
            Layer::Dropout(_) => Ok(input.clone()),
        }
    }

    /// Consumes the cached forward state, accumulates parameter gradients,
    /// and returns the gradient with respect to the layer input.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let missing =
            || Error::Usage("backward called without a cached forward activation".into());
        match self {
            Layer::Conv(l) => {
                let input = l.cached_input.as_ref().ok_or_else(missing)?;
                let grads =
                    tensor::conv2d_backward(grad_out, input, &l.weights, l.stride, l.pad)?;
                accumulate(&mut l.grad_weights, &grads.grad_weights);
                accumulate(&mut l.grad_bias, &grads.grad_bias);
                Ok(grads.grad_input)
            }
            Layer::Relu(l) => {
                let input = l.cached_input.as_ref().ok_or_else(missing)?;
                Ok(tensor::relu_backward(grad_out, input))
            }
            Layer::MaxPool(l) => {
                let idx = l.cached.as_ref().ok_or_else(missing)?;
                tensor::maxpool_backward(grad_out, idx)
            }
            Layer::Lrn(l) => {
                let input = l.cached_input.as_ref().ok_or_else(missing)?;
                tensor::lrn_backward(grad_out, input, &l.params)
            }
            Layer::Flatten(l) => {
                let shape = l.cached_shape.as_ref().ok_or_else(missing)?;
                grad_out.reshape(shape)
            }
            Layer::Fc(l) => {
                let input = l.cached_input.as_ref().ok_or_else(missing)?;
                let grads = fully_connected_backward(grad_out, input, &l.weights)?;
                accumulate(&mut l.grad_weights, &grads.grad_weights);
                accumulate(&mut l.grad_bias, &grads.grad_bias);
                Ok(grads.grad_input)
            }
            Layer::Dropout(l) => match &l.cached_mask {
                Some(mask) => {
                    let data = grad_out
                        .data()
                        .iter()
                        .zip(mask.data())
                        .map(|(&g, &m)| g * m)
                        .collect();
                    Tensor::new(grad_out.shape(), data)
                }
                // Identity forward (eval semantics): identity backward.
                None => Ok(grad_out.clone()),
            },
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::Relu(_) => "relu",
            Layer::MaxPool(_) => "maxpool",
            Layer::Lrn(_) => "lrn",
            Layer::Flatten(_) => "flatten",
            Layer::Fc(_) => "fully_connected",
            Layer::Dropout(_) => "dropout",
        }
    }

    pub fn name(&self) -> Option<&str> {
        match self {
            Layer::Conv(l) => Some(&l.name),
            Layer::Fc(l) => Some(&l.name),
            _ => None,
        }
    }

    /// (weights, bias) for parameterized layers.
    pub fn params(&self) -> Option<(&Tensor, &Tensor)> {
        match self {
            Layer::Conv(l) => Some((&l.weights, &l.bias)),
            Layer::Fc(l) => Some((&l.weights, &l.bias)),
            _ => None,
        }
    }

    pub fn grads(&self) -> Option<(&Tensor, &Tensor)> {
        match self {
            Layer::Conv(l) => Some((&l.grad_weights, &l.grad_bias)),
            Layer::Fc(l) => Some((&l.grad_weights, &l.grad_bias)),
            _ => None,
        }
    }

    pub fn frozen(&self) -> bool {
        match self {
            Layer::Conv(l) => l.frozen,
            Layer::Fc(l) => l.frozen,
            _ => false,
        }
    }

    pub fn lr_mult(&self) -> f32 {
        match self {
            Layer::Conv(l) => l.lr_mult,
            Layer::Fc(l) => l.lr_mult,
            _ => 0.0,
        }
    }

    pub fn set_params(&mut self, weights: Tensor, bias: Tensor) -> Result<()> {
        match self {
            Layer::Conv(l) => {
                if weights.shape() != l.weights.shape() || bias.shape() != l.bias.shape() {
                    return Err(Error::Shape(format!(
                        "parameters {:?}/{:?} do not fit conv layer {} ({:?}/{:?})",
                        weights.shape(),
                        bias.shape(),
                        l.name,
                        l.weights.shape(),
                        l.bias.shape()
                    )));
                }
                l.weights = weights;
                l.bias = bias;
                Ok(())
            }
            Layer::Fc(l) => {
                if weights.shape() != l.weights.shape() || bias.shape() != l.bias.shape() {
                    return Err(Error::Shape(format!(
                        "parameters {:?}/{:?} do not fit fc layer {} ({:?}/{:?})",
                        weights.shape(),
                        bias.shape(),
                        l.name,
                        l.weights.shape(),
                        l.bias.shape()
                    )));
                }
                l.weights = weights;
                l.bias = bias;
                Ok(())
            }
            _ => Err(Error::Usage(format!(
                "layer kind {} has no parameters",
                self.kind()
            ))),
        }
    }

    pub fn zero_grads(&mut self) {
        match self {
            Layer::Conv(l) => {
                l.grad_weights.data_mut().fill(0.0);
                l.grad_bias.data_mut().fill(0.0);
            }
            Layer::Fc(l) => {
                l.grad_weights.data_mut().fill(0.0);
                l.grad_bias.data_mut().fill(0.0);
            }
            _ => {}
        }
    }

    pub fn clear_caches(&mut self) {
        match self {
            Layer::Conv(l) => l.cached_input = None,
            Layer::Relu(l) => l.cached_input = None,
            Layer::MaxPool(l) => l.cached = None,
            Layer::Lrn(l) => l.cached_input = None,
            Layer::Flatten(l) => l.cached_shape = None,
            Layer::Fc(l) => l.cached_input = None,
            Layer::Dropout(l) => l.cached_mask = None,
        }
    }
}

fn accumulate(dst: &mut Tensor, src: &Tensor) {
    for (d, &s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d += s;
    }
}

/// A runtime network: the spec's layers instantiated with parameters.
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    layers: Vec<Layer>,
}

impl Network {
    /// Instantiates layers from a validated spec with zeroed parameters.
    pub fn new_uninit(spec: &NetworkSpec) -> Result<Network> {
        spec.validate()?;
        let fan_ins = spec.fc_fan_ins()?;
        let mut fc_idx = 0;
        let mut layers = Vec::new();
        for entry in &spec.layers {
            let in_features = if matches!(entry, LayerSpec::FullyConnected { .. }) {
                let f = fan_ins[fc_idx];
                fc_idx += 1;
                f
            } else {
                0
            };
            if let Some(layer) = Layer::from_spec(entry, in_features)? {
                layers.push(layer);
            }
        }
        Ok(Network {
            spec: spec.clone(),
            layers,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.spec.input_shape
    }

    /// Total parameter count (weights + biases).
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(|l| l.params())
            .map(|(w, b)| w.numel() + b.numel())
            .sum()
    }

    /// Training forward pass: caches activations, applies dropout.
    pub fn forward_train(&mut self, input: &Tensor, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        let mut x = input.clone();
        for layer in &mut self.layers {
            x = layer.forward_cached(&x, Some(rng))?;
        }
        Ok(x)
    }

    /// Caching forward pass with dropout as the identity; used by
    /// attribution, which needs activations but inference semantics.
    pub fn forward_cached_eval(&mut self, input: &Tensor) -> Result<Tensor> {
        let mut x = input.clone();
        for layer in &mut self.layers {
            x = layer.forward_cached(&x, None)?;
        }
        Ok(x)
    }

    /// Read-only inference pass producing logits [n, classes].
    pub fn forward_inference(&self, input: &Tensor) -> Result<Tensor> {
        let mut x = input.clone();
        for layer in &self.layers {
            x = layer.forward_inference(&x)?;
        }
        Ok(x)
    }

    /// Backpropagates from the logits gradient, accumulating parameter
    /// gradients; returns the gradient at the network input.
    pub fn backward(&mut self, grad_logits: &Tensor) -> Result<Tensor> {
        let mut g = grad_logits.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    pub fn zero_grads(&mut self) {
        for layer in &mut self.layers {
            layer.zero_grads();
        }
    }

    pub fn clear_caches(&mut self) {
        for layer in &mut self.layers {
            layer.clear_caches();
        }
    }

    /// Snapshot of all (name, weights, bias) triples in layer order.
    pub fn param_snapshot(&self) -> Vec<(String, Tensor, Tensor)> {
        self.layers
            .iter()
            .filter_map(|l| {
                l.params()
                    .map(|(w, b)| (l.name().unwrap_or(l.kind()).to_string(), w.clone(), b.clone()))
            })
            .collect()
    }
}
