//! Declarative network architectures, weight initialization, and the
//! versioned binary checkpoint format.
//!
//! Two concrete builders: [`build_full_net`] (the full 256x256 five-conv
//! model) and [`build_desk_net`] (a reduced-width surrogate with the same
//! layer ordering for fast CPU experiments).

use crate::error::{CheckpointError, Error, Result};
use crate::layers::{Network, CLASS_COUNT};
use crate::tensor::{conv_out_extent, LrnParams, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// Learning-rate multiplier for the trainable layers of the full-scale model:
/// 20x the 5e-4 base rate gives the per-layer rate 0.01.
pub const FINETUNE_LR_MULT: f32 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        name: String,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        frozen: bool,
        lr_mult: f32,
    },
    Relu,
    MaxPool {
        window: usize,
        stride: usize,
    },
    Lrn(LrnParams),
    Flatten,
    FullyConnected {
        name: String,
        out_features: usize,
        frozen: bool,
        lr_mult: f32,
    },
    Dropout {
        rate: f32,
    },
    Softmax,
}

/// Ordered layer list plus the input geometry. Immutable after
/// construction; `validate` walks the shapes mechanically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// (channels, height, width) accepted by the first layer.
    pub input_shape: (usize, usize, usize),
    pub class_count: usize,
    pub layers: Vec<LayerSpec>,
}

enum WalkState {
    Spatial { c: usize, h: usize, w: usize },
    Flat { features: usize },
}

impl NetworkSpec {
    /// Checks that consecutive layer shapes compose and the final layer
    /// emits `class_count` outputs.
    pub fn validate(&self) -> Result<()> {
        self.walk(|_, _| {}).map(|_| ())
    }

    /// Walks the spec computing the shape after every layer; calls
    /// `visit(index, state)` before each layer is applied.
    fn walk(&self, mut visit: impl FnMut(usize, &WalkState)) -> Result<usize> {
        let (c0, h0, w0) = self.input_shape;
        if c0 == 0 || h0 == 0 || w0 == 0 {
            return Err(Error::Shape("input extents must be >= 1".into()));
        }
        let mut state = WalkState::Spatial {
            c: c0,
            h: h0,
            w: w0,
        };
        let mut final_features = 0usize;
        for (i, layer) in self.layers.iter().enumerate() {
            visit(i, &state);
            if matches!(layer, LayerSpec::Softmax) && i + 1 != self.layers.len() {
                return Err(Error::Shape(format!(
                    "softmax must be the last layer, found at index {i}"
                )));
            }
            state = match (layer, state) {
                (
                    LayerSpec::Conv {
                        name,
                        in_channels,
                        out_channels,
                        kernel,
                        stride,
                        pad,
                        ..
                    },
                    WalkState::Spatial { c, h, w },
                ) => {
                    if *in_channels != c {
                        return Err(Error::Shape(format!(
                            "layer {name} expects {in_channels} input channels, gets {c}"
                        )));
                    }
                    let oh = conv_out_extent(h, *kernel, *stride, *pad).ok_or_else(|| {
                        Error::Shape(format!("layer {name} kernel {kernel} exceeds input {h}x{w}"))
                    })?;
                    let ow = conv_out_extent(w, *kernel, *stride, *pad).ok_or_else(|| {
                        Error::Shape(format!("layer {name} kernel {kernel} exceeds input {h}x{w}"))
                    })?;
                    WalkState::Spatial {
                        c: *out_channels,
                        h: oh,
                        w: ow,
                    }
                }
                (LayerSpec::MaxPool { window, stride }, WalkState::Spatial { c, h, w }) => {
                    if *window > h || *window > w {
                        return Err(Error::Shape(format!(
                            "pool window {window} exceeds activation {h}x{w} at layer {i}"
                        )));
                    }
                    WalkState::Spatial {
                        c,
                        h: (h - window) / stride + 1,
                        w: (w - window) / stride + 1,
                    }
                }
                (LayerSpec::Relu | LayerSpec::Dropout { .. }, s) => s,
                (LayerSpec::Lrn(_), s @ WalkState::Spatial { .. }) => s,
                (LayerSpec::Lrn(_), WalkState::Flat { .. }) => {
                    return Err(Error::Shape(format!(
                        "lrn at index {i} needs a spatial activation"
                    )));
                }
                (LayerSpec::Flatten, WalkState::Spatial { c, h, w }) => {
                    WalkState::Flat { features: c * h * w }
                }
                (LayerSpec::Flatten, WalkState::Flat { features }) => {
                    WalkState::Flat { features }
                }
                (LayerSpec::FullyConnected { out_features, .. }, WalkState::Flat { features }) => {
                    let _ = features;
                    WalkState::Flat {
                        features: *out_features,
                    }
                }
                (LayerSpec::FullyConnected { name, .. }, WalkState::Spatial { .. }) => {
                    return Err(Error::Shape(format!(
                        "fully connected layer {name} needs a flattened input"
                    )));
                }
                (LayerSpec::Softmax, WalkState::Flat { features }) => {
                    WalkState::Flat { features }
                }
                (LayerSpec::Softmax, WalkState::Spatial { .. }) => {
                    return Err(Error::Shape("softmax needs a flattened input".into()));
                }
                (LayerSpec::Conv { name, .. }, WalkState::Flat { .. }) => {
                    return Err(Error::Shape(format!(
                        "conv layer {name} cannot follow a flatten"
                    )));
                }
                (LayerSpec::MaxPool { .. }, WalkState::Flat { .. }) => {
                    return Err(Error::Shape(format!(
                        "maxpool at index {i} cannot follow a flatten"
                    )));
                }
            };
            if let WalkState::Flat { features } = state {
                final_features = features;
            }
        }
        match state {
            WalkState::Flat { features } if features == self.class_count => Ok(final_features),
            WalkState::Flat { features } => Err(Error::Shape(format!(
                "final layer emits {features} outputs, class count is {}",
                self.class_count
            ))),
            WalkState::Spatial { .. } => Err(Error::Shape(
                "network must end in a flattened classifier head".into(),
            )),
        }
    }

    /// Input feature count of each fully-connected layer, in order.
    pub(crate) fn fc_fan_ins(&self) -> Result<Vec<usize>> {
        let mut fans = Vec::new();
        self.walk(|i, state| {
            if matches!(self.layers[i], LayerSpec::FullyConnected { .. }) {
                if let WalkState::Flat { features } = state {
                    fans.push(*features);
                }
            }
        })?;
        Ok(fans)
    }

    /// Names of frozen parameter layers.
    pub fn frozen_layers(&self) -> Vec<String> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Conv { name, frozen, .. } if *frozen => Some(name.clone()),
                LayerSpec::FullyConnected { name, frozen, .. } if *frozen => Some(name.clone()),
                _ => None,
            })
            .collect()
    }

    /// Expected (name, weight shape, bias shape) for every parameter layer.
    pub fn param_shapes(&self) -> Result<Vec<(String, Vec<usize>, Vec<usize>)>> {
        let fan_ins = self.fc_fan_ins()?;
        let mut fc_idx = 0;
        let mut shapes = Vec::new();
        for layer in &self.layers {
            match layer {
                LayerSpec::Conv {
                    name,
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => shapes.push((
                    name.clone(),
                    vec![*out_channels, *in_channels, *kernel, *kernel],
                    vec![*out_channels],
                )),
                LayerSpec::FullyConnected {
                    name, out_features, ..
                } => {
                    let fan_in = fan_ins[fc_idx];
                    fc_idx += 1;
                    shapes.push((name.clone(), vec![fan_in, *out_features], vec![*out_features]));
                }
                _ => {}
            }
        }
        Ok(shapes)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }
}

/// The full-scale model: five conv layers (96/256/384/384/256), pools after
/// conv1, conv2 and conv5, LRN after conv1 and conv2, fc6/fc7 of width 4096
/// each followed by dropout 0.5, and a four-way head. conv1-conv3 are
/// frozen; conv4-conv5 and the fc stack carry the fine-tuning multiplier.
pub fn build_full_net() -> NetworkSpec {
    let lrn = LrnParams::default();
    let conv = |name: &str, cin, cout, k, s, p, frozen, mult| LayerSpec::Conv {
        name: name.into(),
        in_channels: cin,
        out_channels: cout,
        kernel: k,
        stride: s,
        pad: p,
        frozen,
        lr_mult: mult,
    };
    let fc = |name: &str, out| LayerSpec::FullyConnected {
        name: name.into(),
        out_features: out,
        frozen: false,
        lr_mult: FINETUNE_LR_MULT,
    };
    NetworkSpec {
        input_shape: (3, 256, 256),
        class_count: CLASS_COUNT,
        layers: vec![
            conv("conv1", 3, 96, 11, 4, 0, true, 1.0),
            LayerSpec::Relu,
            LayerSpec::Lrn(lrn),
            LayerSpec::MaxPool { window: 3, stride: 2 },
            conv("conv2", 96, 256, 5, 1, 2, true, 1.0),
            LayerSpec::Relu,
            LayerSpec::Lrn(lrn),
            LayerSpec::MaxPool { window: 3, stride: 2 },
            conv("conv3", 256, 384, 3, 1, 1, true, 1.0),
            LayerSpec::Relu,
            conv("conv4", 384, 384, 3, 1, 1, false, FINETUNE_LR_MULT),
            LayerSpec::Relu,
            conv("conv5", 384, 256, 3, 1, 1, false, FINETUNE_LR_MULT),
            LayerSpec::Relu,
            LayerSpec::MaxPool { window: 3, stride: 2 },
            LayerSpec::Flatten,
            fc("fc6", 4096),
            LayerSpec::Relu,
            LayerSpec::Dropout { rate: 0.5 },
            fc("fc7", 4096),
            LayerSpec::Relu,
            LayerSpec::Dropout { rate: 0.5 },
            fc("fc8", CLASS_COUNT),
            LayerSpec::Softmax,
        ],
    }
}

/// Reduced-width surrogate keeping the full model's layer ordering:
/// strided first conv, LRN after the first two convs, pooling after each
/// conv (for the default three-conv stack that is exactly the full model's
/// pool-after-first/second/last pattern), one hidden fc with dropout, and a
/// four-way head. Everything is trainable; the fine-tuning workflow
/// applies freezing.
pub fn build_desk_net(input_side: usize, widths: &[usize]) -> Result<NetworkSpec> {
    if input_side < 16 {
        return Err(Error::Usage(format!(
            "desk net input side must be >= 16, got {input_side}"
        )));
    }
    if widths.is_empty() {
        return Err(Error::Usage("desk net needs at least one conv width".into()));
    }
    let lrn = LrnParams {
        depth_radius: 2,
        ..LrnParams::default()
    };
    let mut layers = Vec::new();
    let mut cin = 3;
    for (i, &cout) in widths.iter().enumerate() {
        let (kernel, stride, pad) = if i == 0 { (5, 2, 2) } else { (3, 1, 1) };
        layers.push(LayerSpec::Conv {
            name: format!("conv{}", i + 1),
            in_channels: cin,
            out_channels: cout,
            kernel,
            stride,
            pad,
            frozen: false,
            lr_mult: 1.0,
        });
        layers.push(LayerSpec::Relu);
        if i < 2 {
            layers.push(LayerSpec::Lrn(lrn));
        }
        layers.push(LayerSpec::MaxPool { window: 2, stride: 2 });
        cin = cout;
    }
    layers.push(LayerSpec::Flatten);
    layers.push(LayerSpec::FullyConnected {
        name: "fc1".into(),
        out_features: 128,
        frozen: false,
        lr_mult: 1.0,
    });
    layers.push(LayerSpec::Relu);
    layers.push(LayerSpec::Dropout { rate: 0.5 });
    layers.push(LayerSpec::FullyConnected {
        name: "fc2".into(),
        out_features: CLASS_COUNT,
        frozen: false,
        lr_mult: 1.0,
    });
    layers.push(LayerSpec::Softmax);
    let spec = NetworkSpec {
        input_shape: (3, input_side, input_side),
        class_count: CLASS_COUNT,
        layers,
    };
    spec.validate()?;
    Ok(spec)
}

pub const DESK_WIDTHS: [usize; 3] = [16, 32, 64];
pub const DESK_INPUT_SIDE: usize = 64;
/// Initialization scale for desk nets trained from scratch on raw
/// mean-subtracted pixels; 0.01 leaves the logits too small to move in a
/// handful of CPU-scale epochs.
pub const DESK_INIT_STD: f32 = 0.05;

pub fn build_desk_net_default() -> NetworkSpec {
    build_desk_net(DESK_INPUT_SIDE, &DESK_WIDTHS).expect("default desk net composes")
}

/// Draws every weight tensor from N(0, std^2) and zeroes every bias.
/// Deterministic under a fixed rng seed.
pub fn init_weights(
    spec: &NetworkSpec,
    rng: &mut ChaCha8Rng,
    std: f32,
) -> Result<Vec<(String, Tensor, Tensor)>> {
    if !(std > 0.0) {
        return Err(Error::Usage(format!("init std must be > 0, got {std}")));
    }
    Ok(spec
        .param_shapes()?
        .into_iter()
        .map(|(name, wshape, bshape)| {
            let w = Tensor::gaussian(&wshape, std, rng);
            let b = Tensor::zeros(&bshape);
            (name, w, b)
        })
        .collect())
}

/// Default initialization scale.
pub const INIT_STD: f32 = 0.01;

/// Builds a network from a spec with freshly initialized parameters.
pub fn network_from_spec(spec: &NetworkSpec, rng: &mut ChaCha8Rng, std: f32) -> Result<Network> {
    let mut net = Network::new_uninit(spec)?;
    let params = init_weights(spec, rng, std)?;
    let mut it = params.into_iter();
    for layer in net.layers_mut() {
        if layer.params().is_some() {
            let (_, w, b) = it.next().expect("init covers every parameter layer");
            layer.set_params(w, b)?;
        }
    }
    Ok(net)
}

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"ORNT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Training metadata carried inside a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub epoch: u32,
    pub seed: u64,
    pub mean_rgb: [f32; 3],
}

impl Default for TrainMeta {
    fn default() -> Self {
        TrainMeta {
            epoch: 0,
            seed: 0,
            mean_rgb: [0.0; 3],
        }
    }
}

/// Spec + parameters + metadata; round-trips through disk bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub meta: TrainMeta,
    /// (layer name, weights, bias) in layer order.
    pub params: Vec<(String, Tensor, Tensor)>,
}

#[derive(Serialize, Deserialize)]
struct SpecBlock {
    spec: NetworkSpec,
    meta: TrainMeta,
}

impl Checkpoint {
    pub fn from_network(net: &Network, meta: TrainMeta) -> Checkpoint {
        Checkpoint {
            spec: net.spec().clone(),
            meta,
            params: net.param_snapshot(),
        }
    }

    /// Instantiates a runtime network carrying this checkpoint's weights.
    pub fn instantiate(&self) -> Result<Network> {
        let mut net = Network::new_uninit(&self.spec)?;
        let mut it = self.params.iter();
        for layer in net.layers_mut() {
            if layer.params().is_some() {
                let (_, w, b) = it.next().ok_or_else(|| {
                    Error::Checkpoint(CheckpointError::SpecBlock(
                        "fewer parameter tensors than parameter layers".into(),
                    ))
                })?;
                layer.set_params(w.clone(), b.clone())?;
            }
        }
        Ok(net)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let io_err = |e| Error::io("<writer>", e);
        w.write_all(&CHECKPOINT_MAGIC).map_err(io_err)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io_err)?;
        let block = serde_json::to_vec(&SpecBlock {
            spec: self.spec.clone(),
            meta: self.meta.clone(),
        })
        .map_err(|e| Error::Checkpoint(CheckpointError::SpecBlock(e.to_string())))?;
        w.write_all(&(block.len() as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(&block).map_err(io_err)?;
        for (_, weights, bias) in &self.params {
            for tensor in [weights, bias] {
                w.write_all(&(tensor.numel() as u32).to_le_bytes()).map_err(io_err)?;
                let mut bytes = Vec::with_capacity(tensor.numel() * 4);
                for v in tensor.data() {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
                w.write_all(&bytes).map_err(io_err)?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Checkpoint> {
        let mut magic = [0u8; 4];
        read_exact_or(r, &mut magic, "magic bytes")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic.into());
        }
        let mut word = [0u8; 4];
        read_exact_or(r, &mut word, "version")?;
        let version = u32::from_le_bytes(word);
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version).into());
        }
        read_exact_or(r, &mut word, "spec block length")?;
        let block_len = u32::from_le_bytes(word) as usize;
        let mut block = vec![0u8; block_len];
        read_exact_or(r, &mut block, "spec block")?;
        let SpecBlock { spec, meta } = serde_json::from_slice(&block)
            .map_err(|e| CheckpointError::SpecBlock(e.to_string()))?;
        spec.validate()?;

        let mut params = Vec::new();
        for (name, wshape, bshape) in spec.param_shapes()? {
            let weights = read_tensor(r, &name, &wshape)?;
            let bias = read_tensor(r, &name, &bshape)?;
            params.push((name, weights, bias));
        }
        // Anything after the last tensor means the file is not what the
        // spec block promised.
        let mut probe = [0u8; 1];
        match r.read(&mut probe) {
            Ok(0) => {}
            Ok(_) => return Err(CheckpointError::TrailingBytes.into()),
            Err(e) => return Err(Error::io("<reader>", e)),
        }
        Ok(Checkpoint { spec, meta, params })
    }
}

fn read_exact_or(r: &mut impl Read, buf: &mut [u8], what: &'static str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Checkpoint(CheckpointError::Truncated(what))
        } else {
            Error::io("<reader>", e)
        }
    })
}

fn read_tensor(r: &mut impl Read, layer: &str, shape: &[usize]) -> Result<Tensor> {
    let mut word = [0u8; 4];
    read_exact_or(r, &mut word, "tensor header")?;
    let numel = u32::from_le_bytes(word) as usize;
    let expected: usize = shape.iter().product();
    if numel != expected {
        return Err(CheckpointError::TensorShape {
            layer: layer.to_string(),
            expected,
            got: numel,
        }
        .into());
    }
    let mut bytes = vec![0u8; numel * 4];
    read_exact_or(r, &mut bytes, "tensor data")?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(shape, data)
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    ckpt.write_to(&mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = std::io::BufReader::new(file);
    Checkpoint::read_from(&mut r)
}

/// Fraction of conv layers frozen by the fine-tuning workflow: all but the
/// last two, and at least one.
pub fn finetune_freeze_count(n_conv: usize) -> usize {
    n_conv.saturating_sub(2).max(1).min(n_conv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn full_net_composes_and_has_four_outputs() {
        let spec = build_full_net();
        spec.validate().unwrap();
        let last_fc = spec
            .layers
            .iter()
            .rev()
            .find_map(|l| match l {
                LayerSpec::FullyConnected { out_features, .. } => Some(*out_features),
                _ => None,
            })
            .unwrap();
        assert_eq!(last_fc, 4);
    }

    #[test]
    fn full_net_dropout_rate_is_half() {
        let spec = build_full_net();
        let rates: Vec<f32> = spec
            .layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Dropout { rate } => Some(*rate),
                _ => None,
            })
            .collect();
        assert_eq!(rates, vec![0.5, 0.5]);
    }

    #[test]
    fn full_net_freezes_exactly_the_first_three_convs() {
        let spec = build_full_net();
        assert_eq!(spec.frozen_layers(), vec!["conv1", "conv2", "conv3"]);
    }

    #[test]
    fn full_net_forward_on_zero_image_is_finite() {
        let spec = build_full_net();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = network_from_spec(&spec, &mut rng, INIT_STD).unwrap();
        let input = Tensor::zeros(&[1, 3, 256, 256]);
        let logits = net.forward_inference(&input).unwrap();
        assert_eq!(logits.shape(), &[1, 4]);
        assert!(logits.is_finite());
    }

    #[test]
    fn desk_net_is_small_and_shapes_flow() {
        let spec = build_desk_net_default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = network_from_spec(&spec, &mut rng, INIT_STD).unwrap();
        assert!(net.param_count() < 1_000_000, "{}", net.param_count());
        let input = Tensor::gaussian(&[2, 3, 64, 64], 1.0, &mut rng);
        let logits = net.forward_inference(&input).unwrap();
        assert_eq!(logits.shape(), &[2, 4]);
    }

    #[test]
    fn desk_net_input_side_changes_only_spatial_extents() {
        let a = build_desk_net(64, &DESK_WIDTHS).unwrap();
        let b = build_desk_net(96, &DESK_WIDTHS).unwrap();
        let widths = |s: &NetworkSpec| {
            s.layers
                .iter()
                .filter_map(|l| match l {
                    LayerSpec::Conv { out_channels, .. } => Some(*out_channels),
                    _ => None,
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(widths(&a), widths(&b));
        assert_ne!(a.input_shape, b.input_shape);
    }

    #[test]
    fn desk_net_rejects_tiny_inputs_and_bad_widths() {
        assert!(matches!(
            build_desk_net(8, &DESK_WIDTHS),
            Err(Error::Usage(_))
        ));
        // Enough convs/pools to shrink spatial extent to nothing.
        let too_deep = vec![8usize; 9];
        assert!(matches!(
            build_desk_net(16, &too_deep),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn init_weights_matches_requested_std() {
        let spec = build_desk_net_default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = init_weights(&spec, &mut rng, 0.01).unwrap();
        // fc1 weights: 1024 x 128 values, plenty for a tight estimate.
        let fc1 = &params.iter().find(|(n, _, _)| n == "fc1").unwrap().1;
        assert!(fc1.numel() >= 10_000);
        let n = fc1.numel() as f64;
        let mean: f64 = fc1.data().iter().map(|&v| v as f64).sum::<f64>() / n;
        let var: f64 = fc1.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        assert!((std - 0.01).abs() < 0.0005, "std {std}");
        for (_, _, bias) in &params {
            assert!(bias.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn init_weights_is_deterministic_under_a_seed() {
        let spec = build_desk_net_default();
        let a = init_weights(&spec, &mut ChaCha8Rng::seed_from_u64(5), 0.01).unwrap();
        let b = init_weights(&spec, &mut ChaCha8Rng::seed_from_u64(5), 0.01).unwrap();
        for ((_, wa, ba), (_, wb, bb)) in a.iter().zip(&b) {
            assert_eq!(wa.data(), wb.data());
            assert_eq!(ba.data(), bb.data());
        }
    }

    #[test]
    fn spec_json_rendering_round_trips() {
        let spec = build_full_net();
        let json = spec.to_json();
        let parsed: NetworkSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed, spec);
        assert!(json.contains("conv4"));
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let spec = build_desk_net(16, &[4, 8]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = network_from_spec(&spec, &mut rng, 0.01).unwrap();
        let ckpt = Checkpoint::from_network(&net, TrainMeta::default());
        let mut bytes = Vec::new();
        ckpt.write_to(&mut bytes).unwrap();
        let loaded = Checkpoint::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(loaded, ckpt);
    }

    #[test]
    fn checkpoint_bad_magic_is_detected() {
        let spec = build_desk_net(16, &[4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = network_from_spec(&spec, &mut rng, 0.01).unwrap();
        let ckpt = Checkpoint::from_network(&net, TrainMeta::default());
        let mut bytes = Vec::new();
        ckpt.write_to(&mut bytes).unwrap();
        bytes[0] = b'X';
        let err = Checkpoint::read_from(&mut bytes.as_slice()).unwrap_err();
        assert!(matches!(
            err,
            Error::Checkpoint(CheckpointError::BadMagic)
        ));
    }

    #[test]
    fn checkpoint_truncation_is_detected() {
        let spec = build_desk_net(16, &[4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = network_from_spec(&spec, &mut rng, 0.01).unwrap();
        let ckpt = Checkpoint::from_network(&net, TrainMeta::default());
        let mut bytes = Vec::new();
        ckpt.write_to(&mut bytes).unwrap();
        bytes.pop();
        let err = Checkpoint::read_from(&mut bytes.as_slice()).unwrap_err();
        assert!(matches!(
            err,
            Error::Checkpoint(CheckpointError::Truncated(_))
        ));
    }

    #[test]
    fn checkpoint_unsupported_version_is_detected() {
        let spec = build_desk_net(16, &[4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = network_from_spec(&spec, &mut rng, 0.01).unwrap();
        let ckpt = Checkpoint::from_network(&net, TrainMeta::default());
        let mut bytes = Vec::new();
        ckpt.write_to(&mut bytes).unwrap();
        bytes[4] = 99;
        let err = Checkpoint::read_from(&mut bytes.as_slice()).unwrap_err();
        assert!(matches!(
            err,
            Error::Checkpoint(CheckpointError::UnsupportedVersion(_))
        ));
    }
}
