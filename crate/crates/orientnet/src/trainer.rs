//! SGD-with-momentum training: per-layer learning-rate multipliers, a
//! piecewise-constant schedule, weight decay, the epoch loop with
//! validation-plateau stopping, and the pretrain-then-fine-tune workflow.
//!
//! Determinism: all randomness flows from `TrainConfig::seed` through
//! ChaCha streams. Augmentation draws from a stream indexed by (epoch,
//! sample), so batch assembly order cannot change results. With
//! `ORIENTNET_THREADS=0` two runs with the same seed produce byte-identical
//! history CSVs and checkpoints; the kernels are bit-stable across pool
//! sizes anyway.

use crate::datapipe::{
    augment, preprocess, rotate_image, AugmentParams, DatasetManifest, OrientationLabel,
};
use crate::error::{Error, Result};
use crate::imageio;
use crate::layers::{cross_entropy_loss, softmax, Network};
use crate::netspec::{
    finetune_freeze_count, init_weights, Checkpoint, LayerSpec, NetworkSpec, TrainMeta, INIT_STD,
};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};

/// Training hyperparameters. `layer_lr` entries override the multiplier a
/// layer's spec carries; unlisted layers keep the spec value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub momentum: f32,
    pub batch_size: usize,
    pub weight_decay: f32,
    /// (start_epoch, rate) pairs; strictly increasing epochs, first at 0.
    pub lr_schedule: Vec<(u32, f32)>,
    #[serde(default)]
    pub layer_lr: BTreeMap<String, f32>,
    pub max_epochs: u32,
    pub plateau_patience: u32,
    pub seed: u64,
    #[serde(default = "default_augment")]
    pub augment: Option<AugmentParams>,
}

fn default_augment() -> Option<AugmentParams> {
    Some(AugmentParams::default())
}

/// Validation loss must improve by more than this to reset the plateau
/// counter.
pub const PLATEAU_THRESHOLD: f32 = 1e-4;

impl TrainConfig {
    /// The full-scale recipe: momentum 0.9, batch 256, weight decay 5e-4,
    /// base rate 5e-4 raised to 5e-3 at epoch 10, 30 epochs.
    pub fn full_default() -> TrainConfig {
        TrainConfig {
            momentum: 0.9,
            batch_size: 256,
            weight_decay: 5e-4,
            lr_schedule: vec![(0, 5e-4), (10, 5e-3)],
            layer_lr: BTreeMap::new(),
            max_epochs: 30,
            plateau_patience: 5,
            seed: 0,
            augment: Some(AugmentParams::default()),
        }
    }

    /// CPU-scale recipe for the desk net on synthetic scenes.
    pub fn desk_default() -> TrainConfig {
        TrainConfig {
            momentum: 0.9,
            batch_size: 32,
            weight_decay: 5e-4,
            lr_schedule: vec![(0, 2e-4)],
            layer_lr: BTreeMap::new(),
            max_epochs: 20,
            plateau_patience: 5,
            seed: 0,
            augment: Some(AugmentParams::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Usage(format!(
                "momentum must be in [0,1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Usage("batch_size must be positive".into()));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return Err(Error::Usage(format!(
                "weight_decay must be finite and >= 0, got {}",
                self.weight_decay
            )));
        }
        if self.lr_schedule.is_empty() {
            return Err(Error::Usage("lr_schedule must have at least one entry".into()));
        }
        if self.lr_schedule[0].0 != 0 {
            return Err(Error::Usage("lr_schedule must start at epoch 0".into()));
        }
        for pair in self.lr_schedule.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(Error::Usage(
                    "lr_schedule epochs must be strictly increasing".into(),
                ));
            }
        }
        for &(_, rate) in &self.lr_schedule {
            if !(rate > 0.0) || !rate.is_finite() {
                return Err(Error::Usage(format!("learning rates must be > 0, got {rate}")));
            }
        }
        if self.max_epochs == 0 {
            return Err(Error::Usage("max_epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Piecewise-constant lookup: the rate of the last entry whose start epoch
/// is <= `epoch`.
pub fn lr_at_epoch(schedule: &[(u32, f32)], epoch: u32) -> f32 {
    let mut rate = schedule.first().map(|&(_, r)| r).unwrap_or(0.0);
    for &(start, r) in schedule {
        if start <= epoch {
            rate = r;
        } else {
            break;
        }
    }
    rate
}

/// Momentum buffers, one (weights, bias) pair per parameter layer.
#[derive(Debug, Clone)]
pub struct SgdState {
    velocities: Vec<(Tensor, Tensor)>,
}

impl SgdState {
    pub fn new(net: &Network) -> SgdState {
        SgdState {
            velocities: net
                .layers()
                .iter()
                .filter_map(|l| l.params())
                .map(|(w, b)| (Tensor::zeros_like(w), Tensor::zeros_like(b)))
                .collect(),
        }
    }
}

fn step_tensor(
    param: &mut [f32],
    grad: &[f32],
    vel: &mut [f32],
    momentum: f32,
    lr: f32,
    decay: f32,
) {
    for ((p, &g), v) in param.iter_mut().zip(grad).zip(vel.iter_mut()) {
        *v = momentum * *v - lr * (g + decay * *p);
        *p += *v;
    }
}

/// One optimizer step: v <- momentum*v - lr_eff*(grad + decay*w),
/// w <- w + v, with lr_eff = lr_global * layer multiplier. Frozen layers
/// are untouched, velocities included.
pub fn sgd_step(
    net: &mut Network,
    state: &mut SgdState,
    lr_global: f32,
    cfg: &TrainConfig,
) -> Result<()> {
    let mut vi = 0;
    for layer in net.layers_mut() {
        if layer.params().is_none() {
            continue;
        }
        let idx = vi;
        vi += 1;
        if layer.frozen() {
            continue;
        }
        let name = layer.name().unwrap_or("?").to_string();
        let mult = cfg
            .layer_lr
            .get(&name)
            .copied()
            .unwrap_or_else(|| layer.lr_mult());
        if mult == 0.0 {
            continue;
        }
        let (gw, gb) = layer.grads().expect("parameter layer has grads");
        if !(gw.is_finite() && gb.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient in layer {name}"
            )));
        }
        let lr_eff = lr_global * mult;
        let (vel_w, vel_b) = &mut state.velocities[idx];
        let gw = gw.clone();
        let gb = gb.clone();
        match layer {
            crate::layers::Layer::Conv(l) => {
                step_tensor(
                    l.weights.data_mut(),
                    gw.data(),
                    vel_w.data_mut(),
                    cfg.momentum,
                    lr_eff,
                    cfg.weight_decay,
                );
                step_tensor(
                    l.bias.data_mut(),
                    gb.data(),
                    vel_b.data_mut(),
                    cfg.momentum,
                    lr_eff,
                    cfg.weight_decay,
                );
            }
            crate::layers::Layer::Fc(l) => {
                step_tensor(
                    l.weights.data_mut(),
                    gw.data(),
                    vel_w.data_mut(),
                    cfg.momentum,
                    lr_eff,
                    cfg.weight_decay,
                );
                step_tensor(
                    l.bias.data_mut(),
                    gb.data(),
                    vel_b.data_mut(),
                    cfg.momentum,
                    lr_eff,
                    cfg.weight_decay,
                );
            }
            _ => unreachable!("params() is Some only for conv and fc"),
        }
    }
    Ok(())
}

/// One row of the training history CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: u32,
    pub lr: f32,
    pub train_loss: f32,
    pub val_loss: f32,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StopReason {
    MaxEpochs,
    /// Validation loss failed to improve for `patience` epochs after
    /// `best_epoch`.
    Plateau { best_epoch: u32 },
    /// Non-finite loss or gradient; the best checkpoint so far is retained.
    Aborted {
        epoch: u32,
        batch: usize,
        detail: String,
    },
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    /// Best-validation-loss snapshot.
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochStats>,
    pub stop: StopReason,
}

/// Plateau stopping: halts exactly `patience` epochs after the best one.
#[derive(Debug, Clone)]
pub struct PlateauTracker {
    threshold: f32,
    patience: u32,
    best: f32,
    best_epoch: u32,
    since_best: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlateauDecision {
    Improved,
    Wait,
    Stop,
}

impl PlateauTracker {
    pub fn new(threshold: f32, patience: u32) -> PlateauTracker {
        PlateauTracker {
            threshold,
            patience,
            best: f32::INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    pub fn best_epoch(&self) -> u32 {
        self.best_epoch
    }

    pub fn observe(&mut self, epoch: u32, val_loss: f32) -> PlateauDecision {
        if val_loss < self.best - self.threshold {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            return PlateauDecision::Improved;
        }
        self.since_best += 1;
        if self.patience > 0 && self.since_best >= self.patience {
            PlateauDecision::Stop
        } else {
            PlateauDecision::Wait
        }
    }
}

/// How manifest labels map to training samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    /// Entries reference upright files; the loader rotates by theta and the
    /// label is that rotation.
    Orientation,
    /// Entries reference files used as stored; theta is a plain class
    /// label (the auxiliary pre-training task).
    DirectLabel,
}

struct ImageCache {
    map: HashMap<PathBuf, Tensor>,
}

impl ImageCache {
    fn new() -> ImageCache {
        ImageCache {
            map: HashMap::new(),
        }
    }

    fn get(&mut self, path: &Path) -> Result<&Tensor> {
        if !self.map.contains_key(path) {
            let decoded = imageio::decode(path)?;
            self.map.insert(path.to_path_buf(), decoded.pixels);
        }
        Ok(&self.map[path])
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-sample rng stream: deterministic whatever order samples are
/// assembled in.
fn sample_rng(seed: u64, epoch: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(epoch ^ splitmix64(index))))
}

/// Loads, rotates (per task), optionally augments, and mean-subtracts one
/// sample into network input space.
#[allow(clippy::too_many_arguments)]
fn materialize_sample(
    cache: &mut ImageCache,
    entry: &crate::datapipe::Sample,
    task: TaskKind,
    augment_params: Option<&AugmentParams>,
    mean_rgb: [f32; 3],
    input_side: usize,
    seed: u64,
    epoch: u64,
    index: u64,
) -> Result<Tensor> {
    let upright = cache.get(&entry.path)?.clone();
    let oriented = match task {
        TaskKind::Orientation => rotate_image(&upright, entry.theta),
        TaskKind::DirectLabel => upright,
    };
    let augmented = match augment_params {
        Some(p) => {
            let mut rng = sample_rng(seed, epoch, index);
            augment(&oriented, &mut rng, p)
        }
        None => oriented,
    };
    preprocess(&augmented, mean_rgb, Some(input_side))
}

fn batch_tensor(samples: &[Tensor]) -> Result<Tensor> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Data("empty batch".into()))?;
    let mut shape = vec![samples.len()];
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(samples.len() * first.numel());
    for s in samples {
        if s.shape() != first.shape() {
            return Err(Error::Shape(format!(
                "batch mixes shapes {:?} and {:?}",
                first.shape(),
                s.shape()
            )));
        }
        data.extend_from_slice(s.data());
    }
    Tensor::new(&shape, data)
}

struct ValStats {
    loss: f32,
    accuracy: f64,
}

fn validate_pass(
    net: &Network,
    cache: &mut ImageCache,
    manifest: &DatasetManifest,
    task: TaskKind,
    mean_rgb: [f32; 3],
    input_side: usize,
    batch_size: usize,
) -> Result<ValStats> {
    let mut loss_sum = 0.0f64;
    let mut correct = 0usize;
    let mut total = 0usize;
    for chunk in manifest.entries.chunks(batch_size) {
        let mut samples = Vec::with_capacity(chunk.len());
        let mut labels = Vec::with_capacity(chunk.len());
        for entry in chunk {
            samples.push(materialize_sample(
                cache, entry, task, None, mean_rgb, input_side, 0, 0, 0,
            )?);
            labels.push(entry.theta);
        }
        let batch = batch_tensor(&samples)?;
        let logits = net.forward_inference(&batch)?;
        let (loss, _) = cross_entropy_loss(&logits, &labels)?;
        loss_sum += loss as f64 * chunk.len() as f64;
        let probs = softmax(&logits)?;
        for (i, label) in labels.iter().enumerate() {
            let row = &probs.data()[i * 4..(i + 1) * 4];
            let pred = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            if pred == label.theta() as usize {
                correct += 1;
            }
            total += 1;
        }
    }
    Ok(ValStats {
        loss: (loss_sum / total as f64) as f32,
        accuracy: correct as f64 / total as f64,
    })
}

pub fn train(
    net: &mut Network,
    train_manifest: &DatasetManifest,
    val_manifest: &DatasetManifest,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    train_task(net, train_manifest, val_manifest, cfg, TaskKind::Orientation)
}

/// The epoch loop. Augmentation applies to training batches only; the
/// dataset mean is computed from the training split and stored in the
/// checkpoint.
pub fn train_task(
    net: &mut Network,
    train_manifest: &DatasetManifest,
    val_manifest: &DatasetManifest,
    cfg: &TrainConfig,
    task: TaskKind,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if train_manifest.is_empty() {
        return Err(Error::Data("training manifest is empty".into()));
    }
    if val_manifest.is_empty() {
        return Err(Error::Data("validation manifest is empty".into()));
    }
    let (_, input_side, _) = net.input_shape();

    let mut cache = ImageCache::new();
    let mean_rgb = {
        let mut sums = [0.0f64; 3];
        let mut count = 0u64;
        for entry in &train_manifest.entries {
            let img = cache.get(&entry.path)?;
            let plane = img.shape()[1] * img.shape()[2];
            for ch in 0..3 {
                sums[ch] += img.data()[ch * plane..(ch + 1) * plane]
                    .iter()
                    .map(|&v| v as f64)
                    .sum::<f64>();
            }
            count += plane as u64;
        }
        [
            (sums[0] / count as f64) as f32,
            (sums[1] / count as f64) as f32,
            (sums[2] / count as f64) as f32,
        ]
    };

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed ^ 0x5155_FF1E));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed ^ 0xD20_9001));
    let mut state = SgdState::new(net);
    let mut tracker = PlateauTracker::new(PLATEAU_THRESHOLD, cfg.plateau_patience);
    let meta = |epoch: u32| TrainMeta {
        epoch,
        seed: cfg.seed,
        mean_rgb,
    };
    let mut best: Option<Checkpoint> = None;
    let mut history = Vec::new();
    let mut stop = StopReason::MaxEpochs;

    let mut indices: Vec<usize> = (0..train_manifest.len()).collect();
    'epochs: for epoch in 0..cfg.max_epochs {
        let lr = lr_at_epoch(&cfg.lr_schedule, epoch);
        indices.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0f64;
        let mut seen = 0usize;
        for (batch_no, chunk) in indices.chunks(cfg.batch_size).enumerate() {
            let mut samples = Vec::with_capacity(chunk.len());
            let mut labels = Vec::with_capacity(chunk.len());
            for &idx in chunk {
                let entry = &train_manifest.entries[idx];
                samples.push(materialize_sample(
                    &mut cache,
                    entry,
                    task,
                    cfg.augment.as_ref(),
                    mean_rgb,
                    input_side,
                    cfg.seed,
                    epoch as u64,
                    idx as u64,
                )?);
                labels.push(entry.theta);
            }
            let batch = batch_tensor(&samples)?;
            let logits = net.forward_train(&batch, &mut dropout_rng)?;
            let step = cross_entropy_loss(&logits, &labels).and_then(|(loss, grad)| {
                if !loss.is_finite() {
                    return Err(Error::Numeric("non-finite training loss".into()));
                }
                net.backward(&grad)?;
                sgd_step(net, &mut state, lr, cfg)?;
                Ok(loss)
            });
            net.zero_grads();
            match step {
                Ok(loss) => {
                    loss_sum += loss as f64 * chunk.len() as f64;
                    seen += chunk.len();
                }
                Err(e) => {
                    stop = StopReason::Aborted {
                        epoch,
                        batch: batch_no,
                        detail: e.to_string(),
                    };
                    break 'epochs;
                }
            }
        }
        let val = validate_pass(
            net,
            &mut cache,
            val_manifest,
            task,
            mean_rgb,
            input_side,
            cfg.batch_size,
        )?;
        if !val.loss.is_finite() {
            stop = StopReason::Aborted {
                epoch,
                batch: 0,
                detail: "non-finite validation loss".into(),
            };
            break;
        }
        history.push(EpochStats {
            epoch,
            lr,
            train_loss: (loss_sum / seen as f64) as f32,
            val_loss: val.loss,
            val_acc: val.accuracy,
        });
        match tracker.observe(epoch, val.loss) {
            PlateauDecision::Improved => {
                best = Some(Checkpoint::from_network(net, meta(epoch)));
            }
            PlateauDecision::Wait => {}
            PlateauDecision::Stop => {
                stop = StopReason::Plateau {
                    best_epoch: tracker.best_epoch(),
                };
                break;
            }
        }
    }

    let checkpoint = best.unwrap_or_else(|| Checkpoint::from_network(net, meta(0)));
    Ok(TrainOutput {
        checkpoint,
        history,
        stop,
    })
}

/// Builds the fine-tuning spec: the first `finetune_freeze_count` convs
/// frozen; the remaining convs and the re-initialized fc stack carry the
/// boosted fine-tuning multiplier, mirroring the full-scale model's
/// freeze/rate pattern.
fn finetune_spec(base: &NetworkSpec) -> NetworkSpec {
    let n_conv = base
        .layers
        .iter()
        .filter(|l| matches!(l, LayerSpec::Conv { .. }))
        .count();
    let freeze = finetune_freeze_count(n_conv);
    let mut spec = base.clone();
    let mut conv_idx = 0;
    for layer in &mut spec.layers {
        match layer {
            LayerSpec::Conv {
                frozen, lr_mult, ..
            } => {
                *frozen = conv_idx < freeze;
                if !*frozen {
                    *lr_mult = crate::netspec::FINETUNE_LR_MULT;
                }
                conv_idx += 1;
            }
            LayerSpec::FullyConnected { lr_mult, .. } => {
                *lr_mult = crate::netspec::FINETUNE_LR_MULT;
            }
            _ => {}
        }
    }
    spec
}

/// Loads the conv trunk from a base checkpoint, re-initializes every fc
/// layer with N(0, 0.01^2), freezes the early convs, and trains on the
/// target manifests.
pub fn finetune_workflow(
    base: &Checkpoint,
    train_manifest: &DatasetManifest,
    val_manifest: &DatasetManifest,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    let mut net = finetune_network(base, cfg.seed)?;
    train(&mut net, train_manifest, val_manifest, cfg)
}

/// The network `finetune_workflow` starts from; exposed so tests can
/// compare parameters before and after training.
pub fn finetune_network(base: &Checkpoint, seed: u64) -> Result<Network> {
    let spec = finetune_spec(&base.spec);
    let mut net = Network::new_uninit(&spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0xF1E7_0000));
    let fresh = init_weights(&spec, &mut rng, INIT_STD)?;
    let base_params: HashMap<&str, (&Tensor, &Tensor)> = base
        .params
        .iter()
        .map(|(n, w, b)| (n.as_str(), (w, b)))
        .collect();
    let mut fresh_it = fresh.into_iter();
    for layer in net.layers_mut() {
        if layer.params().is_none() {
            continue;
        }
        let (name, fresh_w, fresh_b) = fresh_it.next().expect("init covers parameter layers");
        match layer {
            crate::layers::Layer::Conv(_) => {
                let (w, b) = base_params.get(name.as_str()).ok_or_else(|| {
                    Error::Shape(format!(
                        "base checkpoint has no parameters for conv layer {name}"
                    ))
                })?;
                layer.set_params((*w).clone(), (*b).clone()).map_err(|_| {
                    Error::Shape(format!(
                        "base checkpoint trunk is shape-incompatible at layer {name}"
                    ))
                })?;
            }
            crate::layers::Layer::Fc(_) => {
                layer.set_params(fresh_w, fresh_b)?;
            }
            _ => unreachable!(),
        }
    }
    Ok(net)
}

/// Generates a shape-classification dataset under `dir` and pre-trains the
/// given spec on it from scratch; the resulting checkpoint serves as the
/// fine-tuning base.
pub fn pretrain_shape_trunk(
    spec: &NetworkSpec,
    dir: &Path,
    n_train: usize,
    n_val: usize,
    cfg: &TrainConfig,
) -> Result<Checkpoint> {
    let side = spec.input_shape.1;
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed ^ 0x5AAE_5));
    let mut make = |prefix: &str, n: usize| -> Result<DatasetManifest> {
        let mut entries = Vec::with_capacity(n);
        for i in 0..n {
            let (img, class) = crate::datapipe::synth_shape(&mut rng, side);
            let path = dir.join(format!("{prefix}{i:05}.ppm"));
            imageio::write_image(&path, &img, imageio::ImageFormat::Ppm, None)?;
            entries.push(crate::datapipe::Sample {
                path,
                theta: OrientationLabel::new(class as u8)?,
            });
        }
        DatasetManifest::new(entries, format!("shapes-{prefix}"))
    };
    let train_m = make("shape_train_", n_train)?;
    let val_m = make("shape_val_", n_val)?;
    let mut net = crate::netspec::network_from_spec(
        spec,
        &mut ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed ^ 0x1417)),
        crate::netspec::DESK_INIT_STD,
    )?;
    let out = train_task(&mut net, &train_m, &val_m, cfg, TaskKind::DirectLabel)?;
    Ok(out.checkpoint)
}

/// History CSV: epoch, lr, train_loss, val_loss, val_acc.
pub fn history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,lr,train_loss,val_loss,val_acc\n");
    for row in history {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.epoch, row.lr, row.train_loss, row.val_loss, row.val_acc
        ));
    }
    out
}

pub fn write_history_csv(path: impl AsRef<Path>, history: &[EpochStats]) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(history_csv(history).as_bytes())
        .map_err(|e| Error::io(path, e))
}
