//! Dataset plumbing: orientation labels, JSONL manifests, the 4x rotation
//! labeling scheme, augmentation, mean subtraction, protocol sampling and
//! the procedural synthetic-scene generators used for desk-scale runs.
//!
//! Label convention, fixed globally: theta is the clockwise rotation that
//! was applied to the upright image (0 -> 0, 1 -> 90, 2 -> 180, 3 -> 270
//! degrees). Correcting an image rotates it clockwise by (4 - theta) mod 4
//! quarter turns. A manifest entry {"path", "theta"} references an upright
//! source file; the loader materializes the sample by rotating it.

use crate::error::{Error, Result};
use crate::tensor::{bilinear_resize, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

/// Class label: clockwise quarter turns applied to the upright image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OrientationLabel(u8);

impl OrientationLabel {
    pub const ALL: [OrientationLabel; 4] = [
        OrientationLabel(0),
        OrientationLabel(1),
        OrientationLabel(2),
        OrientationLabel(3),
    ];

    pub fn new(theta: u8) -> Result<Self> {
        if theta < 4 {
            Ok(OrientationLabel(theta))
        } else {
            Err(Error::Data(format!(
                "orientation label must be 0..=3, got {theta}"
            )))
        }
    }

    pub const UPRIGHT: OrientationLabel = OrientationLabel(0);

    pub fn theta(self) -> u8 {
        self.0
    }

    pub fn degrees(self) -> u16 {
        self.0 as u16 * 90
    }

    /// The rotation that brings a theta-rotated image back upright.
    pub fn correction(self) -> OrientationLabel {
        OrientationLabel((4 - self.0) % 4)
    }

    /// Group composition: applying `self` then `other`.
    pub fn compose(self, other: OrientationLabel) -> OrientationLabel {
        OrientationLabel((self.0 + other.0) % 4)
    }
}

impl std::fmt::Display for OrientationLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Serialize for OrientationLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.0)
    }
}

impl<'de> Deserialize<'de> for OrientationLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = u8::deserialize(d)?;
        OrientationLabel::new(v).map_err(serde::de::Error::custom)
    }
}

/// One manifest line: an upright source file and the rotation to apply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub path: PathBuf,
    pub theta: OrientationLabel,
}

/// An ordered list of samples plus dataset-level statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<Sample>,
    pub mean_rgb: [f32; 3],
    pub source: String,
}

#[derive(Serialize, Deserialize)]
struct ManifestMeta {
    mean_rgb: [f32; 3],
    source: String,
}

impl DatasetManifest {
    pub fn new(entries: Vec<Sample>, source: impl Into<String>) -> Result<Self> {
        let m = DatasetManifest {
            entries,
            mean_rgb: [0.0; 3],
            source: source.into(),
        };
        m.check_unique()?;
        Ok(m)
    }

    fn check_unique(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for s in &self.entries {
            if !seen.insert((s.path.clone(), s.theta)) {
                return Err(Error::Data(format!(
                    "duplicate manifest entry ({}, theta {})",
                    s.path.display(),
                    s.theta
                )));
            }
        }
        if self.mean_rgb.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("manifest mean_rgb is not finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn class_counts(&self) -> [usize; 4] {
        let mut counts = [0usize; 4];
        for s in &self.entries {
            counts[s.theta.theta() as usize] += 1;
        }
        counts
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Writes one JSON object per line plus a `.meta.json` sidecar holding
/// mean_rgb and the source tag.
pub fn save_manifest(path: impl AsRef<Path>, manifest: &DatasetManifest) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for s in &manifest.entries {
        let line = serde_json::to_string(s).map_err(|e| Error::Data(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let meta = ManifestMeta {
        mean_rgb: manifest.mean_rgb,
        source: manifest.source.clone(),
    };
    let sidecar = sidecar_path(path);
    std::fs::write(
        &sidecar,
        serde_json::to_vec_pretty(&meta).map_err(|e| Error::Data(e.to_string()))?,
    )
    .map_err(|e| Error::io(&sidecar, e))
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut entries = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: Sample = serde_json::from_str(&line).map_err(|e| {
            Error::Data(format!(
                "bad manifest line {} in {}: {e}",
                i + 1,
                path.display()
            ))
        })?;
        entries.push(sample);
    }
    let mut manifest = DatasetManifest::new(
        entries,
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
    )?;
    let sidecar = sidecar_path(path);
    if sidecar.exists() {
        let bytes = std::fs::read(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        let meta: ManifestMeta = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Data(format!("bad sidecar {}: {e}", sidecar.display())))?;
        manifest.mean_rgb = meta.mean_rgb;
        manifest.source = meta.source;
        manifest.check_unique()?;
    }
    Ok(manifest)
}

/// Exact 90-degree-multiple rotation: a pure index permutation, lossless.
/// Quarter and three-quarter turns swap height and width.
pub fn rotate_image(img: &Tensor, theta: OrientationLabel) -> Tensor {
    let shape = img.shape();
    assert_eq!(shape.len(), 3, "rotate_image expects [c,h,w]");
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let x = img.data();
    match theta.theta() {
        0 => img.clone(),
        1 => {
            // clockwise 90: out[y][x] = in[h-1-x][y]
            let mut out = Tensor::zeros(&[c, w, h]);
            let o = out.data_mut();
            for ch in 0..c {
                let src = &x[ch * h * w..];
                let dst = &mut o[ch * w * h..(ch + 1) * w * h];
                for y in 0..w {
                    for xx in 0..h {
                        dst[y * h + xx] = src[(h - 1 - xx) * w + y];
                    }
                }
            }
            out
        }
        2 => {
            let mut out = Tensor::zeros(&[c, h, w]);
            let o = out.data_mut();
            for ch in 0..c {
                let src = &x[ch * h * w..(ch + 1) * h * w];
                let dst = &mut o[ch * h * w..(ch + 1) * h * w];
                for (d, s) in dst.iter_mut().zip(src.iter().rev()) {
                    *d = *s;
                }
            }
            out
        }
        3 => {
            // clockwise 270: out[y][x] = in[x][w-1-y]
            let mut out = Tensor::zeros(&[c, w, h]);
            let o = out.data_mut();
            for ch in 0..c {
                let src = &x[ch * h * w..];
                let dst = &mut o[ch * w * h..(ch + 1) * w * h];
                for y in 0..w {
                    for xx in 0..h {
                        dst[y * h + xx] = src[xx * w + (w - 1 - y)];
                    }
                }
            }
            out
        }
        _ => unreachable!(),
    }
}

/// Emits four entries per upright source, one per rotation class.
pub fn expand_manifest(upright: &DatasetManifest) -> Result<DatasetManifest> {
    for s in &upright.entries {
        if s.theta != OrientationLabel::UPRIGHT {
            return Err(Error::Data(format!(
                "expand_manifest needs an upright manifest; {} is labeled theta {}",
                s.path.display(),
                s.theta
            )));
        }
    }
    let mut entries = Vec::with_capacity(upright.entries.len() * 4);
    for s in &upright.entries {
        for theta in OrientationLabel::ALL {
            entries.push(Sample {
                path: s.path.clone(),
                theta,
            });
        }
    }
    Ok(DatasetManifest {
        entries,
        mean_rgb: upright.mean_rgb,
        source: upright.source.clone(),
    })
}

/// Augmentation parameter ranges on the 0..255 pixel scale. Cropping and
/// flipping are deliberately absent: they would destroy orientation cues.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub brightness_delta: (f32, f32),
    pub contrast_range: (f32, f32),
    pub noise_sigma: (f32, f32),
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            brightness_delta: (-32.0, 32.0),
            contrast_range: (0.8, 1.2),
            noise_sigma: (0.0, 10.0),
        }
    }
}

fn draw(rng: &mut ChaCha8Rng, range: (f32, f32)) -> f32 {
    if range.0 == range.1 {
        range.0
    } else {
        rng.random_range(range.0..=range.1)
    }
}

/// Random brightness shift, contrast stretch around the image mean, and
/// gaussian pixel noise:
/// pixel' = clamp(contrast * (pixel - mean) + mean + brightness + noise).
/// Spatial shape is unchanged.
pub fn augment(img: &Tensor, rng: &mut ChaCha8Rng, params: &AugmentParams) -> Tensor {
    let delta = draw(rng, params.brightness_delta);
    let contrast = draw(rng, params.contrast_range);
    let sigma = draw(rng, params.noise_sigma);
    let mean = img.data().iter().sum::<f32>() / img.numel() as f32;
    let noise = if sigma > 0.0 {
        Some(Normal::new(0.0f32, sigma).expect("sigma finite and non-negative"))
    } else {
        None
    };
    let mut out = img.clone();
    for v in out.data_mut() {
        // Contrast 1.0 is skipped so identity parameters are bit-exact.
        if contrast != 1.0 {
            *v = contrast * (*v - mean) + mean;
        }
        *v += delta;
        if let Some(n) = &noise {
            *v += n.sample(rng);
        }
        *v = v.clamp(0.0, 255.0);
    }
    out
}

/// Per-channel mean subtraction, with an aspect-distorting bilinear resize
/// to the square network input when the spatial size differs.
pub fn preprocess(img: &Tensor, mean_rgb: [f32; 3], target_side: Option<usize>) -> Result<Tensor> {
    let shape = img.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(Error::Data(format!(
            "preprocess expects a 3-channel [3,h,w] image, got {shape:?}"
        )));
    }
    let resized;
    let img = match target_side {
        Some(side) if shape[1] != side || shape[2] != side => {
            resized = bilinear_resize(img, side, side)?;
            &resized
        }
        _ => img,
    };
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let mut out = img.clone();
    for ch in 0..3 {
        let m = mean_rgb[ch];
        for v in &mut out.data_mut()[ch * h * w..(ch + 1) * h * w] {
            *v -= m;
        }
    }
    Ok(out)
}

/// Per-channel mean over a set of images; the statistic stored in
/// manifests and checkpoints.
pub fn mean_rgb_of_images<'a>(images: impl Iterator<Item = &'a Tensor>) -> Result<[f32; 3]> {
    let mut sums = [0.0f64; 3];
    let mut count = 0u64;
    for img in images {
        let shape = img.shape();
        if shape.len() != 3 || shape[0] != 3 {
            return Err(Error::Data(format!(
                "mean_rgb expects [3,h,w] images, got {shape:?}"
            )));
        }
        let plane = shape[1] * shape[2];
        for ch in 0..3 {
            sums[ch] += img.data()[ch * plane..(ch + 1) * plane]
                .iter()
                .map(|&v| v as f64)
                .sum::<f64>();
        }
        count += plane as u64;
    }
    if count == 0 {
        return Err(Error::Data("mean_rgb over an empty image set".into()));
    }
    Ok([
        (sums[0] / count as f64) as f32,
        (sums[1] / count as f64) as f32,
        (sums[2] / count as f64) as f32,
    ])
}

/// Test-set composition protocols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Four balanced classes.
    Bal4,
    /// The prior work's split: 72% upright, 14% at 90, 14% at 270, no 180.
    Orig3,
    /// Balanced three classes (34/33/33), no 180.
    Bal3,
}

impl Protocol {
    pub fn proportions(self) -> [f64; 4] {
        match self {
            Protocol::Bal4 => [0.25, 0.25, 0.25, 0.25],
            Protocol::Orig3 => [0.72, 0.14, 0.0, 0.14],
            Protocol::Bal3 => [0.34, 0.33, 0.0, 0.33],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Bal4 => "bal4",
            Protocol::Orig3 => "orig3",
            Protocol::Bal3 => "bal3",
        }
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bal4" => Ok(Protocol::Bal4),
            "orig3" => Ok(Protocol::Orig3),
            "bal3" => Ok(Protocol::Bal3),
            other => Err(Error::Usage(format!(
                "unknown protocol {other:?} (expected bal4, orig3 or bal3)"
            ))),
        }
    }
}

/// Integer class counts for `total` draws, largest-remainder rounding.
fn protocol_counts(protocol: Protocol, total: usize) -> [usize; 4] {
    let props = protocol.proportions();
    let mut counts = [0usize; 4];
    let mut fracs: Vec<(usize, f64)> = Vec::with_capacity(4);
    let mut assigned = 0usize;
    for (i, &p) in props.iter().enumerate() {
        let exact = p * total as f64;
        counts[i] = exact.floor() as usize;
        assigned += counts[i];
        fracs.push((i, exact - exact.floor()));
    }
    fracs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for (i, _) in fracs.iter().take(total - assigned) {
        counts[*i] += 1;
    }
    counts
}

/// Draws a test manifest whose class proportions match the protocol within
/// one image per class. `total` of None uses every source once.
pub fn sample_protocol(
    sources: &DatasetManifest,
    protocol: Protocol,
    total: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> Result<DatasetManifest> {
    for s in &sources.entries {
        if s.theta != OrientationLabel::UPRIGHT {
            return Err(Error::Data(format!(
                "sample_protocol needs upright sources; {} is labeled theta {}",
                s.path.display(),
                s.theta
            )));
        }
    }
    let n = total.unwrap_or(sources.len());
    if n == 0 {
        return Err(Error::Capacity("no samples requested".into()));
    }
    if n > sources.len() {
        return Err(Error::Capacity(format!(
            "protocol {} needs {n} upright sources, manifest has {} (short {})",
            protocol.name(),
            sources.len(),
            n - sources.len()
        )));
    }
    let counts = protocol_counts(protocol, n);
    let mut order: Vec<usize> = (0..sources.len()).collect();
    order.shuffle(rng);
    let mut entries = Vec::with_capacity(n);
    let mut cursor = 0usize;
    for (class, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            entries.push(Sample {
                path: sources.entries[order[cursor]].path.clone(),
                theta: OrientationLabel::new(class as u8).unwrap(),
            });
            cursor += 1;
        }
    }
    Ok(DatasetManifest {
        entries,
        mean_rgb: sources.mean_rgb,
        source: format!("{}-{}", sources.source, protocol.name()),
    })
}

/// Procedural upright scene: bright sky gradient over the top third, a
/// mid-gray band with random rectangles and discs, and dark textured
/// ground over the bottom third; rotated by `theta` before returning.
pub fn synth_scene(
    rng: &mut ChaCha8Rng,
    side: usize,
    theta: OrientationLabel,
) -> (Tensor, OrientationLabel) {
    assert!(side >= 32, "synthetic scenes need side >= 32");
    let sky_top = rng.random_range(210.0..250.0f32);
    let sky_bot = rng.random_range(150.0..180.0f32);
    let sky_tint = rng.random_range(20.0..40.0f32);
    // The middle band stays sky-bright so the scene's single strong edge
    // is where the bright region meets the dark ground.
    let mid_base = sky_bot - rng.random_range(0.0..15.0f32);
    let ground_base = rng.random_range(25.0..50.0f32);
    let ground_noise = rng.random_range(4.0..10.0f32);

    let band = side / 3;
    let mut img = Tensor::zeros(&[3, side, side]);
    let plane = side * side;
    {
        let data = img.data_mut();
        for y in 0..side {
            for x in 0..side {
                let idx = y * side + x;
                let (r, g, b) = if y < band {
                    let t = y as f32 / band as f32;
                    let v = sky_top + t * (sky_bot - sky_top);
                    (v - sky_tint * 0.5, v, v + sky_tint)
                } else if y < 2 * band {
                    (mid_base, mid_base, mid_base + sky_tint * 0.5)
                } else {
                    let n = rng.random_range(-ground_noise..=ground_noise);
                    let v = ground_base + n;
                    (v + 8.0, v, v - 4.0)
                };
                data[idx] = r.clamp(0.0, 255.0);
                data[plane + idx] = g.clamp(0.0, 255.0);
                data[2 * plane + idx] = b.clamp(0.0, 255.0);
            }
        }
        // Random shapes confined to the middle band so the sky/ground
        // cues stay clean.
        let n_shapes = rng.random_range(2..=5usize);
        for _ in 0..n_shapes {
            let shade = rng.random_range(60.0..200.0f32);
            let cx = rng.random_range(0..side) as isize;
            let cy = rng.random_range(band..2 * band) as isize;
            let r = rng.random_range(side / 16..side / 6).max(1) as isize;
            let disc = rng.random_bool(0.5);
            for y in (cy - r).max(band as isize)..(cy + r).min((2 * band) as isize) {
                for x in (cx - r).max(0)..(cx + r).min(side as isize) {
                    let inside = if disc {
                        (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r
                    } else {
                        true
                    };
                    if inside {
                        let idx = y as usize * side + x as usize;
                        data[idx] = shade;
                        data[plane + idx] = shade;
                        data[2 * plane + idx] = shade;
                    }
                }
            }
        }
    }
    (rotate_image(&img, theta), theta)
}

/// Shape classes for the auxiliary pre-training task.
pub const SHAPE_CLASSES: usize = 4;

/// Procedural shape-classification sample (disc, square, triangle, cross)
/// on a noisy mid-gray canvas. Orientation-free by construction; used to
/// pre-train a conv trunk before fine-tuning on orientation.
pub fn synth_shape(rng: &mut ChaCha8Rng, side: usize) -> (Tensor, usize) {
    assert!(side >= 32, "synthetic shapes need side >= 32");
    let class = rng.random_range(0..SHAPE_CLASSES);
    let bg = rng.random_range(100.0..150.0f32);
    let contrast: f32 = rng.random_range(60.0..100.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let shade = (bg + contrast).clamp(0.0, 255.0);
    let cx = rng.random_range(side / 3..2 * side / 3) as isize;
    let cy = rng.random_range(side / 3..2 * side / 3) as isize;
    let r = rng.random_range(side / 6..side / 4) as isize;

    let mut img = Tensor::zeros(&[3, side, side]);
    let plane = side * side;
    let data = img.data_mut();
    for y in 0..side {
        for x in 0..side {
            let v = (bg + rng.random_range(-10.0..=10.0f32)).clamp(0.0, 255.0);
            let idx = y * side + x;
            data[idx] = v;
            data[plane + idx] = v;
            data[2 * plane + idx] = v;
        }
    }
    for y in 0..side as isize {
        for x in 0..side as isize {
            let dx = x - cx;
            let dy = y - cy;
            let inside = match class {
                0 => dx * dx + dy * dy <= r * r,
                1 => dx.abs() <= r && dy.abs() <= r,
                2 => dy >= -r && dy <= r && dx.abs() <= (dy + r) / 2,
                _ => (dx.abs() <= r / 3 && dy.abs() <= r) || (dy.abs() <= r / 3 && dx.abs() <= r),
            };
            if inside {
                let idx = y as usize * side + x as usize;
                data[idx] = shade;
                data[plane + idx] = shade;
                data[2 * plane + idx] = shade;
            }
        }
    }
    (img, class)
}
